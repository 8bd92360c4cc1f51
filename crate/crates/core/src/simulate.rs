//! Deterministic synthetic end-to-end runs: fake videos with scene-structured
//! embeddings, QA items with a target span, two-stage plans, scripted
//! answers, and the resulting report.
//!
//! Every item draws from its own ChaCha stream, so results do not depend on
//! how items are scheduled across threads.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{uniform_timestamps_fpm, EmbeddingSequence};
use crate::eval::{evaluate, Choice, EvalReport, Options, QaRecord, Reply};
use crate::localizer::{
    localize, LocalizationRequest, Localizer, OracleLocalizer, RandomLocalizer,
};
use crate::planner::{plan_stage1, SamplingPlan, Span};
use crate::selector::SelectorConfig;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("item {id}: {source}")]
    Item {
        id: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimLocalizer {
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Answerer {
    /// Always replies with the gold label.
    Correct,
    /// Uniform random label.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub items: usize,
    pub seed: u64,
    /// Fixed duration for every video; drawn from 30-60 min when absent.
    pub duration_s: Option<f64>,
    pub target_len_s: f64,
    pub dim: usize,
    pub stage1_fpm: f64,
    pub keep_ratio: f64,
    pub stage2_fps: f64,
    pub selector: SelectorConfig,
    pub localizer: SimLocalizer,
    /// Segment cap; `None` lets the oracle take every overlapping segment.
    pub max_selected: Option<usize>,
    pub answerer: Answerer,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            items: 50,
            seed: 0,
            duration_s: None,
            target_len_s: 180.0,
            dim: 16,
            stage1_fpm: 4.0,
            keep_ratio: SelectorConfig::DEFAULT_KEEP_RATIO,
            stage2_fps: 1.0,
            selector: SelectorConfig::default(),
            localizer: SimLocalizer::Oracle,
            max_selected: None,
            answerer: Answerer::Correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub records: Vec<QaRecord>,
    pub replies: Vec<Reply>,
    /// Keyed by record id.
    pub plans: BTreeMap<String, SamplingPlan>,
    pub report: EvalReport,
}

/// Scene-structured unit-free embeddings on the stage-1 grid: a handful of
/// random scene centres, each frame its scene centre plus noise.
pub fn synthetic_embeddings(
    video_id: &str,
    duration_s: f64,
    rate_fpm: f64,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingSequence, crate::embedding::EmbeddingError> {
    let grid = uniform_timestamps_fpm(duration_s, rate_fpm)?;
    let scenes = rng.gen_range(6..=20usize);
    let centres: Vec<Vec<f64>> = (0..scenes)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut cuts: Vec<f64> = (0..scenes - 1)
        .map(|_| rng.gen_range(0.0..duration_s))
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut vectors = Vec::with_capacity(grid.len() * dim);
    for &t in &grid {
        let scene = cuts.partition_point(|&c| c <= t);
        for &c in &centres[scene] {
            // keep rows away from zero norm
            vectors.push(c + rng.gen_range(-0.15..0.15) + 1e-3);
        }
    }
    EmbeddingSequence::new(video_id, dim, vectors, grid, duration_s, rate_fpm / 60.0)
}

fn item_rng(seed: u64, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item as u64 + 1);
    rng
}

fn boxed(id: &str, e: impl std::error::Error + Send + Sync + 'static) -> SimError {
    SimError::Item {
        id: id.to_string(),
        source: Box::new(e),
    }
}

fn run_item(cfg: &SimConfig, i: usize) -> Result<(QaRecord, Reply, SamplingPlan), SimError> {
    let mut rng = item_rng(cfg.seed, i);
    let id = format!("q{i:05}");
    let video_id = format!("synth-{i:05}");
    let duration_s = match cfg.duration_s {
        Some(d) => d,
        None => (rng.gen_range(1800.0..3600.0_f64) * 10.0).round() / 10.0,
    };
    let start = (rng.gen_range(0.0..(duration_s - cfg.target_len_s)) * 10.0).round() / 10.0;
    let target = Span::new(start, start + cfg.target_len_s);
    let answer = Choice::ALL[rng.gen_range(0..4)];
    let record = QaRecord {
        id: id.clone(),
        video_id: video_id.clone(),
        question: format!(
            "Between {:.0}s and {:.0}s, which item did I pick up first?",
            target.start_s, target.end_s
        ),
        options: Options {
            a: "the blue mug".into(),
            b: "the cutting board".into(),
            c: "the phone".into(),
            d: "the shopping bag".into(),
        },
        answer,
        target,
        duration_s,
    };

    let seq = synthetic_embeddings(&video_id, duration_s, cfg.stage1_fpm, cfg.dim, &mut rng)
        .map_err(|e| boxed(&id, e))?;
    let stage1 = plan_stage1(
        duration_s,
        cfg.stage1_fpm,
        cfg.keep_ratio,
        Some(&seq),
        &cfg.selector,
    )
    .map_err(|e| boxed(&id, e))?;
    let times: Vec<f64> = stage1.keyframes.iter().map(|k| k.t_s).collect();
    let max_selected = cfg.max_selected.unwrap_or(stage1.segments.len());
    let mut req =
        LocalizationRequest::new(&record.question, &times, &stage1.segments, max_selected);
    req.options = Some(record.options.to_array());
    let localizer: Box<dyn Localizer> = match cfg.localizer {
        SimLocalizer::Oracle => Box::new(OracleLocalizer { target }),
        SimLocalizer::Random => Box::new(RandomLocalizer { seed: rng.gen() }),
    };
    let located = localize(localizer.as_ref(), &req).map_err(|e| boxed(&id, e))?;
    let plan = SamplingPlan::two_stage(&video_id, &stage1, located.selected, cfg.stage2_fps)
        .map_err(|e| boxed(&id, e))?;

    let label = match cfg.answerer {
        Answerer::Correct => answer,
        Answerer::Random => Choice::ALL[rng.gen_range(0..4)],
    };
    let reply = Reply {
        id,
        reply_text: format!("Answer: {}", label.letter()),
    };
    Ok((record, reply, plan))
}

/// Run the whole synthetic benchmark.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    if cfg.items == 0 {
        return Err(SimError::Config("items must be >= 1".into()));
    }
    if let Some(d) = cfg.duration_s {
        if !(d > cfg.target_len_s) {
            return Err(SimError::Config(format!(
                "duration {d} s must exceed the target length {} s",
                cfg.target_len_s
            )));
        }
    }
    if !(cfg.target_len_s > 0.0 && cfg.target_len_s < 1800.0) {
        return Err(SimError::Config(
            "target length must lie in (0, 1800) s".into(),
        ));
    }
    if cfg.dim == 0 {
        return Err(SimError::Config("dim must be >= 1".into()));
    }
    let rows: Vec<(QaRecord, Reply, SamplingPlan)> = (0..cfg.items)
        .into_par_iter()
        .map(|i| run_item(cfg, i))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(rows.len());
    let mut replies = Vec::with_capacity(rows.len());
    let mut plans = BTreeMap::new();
    for (rec, reply, plan) in rows {
        plans.insert(rec.id.clone(), plan);
        records.push(rec);
        replies.push(reply);
    }
    let reply_map: HashMap<String, String> = replies
        .iter()
        .map(|r| (r.id.clone(), r.reply_text.clone()))
        .collect();
    let plan_map: HashMap<String, SamplingPlan> =
        plans.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let report = evaluate(&records, &reply_map, &plan_map)?;
    Ok(SimOutput {
        records,
        replies,
        plans,
        report,
    })
}

/// Replies from a seeded uniform-random answerer over `records`.
pub fn random_replies(records: &[QaRecord], seed: u64) -> Vec<Reply> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| Reply {
            id: r.id.clone(),
            reply_text: format!("({})", Choice::ALL[rng.gen_range(0..4)].letter()),
        })
        .collect()
}
