use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use longvid_core::embedding::{EmbeddingError, EmbeddingSequence};
use longvid_core::eval::{
    id_mismatch, read_jsonl, reply_map, to_jsonl, EvalError, QaRecord, Reply,
};
use longvid_core::localizer::{
    LocalizeError, OracleLocalizer, RandomLocalizer, RemoteLocalizer, ScriptedLocalizer,
    DEFAULT_MAX_SELECTED,
};
use longvid_core::planner::PlanError;
use longvid_core::selector::{SelectError, SelectionMethod};
use longvid_core::simulate::{self, Answerer, SimConfig, SimError, SimLocalizer};
use longvid_core::timeline::render_timeline;
use longvid_core::{
    build_weights, estimate_nsd, evaluate as score, load_embeddings, localize, partition_segments,
    plan_stage1, select_dp, select_uniform, Format, LocalizationRequest, Localizer, SamplingPlan,
    Span, Target,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LocalizerKind, RunConfig};
use crate::output::{write_atomic, write_json};
use crate::{
    invalid, AnswererArg, FormatArg, Invalid, LocalizerArgs, RateArgs, SelectorArgs,
    SimLocalizerArg,
};

/// `START:END` in seconds.
pub fn parse_span(s: &str) -> std::result::Result<Span, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got `{s}`"))?;
    let start: f64 = a
        .trim()
        .parse()
        .map_err(|e| format!("bad start `{a}`: {e}"))?;
    let end: f64 = b
        .trim()
        .parse()
        .map_err(|e| format!("bad end `{b}`: {e}"))?;
    if !(start.is_finite() && end.is_finite() && start < end) {
        return Err(format!("span `{s}` must satisfy start < end"));
    }
    Ok(Span::new(start, end))
}

pub fn parse_k(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("k must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

fn embedding_error(path: &Path, e: EmbeddingError) -> anyhow::Error {
    match e {
        EmbeddingError::Io(io) => anyhow!(io).context(format!("reading {}", path.display())),
        other => invalid(format!("{}: [{}] {other}", path.display(), other.code())),
    }
}

fn select_error(e: SelectError) -> anyhow::Error {
    match e {
        SelectError::Io(io) => anyhow!(io),
        other => invalid(other),
    }
}

fn plan_error(e: PlanError) -> anyhow::Error {
    match e {
        PlanError::Embedding(EmbeddingError::Io(io)) | PlanError::Select(SelectError::Io(io)) => {
            anyhow!(io)
        }
        other => invalid(other),
    }
}

fn eval_error(e: EvalError) -> anyhow::Error {
    match e {
        EvalError::Io(io) => anyhow!(io),
        other => invalid(other),
    }
}

fn print_or_write<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    video_id: &'a str,
    n: usize,
    k: usize,
    method: SelectionMethod,
    indices: Vec<usize>,
    timestamps: Vec<f64>,
    objective: f64,
}

pub fn select(
    cfg: &RunConfig,
    path: &Path,
    format: Option<FormatArg>,
    k: Option<usize>,
    uniform: bool,
    weights_csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let format = match format {
        Some(FormatArg::Bin) => Format::Binary,
        Some(FormatArg::Csv) => Format::Csv,
        None => Format::from_path(path),
    };
    let seq = load_embeddings(path, format).map_err(|e| embedding_error(path, e))?;
    let target = match k {
        Some(k) => Target::Count(k),
        None => Target::KeepRatio(cfg.keep_ratio),
    };
    let n = seq.len();
    let k = target.resolve(n).map_err(select_error)?;
    let sel_cfg = cfg.selector();
    let w = build_weights(&seq, &sel_cfg).map_err(select_error)?;
    if let Some(csv) = weights_csv {
        w.write_csv(csv).map_err(select_error)?;
    }
    let res = if uniform {
        select_uniform(n, k, Some(&w))
    } else {
        select_dp(&w, k, sel_cfg.mode)
    }
    .map_err(select_error)?;
    let timestamps = res.indices.iter().map(|&i| seq.timestamps()[i]).collect();
    print_or_write(
        &SelectOutput {
            video_id: seq.video_id(),
            n,
            k,
            method: res.mode,
            indices: res.indices,
            timestamps,
            objective: res.objective,
        },
        out,
    )
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// QA file; every record is planned unless `--item` picks one.
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    #[arg(long, value_name = "ID")]
    pub item: Option<String>,
    /// Embedding file for a single plan.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Looked up as `<video_id>.emb` or `<video_id>.csv`.
    #[arg(long, value_name = "DIR")]
    pub embeddings_dir: Option<PathBuf>,
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub question: Option<String>,
    /// Answer option; give four times, A to D.
    #[arg(long = "option", value_name = "TEXT")]
    pub options: Vec<String>,
    /// Ground-truth span `START:END`, needed by the oracle localizer.
    #[arg(long, value_parser = parse_span)]
    pub gt: Option<Span>,
    /// Plan file for a single plan; defaults to `<plans_dir>/<id>.plan.json`.
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub plans_dir: Option<PathBuf>,
    /// SVG file for a single plan, or a directory of `<id>.svg` when planning
    /// a whole QA file.
    #[arg(long, value_name = "PATH")]
    pub timeline: Option<PathBuf>,
    /// Frame extraction command, split on whitespace, with `{video_path}`,
    /// `{t_s}` and `{out_path}` substituted per frame.
    #[arg(long, value_name = "TEMPLATE")]
    pub extract_cmd: Option<String>,
    /// Video path; `{video_id}` is substituted.
    #[arg(long, value_name = "PATH")]
    pub video: Option<String>,
    /// Where extracted frames go; defaults to `<plans_dir>/frames`.
    #[arg(long, value_name = "DIR")]
    pub frames_dir: Option<PathBuf>,
    #[command(flatten)]
    pub selector: SelectorArgs,
    #[command(flatten)]
    pub rates: RateArgs,
    #[command(flatten)]
    pub localizer: LocalizerArgs,
}

#[derive(Debug, Clone)]
struct PlanItem {
    id: String,
    video_id: String,
    question: String,
    options: Option<[String; 4]>,
    gt: Option<Span>,
    duration_s: Option<f64>,
    embeddings: Option<PathBuf>,
}

fn find_embeddings(dir: &Path, video_id: &str) -> Option<PathBuf> {
    ["emb", "csv"]
        .iter()
        .map(|ext| dir.join(format!("{video_id}.{ext}")))
        .find(|p| p.is_file())
}

fn plan_items(cfg: &RunConfig, args: &PlanArgs) -> Result<(Vec<PlanItem>, bool)> {
    let options = match args.options.len() {
        0 => None,
        4 => Some([
            args.options[0].clone(),
            args.options[1].clone(),
            args.options[2].clone(),
            args.options[3].clone(),
        ]),
        n => return Err(invalid(format!("--option must be given 4 times, got {n}"))),
    };
    let from_record = |r: QaRecord| PlanItem {
        embeddings: find_embeddings(&cfg.paths.embeddings_dir, &r.video_id),
        id: r.id,
        video_id: r.video_id,
        question: r.question,
        options: Some(r.options.to_array()),
        gt: Some(r.target),
        duration_s: Some(r.duration_s),
    };
    if let Some(qa) = &cfg.paths.qa_file {
        if !qa.is_file() {
            return Err(invalid(format!("QA file {} does not exist", qa.display())));
        }
        let records: Vec<QaRecord> = read_jsonl(qa).map_err(eval_error)?;
        for r in &records {
            r.validate().map_err(eval_error)?;
        }
        return match &args.item {
            Some(id) => {
                let rec = records
                    .into_iter()
                    .find(|r| &r.id == id)
                    .ok_or_else(|| invalid(format!("no record `{id}` in {}", qa.display())))?;
                let mut item = from_record(rec);
                if let Some(e) = &args.embeddings {
                    item.embeddings = Some(e.clone());
                }
                Ok((vec![item], false))
            }
            None => {
                if records.is_empty() {
                    return Err(invalid(format!("{} has no records", qa.display())));
                }
                if args.out.is_some() || args.embeddings.is_some() {
                    return Err(invalid(
                        "--out and --embeddings apply to single plans; add --item",
                    ));
                }
                Ok((records.into_iter().map(from_record).collect(), true))
            }
        };
    }
    if args.item.is_some() {
        return Err(invalid("--item needs a QA file"));
    }
    let video_id = args.video_id.clone().unwrap_or_else(|| {
        args.embeddings
            .as_deref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().trim_end_matches(".emb").to_string())
            .unwrap_or_else(|| "video".to_string())
    });
    let embeddings = args
        .embeddings
        .clone()
        .or_else(|| find_embeddings(&cfg.paths.embeddings_dir, &video_id));
    Ok((
        vec![PlanItem {
            id: video_id.clone(),
            video_id,
            question: args.question.clone().unwrap_or_default(),
            options,
            gt: args.gt,
            duration_s: args.duration,
            embeddings,
        }],
        false,
    ))
}

fn run_extract(template: &str, video: &str, t_s: f64, out: &Path) -> Result<()> {
    let argv: Vec<String> = template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{video_path}", video)
                .replace("{t_s}", &format!("{t_s:.3}"))
                .replace("{out_path}", &out.display().to_string())
        })
        .collect();
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let status = std::process::Command::new(&argv[0])
        .args(&argv[1..])
        .status()
        .with_context(|| format!("running `{}`", argv[0]))?;
    if !status.success() {
        bail!("extraction of t={t_s:.3} s from {video} failed: {status}");
    }
    Ok(())
}

struct Extraction<'a> {
    template: &'a str,
    video: String,
    dir: PathBuf,
}

struct PlanContext<'a> {
    cfg: &'a RunConfig,
    args: &'a PlanArgs,
    remote: Option<RemoteLocalizer>,
    batch: bool,
}

impl PlanContext<'_> {
    fn localizer(&self, item: &PlanItem, ordinal: usize) -> Result<Box<dyn Localizer>> {
        Ok(match self.cfg.localizer.kind {
            LocalizerKind::Oracle => Box::new(OracleLocalizer {
                target: item.gt.ok_or_else(|| {
                    invalid(format!("{}: the oracle localizer needs --gt", item.id))
                })?,
            }),
            LocalizerKind::Random => Box::new(RandomLocalizer {
                seed: self.cfg.seed.wrapping_add(ordinal as u64),
            }),
            LocalizerKind::Scripted => Box::new(ScriptedLocalizer {
                reply: self
                    .cfg
                    .localizer
                    .reply
                    .clone()
                    .ok_or_else(|| invalid("the scripted localizer needs --reply"))?,
            }),
            LocalizerKind::Remote => Box::new(self.remote.clone().expect("remote client built")),
        })
    }

    fn plan_path(&self, item: &PlanItem) -> PathBuf {
        match (&self.args.out, self.batch) {
            (Some(out), false) => out.clone(),
            _ => self
                .cfg
                .paths
                .plans_dir
                .join(format!("{}.plan.json", item.id)),
        }
    }

    fn timeline_path(&self, item: &PlanItem) -> Option<PathBuf> {
        let t = self.args.timeline.as_ref()?;
        Some(if self.batch {
            t.join(format!("{}.svg", item.id))
        } else {
            t.clone()
        })
    }

    fn extraction(&self, item: &PlanItem) -> Option<Extraction<'_>> {
        let template = self.args.extract_cmd.as_deref()?;
        let video = self
            .args
            .video
            .as_ref()?
            .replace("{video_id}", &item.video_id);
        let root = self
            .args
            .frames_dir
            .clone()
            .unwrap_or_else(|| self.cfg.paths.plans_dir.join("frames"));
        Some(Extraction {
            template,
            video,
            dir: root.join(&item.id),
        })
    }

    fn run_item(&self, item: &PlanItem, ordinal: usize) -> Result<SamplingPlan> {
        let cfg = self.cfg;
        let seq: Option<EmbeddingSequence> = match &item.embeddings {
            Some(p) => {
                Some(load_embeddings(p, Format::from_path(p)).map_err(|e| embedding_error(p, e))?)
            }
            None => None,
        };
        let duration_s = item
            .duration_s
            .or(seq.as_ref().map(|s| s.duration_s()))
            .ok_or_else(|| {
                invalid(format!(
                    "{}: unknown video duration; pass --duration or embeddings",
                    item.id
                ))
            })?;
        let stage1 = plan_stage1(
            duration_s,
            cfg.stage1_fpm,
            cfg.keep_ratio,
            seq.as_ref(),
            &cfg.selector(),
        )
        .map_err(plan_error)?;
        let times: Vec<f64> = stage1.keyframes.iter().map(|k| k.t_s).collect();
        let max_selected = cfg
            .localizer
            .max_selected
            .unwrap_or(match cfg.localizer.kind {
                LocalizerKind::Oracle => stage1.segments.len(),
                _ => DEFAULT_MAX_SELECTED,
            });
        let mut req =
            LocalizationRequest::new(&item.question, &times, &stage1.segments, max_selected);
        req.options = item.options.clone();

        let extraction = self.extraction(item);
        if let Some(x) = &extraction {
            for kf in &mut req.keyframes {
                let out = x.dir.join(format!("stage1_{:04}.jpg", kf.segment));
                run_extract(x.template, &x.video, kf.t_s, &out)?;
                kf.frame = Some(out);
            }
        }

        let localizer = self.localizer(item, ordinal)?;
        let located = localize(localizer.as_ref(), &req).map_err(|e| match e {
            LocalizeError::InvalidRequest(_) => invalid(format!("{}: {e}", item.id)),
            other => anyhow!(other).context(format!(
                "{}: {} localizer failed",
                item.id,
                localizer.name()
            )),
        })?;
        let plan =
            SamplingPlan::two_stage(&item.video_id, &stage1, located.selected, cfg.stage2_fps)
                .map_err(plan_error)?;

        if let Some(x) = &extraction {
            for (m, &t) in plan.stage2.timestamps.iter().enumerate() {
                run_extract(
                    x.template,
                    &x.video,
                    t,
                    &x.dir.join(format!("stage2_{m:05}.jpg")),
                )?;
            }
        }
        let mut text = plan.to_json();
        text.push('\n');
        write_atomic(&self.plan_path(item), text.as_bytes())?;
        if let Some(svg) = self.timeline_path(item) {
            write_atomic(&svg, render_timeline(&plan, item.gt).as_bytes())?;
        }
        Ok(plan)
    }
}

pub fn plan(cfg: &RunConfig, args: &PlanArgs) -> Result<()> {
    let (items, batch) = plan_items(cfg, args)?;
    if cfg.keep_ratio < 1.0 {
        if let Some(item) = items.iter().find(|i| i.embeddings.is_none()) {
            return Err(invalid(format!(
                "no embeddings for video `{}` (looked in {}); keep_ratio {} < 1 needs them",
                item.video_id,
                cfg.paths.embeddings_dir.display(),
                cfg.keep_ratio
            )));
        }
    }
    if let Some(p) = items
        .iter()
        .filter_map(|i| i.embeddings.as_ref())
        .find(|p| !p.is_file())
    {
        return Err(invalid(format!(
            "embedding file {} does not exist",
            p.display()
        )));
    }
    if let Some(t) = &args.extract_cmd {
        if !t.contains("{out_path}") || t.split_whitespace().next().is_none() {
            return Err(invalid(
                "--extract-cmd must name a program and contain {out_path}",
            ));
        }
        if args.video.is_none() {
            return Err(invalid("--extract-cmd needs --video"));
        }
    }
    match cfg.localizer.kind {
        LocalizerKind::Oracle => {
            if let Some(item) = items.iter().find(|i| i.gt.is_none()) {
                return Err(invalid(format!(
                    "{}: the oracle localizer needs --gt",
                    item.id
                )));
            }
        }
        LocalizerKind::Scripted if cfg.localizer.reply.is_none() => {
            return Err(invalid("the scripted localizer needs --reply"));
        }
        _ => {}
    }
    let remote = match cfg.localizer.kind {
        LocalizerKind::Remote => {
            Some(RemoteLocalizer::new(cfg.localizer.remote.clone()).map_err(|e| anyhow!(e))?)
        }
        _ => None,
    };
    let ctx = PlanContext {
        cfg,
        args,
        remote,
        batch,
    };
    let results: Vec<Result<SamplingPlan>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| ctx.run_item(item, i))
        .collect();

    let mut failures = Vec::new();
    for (item, res) in items.iter().zip(results) {
        match res {
            Ok(plan) => println!(
                "{}: {} + {} = {} frames -> {}",
                item.id,
                plan.budget.stage1_frames,
                plan.budget.stage2_frames,
                plan.budget.total_frames,
                ctx.plan_path(item).display()
            ),
            Err(e) => {
                if batch {
                    eprintln!("error: {e:#}");
                }
                failures.push(e);
            }
        }
    }
    match failures.len() {
        0 => Ok(()),
        1 => Err(failures.pop().unwrap()),
        n => {
            let msg = format!("{n} of {} plans failed", items.len());
            if failures
                .iter()
                .all(|e| e.downcast_ref::<Invalid>().is_some())
            {
                Err(invalid(msg))
            } else {
                Err(anyhow!(msg))
            }
        }
    }
}

pub fn partition(keyframes: &[f64], duration: f64, out: Option<&Path>) -> Result<()> {
    let segments = partition_segments(keyframes, duration).map_err(plan_error)?;
    print_or_write(&segments, out)
}

#[derive(Serialize)]
struct NsdOutput {
    windows: usize,
    shortest_s: f64,
    nsd_fps: f64,
}

pub fn nsd(mut windows: Vec<Span>, file: Option<&Path>) -> Result<()> {
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let more: Vec<Span> =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        windows.extend(more);
    }
    let nsd_fps = estimate_nsd(&windows).map_err(plan_error)?;
    print_or_write(
        &NsdOutput {
            windows: windows.len(),
            shortest_s: 1.0 / nsd_fps,
            nsd_fps,
        },
        None,
    )
}

pub fn evaluate(cfg: &RunConfig, replies_path: &Path, plans_explicit: bool) -> Result<()> {
    let qa = cfg
        .paths
        .qa_file
        .as_ref()
        .ok_or_else(|| invalid("no QA file; pass --qa or set qa_file"))?;
    for p in [qa.as_path(), replies_path] {
        if !p.is_file() {
            return Err(invalid(format!("{} does not exist", p.display())));
        }
    }
    let records: Vec<QaRecord> = read_jsonl(qa).map_err(eval_error)?;
    let replies: Vec<Reply> = read_jsonl(replies_path).map_err(eval_error)?;
    if records.is_empty() {
        return Err(invalid(format!("{} has no records", qa.display())));
    }
    if replies.is_empty() {
        return Err(invalid(format!(
            "{} has no replies",
            replies_path.display()
        )));
    }
    let (missing, extra) = id_mismatch(
        records.iter().map(|r| r.id.as_str()),
        replies.iter().map(|r| r.id.as_str()),
    );
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = String::from("QA and reply ids do not match");
        if !missing.is_empty() {
            msg.push_str(&format!("; no reply for: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            msg.push_str(&format!("; reply without record: {}", extra.join(", ")));
        }
        return Err(invalid(msg));
    }

    let plans_dir = &cfg.paths.plans_dir;
    let mut plans: HashMap<String, SamplingPlan> = HashMap::new();
    if plans_dir.is_dir() {
        for r in &records {
            let path = plans_dir.join(format!("{}.plan.json", r.id));
            if !path.is_file() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let plan: SamplingPlan = serde_json::from_str(&text)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            plan.validate()
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            plans.insert(r.id.clone(), plan);
        }
    } else if plans_explicit {
        return Err(invalid(format!(
            "plans directory {} does not exist",
            plans_dir.display()
        )));
    }

    let report = score(&records, &reply_map(replies), &plans).map_err(eval_error)?;
    let dir = &cfg.paths.reports_dir;
    write_json(&dir.join("report.json"), &report)?;
    let table = report.to_table();
    write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn timeline(plan_path: &Path, gt: Option<Span>, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(plan_path)
        .with_context(|| format!("reading {}", plan_path.display()))?;
    let plan: SamplingPlan = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", plan_path.display())))?;
    plan.validate()
        .map_err(|e| invalid(format!("{}: {e}", plan_path.display())))?;
    write_atomic(out, render_timeline(&plan, gt).as_bytes())
}

pub struct SimulateArgs {
    pub out_dir: PathBuf,
    pub items: usize,
    pub duration: Option<f64>,
    pub target_len: f64,
    pub localizer: SimLocalizerArg,
    pub max_selected: Option<usize>,
    pub answerer: AnswererArg,
    pub timelines: bool,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let localizer = match args.localizer {
        SimLocalizerArg::Oracle => SimLocalizer::Oracle,
        SimLocalizerArg::Random => SimLocalizer::Random,
    };
    let max_selected = args
        .max_selected
        .or(cfg.localizer.max_selected)
        .or(match localizer {
            SimLocalizer::Oracle => None,
            SimLocalizer::Random => Some(DEFAULT_MAX_SELECTED),
        });
    if max_selected == Some(0) {
        return Err(invalid("max_selected must be >= 1"));
    }
    let sim = SimConfig {
        items: args.items,
        seed: cfg.seed,
        duration_s: args.duration,
        target_len_s: args.target_len,
        stage1_fpm: cfg.stage1_fpm,
        keep_ratio: cfg.keep_ratio,
        stage2_fps: cfg.stage2_fps,
        selector: cfg.selector(),
        localizer,
        max_selected,
        answerer: match args.answerer {
            AnswererArg::Correct => Answerer::Correct,
            AnswererArg::Random => Answerer::Random,
        },
        ..SimConfig::default()
    };
    let out = simulate::run(&sim).map_err(|e| match e {
        SimError::Config(_) => invalid(e),
        other => anyhow!(other),
    })?;

    let dir = &args.out_dir;
    write_atomic(&dir.join("qa.jsonl"), to_jsonl(&out.records).as_bytes())?;
    write_atomic(
        &dir.join("replies.jsonl"),
        to_jsonl(&out.replies).as_bytes(),
    )?;
    let targets: HashMap<&str, Span> = out
        .records
        .iter()
        .map(|r| (r.id.as_str(), r.target))
        .collect();
    out.plans
        .par_iter()
        .try_for_each(|(id, plan)| -> Result<()> {
            let mut text = plan.to_json();
            text.push('\n');
            write_atomic(
                &dir.join("plans").join(format!("{id}.plan.json")),
                text.as_bytes(),
            )?;
            if args.timelines {
                let svg = render_timeline(plan, targets.get(id.as_str()).copied());
                write_atomic(
                    &dir.join("timelines").join(format!("{id}.svg")),
                    svg.as_bytes(),
                )?;
            }
            Ok(())
        })?;
    write_json(&dir.join("report.json"), &out.report)?;
    let table = out.report.to_table();
    write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    let ids: BTreeSet<&String> = out.plans.keys().collect();
    println!(
        "{} items, accuracy {:.3}, mean coverage {}, {} plans -> {}",
        out.report.n_items,
        out.report.accuracy,
        out.report
            .mean_coverage
            .map_or("-".into(), |c| format!("{c:.3}")),
        ids.len(),
        dir.display()
    );
    Ok(())
}
