//! Multiple-choice scoring, stage-1 coverage, and aggregate reports.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::planner::{SamplingPlan, Span};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no reply for {} item(s): {}", .0.len(), .0.join(", "))]
    MissingReplies(Vec<String>),
    #[error("empty benchmark")]
    Empty,
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("{path}:{line}: {source}")]
    Jsonl {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    C,
    D,
}

impl Choice {
    pub const ALL: [Choice; 4] = [Choice::A, Choice::B, Choice::C, Choice::D];

    fn from_letter(c: &str) -> Option<Self> {
        match c {
            "A" => Some(Self::A),
            "B" => Some(Self::B),
            "C" => Some(Self::C),
            "D" => Some(Self::D),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::A => 'A',
            Self::B => 'B',
            Self::C => 'C',
            Self::D => 'D',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Options {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "C")]
    pub c: String,
    #[serde(rename = "D")]
    pub d: String,
}

impl Options {
    pub fn to_array(&self) -> [String; 4] {
        [
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub video_id: String,
    pub question: String,
    pub options: Options,
    pub answer: Choice,
    pub target: Span,
    pub duration_s: f64,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        let t = &self.target;
        if !(0.0 <= t.start_s && t.start_s < t.end_s && t.end_s <= self.duration_s) {
            return Err(EvalError::InvalidRecord {
                id: self.id.clone(),
                reason: format!(
                    "target [{}, {}] must satisfy 0 <= start < end <= {}",
                    t.start_s, t.end_s, self.duration_s
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub id: String,
    pub reply_text: String,
}

fn choice_patterns() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            // "(B)"
            Regex::new(r"\(([A-D])\)").unwrap(),
            // "Answer: B", "the answer is B", "Option C"
            Regex::new(r"(?i:\b(?:answer|option|choice)\b)(?:\s+(?i:is))?\s*[:：]?\s*([A-D])\b")
                .unwrap(),
            // leading "B." / "B)" / bare "B"
            Regex::new(r"^\s*([A-D])\s*(?:[.):,]|$)").unwrap(),
        ]
    })
}

/// First answer label in a model reply, trying in order: a parenthesized
/// letter, a letter after "answer"/"option"/"choice", and a leading letter.
pub fn parse_choice(reply: &str) -> Option<Choice> {
    choice_patterns()
        .iter()
        .find_map(|re| re.captures(reply))
        .and_then(|c| Choice::from_letter(&c[1]))
}

/// Fraction of `gt` covered by the union of `predicted`.
pub fn coverage_rate(predicted: &[Span], gt: Span) -> f64 {
    let len = gt.len();
    if !(len > 0.0) {
        return 0.0;
    }
    let mut clipped: Vec<(f64, f64)> = predicted
        .iter()
        .map(|p| (p.start_s.max(gt.start_s), p.end_s.min(gt.end_s)))
        .filter(|(a, b)| b > a)
        .collect();
    clipped.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in clipped {
        match cur {
            Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
            Some((s, e)) => {
                covered += e - s;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((s, e)) = cur {
        covered += e - s;
    }
    (covered / len).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub id: String,
    pub predicted: Option<Choice>,
    pub answer: Choice,
    pub correct: bool,
    pub total_frames: Option<usize>,
    pub sd: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_items: usize,
    pub n_correct: usize,
    pub n_unparsable: usize,
    pub accuracy: f64,
    pub mean_total_frames: Option<f64>,
    pub mean_sd: Option<f64>,
    pub mean_coverage: Option<f64>,
    /// Sorted by id.
    pub items: Vec<ItemRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Score every record. Replies are keyed by record id, plans (optional per
/// item) likewise. Unparsable replies count as wrong.
pub fn evaluate(
    records: &[QaRecord],
    replies: &HashMap<String, String>,
    plans: &HashMap<String, SamplingPlan>,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    for r in records {
        r.validate()?;
    }
    let mut missing: Vec<String> = records
        .iter()
        .filter(|r| !replies.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(EvalError::MissingReplies(missing));
    }

    let mut items: Vec<ItemRow> = records
        .par_iter()
        .map(|r| {
            let predicted = parse_choice(&replies[&r.id]);
            let plan = plans.get(&r.id);
            ItemRow {
                id: r.id.clone(),
                predicted,
                answer: r.answer,
                correct: predicted == Some(r.answer),
                total_frames: plan.map(|p| p.budget.total_frames),
                sd: plan.map(|p| p.budget.sd_full_video),
                coverage: plan.map(|p| {
                    let spans: Vec<Span> = p.selected_segments().iter().map(|s| s.span()).collect();
                    coverage_rate(&spans, r.target)
                }),
            }
        })
        .collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));

    let n_items = items.len();
    let n_correct = items.iter().filter(|i| i.correct).count();
    let n_unparsable = items.iter().filter(|i| i.predicted.is_none()).count();
    Ok(EvalReport {
        n_items,
        n_correct,
        n_unparsable,
        accuracy: n_correct as f64 / n_items as f64,
        mean_total_frames: mean(
            items
                .iter()
                .filter_map(|i| i.total_frames.map(|f| f as f64)),
        ),
        mean_sd: mean(items.iter().filter_map(|i| i.sd)),
        mean_coverage: mean(items.iter().filter_map(|i| i.coverage)),
        items,
    })
}

impl EvalReport {
    /// Human-readable summary followed by one line per item.
    pub fn to_table(&self) -> String {
        let opt =
            |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>10}", "items", self.n_items);
        let _ = writeln!(s, "{:<20} {:>10}", "correct", self.n_correct);
        let _ = writeln!(s, "{:<20} {:>10}", "unparsable", self.n_unparsable);
        let _ = writeln!(s, "{:<20} {:>9.1}%", "accuracy", 100.0 * self.accuracy);
        let _ = writeln!(
            s,
            "{:<20} {:>10}",
            "mean frames",
            opt(self.mean_total_frames, 1)
        );
        let _ = writeln!(s, "{:<20} {:>10}", "mean SD (f/s)", opt(self.mean_sd, 3));
        let _ = writeln!(
            s,
            "{:<20} {:>10}",
            "mean coverage",
            opt(self.mean_coverage, 3)
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<24} {:>4} {:>4} {:>7} {:>7} {:>8} {:>8}",
            "id", "pred", "gold", "correct", "frames", "sd", "coverage"
        );
        for it in &self.items {
            let _ = writeln!(
                s,
                "{:<24} {:>4} {:>4} {:>7} {:>7} {:>8} {:>8}",
                it.id,
                it.predicted.map_or('-', Choice::letter),
                it.answer.letter(),
                if it.correct { "yes" } else { "no" },
                it.total_frames.map_or("-".to_string(), |f| f.to_string()),
                opt(it.sd, 3),
                opt(it.coverage, 3),
            );
        }
        s
    }
}

/// Read a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| EvalError::Jsonl {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializable"));
        s.push('\n');
    }
    s
}

/// Replies keyed by id; later lines win on duplicate ids.
pub fn reply_map(replies: Vec<Reply>) -> HashMap<String, String> {
    replies.into_iter().map(|r| (r.id, r.reply_text)).collect()
}

/// Ids present in one collection but not the other, sorted.
pub fn id_mismatch<'a>(
    records: impl IntoIterator<Item = &'a str>,
    replies: impl IntoIterator<Item = &'a str>,
) -> (Vec<String>, Vec<String>) {
    let r: BTreeSet<&str> = records.into_iter().collect();
    let p: BTreeSet<&str> = replies.into_iter().collect();
    (
        r.difference(&p).map(|s| s.to_string()).collect(),
        p.difference(&r).map(|s| s.to_string()).collect(),
    )
}
