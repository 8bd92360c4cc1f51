//! Stage-1 cue localization: pick the segments that hold visual evidence
//! for a question.
//!
//! Implementations:
//! - [`OracleLocalizer`] knows the ground-truth target span.
//! - [`RandomLocalizer`] samples segments with a fixed seed.
//! - [`ScriptedLocalizer`] replays a canned model reply through the same
//!   parser as the remote client.
//! - [`RemoteLocalizer`] asks a vision-language model over HTTP.
//!
//! Model replies name segments as integers after the word "segment" or
//! "segments" (any case), separated by commas or "and":
//! `Segments: 7, 8`, `I choose segments 3 and 12.`

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::planner::{Segment, Span};

pub const PROMPT_VERSION: &str = "localize_v1";
const PROMPT_TEMPLATE: &str = include_str!("../prompts/localize_v1.txt");

/// Default cap on selected segments.
pub const DEFAULT_MAX_SELECTED: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum LocalizeError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no segment index in reply: {0:?}")]
    Parse(String),
    #[error("localizer produced an invalid selection: {0}")]
    InvalidResult(String),
}

impl LocalizeError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout(_) => true,
            Self::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, LocalizeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRef {
    pub segment: usize,
    pub t_s: f64,
    /// Extracted image for this keyframe, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRequest {
    pub question: String,
    pub options: Option<[String; 4]>,
    pub keyframes: Vec<KeyframeRef>,
    pub segments: Vec<Segment>,
    pub max_selected: usize,
}

impl LocalizationRequest {
    /// One keyframe reference per segment, without images.
    pub fn new(
        question: impl Into<String>,
        keyframe_times: &[f64],
        segments: &[Segment],
        max_selected: usize,
    ) -> Self {
        Self {
            question: question.into(),
            options: None,
            keyframes: keyframe_times
                .iter()
                .zip(segments)
                .map(|(&t_s, s)| KeyframeRef {
                    segment: s.index,
                    t_s,
                    frame: None,
                })
                .collect(),
            segments: segments.to_vec(),
            max_selected,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(LocalizeError::InvalidRequest("no keyframes".into()));
        }
        if self.max_selected == 0 {
            return Err(LocalizeError::InvalidRequest(
                "max_selected must be >= 1".into(),
            ));
        }
        if let Some(kf) = self
            .keyframes
            .iter()
            .find(|k| k.segment >= self.segments.len())
        {
            return Err(LocalizeError::InvalidRequest(format!(
                "keyframe references unknown segment {}",
                kf.segment
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub selected: BTreeSet<usize>,
    pub rationale: String,
    pub latency_ms: u64,
}

pub trait Localizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Produce a selection for a validated request. Callers should go
    /// through [`localize`], which also checks the result.
    fn select(&self, req: &LocalizationRequest) -> Result<LocalizationResult>;
}

/// Validate `req`, run `localizer`, and check the result invariants.
pub fn localize(
    localizer: &dyn Localizer,
    req: &LocalizationRequest,
) -> Result<LocalizationResult> {
    req.validate()?;
    let res = localizer.select(req)?;
    if res.selected.is_empty() {
        return Err(LocalizeError::InvalidResult(format!(
            "{} returned no segments",
            localizer.name()
        )));
    }
    if res.selected.len() > req.max_selected {
        return Err(LocalizeError::InvalidResult(format!(
            "{} returned {} segments, cap is {}",
            localizer.name(),
            res.selected.len(),
            req.max_selected
        )));
    }
    if let Some(bad) = res.selected.iter().find(|&&i| i >= req.segments.len()) {
        return Err(LocalizeError::InvalidResult(format!(
            "unknown segment {bad}"
        )));
    }
    Ok(res)
}

/// Selects every segment overlapping the ground-truth span. When more than
/// `max_selected` overlap, keeps the largest overlaps.
#[derive(Debug, Clone)]
pub struct OracleLocalizer {
    pub target: Span,
}

impl Localizer for OracleLocalizer {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn select(&self, req: &LocalizationRequest) -> Result<LocalizationResult> {
        let start = Instant::now();
        let mut hits: Vec<(f64, usize)> = req
            .segments
            .iter()
            .map(|s| (s.span().overlap(&self.target), s.index))
            .filter(|(o, _)| *o > 0.0)
            .collect();
        if hits.is_empty() {
            return Err(LocalizeError::InvalidResult(format!(
                "target [{}, {}] overlaps no segment",
                self.target.start_s, self.target.end_s
            )));
        }
        hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let selected = hits
            .iter()
            .take(req.max_selected)
            .map(|&(_, i)| i)
            .collect();
        Ok(LocalizationResult {
            selected,
            rationale: "ground-truth overlap".into(),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// Picks `max_selected` distinct segments uniformly at random.
#[derive(Debug, Clone)]
pub struct RandomLocalizer {
    pub seed: u64,
}

impl Localizer for RandomLocalizer {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, req: &LocalizationRequest) -> Result<LocalizationResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = req.segments.len();
        let amount = req.max_selected.min(n);
        let selected = rand::seq::index::sample(&mut rng, n, amount)
            .into_iter()
            .collect();
        Ok(LocalizationResult {
            selected,
            rationale: format!("random draw, seed {}", self.seed),
            latency_ms: 0,
        })
    }
}

/// Replays a fixed reply text, as if a model had produced it.
#[derive(Debug, Clone)]
pub struct ScriptedLocalizer {
    pub reply: String,
}

impl Localizer for ScriptedLocalizer {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn select(&self, req: &LocalizationRequest) -> Result<LocalizationResult> {
        Ok(LocalizationResult {
            selected: selection_from_reply(&self.reply, req)?,
            rationale: self.reply.clone(),
            latency_ms: 0,
        })
    }
}

fn segment_list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bsegments?\b[\s:#]*(\d+(?:\s*(?:,|&|\band\b|,\s*and\b)\s*(?:segments?\b[\s#]*)?\d+)*)",
        )
        .unwrap()
    })
}

fn frame_mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bframe\s*#?\s*(\d+)").unwrap())
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Segment indices named in a model reply; duplicates collapse.
pub fn parse_segment_reply(text: &str) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for cap in segment_list_re().captures_iter(text) {
        for d in digits_re().find_iter(&cap[1]) {
            if let Ok(v) = d.as_str().parse::<usize>() {
                out.insert(v);
            }
        }
    }
    if out.is_empty() {
        Err(LocalizeError::Parse(text.chars().take(200).collect()))
    } else {
        Ok(out)
    }
}

/// Turn a reply into a valid selection for `req`.
///
/// Out-of-range indices are dropped and the lowest `max_selected` kept. If
/// nothing usable is named, falls back to the single keyframe the reply
/// mentions most often as "Frame i" (lowest index on ties).
pub fn selection_from_reply(text: &str, req: &LocalizationRequest) -> Result<BTreeSet<usize>> {
    let n = req.segments.len();
    if let Ok(parsed) = parse_segment_reply(text) {
        let valid: BTreeSet<usize> = parsed
            .into_iter()
            .filter(|&i| i < n)
            .take(req.max_selected)
            .collect();
        if !valid.is_empty() {
            return Ok(valid);
        }
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for cap in frame_mention_re().captures_iter(text) {
        if let Ok(i) = cap[1].parse::<usize>() {
            if i < n {
                *counts.entry(i).or_default() += 1;
            }
        }
    }
    let best = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&i, _)| i);
    match best {
        Some(i) => Ok(BTreeSet::from([i])),
        None => Err(LocalizeError::Parse(text.chars().take(200).collect())),
    }
}

fn fmt_clock(t_s: f64) -> String {
    let total = t_s.max(0.0).round() as u64;
    format!("{:02}:{:02}", total / 60, total % 60)
}

/// Render the frozen stage-1 prompt for a request.
pub fn render_prompt(req: &LocalizationRequest, include_options: bool) -> String {
    let labels: Vec<String> = req
        .keyframes
        .iter()
        .map(|k| format!("Frame {} @ {}", k.segment, fmt_clock(k.t_s)))
        .collect();
    let options = match (&req.options, include_options) {
        (Some(opts), true) => {
            let mut s = String::from("Options:\n");
            for (label, text) in ["A", "B", "C", "D"].iter().zip(opts) {
                s.push_str(&format!("({label}) {text}\n"));
            }
            s
        }
        _ => String::new(),
    };
    PROMPT_TEMPLATE
        .replace("{num_frames}", &req.keyframes.len().to_string())
        .replace("{frame_labels}", &labels.join("\n"))
        .replace("{question}", &req.question)
        .replace("{options}", &options)
        .replace("{max_selected}", &req.max_selected.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    /// Send answer options to the localizer as well as the question.
    pub include_options: bool,
    /// Embed keyframe images as base64 instead of `file://` URIs.
    pub inline_images: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/localize".into(),
            model: "qwen2.5-vl-7b-instruct".into(),
            timeout_ms: 120_000,
            max_in_flight: 4,
            max_retries: 2,
            include_options: false,
            inline_images: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct WireFrame {
    segment: usize,
    t_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    question: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    options: Option<&'a [String; 4]>,
    frames: Vec<WireFrame>,
    instruction: String,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn new(slots: usize) -> Self {
        Self {
            slots: Mutex::new(slots),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// HTTP client for a vision-language model endpoint. Cheap to clone; clones
/// share the in-flight bound.
#[derive(Clone)]
pub struct RemoteLocalizer {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

impl std::fmt::Debug for RemoteLocalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLocalizer")
            .field("config", &self.config)
            .finish()
    }
}

impl RemoteLocalizer {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(LocalizeError::InvalidRequest(
                "max_in_flight must be >= 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LocalizeError::Transport(e.to_string()))?;
        let gate = Arc::new(Gate::new(config.max_in_flight));
        Ok(Self {
            config,
            client,
            gate,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn image_ref(&self, frame: &Option<PathBuf>) -> Option<String> {
        let path = frame.as_ref()?;
        if self.config.inline_images {
            if let Ok(bytes) = std::fs::read(path) {
                return Some(base64::engine::general_purpose::STANDARD.encode(bytes));
            }
        }
        let abs = std::fs::canonicalize(path).unwrap_or_else(|_| path.clone());
        Some(format!("file://{}", abs.display()))
    }

    fn body(&self, req: &LocalizationRequest) -> String {
        let wire = WireRequest {
            model: &self.config.model,
            question: &req.question,
            options: if self.config.include_options {
                req.options.as_ref()
            } else {
                None
            },
            frames: req
                .keyframes
                .iter()
                .map(|k| WireFrame {
                    segment: k.segment,
                    t_s: k.t_s,
                    image: self.image_ref(&k.frame),
                })
                .collect(),
            instruction: render_prompt(req, self.config.include_options),
        };
        serde_json::to_string(&wire).expect("request serializes")
    }

    fn attempt(&self, body: &str) -> Result<String> {
        let _slot = self.gate.acquire();
        let resp = self
            .client
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LocalizeError::Timeout(Duration::from_millis(self.config.timeout_ms))
                } else {
                    LocalizeError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                LocalizeError::Timeout(Duration::from_millis(self.config.timeout_ms))
            } else {
                LocalizeError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(LocalizeError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| LocalizeError::Transport(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}

impl Localizer for RemoteLocalizer {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn select(&self, req: &LocalizationRequest) -> Result<LocalizationResult> {
        let start = Instant::now();
        let body = self.body(req);
        let mut tries = 0;
        let text = loop {
            match self.attempt(&body) {
                Ok(text) => break text,
                Err(e) if e.retryable() && tries < self.config.max_retries => tries += 1,
                Err(e) => return Err(e),
            }
        };
        // each attempt stands alone; only the successful reply is parsed
        let selected = selection_from_reply(&text, req)?;
        Ok(LocalizationResult {
            selected,
            rationale: text,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}
