//! Run configuration. Values are layered: built-in defaults, then the TOML
//! config file, then `LONGVID_*` environment variables, then command-line
//! flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use longvid_core::localizer::RemoteConfig;
use longvid_core::selector::{BacktraceMode, PenaltyPosition, SelectorConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LocalizerKind {
    Oracle,
    Random,
    Scripted,
    Remote,
}

impl std::str::FromStr for LocalizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Paths {
    pub embeddings_dir: PathBuf,
    pub qa_file: Option<PathBuf>,
    pub plans_dir: PathBuf,
    pub reports_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizerSettings {
    pub kind: LocalizerKind,
    /// `None`: 2 for model-backed localizers, every overlapping segment for
    /// the oracle.
    pub max_selected: Option<usize>,
    /// Canned reply for the scripted localizer.
    pub reply: Option<String>,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub lambda: f64,
    pub beta: f64,
    pub keep_ratio: f64,
    pub backtrace_mode: BacktraceMode,
    pub position: PenaltyPosition,
    pub stage1_fpm: f64,
    pub stage2_fps: f64,
    pub localizer: LocalizerSettings,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                embeddings_dir: PathBuf::from("embeddings"),
                qa_file: None,
                plans_dir: PathBuf::from("plans"),
                reports_dir: PathBuf::from("reports"),
            },
            lambda: SelectorConfig::DEFAULT_LAMBDA,
            beta: SelectorConfig::DEFAULT_BETA,
            keep_ratio: SelectorConfig::DEFAULT_KEEP_RATIO,
            backtrace_mode: BacktraceMode::MinEnd,
            position: PenaltyPosition::Index,
            stage1_fpm: 4.0,
            stage2_fps: 1.0,
            localizer: LocalizerSettings {
                kind: LocalizerKind::Oracle,
                max_selected: None,
                reply: None,
                remote: RemoteConfig::default(),
            },
            jobs: 1,
            seed: 0,
        }
    }
}

/// One configuration layer; unset fields leave the layer below untouched.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub embeddings_dir: Option<PathBuf>,
    pub qa_file: Option<PathBuf>,
    pub plans_dir: Option<PathBuf>,
    pub reports_dir: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub keep_ratio: Option<f64>,
    pub backtrace_mode: Option<BacktraceMode>,
    pub position: Option<PenaltyPosition>,
    pub stage1_fpm: Option<f64>,
    pub stage2_fps: Option<f64>,
    pub localizer: Option<LocalizerKind>,
    pub max_selected: Option<usize>,
    pub reply: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub max_retries: Option<u32>,
    pub include_options: Option<bool>,
    pub inline_images: Option<bool>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl RunConfig {
    pub fn apply(&mut self, layer: Layer) {
        overlay!(self.paths.embeddings_dir, layer.embeddings_dir);
        if layer.qa_file.is_some() {
            self.paths.qa_file = layer.qa_file;
        }
        overlay!(self.paths.plans_dir, layer.plans_dir);
        overlay!(self.paths.reports_dir, layer.reports_dir);
        overlay!(self.lambda, layer.lambda);
        overlay!(self.beta, layer.beta);
        overlay!(self.keep_ratio, layer.keep_ratio);
        overlay!(self.backtrace_mode, layer.backtrace_mode);
        overlay!(self.position, layer.position);
        overlay!(self.stage1_fpm, layer.stage1_fpm);
        overlay!(self.stage2_fps, layer.stage2_fps);
        overlay!(self.localizer.kind, layer.localizer);
        if layer.max_selected.is_some() {
            self.localizer.max_selected = layer.max_selected;
        }
        if layer.reply.is_some() {
            self.localizer.reply = layer.reply;
        }
        let remote = &mut self.localizer.remote;
        overlay!(remote.endpoint, layer.endpoint);
        overlay!(remote.model, layer.model);
        overlay!(remote.timeout_ms, layer.timeout_ms);
        overlay!(remote.max_in_flight, layer.max_in_flight);
        overlay!(remote.max_retries, layer.max_retries);
        overlay!(remote.include_options, layer.include_options);
        overlay!(remote.inline_images, layer.inline_images);
        overlay!(self.jobs, layer.jobs);
        overlay!(self.seed, layer.seed);
    }

    pub fn selector(&self) -> SelectorConfig {
        SelectorConfig {
            lambda: self.lambda,
            beta: self.beta,
            mode: self.backtrace_mode,
            position: self.position,
            ..SelectorConfig::default()
        }
    }

    /// Check value ranges. Paths are checked by the commands that use them.
    pub fn validate(&self) -> Result<()> {
        if !(self.stage1_fpm.is_finite() && self.stage1_fpm > 0.0) {
            bail!("stage1_fpm must be positive, got {}", self.stage1_fpm);
        }
        if !(self.stage2_fps.is_finite() && self.stage2_fps > 0.0) {
            bail!("stage2_fps must be positive, got {}", self.stage2_fps);
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            bail!("keep_ratio must lie in (0, 1], got {}", self.keep_ratio);
        }
        if self.jobs == 0 {
            bail!("jobs must be >= 1");
        }
        if self.localizer.max_selected == Some(0) {
            bail!("max_selected must be >= 1");
        }
        if self.localizer.remote.max_in_flight == 0 {
            bail!("max_in_flight must be >= 1");
        }
        self.selector().validate()?;
        Ok(())
    }
}

pub fn layer_from_file(path: &Path) -> Result<Layer> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Read `LONGVID_*` variables through `lookup`.
pub fn layer_from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Layer> {
    fn parse<T: std::str::FromStr>(
        lookup: &impl Fn(&str) -> Option<String>,
        key: &str,
    ) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match lookup(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("environment variable {key}={v:?}: {e}")),
        }
    }
    let path = |key: &str| lookup(key).map(PathBuf::from);
    Ok(Layer {
        embeddings_dir: path("LONGVID_EMBEDDINGS_DIR"),
        qa_file: path("LONGVID_QA_FILE"),
        plans_dir: path("LONGVID_PLANS_DIR"),
        reports_dir: path("LONGVID_REPORTS_DIR"),
        lambda: parse(&lookup, "LONGVID_LAMBDA")?,
        beta: parse(&lookup, "LONGVID_BETA")?,
        keep_ratio: parse(&lookup, "LONGVID_KEEP_RATIO")?,
        backtrace_mode: parse(&lookup, "LONGVID_BACKTRACE_MODE")?,
        position: None,
        stage1_fpm: parse(&lookup, "LONGVID_STAGE1_FPM")?,
        stage2_fps: parse(&lookup, "LONGVID_STAGE2_FPS")?,
        localizer: parse(&lookup, "LONGVID_LOCALIZER")?,
        max_selected: parse(&lookup, "LONGVID_MAX_SELECTED")?,
        reply: lookup("LONGVID_LOCALIZER_REPLY"),
        endpoint: lookup("LONGVID_LOCALIZER_URL"),
        model: lookup("LONGVID_LOCALIZER_MODEL"),
        timeout_ms: parse(&lookup, "LONGVID_LOCALIZER_TIMEOUT_MS")?,
        max_in_flight: parse(&lookup, "LONGVID_LOCALIZER_MAX_IN_FLIGHT")?,
        max_retries: parse(&lookup, "LONGVID_LOCALIZER_RETRIES")?,
        include_options: parse(&lookup, "LONGVID_LOCALIZER_INCLUDE_OPTIONS")?,
        inline_images: parse(&lookup, "LONGVID_LOCALIZER_INLINE_IMAGES")?,
        jobs: parse(&lookup, "LONGVID_JOBS")?,
        seed: parse(&lookup, "LONGVID_SEED")?,
    })
}
