//! `longvid`: frame selection, two-stage sampling plans, and evaluation for
//! long videos.
//!
//! Exit status is 0 on success, 1 on runtime failures (I/O, localizer,
//! extraction) and 2 on usage or validation errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use longvid_core::selector::BacktraceMode;

use crate::config::{Layer, LocalizerKind, RunConfig};

/// Marks an error as a usage or validation problem (exit status 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl std::fmt::Display) -> anyhow::Error {
    Invalid(msg.to_string()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "longvid",
    version,
    about = "Frame sampling plans for long-video question answering"
)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SelectorArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    keep_ratio: Option<f64>,
    /// `min-end` or `faithful`.
    #[arg(long = "backtrace")]
    backtrace_mode: Option<BacktraceMode>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RateArgs {
    #[arg(long)]
    stage1_fpm: Option<f64>,
    #[arg(long)]
    stage2_fps: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct LocalizerArgs {
    #[arg(long, value_enum)]
    localizer: Option<LocalizerKind>,
    #[arg(long)]
    max_selected: Option<usize>,
    /// Canned reply for `--localizer scripted`.
    #[arg(long)]
    reply: Option<String>,
    #[arg(long = "localizer-url")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long = "retries")]
    max_retries: Option<u32>,
    #[arg(long)]
    include_options: bool,
    #[arg(long)]
    inline_images: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Bin,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimLocalizerArg {
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnswererArg {
    Correct,
    Random,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pick k frames from an embedding file.
    Select {
        embeddings: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Frames to keep; defaults to keep_ratio of the sequence.
        #[arg(short, long, value_parser = commands::parse_k)]
        k: Option<usize>,
        #[command(flatten)]
        selector: SelectorArgs,
        /// Evenly spaced baseline instead of the DP.
        #[arg(long)]
        uniform: bool,
        /// Also dump the weight matrix as `i,j,value` rows.
        #[arg(long, value_name = "FILE")]
        weights_csv: Option<PathBuf>,
        #[arg(short, long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build two-stage sampling plans.
    Plan(Box<commands::PlanArgs>),
    /// Split a timeline at keyframe midpoints.
    Partition {
        /// Comma-separated keyframe times in seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        keyframes: Vec<f64>,
        #[arg(long)]
        duration: f64,
        #[arg(short, long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Necessary sampling density for a set of cue windows.
    Nsd {
        /// `START:END` in seconds; repeatable.
        #[arg(long = "window", value_parser = commands::parse_span)]
        windows: Vec<longvid_core::Span>,
        /// JSON array of `{start_s, end_s}` objects.
        #[arg(long, value_name = "FILE")]
        windows_file: Option<PathBuf>,
    },
    /// Score replies against a QA file.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        qa: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        replies: PathBuf,
        /// Directory of `<id>.plan.json` files.
        #[arg(long, value_name = "DIR")]
        plans_dir: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Render a plan as an SVG timeline.
    Timeline {
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        /// Ground-truth span `START:END`.
        #[arg(long, value_parser = commands::parse_span)]
        gt: Option<longvid_core::Span>,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Synthetic end-to-end run.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        items: usize,
        /// Fixed video length; random 30-60 min when absent.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 180.0)]
        target_len: f64,
        #[arg(long, value_enum, default_value = "oracle")]
        localizer: SimLocalizerArg,
        #[arg(long)]
        max_selected: Option<usize>,
        #[arg(long, value_enum, default_value = "correct")]
        answerer: AnswererArg,
        /// Also write `timelines/<id>.svg`.
        #[arg(long)]
        timelines: bool,
        #[command(flatten)]
        selector: SelectorArgs,
        #[command(flatten)]
        rates: RateArgs,
    },
}

impl SelectorArgs {
    fn layer(&self) -> Layer {
        Layer {
            lambda: self.lambda,
            beta: self.beta,
            keep_ratio: self.keep_ratio,
            backtrace_mode: self.backtrace_mode,
            ..Layer::default()
        }
    }
}

impl RateArgs {
    fn layer(&self) -> Layer {
        Layer {
            stage1_fpm: self.stage1_fpm,
            stage2_fps: self.stage2_fps,
            ..Layer::default()
        }
    }
}

impl LocalizerArgs {
    fn layer(&self) -> Layer {
        Layer {
            localizer: self.localizer,
            max_selected: self.max_selected,
            reply: self.reply.clone(),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            timeout_ms: self.timeout_ms,
            max_in_flight: self.max_in_flight,
            max_retries: self.max_retries,
            include_options: self.include_options.then_some(true),
            inline_images: self.inline_images.then_some(true),
            ..Layer::default()
        }
    }
}

fn flag_layers(cli: &Cli) -> Vec<Layer> {
    let mut layers = vec![Layer {
        seed: cli.seed,
        jobs: cli.jobs,
        ..Layer::default()
    }];
    match &cli.command {
        Command::Select { selector, .. } => layers.push(selector.layer()),
        Command::Plan(p) => {
            layers.push(p.selector.layer());
            layers.push(p.rates.layer());
            layers.push(p.localizer.layer());
            layers.push(Layer {
                embeddings_dir: p.embeddings_dir.clone(),
                plans_dir: p.plans_dir.clone(),
                qa_file: p.qa.clone(),
                ..Layer::default()
            });
        }
        Command::Evaluate {
            qa,
            plans_dir,
            out_dir,
            ..
        } => layers.push(Layer {
            qa_file: qa.clone(),
            plans_dir: plans_dir.clone(),
            reports_dir: out_dir.clone(),
            ..Layer::default()
        }),
        Command::Simulate {
            selector, rates, ..
        } => {
            layers.push(selector.layer());
            layers.push(rates.layer());
        }
        Command::Partition { .. } | Command::Nsd { .. } | Command::Timeline { .. } => {}
    }
    layers
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply(config::layer_from_file(path).map_err(|e| invalid(format!("{e:#}")))?);
    }
    cfg.apply(
        config::layer_from_env(|k| std::env::var(k).ok()).map_err(|e| invalid(format!("{e:#}")))?,
    );
    for layer in flag_layers(cli) {
        cfg.apply(layer);
    }
    cfg.validate().map_err(|e| invalid(format!("{e:#}")))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()?;
    pool.install(|| match cli.command {
        Command::Select {
            embeddings,
            format,
            k,
            selector: _,
            uniform,
            weights_csv,
            out,
        } => commands::select(
            &cfg,
            &embeddings,
            format,
            k,
            uniform,
            weights_csv.as_deref(),
            out.as_deref(),
        ),
        Command::Plan(args) => commands::plan(&cfg, &args),
        Command::Partition {
            keyframes,
            duration,
            out,
        } => commands::partition(&keyframes, duration, out.as_deref()),
        Command::Nsd {
            windows,
            windows_file,
        } => commands::nsd(windows, windows_file.as_deref()),
        Command::Evaluate {
            replies, plans_dir, ..
        } => commands::evaluate(&cfg, &replies, plans_dir.is_some()),
        Command::Timeline { plan, gt, out } => commands::timeline(&plan, gt, &out),
        Command::Simulate {
            out_dir,
            items,
            duration,
            target_len,
            localizer,
            max_selected,
            answerer,
            timelines,
            ..
        } => commands::simulate(
            &cfg,
            &commands::SimulateArgs {
                out_dir,
                items,
                duration,
                target_len,
                localizer,
                max_selected,
                answerer,
                timelines,
            },
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
