//! Frame sampling for hour-long videos.
//!
//! - [`embedding`]: per-frame embedding files, validation and normalization.
//! - [`selector`]: keyframe subset selection by dynamic programming over a
//!   similarity-plus-temporal-penalty weight matrix, with a brute-force
//!   reference and a uniform baseline.
//! - [`planner`]: two-stage plans (sparse keyframes, midpoint segments,
//!   dense re-sampling) and frame budgets.
//! - [`localizer`]: segment localization behind a common trait, including an
//!   HTTP client for vision-language model endpoints.
//! - [`eval`]: multiple-choice scoring, coverage rate, reports.
//! - [`timeline`]: SVG timeline rendering.
//! - [`simulate`]: deterministic synthetic end-to-end runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod eval;
pub mod localizer;
pub mod planner;
pub mod selector;
pub mod simulate;
pub mod timeline;

pub use embedding::{load_embeddings, uniform_timestamps, EmbeddingSequence, Format};
pub use eval::{coverage_rate, evaluate, parse_choice, EvalReport, QaRecord};
pub use localizer::{localize, LocalizationRequest, LocalizationResult, Localizer};
pub use planner::{
    budget, estimate_nsd, partition_segments, plan_stage1, plan_stage2, BudgetSummary,
    SamplingPlan, Segment, Span,
};
pub use selector::{
    build_weights, select_bruteforce, select_dp, select_uniform, BacktraceMode, SelectionResult,
    SelectorConfig, Target, WeightMatrix,
};
