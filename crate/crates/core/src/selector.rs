//! Diversity-maximizing keyframe subset selection.
//!
//! Frames are scored pairwise by `W[i][j] = S[i][j] + P[i][j]`, where `S` is
//! the cosine similarity of the two embeddings and
//! `P[i][j] = -lambda * |i/n - j/n|^beta` penalizes temporal proximity. The
//! selector picks `k` frames minimizing the sum of `W` over consecutive
//! selected pairs.
//!
//! Formulas use 1-based frame positions; everything in the public API is
//! 0-based. The conversion happens only inside this module.

use std::io::Write;
use std::path::Path;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_norm, EmbeddingSequence};

/// Brute force refuses instances with more subsets than this.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("k = {k} is outside [1, {n}]")]
    InvalidK { k: usize, n: usize },
    #[error("keep ratio {0} is outside (0, 1]")]
    InvalidRatio(f64),
    #[error("invalid selector parameter: {0}")]
    InvalidParam(String),
    #[error("zero-norm embedding at row {row}")]
    ZeroNorm { row: usize },
    #[error("index {index} out of range for {n} frames")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("need at least 2 frames to build weights, got {0}")]
    TooFewFrames(usize),
    #[error("C({n}, {k}) subsets exceeds the brute-force limit")]
    InstanceTooLarge { n: usize, k: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SelectError>;

/// How the selected set is reconstructed from the DP tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BacktraceMode {
    /// Walk `trace` back from the last frame, exactly like the reference
    /// pseudocode. The last frame is always selected.
    Faithful,
    /// Take the optimum over every possible end frame; returns the true
    /// minimizer of the objective (lexicographically smallest on ties).
    #[default]
    MinEnd,
}

impl std::str::FromStr for BacktraceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "faithful" => Ok(Self::Faithful),
            "min-end" | "min_end" => Ok(Self::MinEnd),
            other => Err(format!("unknown backtrace mode `{other}`")),
        }
    }
}

/// Where the temporal penalty reads frame positions from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyPosition {
    /// `i / n` (frame ordinal over count).
    #[default]
    Index,
    /// `t_i / duration`, for sequences that are not uniformly sampled.
    Timestamp,
}

/// Number of frames to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Count(usize),
    KeepRatio(f64),
}

impl Target {
    /// Resolve to a concrete `k` for `n` frames. Ratios round to nearest,
    /// never below 1.
    pub fn resolve(self, n: usize) -> Result<usize> {
        let k = match self {
            Target::Count(k) => k,
            Target::KeepRatio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(SelectError::InvalidRatio(r));
                }
                ((r * n as f64).round() as usize).max(1)
            }
        };
        if k < 1 || k > n {
            return Err(SelectError::InvalidK { k, n });
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub lambda: f64,
    pub beta: f64,
    pub target: Target,
    pub mode: BacktraceMode,
    pub position: PenaltyPosition,
}

impl SelectorConfig {
    pub const DEFAULT_LAMBDA: f64 = 10.0;
    pub const DEFAULT_BETA: f64 = 0.3;
    pub const DEFAULT_KEEP_RATIO: f64 = 0.25;

    pub fn with_target(target: Target) -> Self {
        Self {
            target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SelectError::InvalidParam(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(SelectError::InvalidParam(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            lambda: Self::DEFAULT_LAMBDA,
            beta: Self::DEFAULT_BETA,
            target: Target::KeepRatio(Self::DEFAULT_KEEP_RATIO),
            mode: BacktraceMode::MinEnd,
            position: PenaltyPosition::Index,
        }
    }
}

/// Cosine similarity of rows `i` and `j` (0-based).
pub fn similarity(seq: &EmbeddingSequence, i: usize, j: usize) -> Result<f64> {
    let n = seq.len();
    for index in [i, j] {
        if index >= n {
            return Err(SelectError::IndexOutOfRange { index, n });
        }
    }
    cosine(seq.row(i), seq.row(j), i, j)
}

fn cosine(a: &[f64], b: &[f64], i: usize, j: usize) -> Result<f64> {
    let na = l2_norm(a);
    if na == 0.0 {
        return Err(SelectError::ZeroNorm { row: i });
    }
    let nb = l2_norm(b);
    if nb == 0.0 {
        return Err(SelectError::ZeroNorm { row: j });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `-lambda * |i/n - j/n|^beta`. Positions may be 0- or 1-based; only the
/// gap matters.
pub fn penalty(i: usize, j: usize, n: usize, lambda: f64, beta: f64) -> f64 {
    let gap = i.abs_diff(j) as f64 / n as f64;
    penalty_at_gap(gap, lambda, beta)
}

fn penalty_at_gap(gap: f64, lambda: f64, beta: f64) -> f64 {
    if gap == 0.0 || lambda == 0.0 {
        return 0.0;
    }
    -lambda * gap.powf(beta)
}

/// Upper triangle of the pairwise weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    // row-major packed strict upper triangle: (0,1), (0,2), ..., (1,2), ...
    upper: Vec<f64>,
    lambda: f64,
    beta: f64,
}

impl WeightMatrix {
    /// Build from an explicit weight function on 0-based pairs `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(i, j));
            }
        }
        Self {
            n,
            upper,
            lambda: f64::NAN,
            beta: f64::NAN,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Penalty parameters used at construction, NaN for `from_fn` matrices.
    pub fn params(&self) -> (f64, f64) {
        (self.lambda, self.beta)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        // start of row i in the packed triangle, then column offset
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// `W` for 0-based frames `i != j`; symmetric.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i != j && i < self.n && j < self.n);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.upper[self.offset(a, b)]
    }

    /// Shift every entry by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            upper: self.upper.iter().map(|w| w + c).collect(),
            ..self.clone()
        }
    }

    /// Sum of `W` along consecutive entries of `indices` (0-based), left to
    /// right.
    pub fn path_cost(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .tuple_windows()
            .fold(0.0, |acc, (&a, &b)| acc + self.get(a, b))
    }

    /// Dump as `i,j,value` lines (0-based, upper triangle only).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "i,j,value")?;
        for i in 0..self.n {
            for j in i + 1..self.n {
                writeln!(out, "{i},{j},{}", self.get(i, j))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Build `W = S + P` for every pair of frames. Rows are computed in parallel.
pub fn build_weights(seq: &EmbeddingSequence, cfg: &SelectorConfig) -> Result<WeightMatrix> {
    cfg.validate()?;
    let n = seq.len();
    if n < 2 {
        return Err(SelectError::TooFewFrames(n));
    }
    let norms: Vec<f64> = seq.rows().map(l2_norm).collect();
    if let Some(row) = norms.iter().position(|&v| v == 0.0) {
        return Err(SelectError::ZeroNorm { row });
    }
    let positions: Vec<f64> = match cfg.position {
        // 1-based i/n; the gap is all that matters
        PenaltyPosition::Index => (1..=n).map(|i| i as f64 / n as f64).collect(),
        PenaltyPosition::Timestamp => seq
            .timestamps()
            .iter()
            .map(|t| t / seq.duration_s())
            .collect(),
    };
    let (lambda, beta) = (cfg.lambda, cfg.beta);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = seq.row(i);
            (i + 1..n)
                .map(|j| {
                    let b = seq.row(j);
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let s = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                    let gap = match cfg.position {
                        PenaltyPosition::Index => (j - i) as f64 / n as f64,
                        PenaltyPosition::Timestamp => (positions[j] - positions[i]).abs(),
                    };
                    s + penalty_at_gap(gap, lambda, beta)
                })
                .collect()
        })
        .collect();
    Ok(WeightMatrix {
        n,
        upper: rows.concat(),
        lambda,
        beta,
    })
}

/// Selected frames (0-based, strictly increasing) and their objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub objective: f64,
    pub mode: SelectionMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    DpFaithful,
    DpMinEnd,
    BruteForce,
    Uniform,
}

/// Dynamic-programming subset selection.
///
/// `dp[i][j]` is the minimum cost of picking `j` frames with the last one at
/// frame `i` (1-based); frame 0 is a virtual start with `W[0][i] = 0`.
/// Complexity is `O(n^2 k)` time and `O(n k)` memory.
pub fn select_dp(w: &WeightMatrix, k: usize, mode: BacktraceMode) -> Result<SelectionResult> {
    let n = w.len();
    if k < 1 || k > n {
        return Err(SelectError::InvalidK { k, n });
    }
    let tables = DpTables::fill(w, k);
    let DpTables { dp, trace, .. } = &tables;
    let at = |i: usize, j: usize| j * (n + 1) + i;

    let (indices, objective) = match mode {
        BacktraceMode::Faithful => {
            let mut sel = Vec::with_capacity(k);
            let (mut i, mut j) = (n, k);
            while j > 0 {
                sel.push(i - 1);
                i = trace[at(i, j)] as usize;
                j -= 1;
            }
            sel.reverse();
            (sel, dp[at(n, k)])
        }
        BacktraceMode::MinEnd => {
            let best = (k..=n).map(|i| dp[at(i, k)]).fold(f64::INFINITY, f64::min);
            (tables.lexmin_optimal_path(k, best), best)
        }
    };

    Ok(SelectionResult {
        indices,
        objective,
        mode: match mode {
            BacktraceMode::Faithful => SelectionMethod::DpFaithful,
            BacktraceMode::MinEnd => SelectionMethod::DpMinEnd,
        },
    })
}

/// DP state. `dp[j * (n + 1) + i]` is the best cost of `j` frames ending at
/// frame `i` (1-based); each `j` layer is contiguous so the inner loop reads
/// memory in order.
struct DpTables {
    n: usize,
    dp: Vec<f64>,
    trace: Vec<u32>,
    /// `lower[i(i-1)/2 + p] = W[p][i]` for 0-based `p < i`.
    lower: Vec<f64>,
}

impl DpTables {
    fn fill(w: &WeightMatrix, k: usize) -> Self {
        let n = w.len();
        let mut lower = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            lower.extend((0..i).map(|p| w.get(p, i)));
        }
        let stride = n + 1;
        let mut dp = vec![f64::INFINITY; stride * (k + 1)];
        let mut trace = vec![u32::MAX; stride * (k + 1)];
        dp[0] = 0.0;

        for j in 1..=k {
            let (done, rest) = dp.split_at_mut(j * stride);
            let prev = &done[(j - 1) * stride..];
            let cur = &mut rest[..stride];
            let arg_row = &mut trace[j * stride..(j + 1) * stride];
            for i in j..=n {
                // the virtual start (p = 0) pays no weight
                let (mut best, mut arg) = if j == 1 {
                    (prev[0], 0u32)
                } else {
                    (f64::INFINITY, u32::MAX)
                };
                let first = (j - 1).max(1);
                let row = i - 1;
                let col = &lower[row * row.saturating_sub(1) / 2..][..row];
                for (p, (&d, &wt)) in prev[first..i].iter().zip(&col[first - 1..]).enumerate() {
                    let cand = d + wt;
                    if cand < best {
                        best = cand;
                        arg = (p + first) as u32;
                    }
                }
                cur[i] = best;
                arg_row[i] = arg;
            }
        }
        Self {
            n,
            dp,
            trace,
            lower,
        }
    }

    #[inline]
    fn weight(&self, p: usize, i: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.lower[(i - 1) * (i - 2) / 2 + (p - 1)]
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    fn tight(&self, p: usize, i: usize, j: usize) -> bool {
        self.dp[self.at(p, j - 1)] + self.weight(p, i) == self.dp[self.at(i, j)]
    }

    /// Among all optimal selections, recover the lexicographically smallest.
    ///
    /// A link `p -> (i, j)` is tight when `dp[p][j-1] + W[p][i] == dp[i][j]`.
    /// Every state on a tight chain ending at an optimal end frame is marked
    /// backwards; the answer is then read forwards, always taking the
    /// smallest marked successor reachable over a tight link.
    fn lexmin_optimal_path(&self, k: usize, best: f64) -> Vec<usize> {
        let n = self.n;
        let mut on_path = vec![false; (n + 1) * (k + 1)];
        for i in k..=n {
            on_path[self.at(i, k)] = self.dp[self.at(i, k)] == best;
        }
        for j in (1..=k).rev() {
            for i in j..=n {
                if !on_path[self.at(i, j)] {
                    continue;
                }
                for p in j - 1..i {
                    if self.tight(p, i, j) {
                        on_path[self.at(p, j - 1)] = true;
                    }
                }
            }
        }

        let mut sel = Vec::with_capacity(k);
        let mut prev = 0usize;
        for j in 1..=k {
            let next = (prev + 1..=n)
                .find(|&i| on_path[self.at(i, j)] && self.tight(prev, i, j))
                .expect("optimal chain is connected");
            sel.push(next - 1);
            prev = next;
        }
        sel
    }
}

/// Exhaustive search over all `k`-subsets, in lexicographic order; the first
/// subset reaching the minimum wins.
pub fn select_bruteforce(w: &WeightMatrix, k: usize) -> Result<SelectionResult> {
    let n = w.len();
    if k < 1 || k > n {
        return Err(SelectError::InvalidK { k, n });
    }
    if binomial(n, k) > BRUTEFORCE_LIMIT {
        return Err(SelectError::InstanceTooLarge { n, k });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for combo in (0..n).combinations(k) {
        let cost = w.path_cost(&combo);
        if best.as_ref().is_none_or(|(_, b)| cost < *b) {
            best = Some((combo, cost));
        }
    }
    let (indices, objective) = best.expect("at least one subset");
    Ok(SelectionResult {
        indices,
        objective,
        mode: SelectionMethod::BruteForce,
    })
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Evenly spaced baseline: 1-based positions `round((j - 0.5) * n / k)`,
/// nudged to stay strictly increasing inside `[1, n]`.
pub fn select_uniform(n: usize, k: usize, w: Option<&WeightMatrix>) -> Result<SelectionResult> {
    if k < 1 || k > n {
        return Err(SelectError::InvalidK { k, n });
    }
    let step = n as f64 / k as f64;
    let mut pos: Vec<usize> = (1..=k)
        .map(|j| (((j as f64 - 0.5) * step).round() as usize).clamp(1, n))
        .collect();
    for j in 1..k {
        if pos[j] <= pos[j - 1] {
            pos[j] = pos[j - 1] + 1;
        }
    }
    for j in (0..k).rev() {
        let cap = n - (k - 1 - j);
        if pos[j] > cap {
            pos[j] = cap;
        }
        if j + 1 < k && pos[j] >= pos[j + 1] {
            pos[j] = pos[j + 1] - 1;
        }
    }
    let indices: Vec<usize> = pos.into_iter().map(|p| p - 1).collect();
    let objective = w.map_or(f64::NAN, |w| w.path_cost(&indices));
    Ok(SelectionResult {
        indices,
        objective,
        mode: SelectionMethod::Uniform,
    })
}

/// Weights, resolved `k` and DP selection in one call.
pub fn select_frames(seq: &EmbeddingSequence, cfg: &SelectorConfig) -> Result<SelectionResult> {
    let n = seq.len();
    let k = cfg.target.resolve(n)?;
    if n == 1 {
        // k == 1 here; nothing to weigh
        return Ok(SelectionResult {
            indices: vec![0],
            objective: 0.0,
            mode: match cfg.mode {
                BacktraceMode::Faithful => SelectionMethod::DpFaithful,
                BacktraceMode::MinEnd => SelectionMethod::DpMinEnd,
            },
        });
    }
    let w = build_weights(seq, cfg)?;
    select_dp(&w, k, cfg.mode)
}
