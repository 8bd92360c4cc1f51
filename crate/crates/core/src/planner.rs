//! Two-stage hierarchical sampling plans.
//!
//! Stage 1 samples the whole video sparsely (optionally thinned by the
//! keyframe selector) and partitions the timeline at the midpoints between
//! consecutive keyframes. A localizer then picks segments, and stage 2
//! samples only those segments densely. [`BudgetSummary`] keeps the frame
//! accounting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{cell_count, uniform_timestamps_fpm, EmbeddingError, EmbeddingSequence};
use crate::selector::{self, SelectError, SelectorConfig, Target};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("no keyframes given")]
    NoKeyframes,
    #[error("keyframe times not strictly increasing at position {0}")]
    NonMonotone(usize),
    #[error("keyframe at position {0} lies outside [0, duration]")]
    OutOfRange(usize),
    #[error("unknown segment index {0}")]
    UnknownSegment(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("keep ratio < 1 requires embeddings for the stage-1 grid")]
    MissingEmbeddings,
    #[error("grid has {grid} samples but {embeddings} embeddings were supplied")]
    EmbeddingCountMismatch { grid: usize, embeddings: usize },
    #[error("empty cue window list")]
    NoWindows,
    #[error("cue window {0} has non-positive length")]
    EmptyWindow(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

/// A time interval in seconds; used for ground-truth targets and cue windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
}

impl Span {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    /// Length of the intersection with `other`.
    pub fn overlap(&self, other: &Span) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

/// One cell of the midpoint partition. Half-open `[start, end)`, except the
/// last segment which is closed at the video duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn span(&self) -> Span {
        Span::new(self.start_s, self.end_s)
    }

    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

/// Which segment owns time `t`; `None` outside `[0, duration]`.
pub fn segment_of(segments: &[Segment], t: f64) -> Option<usize> {
    let last = segments.last()?;
    if t < segments[0].start_s || t > last.end_s {
        return None;
    }
    let pos = segments.partition_point(|s| s.end_s <= t);
    Some(pos.min(segments.len() - 1))
}

/// Split `[0, duration]` at the midpoints between consecutive keyframes.
pub fn partition_segments(keyframe_times: &[f64], duration_s: f64) -> Result<Vec<Segment>> {
    if keyframe_times.is_empty() {
        return Err(PlanError::NoKeyframes);
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(PlanError::InvalidParam(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    for (i, &t) in keyframe_times.iter().enumerate() {
        if !(t.is_finite() && (0.0..=duration_s).contains(&t)) {
            return Err(PlanError::OutOfRange(i));
        }
        if i > 0 && t <= keyframe_times[i - 1] {
            return Err(PlanError::NonMonotone(i));
        }
    }
    let n = keyframe_times.len();
    Ok((0..n)
        .map(|i| Segment {
            index: i,
            start_s: if i == 0 {
                0.0
            } else {
                0.5 * (keyframe_times[i - 1] + keyframe_times[i])
            },
            end_s: if i + 1 == n {
                duration_s
            } else {
                0.5 * (keyframe_times[i] + keyframe_times[i + 1])
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Position in the stage-1 uniform grid (0-based).
    pub index: usize,
    pub t_s: f64,
}

/// Output of the sparse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    pub rate_fpm: f64,
    /// The full uniform grid before any filtering.
    pub grid: Vec<f64>,
    pub keyframes: Vec<Keyframe>,
    pub segments: Vec<Segment>,
    /// Selector objective when the grid was thinned.
    pub objective: Option<f64>,
}

/// Uniform grid at `rate_fpm`, thinned to `round(keep_ratio * n)` frames by
/// the selector when `keep_ratio < 1`, then partitioned.
///
/// Only `lambda`, `beta`, the backtrace mode and penalty position are read
/// from `selector`; the target comes from `keep_ratio`.
pub fn plan_stage1(
    duration_s: f64,
    rate_fpm: f64,
    keep_ratio: f64,
    seq: Option<&EmbeddingSequence>,
    selector: &SelectorConfig,
) -> Result<Stage1> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(PlanError::InvalidParam(format!(
            "keep ratio must lie in (0, 1], got {keep_ratio}"
        )));
    }
    let grid = uniform_timestamps_fpm(duration_s, rate_fpm)?;
    if grid.is_empty() {
        return Err(PlanError::InvalidParam(format!(
            "{duration_s} s at {rate_fpm} FPM yields no frames"
        )));
    }
    let (kept, objective) = if keep_ratio < 1.0 {
        let seq = seq.ok_or(PlanError::MissingEmbeddings)?;
        if seq.len() != grid.len() {
            return Err(PlanError::EmbeddingCountMismatch {
                grid: grid.len(),
                embeddings: seq.len(),
            });
        }
        let cfg = SelectorConfig {
            target: Target::KeepRatio(keep_ratio),
            ..*selector
        };
        let sel = selector::select_frames(seq, &cfg)?;
        (sel.indices, Some(sel.objective))
    } else {
        if let Some(seq) = seq {
            if seq.len() != grid.len() {
                return Err(PlanError::EmbeddingCountMismatch {
                    grid: grid.len(),
                    embeddings: seq.len(),
                });
            }
        }
        ((0..grid.len()).collect(), None)
    };
    let keyframes: Vec<Keyframe> = kept
        .into_iter()
        .map(|index| Keyframe {
            index,
            t_s: grid[index],
        })
        .collect();
    let times: Vec<f64> = keyframes.iter().map(|k| k.t_s).collect();
    let segments = partition_segments(&times, duration_s)?;
    Ok(Stage1 {
        rate_fpm,
        grid,
        keyframes,
        segments,
        objective,
    })
}

/// Center-of-cell samples at `rate_fps` inside `span`: `floor(len * rate)`
/// samples at `start + (m + 0.5) / rate`.
pub fn dense_samples(span: Span, rate_fps: f64) -> Vec<f64> {
    let count = cell_count(span.len(), rate_fps);
    (0..count)
        .map(|m| span.start_s + (m as f64 + 0.5) / rate_fps)
        .filter(|&t| t < span.end_s)
        .collect()
}

/// Dense timestamps over each selected segment, in temporal order.
pub fn plan_stage2(
    segments: &[Segment],
    selected: &BTreeSet<usize>,
    rate_fps: f64,
) -> Result<Vec<f64>> {
    if !(rate_fps.is_finite() && rate_fps > 0.0) {
        return Err(PlanError::InvalidParam(format!(
            "dense rate must be positive, got {rate_fps}"
        )));
    }
    let mut out = Vec::new();
    for &idx in selected {
        let seg = segments.get(idx).ok_or(PlanError::UnknownSegment(idx))?;
        out.extend(dense_samples(seg.span(), rate_fps));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub stage1_frames: usize,
    pub stage2_frames: usize,
    pub total_frames: usize,
    /// Total frames over the full video duration (f/s).
    pub sd_full_video: f64,
    /// Stage-2 frames over the selected duration (f/s); 0 with no selection.
    pub sd_dense: f64,
}

/// Frames per second of video.
pub fn sampling_density(frames: usize, duration_s: f64) -> f64 {
    if duration_s > 0.0 {
        frames as f64 / duration_s
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Section {
    pub rate_fpm: f64,
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Section {
    pub rate_fps: f64,
    pub timestamps: Vec<f64>,
}

/// Serialized plan; the hand-off format for frame extractors and localizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub video_id: String,
    pub stage1: Stage1Section,
    pub segments: Vec<Segment>,
    pub selected: BTreeSet<usize>,
    pub stage2: Stage2Section,
    pub budget: BudgetSummary,
}

impl SamplingPlan {
    /// Assemble a two-stage plan from stage 1 and a segment selection.
    pub fn two_stage(
        video_id: impl Into<String>,
        stage1: &Stage1,
        selected: BTreeSet<usize>,
        rate_fps: f64,
    ) -> Result<Self> {
        let timestamps = plan_stage2(&stage1.segments, &selected, rate_fps)?;
        Ok(Self::finish(
            video_id.into(),
            Stage1Section {
                rate_fpm: stage1.rate_fpm,
                keyframes: stage1.keyframes.clone(),
            },
            stage1.segments.clone(),
            selected,
            Stage2Section {
                rate_fps,
                timestamps,
            },
        ))
    }

    /// Oracle setting: no sparse stage, dense sampling of the target span
    /// only. The timeline is split at the span boundaries so the target is a
    /// segment of its own.
    pub fn oracle(
        video_id: impl Into<String>,
        duration_s: f64,
        target: Span,
        rate_fps: f64,
    ) -> Result<Self> {
        if !(duration_s > 0.0
            && target.start_s >= 0.0
            && target.end_s <= duration_s
            && !target.is_empty())
        {
            return Err(PlanError::InvalidParam(format!(
                "target [{}, {}] must be a non-empty span inside [0, {duration_s}]",
                target.start_s, target.end_s
            )));
        }
        let mut bounds = vec![0.0];
        for b in [target.start_s, target.end_s] {
            if b > *bounds.last().unwrap() && b < duration_s {
                bounds.push(b);
            }
        }
        bounds.push(duration_s);
        let segments: Vec<Segment> = bounds
            .windows(2)
            .enumerate()
            .map(|(index, w)| Segment {
                index,
                start_s: w[0],
                end_s: w[1],
            })
            .collect();
        let target_idx = segments
            .iter()
            .position(|s| s.start_s == target.start_s)
            .expect("target start is a boundary");
        let selected = BTreeSet::from([target_idx]);
        let timestamps = plan_stage2(&segments, &selected, rate_fps)?;
        Ok(Self::finish(
            video_id.into(),
            Stage1Section {
                rate_fpm: 0.0,
                keyframes: Vec::new(),
            },
            segments,
            selected,
            Stage2Section {
                rate_fps,
                timestamps,
            },
        ))
    }

    /// Single-stage baseline: `frames` center-of-cell samples over the whole
    /// video.
    pub fn uniform(video_id: impl Into<String>, duration_s: f64, frames: usize) -> Result<Self> {
        if !(duration_s > 0.0) || frames == 0 {
            return Err(PlanError::InvalidParam(format!(
                "need a positive duration and frame count, got {duration_s} s / {frames}"
            )));
        }
        let step = duration_s / frames as f64;
        let timestamps = (0..frames).map(|m| (m as f64 + 0.5) * step).collect();
        Ok(Self::finish(
            video_id.into(),
            Stage1Section {
                rate_fpm: 0.0,
                keyframes: Vec::new(),
            },
            vec![Segment {
                index: 0,
                start_s: 0.0,
                end_s: duration_s,
            }],
            BTreeSet::from([0]),
            Stage2Section {
                rate_fps: frames as f64 / duration_s,
                timestamps,
            },
        ))
    }

    fn finish(
        video_id: String,
        stage1: Stage1Section,
        segments: Vec<Segment>,
        selected: BTreeSet<usize>,
        stage2: Stage2Section,
    ) -> Self {
        let mut plan = Self {
            video_id,
            stage1,
            segments,
            selected,
            stage2,
            budget: BudgetSummary {
                stage1_frames: 0,
                stage2_frames: 0,
                total_frames: 0,
                sd_full_video: 0.0,
                sd_dense: 0.0,
            },
        };
        plan.budget = budget(&plan, plan.duration_s());
        plan
    }

    /// Video duration, taken from the end of the last segment.
    pub fn duration_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_s)
    }

    pub fn selected_segments(&self) -> Vec<Segment> {
        self.selected
            .iter()
            .filter_map(|&i| self.segments.get(i).copied())
            .collect()
    }

    /// Check the structural invariants: contiguous partition, one keyframe
    /// per segment for two-stage plans, stage-2 samples increasing and inside
    /// selected segments, budget consistent.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let segs = &self.segments;
        if segs.is_empty() {
            return Err("plan has no segments".into());
        }
        if segs[0].start_s != 0.0 {
            return Err("first segment must start at 0".into());
        }
        for (i, s) in segs.iter().enumerate() {
            if s.index != i {
                return Err(format!("segment {i} carries index {}", s.index));
            }
            if !(s.start_s < s.end_s) {
                return Err(format!("segment {i} is empty"));
            }
            if i > 0 && segs[i - 1].end_s != s.start_s {
                return Err(format!("gap or overlap before segment {i}"));
            }
        }
        if !self.stage1.keyframes.is_empty() {
            if self.stage1.keyframes.len() != segs.len() {
                return Err("keyframe count differs from segment count".into());
            }
            for (i, kf) in self.stage1.keyframes.iter().enumerate() {
                if segment_of(segs, kf.t_s) != Some(i) {
                    return Err(format!("keyframe {i} lies outside segment {i}"));
                }
            }
        }
        if let Some(&bad) = self.selected.iter().find(|&&i| i >= segs.len()) {
            return Err(format!("selected segment {bad} does not exist"));
        }
        let ts = &self.stage2.timestamps;
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err("stage-2 timestamps not strictly increasing".into());
        }
        for &t in ts {
            match segment_of(segs, t) {
                Some(i) if self.selected.contains(&i) => {}
                _ => return Err(format!("stage-2 timestamp {t} outside selected segments")),
            }
        }
        if self.budget != budget(self, self.duration_s()) {
            return Err("budget does not match plan contents".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Frame accounting for `plan` over a video of `duration_s` seconds.
pub fn budget(plan: &SamplingPlan, duration_s: f64) -> BudgetSummary {
    let stage1_frames = plan.stage1.keyframes.len();
    let stage2_frames = plan.stage2.timestamps.len();
    let total_frames = stage1_frames + stage2_frames;
    let dense_len: f64 = plan.selected_segments().iter().map(Segment::len).sum();
    BudgetSummary {
        stage1_frames,
        stage2_frames,
        total_frames,
        sd_full_video: sampling_density(total_frames, duration_s),
        sd_dense: sampling_density(stage2_frames, dense_len),
    }
}

/// Necessary sampling density: the smallest uniform rate that puts at least
/// one sample inside every cue window for any sampling phase, i.e. one over
/// the shortest window.
pub fn estimate_nsd(cue_windows: &[Span]) -> Result<f64> {
    if cue_windows.is_empty() {
        return Err(PlanError::NoWindows);
    }
    let mut shortest = f64::INFINITY;
    for (i, w) in cue_windows.iter().enumerate() {
        let len = w.len();
        if !(len.is_finite() && len > 0.0) {
            return Err(PlanError::EmptyWindow(i));
        }
        shortest = shortest.min(len);
    }
    Ok(1.0 / shortest)
}
