//! SVG timeline of a sampling plan.
//!
//! Layers, bottom to top: ground-truth band, selected segments, the video
//! axis, stage-1 ticks above the axis and stage-2 ticks below it. Every
//! sampled frame is one `<line class="tick ...">` element. Coordinates are
//! printed with fixed precision so output is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use crate::planner::{SamplingPlan, Span};

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 120.0;
const MARGIN: f64 = 40.0;
const AXIS_Y: f64 = 60.0;

fn x_of(t: f64, duration: f64) -> f64 {
    MARGIN + (WIDTH - 2.0 * MARGIN) * (t / duration).clamp(0.0, 1.0)
}

/// Render the timeline markup.
pub fn render_timeline(plan: &SamplingPlan, gt: Option<Span>) -> String {
    let duration = plan.duration_s().max(f64::MIN_POSITIVE);
    let x = |t: f64| x_of(t, duration);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        "<title>{} | stage1 {} | stage2 {} | total {}</title>",
        escape(&plan.video_id),
        plan.budget.stage1_frames,
        plan.budget.stage2_frames,
        plan.budget.total_frames
    );
    if let Some(g) = gt {
        let _ = writeln!(
            s,
            r##"<rect class="gt" x="{:.3}" y="20.000" width="{:.3}" height="80.000" fill="#f4c542" fill-opacity="0.35"/>"##,
            x(g.start_s),
            x(g.end_s) - x(g.start_s)
        );
    }
    for seg in plan.selected_segments() {
        let _ = writeln!(
            s,
            r##"<rect class="selected" x="{:.3}" y="30.000" width="{:.3}" height="60.000" fill="#4a90d9" fill-opacity="0.3"/>"##,
            x(seg.start_s),
            x(seg.end_s) - x(seg.start_s)
        );
    }
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{:.3}" y1="{AXIS_Y:.3}" x2="{:.3}" y2="{AXIS_Y:.3}" stroke="#333" stroke-width="1"/>"##,
        x(0.0),
        x(duration)
    );
    for kf in &plan.stage1.keyframes {
        let _ = writeln!(
            s,
            r##"<line class="tick stage1" x1="{0:.3}" y1="35.000" x2="{0:.3}" y2="{AXIS_Y:.3}" stroke="#d0021b" stroke-width="1.5"/>"##,
            x(kf.t_s)
        );
    }
    for &t in &plan.stage2.timestamps {
        let _ = writeln!(
            s,
            r##"<line class="tick stage2" x1="{0:.3}" y1="{AXIS_Y:.3}" x2="{0:.3}" y2="80.000" stroke="#417505" stroke-width="0.5"/>"##,
            x(t)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{MARGIN:.3}" y="112.000" font-size="10" font-family="sans-serif">0 s</text>"##
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.3}" y="112.000" font-size="10" font-family="sans-serif" text-anchor="end">{:.1} s</text>"##,
        WIDTH - MARGIN,
        duration
    );
    s.push_str("</svg>\n");
    s
}

/// Render and write to `out`.
pub fn emit_timeline(plan: &SamplingPlan, gt: Option<Span>, out: &Path) -> std::io::Result<()> {
    std::fs::write(out, render_timeline(plan, gt))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
