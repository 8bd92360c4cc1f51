use std::collections::BTreeSet;

use longvid_core::planner::{
    dense_samples, estimate_nsd, partition_segments, plan_stage1, plan_stage2, segment_of,
    SamplingPlan, Span,
};
use longvid_core::selector::SelectorConfig;
use longvid_core::EmbeddingSequence;
use proptest::prelude::*;

#[test]
fn one_minute_video_keeps_two_of_four() {
    let rows = [
        [1.0, 0.0, 0.0],
        [0.9, 0.1, 0.0],
        [0.0, 1.0, 0.2],
        [0.1, 0.2, 1.0],
    ];
    let ts = vec![7.5, 22.5, 37.5, 52.5];
    let seq = EmbeddingSequence::new("m", 3, rows.concat(), ts.clone(), 60.0, 1.0 / 15.0).unwrap();
    let s1 = plan_stage1(60.0, 4.0, 0.5, Some(&seq), &SelectorConfig::default()).unwrap();
    assert_eq!(s1.grid, ts);
    assert_eq!(s1.keyframes.len(), 2);

    // independent brute force over the 4x4 weight matrix, 1-based positions
    let cos = |a: &[f64; 3], b: &[f64; 3]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut best = (f64::INFINITY, (0, 0));
    for i in 0..4 {
        for j in i + 1..4 {
            let w = cos(&rows[i], &rows[j]) - 10.0 * ((j - i) as f64 / 4.0).powf(0.3);
            if w < best.0 {
                best = (w, (i, j));
            }
        }
    }
    let picked: Vec<usize> = s1.keyframes.iter().map(|k| k.index).collect();
    assert_eq!(picked, vec![best.1 .0, best.1 .1]);
    assert!((s1.objective.unwrap() - best.0).abs() < 1e-12);
    assert_eq!(s1.segments.len(), 2);
}

#[test]
fn default_operating_point_keeps_45() {
    let n = 181;
    let ts: Vec<f64> = (0..n).map(|m| (m as f64 + 0.5) * 15.0).collect();
    let vectors: Vec<f64> = (0..n)
        .flat_map(|i| [1.0, (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
        .collect();
    let seq = EmbeddingSequence::new("avg", 3, vectors, ts, 2723.4, 1.0 / 15.0).unwrap();
    let s1 = plan_stage1(2723.4, 4.0, 0.25, Some(&seq), &SelectorConfig::default()).unwrap();
    assert_eq!(s1.grid.len(), 181);
    assert_eq!(s1.keyframes.len(), 45);
    assert_eq!(s1.segments.len(), 45);
}

fn arb_keyframes() -> impl Strategy<Value = (Vec<f64>, f64)> {
    proptest::collection::vec(0.5f64..100.0, 1..40).prop_map(|gaps| {
        let mut t = 0.0;
        let times: Vec<f64> = gaps
            .iter()
            .map(|g| {
                t += g;
                t
            })
            .collect();
        let duration = t + 10.0;
        (times, duration)
    })
}

proptest! {
    #[test]
    fn partition_is_exact((times, duration) in arb_keyframes()) {
        let segs = partition_segments(&times, duration).unwrap();
        prop_assert_eq!(segs.len(), times.len());
        prop_assert_eq!(segs[0].start_s, 0.0);
        prop_assert_eq!(segs.last().unwrap().end_s, duration);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end_s, w[1].start_s);
        }
        for (i, &t) in times.iter().enumerate() {
            prop_assert_eq!(segment_of(&segs, t), Some(i));
            prop_assert!(segs[i].start_s < t || t == 0.0);
            prop_assert!(t < segs[i].end_s || i + 1 == segs.len());
        }
    }

    #[test]
    fn stage2_inside_selection_and_monotone(
        (times, duration) in arb_keyframes(),
        picks in proptest::collection::vec(any::<bool>(), 40),
        extra in 0usize..40,
        rate in 0.05f64..2.0,
    ) {
        let segs = partition_segments(&times, duration).unwrap();
        let sel: BTreeSet<usize> = (0..segs.len()).filter(|&i| picks[i]).collect();
        let ts = plan_stage2(&segs, &sel, rate).unwrap();
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        for &t in &ts {
            prop_assert!(sel.contains(&segment_of(&segs, t).unwrap()));
        }
        let mut bigger = sel.clone();
        bigger.insert(extra % segs.len());
        prop_assert!(plan_stage2(&segs, &bigger, rate).unwrap().len() >= ts.len());
    }

    #[test]
    fn nsd_scales_inversely(
        windows in proptest::collection::vec((0.0f64..1000.0, 0.01f64..300.0), 1..20),
        c in 0.01f64..100.0,
    ) {
        let spans: Vec<Span> = windows.iter().map(|&(s, l)| Span::new(s, s + l)).collect();
        let scaled: Vec<Span> = spans.iter().map(|w| Span::new(w.start_s * c, w.end_s * c)).collect();
        let base = estimate_nsd(&spans).unwrap();
        let shortest = spans.iter().map(|w| w.len()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(base, 1.0 / shortest);
        let got = estimate_nsd(&scaled).unwrap();
        prop_assert!((got - base / c).abs() <= 1e-9 * (base / c).max(1.0));
    }

    #[test]
    fn budget_additive(frames in 1usize..2000, duration in 10.0f64..10_000.0) {
        let plan = SamplingPlan::uniform("u", duration, frames).unwrap();
        prop_assert_eq!(plan.budget.total_frames, plan.stage1.keyframes.len() + plan.stage2.timestamps.len());
        prop_assert!(plan.validate().is_ok());
    }
}

#[test]
fn dense_samples_center_of_cell() {
    assert_eq!(
        dense_samples(Span::new(100.0, 104.0), 1.0),
        vec![100.5, 101.5, 102.5, 103.5]
    );
    assert_eq!(dense_samples(Span::new(0.0, 60.0), 0.25).len(), 15);
}

#[test]
fn plan_json_shape() {
    let times = [60.0, 180.0, 300.0];
    let segs = partition_segments(&times, 360.0).unwrap();
    let stage1 = longvid_core::planner::Stage1 {
        rate_fpm: 0.5,
        grid: times.to_vec(),
        keyframes: times
            .iter()
            .enumerate()
            .map(|(index, &t_s)| longvid_core::planner::Keyframe { index, t_s })
            .collect(),
        segments: segs,
        objective: None,
    };
    let plan = SamplingPlan::two_stage("v", &stage1, BTreeSet::from([1]), 0.5).unwrap();
    plan.validate().unwrap();
    let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
    for key in [
        "video_id", "stage1", "segments", "selected", "stage2", "budget",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["stage1"]["rate_fpm"], 0.5);
    assert_eq!(v["stage1"]["keyframes"][1]["t_s"], 180.0);
    assert_eq!(v["segments"][1]["start_s"], 120.0);
    assert_eq!(v["selected"], serde_json::json!([1]));
    assert_eq!(v["stage2"]["timestamps"].as_array().unwrap().len(), 60);
    assert_eq!(v["budget"]["total_frames"], 63);
    let back: SamplingPlan = serde_json::from_str(&plan.to_json()).unwrap();
    assert_eq!(back, plan);
}
