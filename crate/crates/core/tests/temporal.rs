use proptest::prelude::*;

use torsotext::features::{compute_features, FeatureParams};
use torsotext::kmeans::KMeansConfig;
use torsotext::temporal::{detect_window, frame_stats, ClusterStats, Termination, WindowParams};
use torsotext::Frame;

fn stats(t: usize, s: [f64; 3]) -> ClusterStats {
    ClusterStats {
        t,
        sd_max: s[0],
        sd_avg: s[1],
        median_min: s[2],
        small_cluster: false,
        zero_difference: false,
    }
}

fn series(rows: &[[f64; 3]]) -> Vec<ClusterStats> {
    rows.iter()
        .enumerate()
        .map(|(i, s)| stats(i + 1, *s))
        .collect()
}

fn wobble(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let e = if i % 2 == 0 { 0.01 } else { -0.01 };
            [0.3 + e, 0.2 - e, 0.1 + e]
        })
        .collect()
}

#[test]
fn zero_first_difference_ends_at_next_frame() {
    let mut s = series(&wobble(10));
    s[0].zero_difference = true;
    let w = detect_window(0, &s, &WindowParams::default()).unwrap();
    assert_eq!(
        (w.end_index, w.termination),
        (1, Termination::DuplicateFrames)
    );
    assert_eq!(w.keyframe_index, 0);
}

#[test]
fn two_streams_jumping_end_the_window() {
    let mut rows = wobble(8);
    rows.push([0.9, 0.8, 0.1]);
    rows.extend(wobble(4));
    let w = detect_window(0, &series(&rows), &WindowParams::default()).unwrap();
    assert_eq!((w.end_index, w.termination), (9, Termination::SuddenChange));
    assert_eq!(w.len(), 10);
}

#[test]
fn a_single_stream_jump_is_not_enough() {
    let mut rows = wobble(8);
    rows.push([0.9, 0.2, 0.1]);
    rows.extend(wobble(3));
    let w = detect_window(0, &series(&rows), &WindowParams::default()).unwrap();
    assert_eq!(w.termination, Termination::EndOfSequence);
    assert_eq!(w.end_index, 12);
}

#[test]
fn window_is_capped() {
    let params = WindowParams {
        max_window: 5,
        ..WindowParams::default()
    };
    let w = detect_window(0, &series(&wobble(20)), &params).unwrap();
    assert_eq!((w.end_index, w.termination), (4, Termination::MaxWindow));
}

#[test]
fn empty_statistics_are_rejected() {
    assert!(detect_window(0, &[], &WindowParams::default()).is_err());
}

#[test]
fn identical_fused_frames_give_zero_difference() {
    let f = Frame::from_fn(0, 24, 24, |x, y| ((x * 3 + y * 5) % 11) as f32 / 10.0).unwrap();
    let a = compute_features(&f, &FeatureParams::default()).fused;
    let b = compute_features(&f.clone().with_index(1), &FeatureParams::default()).fused;
    let (p, s) = frame_stats(&a, &b, 0, &KMeansConfig::default()).unwrap();
    assert!(p.is_zero_difference());
    assert!(s.zero_difference);
    let w = detect_window(0, &[s], &WindowParams::default()).unwrap();
    assert_eq!(w.termination, Termination::DuplicateFrames);
}

fn rows_strategy() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 2..25)
}

proptest! {
    #[test]
    fn appended_frames_do_not_change_a_decided_window(
        rows in rows_strategy(),
        extra in rows_strategy(),
        z in 0.5f64..3.0,
    ) {
        let params = WindowParams { z_threshold: z, ..WindowParams::default() };
        let short = detect_window(0, &series(&rows), &params).unwrap();
        prop_assume!(short.termination != Termination::EndOfSequence);
        let mut all = rows.clone();
        all.extend(extra);
        prop_assert_eq!(detect_window(0, &series(&all), &params).unwrap(), short);
    }

    #[test]
    fn end_is_nondecreasing_in_z_threshold(rows in rows_strategy(), z in 0.2f64..3.0, dz in 0.0f64..2.0) {
        let s = series(&rows);
        let lo = WindowParams { z_threshold: z, ..WindowParams::default() };
        let hi = WindowParams { z_threshold: z + dz, ..WindowParams::default() };
        let a = detect_window(0, &s, &lo).unwrap();
        let b = detect_window(0, &s, &hi).unwrap();
        prop_assert!(a.end_index <= b.end_index);
    }

    #[test]
    fn window_stays_within_bounds(rows in rows_strategy(), start in 0usize..5) {
        let s: Vec<ClusterStats> = rows.iter().enumerate().map(|(i, r)| stats(start + i + 1, *r)).collect();
        let w = detect_window(start, &s, &WindowParams::default()).unwrap();
        prop_assert!(w.end_index > start);
        prop_assert!(w.end_index <= start + rows.len());
        prop_assert_eq!(w.keyframe_index, start);
        prop_assert_eq!(w.stats_trace.len(), w.z_trace.len());
    }
}
