use proptest::prelude::*;

use torsotext::features::{compute_features, FeatureParams, FusedImage};
use torsotext::skin::{
    classify_skin_pixels, dilate_disk, group_components, histogram_mode, label_components,
    posterior, refine_components_temporal, skin_priors, GroupParams, LikelihoodRule, SkinMask,
    SkinStage,
};
use torsotext::temporal::{kmeans3, Cluster, ClusterPartition};
use torsotext::{FloatMap, Frame};

fn fused(w: usize, h: usize, values: Vec<f32>) -> FusedImage {
    FusedImage {
        frame_index: 0,
        map: FloatMap::new(w, h, 1, values).unwrap(),
    }
}

fn mask(w: usize, h: usize, pixels: Vec<bool>) -> SkinMask {
    SkinMask {
        width: w,
        height: h,
        pixels,
        source: SkinStage::PixelLevel,
    }
}

/// Recursive 8-connected flood fill; components listed by smallest pixel index.
fn flood_components(on: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    fn fill(
        on: &[bool],
        seen: &mut [bool],
        w: usize,
        h: usize,
        x: i64,
        y: i64,
        out: &mut Vec<usize>,
    ) {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return;
        }
        let i = y as usize * w + x as usize;
        if !on[i] || seen[i] {
            return;
        }
        seen[i] = true;
        out.push(i);
        for dy in -1..=1 {
            for dx in -1..=1 {
                fill(on, seen, w, h, x + dx, y + dy, out);
            }
        }
    }
    let mut seen = vec![false; on.len()];
    let mut comps = Vec::new();
    for i in 0..on.len() {
        if on[i] && !seen[i] {
            let mut c = Vec::new();
            fill(on, &mut seen, w, h, (i % w) as i64, (i / w) as i64, &mut c);
            c.sort_unstable();
            comps.push(c);
        }
    }
    comps
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (4usize..20, 4usize..20, 0.05f64..0.5).prop_flat_map(|(w, h, p)| {
        prop::collection::vec(prop::bool::weighted(p), w * h).prop_map(move |m| (w, h, m))
    })
}

proptest! {
    #[test]
    fn posterior_is_a_probability(l in 0.0f64..=1.0, p in 0.0f64..=1.0) {
        let q = posterior(l, p);
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn labels_match_flood_fill((w, h, m) in mask_strategy()) {
        let (labels, n) = label_components(&m, w, h);
        let oracle = flood_components(&m, w, h);
        prop_assert_eq!(n, oracle.len());
        for (id, comp) in oracle.iter().enumerate() {
            prop_assert!(comp.iter().all(|&i| labels[i] == id));
        }
        prop_assert!(m.iter().zip(&labels).all(|(&on, &l)| on == (l != usize::MAX)));
    }

    #[test]
    fn grouping_matches_flood_fill_on_dilated_mask((w, h, m) in mask_strategy()) {
        let f = fused(w, h, vec![0.5; w * h]);
        let params = GroupParams { dilation_radius: 2, min_pixels: 1 };
        let comps = group_components(&mask(w, h, m.clone()), &f, &params).unwrap();
        let oracle: Vec<Vec<usize>> = flood_components(&dilate_disk(&m, w, h, 2), w, h)
            .into_iter()
            .map(|c| c.into_iter().filter(|&i| m[i]).collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect();
        let got: Vec<Vec<usize>> = comps.iter().map(|c| c.pixels.clone()).collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn grouping_is_idempotent((w, h, m) in mask_strategy()) {
        let f = fused(w, h, (0..w * h).map(|i| (i % 7) as f32 / 7.0).collect());
        let params = GroupParams::default();
        let first = group_components(&mask(w, h, m), &f, &params).unwrap();
        let mut union = vec![false; w * h];
        for c in &first {
            for &i in &c.pixels {
                union[i] = true;
            }
        }
        let second = group_components(&mask(w, h, union), &f, &params).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn skin_is_a_subset_of_max_and_avg(
        values in prop::collection::vec(0.0f32..2.0, 16 * 16),
        seed in any::<u64>(),
        frequency in any::<bool>(),
    ) {
        let f = fused(16, 16, values.clone());
        let p = kmeans3(&values, seed).unwrap();
        let priors = skin_priors(&p, &f).unwrap();
        let rule = if frequency { LikelihoodRule::ModeFrequency } else { LikelihoodRule::ModeValue };
        let m = classify_skin_pixels(&f, &p, &priors, rule).unwrap();
        for (i, &on) in m.pixels.iter().enumerate() {
            prop_assert!(!on || p.labels[i] != Cluster::Min);
        }
    }
}

#[test]
fn posterior_examples() {
    assert_eq!(posterior(0.5, 0.5), 0.5);
    assert_eq!(posterior(1.0, 0.3), 1.0);
    assert_eq!(posterior(0.0, 0.7), 0.0);
    assert!((posterior(0.8, 0.5) - 0.8).abs() < 1e-12);
}

#[test]
fn histogram_mode_prefers_lower_bin_on_ties() {
    assert_eq!(histogram_mode(Vec::<f64>::new(), 1.0, 4), None);
    let (centre, count) = histogram_mode([0.1, 0.1, 0.9, 0.9], 1.0, 4).unwrap();
    assert_eq!(count, 2);
    assert!((centre - 0.125).abs() < 1e-12);
}

#[test]
fn uniform_window_is_certain_skin_under_frequency_rule() {
    let f = fused(16, 16, vec![0.4; 256]);
    let p = ClusterPartition {
        labels: vec![Cluster::Avg; 256],
        centroids: [1.0, 0.4, 0.0],
        inertia: 0.0,
        degenerate: false,
    };
    let priors = torsotext::skin::SkinPriors::fixed(0.5);
    let m = classify_skin_pixels(&f, &p, &priors, LikelihoodRule::ModeFrequency).unwrap();
    assert_eq!(m.count(), 256);
}

#[test]
fn mismatched_partition_is_rejected() {
    let f = fused(16, 16, vec![0.4; 256]);
    let p = kmeans3(&[0.1, 0.2, 0.3], 0).unwrap();
    assert!(skin_priors(&p, &f).is_err());
}

#[test]
fn constant_region_has_constant_fused_values() {
    // a flat patch on a textured frame
    let frame = Frame::from_fn(0, 64, 64, |x, y| {
        if (16..48).contains(&x) && (16..48).contains(&y) {
            0.6
        } else {
            ((x * 5 + y * 3) % 7) as f32 / 7.0
        }
    })
    .unwrap();
    let f = compute_features(&frame, &FeatureParams::default()).fused;
    let inside: Vec<f64> = (20..44)
        .flat_map(|y| (20..44).map(move |x| (x, y)))
        .map(|(x, y)| f.map.get(x, y) as f64)
        .collect();
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    let sd =
        (inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (inside.len() - 1) as f64).sqrt();
    assert!(sd <= 0.05, "sd {sd}");

    let p = kmeans3(f.values(), 0).unwrap();
    let priors = skin_priors(&p, &f).unwrap();
    let m = classify_skin_pixels(&f, &p, &priors, LikelihoodRule::ModeFrequency).unwrap();
    for c in group_components(&m, &f, &GroupParams::default()).unwrap() {
        let vals: Vec<f64> = c
            .pixels
            .iter()
            .filter(|&&i| (20..44).contains(&(i % 64)) && (20..44).contains(&(i / 64)))
            .map(|&i| f.values()[i] as f64)
            .collect();
        if vals.len() > 1 {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len() - 1) as f64)
                .sqrt();
            assert!(sd <= 0.05, "component {} sd {sd}", c.id);
        }
    }
}

#[test]
fn temporal_refinement_is_deterministic_and_keeps_lone_components() {
    let (w, h) = (32, 32);
    let values: Vec<f32> = (0..w * h).map(|i| ((i * 31) % 97) as f32 / 97.0).collect();
    let f = fused(w, h, values);
    let m: Vec<bool> = (0..w * h)
        .map(|i| (i % w) % 8 < 3 && (i / w) % 8 < 3)
        .collect();
    let comps = group_components(
        &mask(w, h, m),
        &f,
        &GroupParams {
            dilation_radius: 1,
            min_pixels: 1,
        },
    )
    .unwrap();
    assert!(comps.len() > 2);
    let per_frame = vec![(0, comps.clone()), (1, comps.clone())];
    let a = refine_components_temporal(&per_frame, (w, h), 5).unwrap();
    let b = refine_components_temporal(&per_frame, (w, h), 5).unwrap();
    assert_eq!(a, b);
    assert!(a
        .kept
        .iter()
        .all(|k| comps.iter().any(|c| c.pixels == k.pixels)));

    let lone = refine_components_temporal(&[(0, vec![comps[0].clone()])], (w, h), 0).unwrap();
    assert!(lone.single_component);
    assert_eq!(lone.kept.len(), 1);
    assert_eq!(lone.mask.count(), comps[0].area());

    assert!(refine_components_temporal(&[], (w, h), 0).is_err());
}
