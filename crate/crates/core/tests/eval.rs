use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use torsotext::eval::{
    evaluate, f_measure, format_table, match_boxes, Annotation, AnnotationFile, LabeledBox,
};
use torsotext::Rect;

fn rect(x: i32, y: i32, w: i32, h: i32) -> Rect {
    Rect::new(x, y, w, h).unwrap()
}

fn boxed(r: Rect, label: Option<&str>) -> LabeledBox {
    LabeledBox::from_rect(r, label)
}

fn file(frames: Vec<(usize, Vec<LabeledBox>)>) -> AnnotationFile {
    AnnotationFile {
        frames: frames
            .into_iter()
            .map(|(index, boxes)| Annotation { index, boxes })
            .collect(),
    }
}

/// Largest one-to-one matching among pairs with IoU at or above `t`, by
/// trying every assignment.
fn exhaustive(dets: &[Rect], gts: &[Rect], t: f64) -> usize {
    fn go(i: usize, dets: &[Rect], gts: &[Rect], used: &mut Vec<bool>, t: f64) -> usize {
        if i == dets.len() {
            return 0;
        }
        let mut best = go(i + 1, dets, gts, used, t);
        for j in 0..gts.len() {
            if !used[j] && dets[i].iou(&gts[j]) >= t {
                used[j] = true;
                best = best.max(1 + go(i + 1, dets, gts, used, t));
                used[j] = false;
            }
        }
        best
    }
    go(0, dets, gts, &mut vec![false; gts.len()], t)
}

#[test]
fn printed_f_values() {
    for ((p, r), printed) in [
        ((0.74, 0.76), 0.75),
        ((0.78, 0.80), 0.79),
        ((0.89, 0.92), 0.90),
    ] {
        assert!((f_measure(p, r, 0.5) - printed).abs() <= 0.005);
    }
    assert_eq!(f_measure(0.0, 0.0, 0.5), 0.0);
    assert!((f_measure(0.5, 0.5, 0.5) - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn f_lies_between_p_and_r(p in 0.01f64..1.0, r in 0.01f64..1.0) {
        let f = f_measure(p, r, 0.5);
        prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
    }
}

#[test]
fn greedy_matching_against_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut equal = 0;
    let trials = 500;
    for _ in 0..trials {
        let mut random_boxes = |n: usize| -> Vec<Rect> {
            (0..n)
                .map(|_| {
                    rect(
                        rng.random_range(0..20),
                        rng.random_range(0..20),
                        rng.random_range(4..12),
                        rng.random_range(4..12),
                    )
                })
                .collect()
        };
        let dets = random_boxes(4);
        let gts = random_boxes(4);
        let greedy = match_boxes(&dets, &gts, 0.3).len();
        let best = exhaustive(&dets, &gts, 0.3);
        assert!(greedy <= best);
        equal += (greedy == best) as usize;
    }
    assert!(equal * 100 >= trials * 95, "{equal}/{trials}");
}

#[test]
fn matching_is_one_to_one() {
    let g = vec![rect(0, 0, 10, 10)];
    let d = vec![rect(0, 0, 10, 10), rect(1, 0, 10, 10)];
    assert_eq!(match_boxes(&d, &g, 0.5), vec![(0, 0)]);
    assert!(match_boxes(&d, &[rect(50, 50, 5, 5)], 0.5).is_empty());
}

#[test]
fn counts_and_scores() {
    let gt = file(vec![
        (
            0,
            vec![
                boxed(rect(0, 0, 10, 10), Some("bib")),
                boxed(rect(20, 0, 10, 10), Some("text")),
            ],
        ),
        (1, vec![boxed(rect(0, 0, 10, 10), Some("bib"))]),
    ]);
    let det = file(vec![
        (
            0,
            vec![
                boxed(rect(0, 0, 10, 10), None),
                boxed(rect(40, 40, 5, 5), None),
            ],
        ),
        (1, vec![boxed(rect(1, 1, 10, 10), None)]),
    ]);
    let m = evaluate(&gt, &det, 0.5, true);
    assert_eq!(m.overall.counts.matched, 2);
    assert_eq!(m.overall.counts.detections, 3);
    assert_eq!(m.overall.counts.ground_truths, 3);
    assert!((m.overall.precision - 2.0 / 3.0).abs() < 1e-12);
    let labels = m.by_label.as_ref().unwrap();
    assert_eq!(labels["bib"].counts.matched, 2);
    assert_eq!(labels["text"].counts.matched, 0);
    let table = format_table(&m);
    assert!(table.contains("bib") && table.contains("text"));
}

#[test]
fn frame_order_does_not_matter() {
    let gt = file(vec![
        (0, vec![boxed(rect(0, 0, 10, 10), None)]),
        (3, vec![boxed(rect(5, 5, 10, 10), None)]),
    ]);
    let det = file(vec![
        (3, vec![boxed(rect(5, 5, 10, 10), None)]),
        (0, vec![boxed(rect(0, 0, 9, 10), None)]),
    ]);
    let mut reversed_gt = gt.clone();
    reversed_gt.frames.reverse();
    let mut reversed_det = det.clone();
    reversed_det.frames.reverse();
    assert_eq!(
        evaluate(&gt, &det, 0.5, false),
        evaluate(&reversed_gt, &reversed_det, 0.5, false)
    );
}

#[test]
fn unmatched_detection_lowers_precision_only() {
    let gt = file(vec![(0, vec![boxed(rect(0, 0, 10, 10), None)])]);
    let det = file(vec![(0, vec![boxed(rect(0, 0, 10, 10), None)])]);
    let mut more = det.clone();
    more.frames[0].boxes.push(boxed(rect(60, 60, 5, 5), None));
    let (a, b) = (
        evaluate(&gt, &det, 0.5, false),
        evaluate(&gt, &more, 0.5, false),
    );
    assert!(b.overall.precision < a.overall.precision);
    assert_eq!(b.overall.recall, a.overall.recall);
}

#[test]
fn annotation_files_round_trip() {
    let f = file(vec![(
        2,
        vec![
            boxed(rect(1, 2, 3, 4), Some("bib")),
            boxed(rect(5, 6, 7, 8), None),
        ],
    )]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gt.json");
    f.write(&path).unwrap();
    assert_eq!(AnnotationFile::read(&path).unwrap(), f);
    std::fs::write(&path, "{\"frames\": 3}").unwrap();
    assert!(AnnotationFile::read(&path).is_err());
}
