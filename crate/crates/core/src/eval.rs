//! Ground-truth files, one-to-one IoU matching and precision/recall/F.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::Rect;

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl LabeledBox {
    pub fn rect(&self) -> Rect {
        Rect {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }

    pub fn from_rect(r: Rect, label: Option<&str>) -> Self {
        Self {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            label: label.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub index: usize,
    pub boxes: Vec<LabeledBox>,
}

/// `{"frames":[{"index":0,"boxes":[{"x":..,"y":..,"w":..,"h":..,"label":"bib"}]}]}`;
/// detections use the same layout with labels optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub frames: Vec<Annotation>,
}

impl AnnotationFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Boxes per frame index, merging repeated entries for the same frame.
    pub fn by_frame(&self) -> BTreeMap<usize, Vec<LabeledBox>> {
        let mut out: BTreeMap<usize, Vec<LabeledBox>> = BTreeMap::new();
        for f in &self.frames {
            out.entry(f.index)
                .or_default()
                .extend(f.boxes.iter().cloned());
        }
        out
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    a.iou(b)
}

/// Greedy one-to-one matching in descending IoU order. Returns `(det, gt)`
/// index pairs with IoU at least `threshold`.
pub fn match_boxes(dets: &[Rect], gts: &[Rect], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = d.iou(g);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_d[i] && !used_g[j] {
            used_d[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Weighted harmonic mean `P R / (alpha R + (1 - alpha) P)`; 0 when the
/// denominator vanishes.
pub fn f_measure(p: f64, r: f64, alpha: f64) -> f64 {
    let den = alpha * r + (1.0 - alpha) * p;
    if den <= 0.0 {
        0.0
    } else {
        p * r / den
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub detections: usize,
    pub ground_truths: usize,
}

impl Counts {
    fn add(self, o: Counts) -> Counts {
        Counts {
            matched: self.matched + o.matched,
            detections: self.detections + o.detections,
            ground_truths: self.ground_truths + o.ground_truths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

impl Scores {
    pub fn from_counts(c: Counts) -> Self {
        let precision = if c.detections == 0 {
            0.0
        } else {
            c.matched as f64 / c.detections as f64
        };
        let recall = if c.ground_truths == 0 {
            0.0
        } else {
            c.matched as f64 / c.ground_truths as f64
        };
        Self {
            precision,
            recall,
            f_measure: f_measure(precision, recall, 0.5),
            counts: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub index: usize,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_threshold: f64,
    #[serde(flatten)]
    pub overall: Scores,
    pub frames: Vec<FrameScores>,
    /// Present when labels are evaluated separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_label: Option<BTreeMap<String, Scores>>,
}

fn frame_counts(dets: &[LabeledBox], gts: &[LabeledBox], threshold: f64) -> Counts {
    let d: Vec<Rect> = dets.iter().map(LabeledBox::rect).collect();
    let g: Vec<Rect> = gts.iter().map(LabeledBox::rect).collect();
    Counts {
        matched: match_boxes(&d, &g, threshold).len(),
        detections: d.len(),
        ground_truths: g.len(),
    }
}

fn count_all(
    gt: &BTreeMap<usize, Vec<LabeledBox>>,
    det: &BTreeMap<usize, Vec<LabeledBox>>,
    threshold: f64,
) -> Vec<FrameScores> {
    let mut indices: Vec<usize> = gt.keys().chain(det.keys()).copied().collect();
    indices.sort_unstable();
    indices.dedup();
    indices
        .into_par_iter()
        .map(|index| {
            let empty = Vec::new();
            let counts = frame_counts(
                det.get(&index).unwrap_or(&empty),
                gt.get(&index).unwrap_or(&empty),
                threshold,
            );
            FrameScores { index, counts }
        })
        .collect()
}

/// Scores all frames as one class; with `by_label`, also per ground-truth
/// label, where unlabeled detections compete for every label.
pub fn evaluate(
    gt: &AnnotationFile,
    det: &AnnotationFile,
    threshold: f64,
    by_label: bool,
) -> MetricsReport {
    let g = gt.by_frame();
    let d = det.by_frame();
    let frames = count_all(&g, &d, threshold);
    let total = frames
        .iter()
        .fold(Counts::default(), |acc, f| acc.add(f.counts));
    let by_label = by_label.then(|| {
        let mut labels: Vec<String> = g
            .values()
            .flatten()
            .filter_map(|b| b.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
            .into_iter()
            .map(|label| {
                let keep = |m: &BTreeMap<usize, Vec<LabeledBox>>,
                            strict: bool|
                 -> BTreeMap<usize, Vec<LabeledBox>> {
                    m.iter()
                        .map(|(k, v)| {
                            let boxes = v
                                .iter()
                                .filter(|b| match &b.label {
                                    Some(l) => *l == label,
                                    None => !strict,
                                })
                                .cloned()
                                .collect();
                            (*k, boxes)
                        })
                        .collect()
                };
                let counts = count_all(&keep(&g, true), &keep(&d, false), threshold)
                    .iter()
                    .fold(Counts::default(), |acc, f| acc.add(f.counts));
                (label, Scores::from_counts(counts))
            })
            .collect()
    });
    MetricsReport {
        iou_threshold: threshold,
        overall: Scores::from_counts(total),
        frames,
        by_label,
    }
}

/// Plain-text summary table.
pub fn format_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>9} {:>9} {:>9} {:>8} {:>6} {:>6}",
        "class", "precision", "recall", "f", "matched", "dets", "gts"
    );
    let mut row = |name: &str, s: &Scores| {
        let _ = writeln!(
            out,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>6} {:>6}",
            name,
            s.precision,
            s.recall,
            s.f_measure,
            s.counts.matched,
            s.counts.detections,
            s.counts.ground_truths
        );
    };
    row("all", &report.overall);
    if let Some(labels) = &report.by_label {
        for (name, s) in labels {
            row(name, s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: i32, y: i32, w: i32, h: i32) -> Rect {
        Rect::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&r(0, 0, 2, 2), &r(0, 0, 2, 2)), 1.0);
        assert_eq!(iou(&r(0, 0, 2, 2), &r(5, 5, 2, 2)), 0.0);
        assert!((iou(&r(0, 0, 2, 2), &r(1, 0, 2, 2)) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn matching_examples() {
        assert_eq!(
            match_boxes(&[r(0, 0, 4, 4)], &[r(0, 0, 4, 4)], 0.5),
            vec![(0, 0)]
        );
        let m = match_boxes(&[r(0, 0, 4, 4), r(0, 0, 4, 5)], &[r(0, 0, 4, 4)], 0.5);
        assert_eq!(m, vec![(0, 0)]);
    }

    #[test]
    fn f_examples() {
        assert!((f_measure(0.6, 0.6, 0.5) - 0.6).abs() < 1e-12);
        assert!((f_measure(0.74, 0.76, 0.5) - 0.75).abs() < 0.005);
        assert_eq!(f_measure(0.0, 0.7, 0.5), 0.0);
        assert_eq!(f_measure(0.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn report_counts() {
        let gt: AnnotationFile = serde_json::from_str(
            r#"{"frames":[{"index":0,"boxes":[{"x":10,"y":20,"w":30,"h":14,"label":"bib"}]},
                {"index":1,"boxes":[{"x":0,"y":0,"w":5,"h":5,"label":"text"}]}]}"#,
        )
        .unwrap();
        let det: AnnotationFile = serde_json::from_str(
            r#"{"frames":[{"index":0,"boxes":[{"x":10,"y":20,"w":30,"h":14},{"x":90,"y":90,"w":3,"h":3}]}]}"#,
        )
        .unwrap();
        let rep = evaluate(&gt, &det, 0.5, true);
        assert_eq!(
            rep.overall.counts,
            Counts {
                matched: 1,
                detections: 2,
                ground_truths: 2
            }
        );
        assert_eq!(rep.overall.precision, 0.5);
        assert_eq!(rep.overall.recall, 0.5);
        let labels = rep.by_label.as_ref().unwrap();
        assert_eq!(labels["bib"].counts.matched, 1);
        assert_eq!(labels["text"].counts.matched, 0);
        assert!(format_table(&rep).contains("bib"));
    }
}
