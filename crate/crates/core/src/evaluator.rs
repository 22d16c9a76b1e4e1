//! COCO-style detection scoring: greedy score-ordered matching and
//! 101-point interpolated average precision over IoU thresholds
//! 0.50:0.05:0.95.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, Dataset};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::num::Scalar;

/// IoU thresholds in percent.
pub const IOU_THRESHOLDS_PCT: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];
pub const RECALL_POINTS: u32 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Detection<T> {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<T>,
    pub score: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<T>,
}

impl From<&Annotation> for GroundTruth<f64> {
    fn from(a: &Annotation) -> Self {
        GroundTruth { image_id: a.image_id, category_id: a.category_id, bbox: a.bbox }
    }
}

pub fn ground_truth(ds: &Dataset) -> Vec<GroundTruth<f64>> {
    ds.annotations().iter().map(GroundTruth::from).collect()
}

/// Threshold `pct / 100` computed as a single division, so e.g. 0.60 is
/// the nearest float to 0.6 rather than `0.5 + 2 * 0.05`.
pub fn iou_threshold<T: Scalar>(pct: u32) -> T {
    T::of(pct as f64) / T::of(100.0)
}

pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    inter / (a.area() + b.area() - inter)
}

/// AP for one class at one threshold. `dets` and `gts` must already be
/// restricted to that class. Returns `None` when the class has no ground
/// truth.
pub fn class_average_precision<T: Scalar>(dets: &[&Detection<T>], gts: &[&GroundTruth<T>], iou_thr: T) -> Option<T> {
    if gts.is_empty() {
        return None;
    }
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).expect("scores are finite"));

    let mut matched = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(order.len());
    for &d in &order {
        let det = dets[d];
        let mut best: Option<(usize, T)> = None;
        for &g in by_image.get(&det.image_id).map(Vec::as_slice).unwrap_or(&[]) {
            if matched[g] {
                continue;
            }
            let o = iou(&det.bbox, &gts[g].bbox);
            if o >= iou_thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        hits.push(best.is_some());
    }
    Some(interpolated_ap(&hits, gts.len()))
}

/// 101-point interpolated AP of a ranked hit list against `n_gt` targets.
/// Recall `tp / n_gt >= k / 100` is decided in integers.
pub fn interpolated_ap<T: Scalar>(hits: &[bool], n_gt: usize) -> T {
    let mut tp_cum = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        tp_cum.push(tp);
        precision.push(T::of_usize(tp) / T::of_usize(i + 1));
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = T::zero();
    let mut cursor = 0;
    for k in 0..RECALL_POINTS as usize {
        while cursor < tp_cum.len() && 100 * tp_cum[cursor] < k * n_gt {
            cursor += 1;
        }
        if cursor < tp_cum.len() {
            total = total + precision[cursor];
        }
    }
    total / T::of(RECALL_POINTS as f64)
}

type ByClass<'a, T> = (BTreeMap<u64, Vec<&'a Detection<T>>>, BTreeMap<u64, Vec<&'a GroundTruth<T>>>);

fn group_by_class<'a, T>(
    dets: &'a [Detection<T>],
    gts: &'a [GroundTruth<T>],
) -> ByClass<'a, T> {
    let mut d: BTreeMap<u64, Vec<&Detection<T>>> = BTreeMap::new();
    let mut g: BTreeMap<u64, Vec<&GroundTruth<T>>> = BTreeMap::new();
    for det in dets {
        d.entry(det.category_id).or_default().push(det);
    }
    for gt in gts {
        g.entry(gt.category_id).or_default().push(gt);
    }
    (d, g)
}

/// Mean AP over classes that have ground truth, at one threshold.
pub fn average_precision<T: Scalar>(dets: &[Detection<T>], gts: &[GroundTruth<T>], iou_thr: T) -> T {
    let (d, g) = group_by_class(dets, gts);
    let aps: Vec<T> = g
        .iter()
        .filter_map(|(cat, gl)| class_average_precision(d.get(cat).map(Vec::as_slice).unwrap_or(&[]), gl, iou_thr))
        .collect();
    if aps.is_empty() {
        T::zero()
    } else {
        aps.iter().copied().sum::<T>() / T::of_usize(aps.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult<T> {
    pub map_50_95: T,
    /// Class-mean AP keyed by IoU threshold in percent.
    pub per_iou: BTreeMap<u32, T>,
    /// Threshold-mean AP per category.
    pub per_class: BTreeMap<u64, T>,
}

pub fn map_coco<T: Scalar>(dets: &[Detection<T>], gts: &[GroundTruth<T>]) -> Result<EvalResult<T>> {
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let (d, g) = group_by_class(dets, gts);
    let n_thr = T::of_usize(IOU_THRESHOLDS_PCT.len());
    let mut per_class_sum: BTreeMap<u64, T> = BTreeMap::new();
    let mut per_iou = BTreeMap::new();
    for pct in IOU_THRESHOLDS_PCT {
        let thr = iou_threshold::<T>(pct);
        let mut sum = T::zero();
        for (cat, gl) in &g {
            let ap = class_average_precision(d.get(cat).map(Vec::as_slice).unwrap_or(&[]), gl, thr)
                .expect("class has ground truth");
            *per_class_sum.entry(*cat).or_insert(T::zero()) = per_class_sum.get(cat).copied().unwrap_or_default() + ap;
            sum = sum + ap;
        }
        per_iou.insert(pct, sum / T::of_usize(g.len()));
    }
    let map = per_iou.values().copied().sum::<T>() / n_thr;
    let per_class = per_class_sum.into_iter().map(|(c, s)| (c, s / n_thr)).collect();
    Ok(EvalResult { map_50_95: map, per_iou, per_class })
}

impl<T: Scalar> EvalResult<T> {
    pub fn to_text(&self, dataset: Option<&Dataset>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "map_50_95 = {:.4}", self.map_50_95.as_f64());
        for (pct, ap) in &self.per_iou {
            let _ = writeln!(out, "  AP@{:.2} = {:.4}", *pct as f64 / 100.0, ap.as_f64());
        }
        for (cat, ap) in &self.per_class {
            let name = dataset.and_then(|d| d.category(*cat)).map_or_else(|| cat.to_string(), |c| c.name.clone());
            let _ = writeln!(out, "  class {name}: {:.4}", ap.as_f64());
        }
        out
    }
}

/// Reads a COCO results document: a list of
/// `{image_id, category_id, bbox, score}`.
pub fn load_detections(path: &Path) -> Result<Vec<Detection<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dets: Vec<Detection<f64>> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    for (i, d) in dets.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::param(format!("detection {i}: score {} outside [0,1]", d.score)));
        }
        if !(d.bbox.w > 0.0 && d.bbox.h > 0.0) {
            return Err(Error::param(format!("detection {i}: non-positive box extent")));
        }
    }
    Ok(dets)
}

/// Mean and sample standard deviation of repeated-run scores.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox<f64> {
        BBox::new(x, y, w, h)
    }

    fn gt(image_id: u64, category_id: u64, bbox: BBox<f64>) -> GroundTruth<f64> {
        GroundTruth { image_id, category_id, bbox }
    }

    fn det(image_id: u64, category_id: u64, bbox: BBox<f64>, score: f64) -> Detection<f64> {
        Detection { image_id, category_id, bbox, score }
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 0., 10., 10.)), 0.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(10., 0., 10., 10.)), 0.0);
        assert!((iou(&b(0., 0., 10., 10.), &b(5., 0., 10., 10.)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let g = [gt(1, 1, b(1., 1., 5., 5.))];
        let d = [det(1, 1, b(1., 1., 5., 5.), 1.0)];
        for pct in IOU_THRESHOLDS_PCT {
            assert_eq!(average_precision(&d, &g, iou_threshold(pct)), 1.0);
        }
        assert_eq!(average_precision::<f64>(&[], &g, 0.5), 0.0);
        assert_eq!(map_coco(&d, &g).unwrap().map_50_95, 1.0);
        assert!(matches!(map_coco::<f64>(&d, &[]), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn hit_miss_hit_curve() {
        let g = [gt(1, 1, b(0., 0., 10., 10.)), gt(1, 1, b(50., 50., 10., 10.))];
        let d = [
            det(1, 1, b(0., 0., 10., 10.), 0.9),
            det(1, 1, b(100., 100., 10., 10.), 0.8),
            det(1, 1, b(50., 50., 10., 10.), 0.7),
        ];
        // recall 0.5 reached with precision 1, recall 1.0 with 2/3
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((average_precision(&d, &g, 0.5) - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_exactly_point_six() {
        let g = [gt(1, 1, b(0., 0., 10., 10.))];
        let d = [det(1, 1, b(0., 0., 6., 10.), 0.5)];
        let r = map_coco(&d, &g).unwrap();
        assert_eq!(r.per_iou[&60], 1.0);
        assert_eq!(r.per_iou[&65], 0.0);
        assert!((r.map_50_95 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn classes_without_gt_are_ignored() {
        let g = [gt(1, 1, b(0., 0., 10., 10.))];
        let d = [det(1, 1, b(0., 0., 10., 10.), 0.5), det(1, 2, b(0., 0., 10., 10.), 0.9)];
        let r = map_coco(&d, &g).unwrap();
        assert_eq!(r.map_50_95, 1.0);
        assert_eq!(r.per_class.len(), 1);
    }

    #[test]
    fn score_ties_follow_input_order() {
        let g = [gt(1, 1, b(0., 0., 10., 10.))];
        let hit = det(1, 1, b(0., 0., 10., 10.), 0.5);
        let miss = det(1, 1, b(40., 0., 10., 10.), 0.5);
        assert_eq!(average_precision(&[hit, miss], &g, 0.5), 1.0);
        assert_eq!(average_precision(&[miss, hit], &g, 0.5), 0.5);
    }

    #[test]
    fn works_in_single_precision() {
        let g = [GroundTruth { image_id: 1, category_id: 1, bbox: BBox::new(0f32, 0., 10., 10.) }];
        let d = [Detection { image_id: 1, category_id: 1, bbox: BBox::new(0f32, 0., 6., 10.), score: 1.0 }];
        let r = map_coco(&d, &g).unwrap();
        assert!((r.map_50_95 - 0.3).abs() < 1e-6);
    }

    #[test]
    fn mean_std_of_runs() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
