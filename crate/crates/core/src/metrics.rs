//! Detection evaluation: IoU, greedy matching, precision/recall and AP.
//!
//! Matching follows the usual VOC protocol. Detections are visited in decreasing
//! confidence (stable on ties) and each one claims the unmatched ground truth of the
//! same class and image with the highest IoU at or above the threshold.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class: String,
}

impl Box2D {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        class: impl Into<String>,
    ) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class: class.into(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid(
                "box",
                format!(
                    "degenerate box ({}, {}, {}, {})",
                    self.x_min, self.y_min, self.x_max, self.y_max
                ),
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: Box2D,
    pub distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: Box2D,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub boxes: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl GroundTruthSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

impl DetectionSet {
    /// Confidence-1 detections that coincide with every ground-truth box.
    pub fn oracle(gts: &GroundTruthSet) -> Self {
        let detections = gts
            .boxes
            .iter()
            .map(|g| Detection {
                image_id: g.image_id.clone(),
                bbox: g.bbox.clone(),
                confidence: 1.0,
            })
            .collect();
        Self { detections }
    }
}

pub fn iou(a: &Box2D, b: &Box2D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &Box2D, b: &Box2D) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Label per detection, in input order.
    pub labels: Vec<MatchLabel>,
    /// Ground-truth index claimed by each detection, in input order.
    pub matched_gt: Vec<Option<usize>>,
    /// Detection indices in processing order (decreasing confidence, stable).
    pub order: Vec<usize>,
    pub unmatched_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == MatchLabel::TruePositive)
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels.len() - self.true_positives()
    }
}

/// Indices of `dets` sorted by decreasing confidence, ties in input order.
pub fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(
            "iou_threshold",
            format!("{iou_threshold} outside (0, 1]"),
        ));
    }
    Ok(())
}

pub fn match_detections(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
) -> Result<MatchResult> {
    check_threshold(iou_threshold)?;
    for d in &dets.detections {
        d.bbox.validate()?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::invalid(
                "confidence",
                format!("{} outside [0, 1]", d.confidence),
            ));
        }
    }
    for g in &gts.boxes {
        g.bbox.validate()?;
    }

    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.boxes.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }

    let order = confidence_order(&dets.detections);
    let mut taken = vec![false; gts.boxes.len()];
    let mut labels = vec![MatchLabel::FalsePositive; dets.detections.len()];
    let mut matched_gt = vec![None; dets.detections.len()];

    for &di in &order {
        let det = &dets.detections[di];
        let Some(candidates) = by_image.get(det.image_id.as_str()) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &gi in candidates {
            let gt = &gts.boxes[gi].bbox;
            if taken[gi] || gt.class != det.bbox.class {
                continue;
            }
            let overlap = iou_unchecked(&det.bbox, gt);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            labels[di] = MatchLabel::TruePositive;
            matched_gt[di] = Some(gi);
        }
    }

    let unmatched_gt = taken.iter().filter(|t| !**t).count();
    Ok(MatchResult {
        labels,
        matched_gt,
        order,
        unmatched_gt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope.
    #[default]
    All,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    #[serde(rename = "11")]
    Eleven,
    /// Mean envelope precision at recall 0, 0.01, ..., 1.
    #[serde(rename = "101")]
    HundredOne,
}

impl fmt::Display for ApInterpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApInterpolation::All => "all",
            ApInterpolation::Eleven => "11",
            ApInterpolation::HundredOne => "101",
        })
    }
}

impl FromStr for ApInterpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "11" => Ok(Self::Eleven),
            "101" => Ok(Self::HundredOne),
            other => Err(Error::invalid(
                "ap_interp",
                format!("`{other}` is not one of all, 11, 101"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub pr_curve: Vec<PrPoint>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_threshold: f64,
    pub interpolation: ApInterpolation,
}

pub fn average_precision(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
) -> Result<EvalResult> {
    average_precision_with(dets, gts, iou_threshold, ApInterpolation::All)
}

pub fn average_precision_with(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
    interpolation: ApInterpolation,
) -> Result<EvalResult> {
    check_threshold(iou_threshold)?;
    if gts.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let matched = match_detections(dets, gts, iou_threshold)?;
    let total = gts.len() as f64;

    let mut pr_curve = Vec::with_capacity(matched.order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &di in &matched.order {
        match matched.labels[di] {
            MatchLabel::TruePositive => tp += 1,
            MatchLabel::FalsePositive => fp += 1,
        }
        pr_curve.push(PrPoint {
            recall: tp as f64 / total,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    let ap = match interpolation {
        ApInterpolation::All => area_under_envelope(&pr_curve, &matched, total),
        ApInterpolation::Eleven => sampled_envelope(&pr_curve, 10),
        ApInterpolation::HundredOne => sampled_envelope(&pr_curve, 100),
    };

    Ok(EvalResult {
        ap,
        pr_curve,
        tp,
        fp,
        fn_: matched.unmatched_gt,
        iou_threshold,
        interpolation,
    })
}

/// Precision at each rank replaced by the best precision at any later rank.
fn envelope(pr: &[PrPoint]) -> Vec<f64> {
    let mut env: Vec<f64> = pr.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

// Each true positive adds exactly 1/total recall, so the area is the sum of the
// envelope over the true-positive ranks in processing order, divided by total.
fn area_under_envelope(pr: &[PrPoint], matched: &MatchResult, total: f64) -> f64 {
    let env = envelope(pr);
    let mut sum = 0.0;
    for (rank, &di) in matched.order.iter().enumerate() {
        if matched.labels[di] == MatchLabel::TruePositive {
            sum += env[rank];
        }
    }
    sum / total
}

fn sampled_envelope(pr: &[PrPoint], intervals: u32) -> f64 {
    let env = envelope(pr);
    let mut sum = 0.0;
    for i in 0..=intervals {
        let r = f64::from(i) / f64::from(intervals);
        // env is non-increasing in rank while recall is non-decreasing, so the
        // first rank reaching r carries the best precision at recall >= r.
        if let Some(rank) = pr.iter().position(|p| p.recall >= r) {
            sum += env[rank];
        }
    }
    sum / f64::from(intervals + 1)
}

/// Drops ground truth labeled farther than `max_range`; unlabeled distances are kept.
pub fn filter_by_range(gts: &GroundTruthSet, max_range: f64) -> Result<GroundTruthSet> {
    if !(max_range > 0.0) {
        return Err(Error::invalid(
            "max_range",
            format!("{max_range} is not positive"),
        ));
    }
    let boxes = gts
        .boxes
        .iter()
        .filter(|g| g.distance_m.is_none_or(|d| d <= max_range))
        .cloned()
        .collect();
    Ok(GroundTruthSet { boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1, "vehicle").unwrap()
    }

    fn det(b: Box2D, confidence: f64) -> Detection {
        Detection {
            image_id: "img".into(),
            bbox: b,
            confidence,
        }
    }

    fn gt(b: Box2D) -> GroundTruth {
        GroundTruth {
            image_id: "img".into(),
            bbox: b,
            distance_m: None,
        }
    }

    /// Box sharing height with (0,0,10,10) and shifted right so IoU = target.
    fn shifted_with_iou(target: f64) -> Box2D {
        // overlap width w: w / (20 - w) = t  =>  w = 20 t / (1 + t)
        let w = 20.0 * target / (1.0 + target);
        let shift = 10.0 - w;
        bx(shift, 0.0, 10.0 + shift, 10.0)
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 0.0, 15.0, 10.0)).unwrap(), 50.0 / 150.0);
        assert_eq!(
            iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(2.0, 2.0, 3.0, 3.0)).unwrap(),
            0.0
        );
        assert_eq!(
            iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 2.0, 1.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let bad = Box2D {
            x_min: 3.0,
            y_min: 0.0,
            x_max: 3.0,
            y_max: 1.0,
            class: "vehicle".into(),
        };
        assert!(iou(&bad, &bx(0.0, 0.0, 1.0, 1.0)).is_err());
        assert!(Box2D::new(0.0, 5.0, 1.0, 4.0, "vehicle").is_err());
    }

    #[test]
    fn shifted_box_helper_hits_target() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &shifted_with_iou(0.6)).unwrap() - 0.6).abs() < 1e-12);
        assert!((iou(&a, &shifted_with_iou(0.7)).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_match_above_threshold() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let dets = DetectionSet {
            detections: vec![det(shifted_with_iou(0.6), 0.5)],
        };
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(m.labels, vec![MatchLabel::TruePositive]);
        assert_eq!(m.unmatched_gt, 0);
    }

    #[test]
    fn greedy_on_confidence_not_iou() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let dets = DetectionSet {
            detections: vec![
                det(shifted_with_iou(0.6), 0.9),
                det(shifted_with_iou(0.7), 0.8),
            ],
        };
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(
            m.labels,
            vec![MatchLabel::TruePositive, MatchLabel::FalsePositive]
        );
    }

    #[test]
    fn picks_highest_iou_ground_truth() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(2.0, 0.0, 12.0, 10.0)), gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let dets = DetectionSet {
            detections: vec![det(bx(0.5, 0.0, 10.5, 10.0), 0.9)],
        };
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(m.matched_gt, vec![Some(1)]);
    }

    #[test]
    fn class_and_image_must_agree() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let mut other_class = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
        other_class.bbox.class = "distractor".into();
        let mut other_image = det(bx(0.0, 0.0, 10.0, 10.0), 0.8);
        other_image.image_id = "elsewhere".into();
        let dets = DetectionSet {
            detections: vec![other_class, other_image],
        };
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(m.true_positives(), 0);
        assert_eq!(m.unmatched_gt, 1);
    }

    #[test]
    fn no_detections() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 1.0, 1.0)), gt(bx(5.0, 5.0, 6.0, 6.0))],
        };
        let r = average_precision(&DetectionSet::default(), &gts, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 2));
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn hand_derived_ap() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let hit = bx(0.0, 0.0, 10.0, 10.0);
        let miss = bx(50.0, 50.0, 60.0, 60.0);

        let tp_then_fp = DetectionSet {
            detections: vec![det(hit.clone(), 0.9), det(miss.clone(), 0.8)],
        };
        let r = average_precision(&tp_then_fp, &gts, 0.5).unwrap();
        assert_eq!(r.ap, 1.0);
        assert_eq!(
            r.pr_curve,
            vec![
                PrPoint {
                    recall: 1.0,
                    precision: 1.0
                },
                PrPoint {
                    recall: 1.0,
                    precision: 0.5
                }
            ]
        );

        let fp_then_tp = DetectionSet {
            detections: vec![det(miss, 0.9), det(hit, 0.8)],
        };
        assert_eq!(average_precision(&fp_then_tp, &gts, 0.5).unwrap().ap, 0.5);
    }

    #[test]
    fn interpolation_variants() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0))],
        };
        let dets = DetectionSet {
            detections: vec![
                det(bx(50.0, 50.0, 60.0, 60.0), 0.9),
                det(bx(0.0, 0.0, 10.0, 10.0), 0.8),
            ],
        };
        for interp in [
            ApInterpolation::All,
            ApInterpolation::Eleven,
            ApInterpolation::HundredOne,
        ] {
            let r = average_precision_with(&dets, &gts, 0.5, interp).unwrap();
            assert!((r.ap - 0.5).abs() < 1e-12, "{interp}: {}", r.ap);
        }
        // Two GTs, one found at rank 1: all-point gives 0.5, 11-point 6/11.
        let two = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 10.0, 10.0)), gt(bx(20.0, 0.0, 30.0, 10.0))],
        };
        let one = DetectionSet {
            detections: vec![det(bx(0.0, 0.0, 10.0, 10.0), 0.9)],
        };
        assert_eq!(
            average_precision_with(&one, &two, 0.5, ApInterpolation::All)
                .unwrap()
                .ap,
            0.5
        );
        let eleven = average_precision_with(&one, &two, 0.5, ApInterpolation::Eleven)
            .unwrap()
            .ap;
        assert!((eleven - 6.0 / 11.0).abs() < 1e-12);
        let hundred = average_precision_with(&one, &two, 0.5, ApInterpolation::HundredOne)
            .unwrap()
            .ap;
        assert!((hundred - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ground_truth_is_undefined() {
        let r = average_precision(&DetectionSet::default(), &GroundTruthSet::default(), 0.5);
        assert!(matches!(r, Err(Error::UndefinedAp)));
    }

    #[test]
    fn threshold_is_validated() {
        let gts = GroundTruthSet {
            boxes: vec![gt(bx(0.0, 0.0, 1.0, 1.0))],
        };
        assert!(match_detections(&DetectionSet::default(), &gts, 0.0).is_err());
        assert!(match_detections(&DetectionSet::default(), &gts, 1.5).is_err());
    }

    #[test]
    fn range_filter() {
        let with = |d: Option<f64>| GroundTruth {
            distance_m: d,
            ..gt(bx(0.0, 0.0, 1.0, 1.0))
        };
        let set = GroundTruthSet {
            boxes: vec![
                with(Some(50.0)),
                with(Some(76.0)),
                with(Some(80.0)),
                with(None),
            ],
        };
        let kept = filter_by_range(&set, 76.0).unwrap();
        let dists: Vec<_> = kept.boxes.iter().map(|g| g.distance_m).collect();
        assert_eq!(dists, vec![Some(50.0), Some(76.0), None]);
        assert!(filter_by_range(&GroundTruthSet::default(), 76.0)
            .unwrap()
            .is_empty());
        assert_eq!(filter_by_range(&set, 1000.0).unwrap(), set);
    }

    fn random_case() -> impl Strategy<Value = (DetectionSet, GroundTruthSet)> {
        let coord = || (0.0f64..20.0, 0.0f64..20.0, 2.0f64..12.0, 2.0f64..12.0);
        (
            proptest::collection::vec((coord(), 0.0f64..=1.0), 0..8),
            proptest::collection::vec(coord(), 1..6),
        )
            .prop_map(|(ds, gs)| {
                let dets = ds
                    .into_iter()
                    .map(|((x, y, w, h), c)| det(bx(x, y, x + w, y + h), c))
                    .collect();
                let gts = gs
                    .into_iter()
                    .map(|(x, y, w, h)| gt(bx(x, y, x + w, y + h)))
                    .collect();
                (
                    DetectionSet { detections: dets },
                    GroundTruthSet { boxes: gts },
                )
            })
    }

    proptest! {
        #[test]
        fn ap_bounded_and_recall_monotone((dets, gts) in random_case()) {
            let r = average_precision(&dets, &gts, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ap));
            prop_assert!(r.pr_curve.windows(2).all(|w| w[0].recall <= w[1].recall));
            prop_assert_eq!(r.tp + r.fn_, gts.len());
        }

        #[test]
        fn monotone_confidence_transform_preserves_result((dets, gts) in random_case()) {
            let base = average_precision(&dets, &gts, 0.5).unwrap();
            let mut squashed = dets.clone();
            for d in &mut squashed.detections {
                d.confidence = d.confidence * d.confidence * 0.5 + 0.25;
            }
            let moved = average_precision(&squashed, &gts, 0.5).unwrap();
            prop_assert_eq!(base.pr_curve, moved.pr_curve);
            prop_assert_eq!(base.ap.to_bits(), moved.ap.to_bits());
        }

        #[test]
        fn removing_a_false_positive_never_lowers_ap((dets, gts) in random_case()) {
            let base = average_precision(&dets, &gts, 0.5).unwrap();
            let m = match_detections(&dets, &gts, 0.5).unwrap();
            if let Some(fp) = m.labels.iter().position(|l| *l == MatchLabel::FalsePositive) {
                let mut fewer = dets.clone();
                fewer.detections.remove(fp);
                let after = average_precision(&fewer, &gts, 0.5).unwrap();
                prop_assert!(after.ap >= base.ap - 1e-12);
            }
        }
    }
}
