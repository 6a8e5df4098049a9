//! Ground-truth-aligned tube mining.
//!
//! Each tube hypothesis is scored against the ground-truth tube with
//! `lambda_cls * c_cls + lambda_bbox * c_bbox + lambda_giou * c_giou + lambda_temp * c_temp`
//! and the cheapest tube is selected.
//!
//! * `c_cls`: mean `1 - confidence` over the ground-truth frames.
//! * `c_bbox`: mean center-size L1 distance over the ground-truth frames.
//! * `c_giou`: mean `1 - GIoU` against the ground-truth boxes.
//! * `c_temp`: mean `1 - GIoU` between adjacent boxes over the whole clip.

use crate::association::Tube;
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Ground-truth interval `[ts, te]` (inclusive) with one box per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtTube<T> {
    ts: usize,
    te: usize,
    boxes: Vec<BBox<T>>,
}

impl<T: Scalar> GtTube<T> {
    pub fn new(ts: usize, te: usize, boxes: Vec<BBox<T>>) -> Result<Self> {
        if ts > te {
            return invalid(format!("ground-truth interval [{ts}, {te}] is reversed"));
        }
        if boxes.len() != te - ts + 1 {
            return invalid(format!(
                "ground-truth interval [{ts}, {te}] needs {} boxes, got {}",
                te - ts + 1,
                boxes.len()
            ));
        }
        Ok(Self { ts, te, boxes })
    }

    #[inline]
    pub fn ts(&self) -> usize {
        self.ts
    }

    #[inline]
    pub fn te(&self) -> usize {
        self.te
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn boxes(&self) -> &[BBox<T>] {
        &self.boxes
    }

    pub fn box_at(&self, t: usize) -> Option<&BBox<T>> {
        if t < self.ts || t > self.te {
            return None;
        }
        self.boxes.get(t - self.ts)
    }

    /// `(frame, box)` pairs in frame order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &BBox<T>)> + '_ {
        self.boxes.iter().enumerate().map(move |(k, b)| (self.ts + k, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights<T> {
    pub lambda_cls: T,
    pub lambda_bbox: T,
    pub lambda_giou: T,
    pub lambda_temp: T,
}

impl<T: Scalar> Default for CostWeights<T> {
    fn default() -> Self {
        Self {
            lambda_cls: T::lit(1.0),
            lambda_bbox: T::lit(5.0),
            lambda_giou: T::lit(3.0),
            lambda_temp: T::lit(2.0),
        }
    }
}

impl<T: Scalar> CostWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cls,
            self.lambda_bbox,
            self.lambda_giou,
            self.lambda_temp,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return invalid("cost weights must be finite and nonnegative");
        }
        Ok(())
    }

    /// Weighted sum of the four sub-costs.
    pub fn combine(&self, c_cls: T, c_bbox: T, c_giou: T, c_temp: T) -> T {
        self.lambda_cls * c_cls
            + self.lambda_bbox * c_bbox
            + self.lambda_giou * c_giou
            + self.lambda_temp * c_temp
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown<T> {
    pub c_cls: T,
    pub c_bbox: T,
    pub c_giou: T,
    pub c_temp: T,
    pub total: T,
}

/// Mean `1 - GIoU` over adjacent pairs of a box sequence.
pub fn temporal_cost_of_boxes<T: Scalar>(boxes: &[BBox<T>]) -> Result<T> {
    if boxes.len() < 2 {
        return invalid(format!(
            "temporal cost needs at least 2 frames, got {}",
            boxes.len()
        ));
    }
    let sum = boxes
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (T::one() - w[0].giou(&w[1])));
    Ok(sum / T::from_count(boxes.len() - 1))
}

pub fn temporal_cost<T: Scalar>(tube: &Tube<T>) -> Result<T> {
    let boxes: Vec<BBox<T>> = tube.boxes().copied().collect();
    temporal_cost_of_boxes(&boxes)
}

/// Scores one tube against the ground truth.
pub fn match_cost<T: Scalar>(
    tube: &Tube<T>,
    gt: &GtTube<T>,
    weights: &CostWeights<T>,
) -> Result<CostBreakdown<T>> {
    weights.validate()?;
    let (Some(first), Some(last)) = (tube.first_timestamp(), tube.last_timestamp()) else {
        return invalid(format!("tube {} is empty", tube.slot_id));
    };
    if gt.ts < first || gt.te > last {
        return invalid(format!(
            "ground-truth interval [{}, {}] lies outside clip [{first}, {last}]",
            gt.ts, gt.te
        ));
    }

    let mut c_cls = T::zero();
    let mut c_bbox = T::zero();
    let mut c_giou = T::zero();
    for (t, gt_box) in gt.iter() {
        let Some(rec) = tube.at(t) else {
            return invalid(format!("tube {} has no record at frame {t}", tube.slot_id));
        };
        c_cls += T::one() - rec.confidence;
        c_bbox += rec.bbox.to_center_size().l1(&gt_box.to_center_size());
        c_giou += T::one() - rec.bbox.giou(gt_box);
    }
    let n = T::from_count(gt.len());
    let (c_cls, c_bbox, c_giou) = (c_cls / n, c_bbox / n, c_giou / n);
    let c_temp = temporal_cost(tube)?;
    Ok(CostBreakdown {
        c_cls,
        c_bbox,
        c_giou,
        c_temp,
        total: weights.combine(c_cls, c_bbox, c_giou, c_temp),
    })
}

/// Cost breakdown for every tube, in input order.
pub fn score_tubes<T: Scalar>(
    tubes: &[Tube<T>],
    gt: &GtTube<T>,
    weights: &CostWeights<T>,
) -> Result<Vec<CostBreakdown<T>>> {
    tubes.iter().map(|t| match_cost(t, gt, weights)).collect()
}

/// Index of the cheapest tube and its breakdown. Ties go to the lower index.
pub fn mine_best_tube<T: Scalar>(
    tubes: &[Tube<T>],
    gt: &GtTube<T>,
    weights: &CostWeights<T>,
) -> Result<(usize, CostBreakdown<T>)> {
    if tubes.is_empty() {
        return invalid("mining needs at least one tube");
    }
    let costs = score_tubes(tubes, gt, weights)?;
    Ok(argmin_total(&costs))
}

pub(crate) fn argmin_total<T: Scalar>(costs: &[CostBreakdown<T>]) -> (usize, CostBreakdown<T>) {
    let mut best = 0;
    for (k, c) in costs.iter().enumerate().skip(1) {
        if c.total < costs[best].total {
            best = k;
        }
    }
    (best, costs[best])
}
