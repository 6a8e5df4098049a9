//! Inference-time tube selection and spatio-temporal grounding metrics.
//!
//! Intervals are inclusive frame ranges. `vIoU` follows the usual STVG
//! convention: the per-frame box IoU is summed over the intersection of the
//! predicted and ground-truth intervals and normalized by their union.

use crate::association::Tube;
use crate::error::{invalid, Result};
use crate::mining::GtTube;
use crate::scalar::Scalar;

/// Inclusive frame range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameInterval {
    start: usize,
    end: usize,
}

impl FrameInterval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return invalid(format!("interval [{start}, {end}] is reversed"));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of frames covered.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(Self { start, end })
    }

    pub fn overlap(&self, other: &Self) -> usize {
        self.intersect(other).map_or(0, |i| i.len())
    }

    /// Frames covered by either interval.
    pub fn union_len(&self, other: &Self) -> usize {
        self.len() + other.len() - self.overlap(other)
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl<T: Scalar> GtTube<T> {
    pub fn interval(&self) -> FrameInterval {
        FrameInterval {
            start: self.ts(),
            end: self.te(),
        }
    }
}

/// A predicted temporal interval plus the per-frame boxes of the chosen tube.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub interval: FrameInterval,
    pub tube: Tube<T>,
}

/// Index of the tube with the highest mean confidence; ties go to the lower index.
pub fn select_tube<T: Scalar>(tubes: &[Tube<T>]) -> Result<usize> {
    let Some(first) = tubes.first() else {
        return invalid("tube selection needs at least one tube");
    };
    if let Some(t) = tubes.iter().find(|t| t.len() != first.len()) {
        return invalid(format!(
            "tube {} has {} records, expected {}",
            t.slot_id,
            t.len(),
            first.len()
        ));
    }
    let mut best = 0;
    let mut best_score = first.mean_confidence();
    for (k, tube) in tubes.iter().enumerate().skip(1) {
        let score = tube.mean_confidence();
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    Ok(best)
}

pub fn t_iou<T: Scalar>(a: &FrameInterval, b: &FrameInterval) -> T {
    T::from_count(a.overlap(b)) / T::from_count(a.union_len(b))
}

pub fn v_iou<T: Scalar>(pred: &Prediction<T>, gt: &GtTube<T>) -> Result<T> {
    let gt_interval = gt.interval();
    let union = T::from_count(pred.interval.union_len(&gt_interval));
    let Some(common) = pred.interval.intersect(&gt_interval) else {
        return Ok(T::zero());
    };
    let mut sum = T::zero();
    for t in common.frames() {
        let Some(rec) = pred.tube.at(t) else {
            return invalid(format!("predicted tube has no box at frame {t}"));
        };
        let gt_box = gt.box_at(t).expect("frame inside ground-truth interval");
        sum += rec.bbox.iou(gt_box);
    }
    Ok(sum / union)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics<T> {
    pub t_iou: T,
    pub v_iou: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdScore<T> {
    pub tau: T,
    /// Fraction of samples with `vIoU >= tau`.
    pub fraction: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub per_sample: Vec<SampleMetrics<T>>,
    pub m_tiou: T,
    pub m_viou: T,
    pub viou_at: Vec<ThresholdScore<T>>,
    pub count: usize,
}

impl<T: Scalar> EvalReport<T> {
    /// Recomputes the aggregates from per-sample values.
    pub fn from_samples(per_sample: Vec<SampleMetrics<T>>, taus: &[T]) -> Result<Self> {
        if per_sample.is_empty() {
            return invalid("evaluation needs at least one sample");
        }
        let n = T::from_count(per_sample.len());
        let m_tiou = per_sample.iter().map(|s| s.t_iou).sum::<T>() / n;
        let m_viou = per_sample.iter().map(|s| s.v_iou).sum::<T>() / n;
        let viou_at = taus
            .iter()
            .map(|&tau| ThresholdScore {
                tau,
                fraction: T::from_count(per_sample.iter().filter(|s| s.v_iou >= tau).count()) / n,
            })
            .collect();
        Ok(Self {
            count: per_sample.len(),
            per_sample,
            m_tiou,
            m_viou,
            viou_at,
        })
    }
}

pub fn evaluate<T: Scalar>(samples: &[(Prediction<T>, GtTube<T>)], taus: &[T]) -> Result<EvalReport<T>> {
    if samples.is_empty() {
        return invalid("evaluation needs at least one sample");
    }
    let per_sample = samples
        .iter()
        .map(|(pred, gt)| {
            Ok(SampleMetrics {
                t_iou: t_iou(&pred.interval, &gt.interval()),
                v_iou: v_iou(pred, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_samples(per_sample, taus)
}

pub const DRIFT_PARTS: usize = 5;

/// Sizes of the five contiguous parts of an `n`-frame interval; the
/// remainder goes to the earliest parts.
pub fn fifth_sizes(n: usize) -> [usize; DRIFT_PARTS] {
    let base = n / DRIFT_PARTS;
    let rem = n % DRIFT_PARTS;
    std::array::from_fn(|k| base + usize::from(k < rem))
}

/// Mean box IoU over `values` split into five parts.
pub(crate) fn mean_by_fifths<T: Scalar>(values: &[T]) -> [T; DRIFT_PARTS] {
    let sizes = fifth_sizes(values.len());
    let mut out = [T::zero(); DRIFT_PARTS];
    let mut offset = 0;
    for (k, size) in sizes.into_iter().enumerate() {
        let part = &values[offset..offset + size];
        out[k] = part.iter().copied().sum::<T>() / T::from_count(size);
        offset += size;
    }
    out
}

/// Mean IoU against the ground truth over each fifth of the ground-truth
/// interval. Frames outside the predicted interval score zero.
pub fn drift_profile<T: Scalar>(pred: &Prediction<T>, gt: &GtTube<T>) -> Result<[T; DRIFT_PARTS]> {
    if gt.len() < DRIFT_PARTS {
        return invalid(format!(
            "drift profile needs a ground-truth interval of at least {DRIFT_PARTS} frames, got {}",
            gt.len()
        ));
    }
    let per_frame: Vec<T> = gt
        .iter()
        .map(|(t, gt_box)| {
            if !pred.interval.contains(t) {
                return T::zero();
            }
            pred.tube.at(t).map_or(T::zero(), |r| r.bbox.iou(gt_box))
        })
        .collect();
    Ok(mean_by_fifths(&per_frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::TubeRecord;
    use crate::geometry::BBox;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn tube_of(boxes: Vec<BBox<f64>>, conf: Vec<f64>) -> Tube<f64> {
        let recs = boxes
            .into_iter()
            .zip(conf)
            .enumerate()
            .map(|(t, (b, c))| TubeRecord {
                timestamp: t,
                bbox: b,
                confidence: c,
                feature: vec![],
                detection: None,
            })
            .collect();
        Tube::new(0, recs).unwrap()
    }

    fn iv(a: usize, b: usize) -> FrameInterval {
        FrameInterval::new(a, b).unwrap()
    }

    #[test]
    fn select_examples() {
        let b = bx(0.1, 0.1, 0.2, 0.2);
        let one = tube_of(vec![b; 2], vec![0.1, 0.2]);
        assert_eq!(select_tube(&[one.clone()]).unwrap(), 0);
        let tubes = [
            tube_of(vec![b; 2], vec![0.4, 0.4]),
            tube_of(vec![b; 2], vec![0.8, 1.0]),
            tube_of(vec![b; 2], vec![0.6, 0.8]),
        ];
        assert_eq!(select_tube(&tubes).unwrap(), 1);
        assert_eq!(select_tube(&[one.clone(), one.clone()]).unwrap(), 0);
        assert!(select_tube::<f64>(&[]).is_err());
        assert!(select_tube(&[one, tube_of(vec![b; 3], vec![1.0; 3])]).is_err());
    }

    #[test]
    fn t_iou_examples() {
        assert_eq!(t_iou::<f64>(&iv(3, 8), &iv(3, 8)), 1.0);
        assert_eq!(t_iou::<f64>(&iv(0, 3), &iv(4, 8)), 0.0);
        assert_eq!(t_iou::<f64>(&iv(0, 9), &iv(5, 14)), 5.0 / 15.0);
        assert!(FrameInterval::new(4, 3).is_err());
    }

    #[test]
    fn v_iou_examples() {
        let g = bx(0.0, 0.0, 1.0, 1.0);
        let gt = GtTube::new(2, 5, vec![g; 4]).unwrap();
        let perfect = Prediction { interval: iv(2, 5), tube: tube_of(vec![g; 8], vec![1.0; 8]) };
        assert_eq!(v_iou(&perfect, &gt).unwrap(), 1.0);
        let disjoint = Prediction { interval: iv(6, 7), ..perfect.clone() };
        assert_eq!(v_iou(&disjoint, &gt).unwrap(), 0.0);
        let half = Prediction { interval: iv(2, 5), tube: tube_of(vec![bx(0.0, 0.0, 0.5, 1.0); 8], vec![1.0; 8]) };
        assert_eq!(v_iou(&half, &gt).unwrap(), 0.5);
        // Intersection [4, 5], union [2, 7]: 2 frames of IoU 1 over 6.
        let shifted = Prediction { interval: iv(4, 7), ..perfect };
        assert_eq!(v_iou(&shifted, &gt).unwrap(), 2.0 / 6.0);
    }

    #[test]
    fn evaluate_examples() {
        let g = bx(0.0, 0.0, 1.0, 1.0);
        let gt = GtTube::new(0, 3, vec![g; 4]).unwrap();
        let perfect = Prediction { interval: iv(0, 3), tube: tube_of(vec![g; 4], vec![1.0; 4]) };
        let r = evaluate(&[(perfect, gt)], &[0.3, 0.5]).unwrap();
        assert_eq!((r.m_tiou, r.m_viou, r.count), (1.0, 1.0, 1));
        assert!(r.viou_at.iter().all(|s| s.fraction == 1.0));

        let r = EvalReport::from_samples(
            vec![SampleMetrics { t_iou: 1.0, v_iou: 0.4 }, SampleMetrics { t_iou: 1.0, v_iou: 0.6 }],
            &[0.5],
        )
        .unwrap();
        assert_eq!(r.m_viou, 0.5);
        assert_eq!(r.viou_at[0].fraction, 0.5);
        assert!(evaluate::<f64>(&[], &[0.5]).is_err());
    }

    #[test]
    fn fifths() {
        assert_eq!(fifth_sizes(12), [3, 3, 2, 2, 2]);
        assert_eq!(fifth_sizes(5), [1; 5]);
        assert_eq!(fifth_sizes(10), [2; 5]);
    }

    #[test]
    fn drift_examples() {
        let g = bx(0.0, 0.0, 0.4, 0.4);
        let gt = GtTube::new(0, 9, vec![g; 10]).unwrap();
        let perfect = Prediction { interval: iv(0, 9), tube: tube_of(vec![g; 10], vec![1.0; 10]) };
        assert_eq!(drift_profile(&perfect, &gt).unwrap(), [1.0; 5]);

        let miss = bx(0.6, 0.6, 1.0, 1.0);
        let mut boxes = vec![g; 5];
        boxes.extend(vec![miss; 5]);
        let half = Prediction { interval: iv(0, 9), tube: tube_of(boxes, vec![1.0; 10]) };
        let p = drift_profile(&half, &gt).unwrap();
        assert_eq!(p, [1.0, 1.0, 0.5, 0.0, 0.0]);
        assert!(p.windows(2).all(|w| w[1] <= w[0]));

        let short = GtTube::new(0, 3, vec![g; 4]).unwrap();
        assert!(drift_profile(&perfect, &short).is_err());
    }
}
