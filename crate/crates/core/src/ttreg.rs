//! Cross-frame temporal regularization on a mined tube.
//!
//! ```text
//! L_feat = 1/(T-1) * sum_t (1 - cos(q_t, q_{t+1}))
//! L_geom = 1/(T-1) * sum_t (1 - GIoU(b_t, b_{t+1}))
//! ```
//!
//! Both losses come with analytic gradients and a central-difference checker.
//! `L_geom` has a kink wherever two adjacent boxes share a corner coordinate
//! or stop overlapping; gradients are refused there. Two identical adjacent
//! boxes are the exception: that pair sits at the loss minimum and
//! contributes a zero (sub)gradient.

use crate::assignment::{cosine_similarity, dot, norm};
use crate::association::Tube;
use crate::error::{invalid, Error, Result};
use crate::geometry::{giou_corner_grad, giou_corners, BBox};
use crate::mining::temporal_cost_of_boxes;
use crate::scalar::Scalar;

/// Per-frame features and boxes of the tube selected by mining.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedTube<T> {
    features: Vec<Vec<T>>,
    boxes: Vec<BBox<T>>,
}

impl<T: Scalar> MinedTube<T> {
    pub fn new(features: Vec<Vec<T>>, boxes: Vec<BBox<T>>) -> Result<Self> {
        if features.len() != boxes.len() {
            return invalid(format!(
                "mined tube has {} features but {} boxes",
                features.len(),
                boxes.len()
            ));
        }
        if features.len() < 2 {
            return invalid("mined tube needs at least 2 frames");
        }
        let dim = features[0].len();
        for (t, f) in features.iter().enumerate() {
            if f.len() != dim || dim == 0 {
                return invalid(format!("frame {t}: feature dimension {} != {dim}", f.len()));
            }
            let n = norm(f);
            if !(n.is_finite() && n > T::zero()) {
                return invalid(format!("frame {t}: feature must be finite with nonzero norm"));
            }
        }
        Ok(Self { features, boxes })
    }

    pub fn from_tube(tube: &Tube<T>) -> Result<Self> {
        let features = tube.records().iter().map(|r| r.feature.clone()).collect();
        let boxes = tube.boxes().copied().collect();
        Self::new(features, boxes)
    }

    pub fn features(&self) -> &[Vec<T>] {
        &self.features
    }

    pub fn boxes(&self) -> &[BBox<T>] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtregWeights<T> {
    pub lambda_temp: T,
    pub lambda_feat: T,
}

impl<T: Scalar> Default for TtregWeights<T> {
    fn default() -> Self {
        Self {
            lambda_temp: T::lit(2.0),
            lambda_feat: T::lit(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T> {
    pub feat: T,
    pub geom: T,
    /// `lambda_temp * geom + lambda_feat * feat`
    pub total: T,
}

/// Gradients of `L_feat` w.r.t. every feature component and of `L_geom`
/// w.r.t. every box corner `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub d_features: Vec<Vec<T>>,
    pub d_boxes: Vec<[T; 4]>,
}

pub fn feat_loss<T: Scalar>(tube: &MinedTube<T>) -> Result<T> {
    feat_loss_of(&tube.features)
}

fn feat_loss_of<T: Scalar>(features: &[Vec<T>]) -> Result<T> {
    let mut sum = T::zero();
    for w in features.windows(2) {
        sum += T::one() - cosine_similarity(&w[0], &w[1])?;
    }
    Ok(sum / T::from_count(features.len() - 1))
}

/// Same computation as the temporal matching cost, on the mined boxes.
pub fn geom_loss<T: Scalar>(tube: &MinedTube<T>) -> Result<T> {
    temporal_cost_of_boxes(&tube.boxes)
}

fn geom_loss_of_corners<T: Scalar>(corners: &[[T; 4]]) -> T {
    let sum = corners
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (T::one() - giou_corners(&w[0], &w[1])));
    sum / T::from_count(corners.len() - 1)
}

pub fn ttreg_losses<T: Scalar>(tube: &MinedTube<T>, weights: &TtregWeights<T>) -> Result<LossReport<T>> {
    if !(weights.lambda_temp >= T::zero() && weights.lambda_feat >= T::zero())
        || !weights.lambda_temp.is_finite()
        || !weights.lambda_feat.is_finite()
    {
        return invalid("loss weights must be finite and nonnegative");
    }
    let feat = feat_loss(tube)?;
    let geom = geom_loss(tube)?;
    Ok(LossReport {
        feat,
        geom,
        total: weights.lambda_temp * geom + weights.lambda_feat * feat,
    })
}

/// How an adjacent box pair behaves under differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairKind {
    Smooth,
    /// Identical boxes: minimum of the pair term, zero subgradient.
    Identical,
}

fn classify_pair<T: Scalar>(t: usize, a: &[T; 4], b: &[T; 4]) -> Result<PairKind> {
    if a == b {
        return Ok(PairKind::Identical);
    }
    const NAMES: [&str; 4] = ["x1", "y1", "x2", "y2"];
    if let Some(k) = (0..4).find(|&k| a[k] == b[k]) {
        return Err(Error::NonSmooth(format!(
            "boxes {t} and {} share {} = {}",
            t + 1,
            NAMES[k],
            a[k]
        )));
    }
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if !(iw > T::zero() && ih > T::zero()) {
        return Err(Error::NonSmooth(format!(
            "boxes {t} and {} do not strictly overlap",
            t + 1
        )));
    }
    Ok(PairKind::Smooth)
}

/// Analytic gradients of both losses.
pub fn ttreg_gradients<T: Scalar>(tube: &MinedTube<T>) -> Result<Gradients<T>> {
    let n = tube.len();
    let scale = T::one() / T::from_count(n - 1);

    let mut d_features: Vec<Vec<T>> = tube
        .features
        .iter()
        .map(|f| vec![T::zero(); f.len()])
        .collect();
    for t in 0..n - 1 {
        let (a, b) = (&tube.features[t], &tube.features[t + 1]);
        let (na, nb) = (norm(a), norm(b));
        let c = dot(a, b) / (na * nb);
        // d cos / d a = b / (|a||b|) - cos * a / |a|^2
        for k in 0..a.len() {
            let dca = b[k] / (na * nb) - c * a[k] / (na * na);
            let dcb = a[k] / (na * nb) - c * b[k] / (nb * nb);
            d_features[t][k] -= scale * dca;
            d_features[t + 1][k] -= scale * dcb;
        }
    }

    let corners: Vec<[T; 4]> = tube.boxes.iter().map(BBox::corners).collect();
    let mut d_boxes = vec![[T::zero(); 4]; n];
    for t in 0..n - 1 {
        let (a, b) = (&corners[t], &corners[t + 1]);
        if classify_pair(t, a, b)? == PairKind::Identical {
            continue;
        }
        let (ga, gb) = giou_corner_grad(a, b);
        for k in 0..4 {
            d_boxes[t][k] -= scale * ga[k];
            d_boxes[t + 1][k] -= scale * gb[k];
        }
    }
    Ok(Gradients { d_features, d_boxes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over
    /// all differentiable components.
    pub max_rel_error: T,
    pub max_abs_error: T,
    pub max_abs_analytic: T,
    /// Largest numeric gradient magnitude over differentiable components.
    pub max_abs_numeric: T,
    /// Components checked.
    pub checked: usize,
    /// Box corners touching an identical adjacent pair. Central differences
    /// straddle the kink there and return `O(h)` instead of the zero
    /// subgradient, so they are reported but not compared.
    pub kink_components: usize,
    pub kink_max_abs_numeric: T,
}

/// Denominator floor for the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences with step `h`.
pub fn grad_check<T: Scalar>(tube: &MinedTube<T>, h: T) -> Result<GradCheckReport<T>> {
    if !(h > T::zero() && h.is_finite()) {
        return invalid(format!("finite-difference step {h} must be positive"));
    }
    let analytic = ttreg_gradients(tube)?;
    let floor = T::lit(REL_ERROR_FLOOR);
    let two_h = h + h;

    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        max_abs_error: T::zero(),
        max_abs_analytic: T::zero(),
        max_abs_numeric: T::zero(),
        checked: 0,
        kink_components: 0,
        kink_max_abs_numeric: T::zero(),
    };
    let mut compare = |a: T, num: T| {
        let err = (a - num).abs();
        let rel = err / a.abs().max(num.abs()).max(floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_error = report.max_abs_error.max(err);
        report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
        report.max_abs_numeric = report.max_abs_numeric.max(num.abs());
        report.checked += 1;
    };

    let mut features = tube.features.clone();
    for t in 0..features.len() {
        for k in 0..features[t].len() {
            let orig = features[t][k];
            features[t][k] = orig + h;
            let plus = feat_loss_of(&features)?;
            features[t][k] = orig - h;
            let minus = feat_loss_of(&features)?;
            features[t][k] = orig;
            compare(analytic.d_features[t][k], (plus - minus) / two_h);
        }
    }

    let mut corners: Vec<[T; 4]> = tube.boxes.iter().map(BBox::corners).collect();
    let identical: Vec<bool> = corners.windows(2).map(|w| w[0] == w[1]).collect();
    let mut kinks = Vec::new();
    for t in 0..corners.len() {
        let at_kink = (t > 0 && identical[t - 1]) || (t < identical.len() && identical[t]);
        for k in 0..4 {
            let orig = corners[t][k];
            corners[t][k] = orig + h;
            let plus = geom_loss_of_corners(&corners);
            corners[t][k] = orig - h;
            let minus = geom_loss_of_corners(&corners);
            corners[t][k] = orig;
            let numeric = (plus - minus) / two_h;
            if at_kink {
                kinks.push(numeric);
            } else {
                compare(analytic.d_boxes[t][k], numeric);
            }
        }
    }
    report.kink_components = kinks.len();
    report.kink_max_abs_numeric = kinks.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn boxes(n: usize) -> Vec<BBox<f64>> {
        vec![bx(0.2, 0.2, 0.5, 0.6); n]
    }

    #[test]
    fn feat_loss_examples() {
        let constant = MinedTube::new(vec![vec![0.3, -1.0, 2.0]; 4], boxes(4)).unwrap();
        assert_eq!(feat_loss(&constant).unwrap(), 0.0);
        let alt = MinedTube::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]], boxes(3)).unwrap();
        assert_eq!(feat_loss(&alt).unwrap(), 1.0);
        let anti = MinedTube::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], boxes(2)).unwrap();
        assert_eq!(feat_loss(&anti).unwrap(), 2.0);
    }

    #[test]
    fn geom_loss_examples() {
        let f = vec![vec![1.0, 0.0]; 2];
        let still = MinedTube::new(f.clone(), boxes(2)).unwrap();
        assert_eq!(geom_loss(&still).unwrap(), 0.0);
        let touch = MinedTube::new(f, vec![bx(0., 0., 0.5, 0.5), bx(0.5, 0.5, 1., 1.)]).unwrap();
        assert_eq!(geom_loss(&touch).unwrap(), 1.5);
    }

    #[test]
    fn construction_checks() {
        assert!(MinedTube::new(vec![vec![1.0]], boxes(1)).is_err());
        assert!(MinedTube::new(vec![vec![1.0]; 3], boxes(2)).is_err());
        assert!(MinedTube::new(vec![vec![1.0], vec![0.0]], boxes(2)).is_err());
        assert!(MinedTube::new(vec![vec![1.0], vec![1.0, 2.0]], boxes(2)).is_err());
    }

    #[test]
    fn combined_loss_uses_default_weights() {
        let t = MinedTube::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![bx(0., 0., 0.5, 0.5), bx(0.5, 0.5, 1., 1.)],
        )
        .unwrap();
        let r = ttreg_losses(&t, &TtregWeights::default()).unwrap();
        assert_eq!((r.feat, r.geom, r.total), (1.0, 1.5, 4.0));
    }

    #[test]
    fn constant_tube_has_zero_gradients() {
        let t = MinedTube::new(vec![vec![0.5, -0.25, 1.0]; 5], boxes(5)).unwrap();
        let g = ttreg_gradients(&t).unwrap();
        assert!(g.d_features.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!(g.d_boxes.iter().flatten().all(|&v| v == 0.0));

        let rep = grad_check(&t, 1e-6).unwrap();
        assert!(rep.max_abs_analytic < 1e-8);
        assert!(rep.max_abs_numeric < 1e-8, "{rep:?}");
        assert_eq!(rep.checked, 15);
        assert_eq!(rep.kink_components, 20);
    }

    #[test]
    fn touching_pair_is_non_smooth() {
        let f = vec![vec![1.0, 0.0], vec![0.5, 1.0]];
        let touch = MinedTube::new(f.clone(), vec![bx(0., 0., 0.5, 0.5), bx(0.5, 0.5, 1., 1.)]).unwrap();
        assert!(matches!(ttreg_gradients(&touch), Err(Error::NonSmooth(_))));
        assert!(matches!(grad_check(&touch, 1e-6), Err(Error::NonSmooth(_))));
        let shared = MinedTube::new(f, vec![bx(0.1, 0.1, 0.5, 0.5), bx(0.1, 0.2, 0.6, 0.7)]).unwrap();
        assert!(matches!(ttreg_gradients(&shared), Err(Error::NonSmooth(_))));
    }

    #[test]
    fn smooth_tube_passes_grad_check() {
        let t = MinedTube::new(
            vec![vec![1.0, 0.2, -0.3], vec![0.8, 0.5, -0.1], vec![0.3, 0.9, 0.4]],
            vec![bx(0.10, 0.20, 0.50, 0.60), bx(0.15, 0.18, 0.52, 0.63), bx(0.12, 0.25, 0.49, 0.61)],
        )
        .unwrap();
        let rep = grad_check(&t, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        assert_eq!(rep.kink_components, 0);
        assert!(grad_check(&t, 0.0).is_err());
    }

    #[test]
    fn feature_gradient_is_orthogonal_to_feature() {
        let t = MinedTube::new(
            vec![vec![1.0, 0.2, -0.3], vec![0.8, 0.5, -0.1], vec![0.3, 0.9, 0.4]],
            boxes(3),
        )
        .unwrap();
        let g = ttreg_gradients(&t).unwrap();
        for (q, d) in t.features().iter().zip(&g.d_features) {
            assert!(dot(q, d).abs() < 1e-10);
        }
    }
}
