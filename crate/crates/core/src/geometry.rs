//! Axis-aligned boxes in normalized image coordinates and the IoU / GIoU
//! calculus built on them.
//!
//! Boxes are stored in corner form `[x1, y1, x2, y2]`. Every coordinate is a
//! fraction of the frame extent, so valid boxes live inside the unit square.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Axis-aligned rectangle with `x1 < x2`, `y1 < y2`, all corners in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

/// Center / extent form of a [`BBox`], used by the L1 box cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterSize<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    /// Builds a box, clamping each coordinate into `[0, 1]`.
    ///
    /// Non-finite coordinates and boxes whose clamped area is zero are rejected.
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return invalid(format!("box has non-finite corner [{x1}, {y1}, {x2}, {y2}]"));
        }
        let clamp = |v: T| v.max(T::zero()).min(T::one());
        let (cx1, cy1, cx2, cy2) = (clamp(x1), clamp(y1), clamp(x2), clamp(y2));
        if !(cx1 < cx2 && cy1 < cy2) {
            return invalid(format!(
                "box [{x1}, {y1}, {x2}, {y2}] has zero area after clamping to the unit square"
            ));
        }
        Ok(Self {
            x1: cx1,
            y1: cy1,
            x2: cx2,
            y2: cy2,
        })
    }

    pub fn from_corners(c: [T; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn unit() -> Self {
        Self {
            x1: T::zero(),
            y1: T::zero(),
            x2: T::one(),
            y2: T::one(),
        }
    }

    #[inline]
    pub fn x1(&self) -> T {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> T {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> T {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> T {
        self.y2
    }

    #[inline]
    pub fn corners(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &Self) -> T {
        iou_corners(&self.corners(), &other.corners())
    }

    pub fn giou(&self, other: &Self) -> T {
        giou_corners(&self.corners(), &other.corners())
    }

    /// Shifts the box by `(dx, dy)`. The result goes through the usual
    /// clamping, so a shift that pushes the box off-frame can fail.
    pub fn translate(&self, dx: T, dy: T) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn to_center_size(&self) -> CenterSize<T> {
        let two = T::lit(2.0);
        CenterSize {
            cx: (self.x1 + self.x2) / two,
            cy: (self.y1 + self.y2) / two,
            w: self.x2 - self.x1,
            h: self.y2 - self.y1,
        }
    }

    /// Linear interpolation of corners: `(1 - s) * self + s * other`.
    pub fn lerp(&self, other: &Self, s: T) -> Self {
        let mix = |a: T, b: T| (T::one() - s) * a + s * b;
        // Convex combination of two valid boxes keeps x1 < x2 and y1 < y2.
        Self {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }
}

impl<T: Scalar> CenterSize<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        if !(w > T::zero() && h > T::zero()) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return invalid(format!("center-size box ({cx}, {cy}, {w}, {h}) needs finite w, h > 0"));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn to_bbox(&self) -> Result<BBox<T>> {
        let two = T::lit(2.0);
        BBox::new(
            self.cx - self.w / two,
            self.cy - self.h / two,
            self.cx + self.w / two,
            self.cy + self.h / two,
        )
    }

    /// Sum of absolute component differences.
    pub fn l1(&self, other: &Self) -> T {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}

pub fn giou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.giou(b)
}

#[inline]
fn area<T: Scalar>(c: &[T; 4]) -> T {
    (c[2] - c[0]) * (c[3] - c[1])
}

#[inline]
fn intersection<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> T {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(T::zero());
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(T::zero());
    w * h
}

#[inline]
fn enclosure<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> T {
    (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]))
}

/// IoU on raw corner arrays. No validation: callers (finite differences)
/// may probe slightly outside the unit square.
pub(crate) fn iou_corners<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> T {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    inter / union
}

pub(crate) fn giou_corners<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> T {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    let hull = enclosure(a, b);
    inter / union - (hull - union) / hull
}

/// Partial derivatives of `GIoU(a, b)` with respect to the eight corners
/// `(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2)`.
///
/// Only meaningful where every `min`/`max` in the formula is strict and the
/// boxes overlap with positive area; the caller checks that.
pub(crate) fn giou_corner_grad<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> ([T; 4], [T; 4]) {
    let zero = T::zero();
    let one = T::one();

    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    let cw = a[2].max(b[2]) - a[0].min(b[0]);
    let ch = a[3].max(b[3]) - a[1].min(b[1]);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    let hull = cw * ch;

    // giou = I/U - 1 + U/C
    let d_i = one / union;
    let d_u = -inter / (union * union) + one / hull;
    let d_c = -union / (hull * hull);

    let grad = |own: &[T; 4], other: &[T; 4]| -> [T; 4] {
        let own_w = own[2] - own[0];
        let own_h = own[3] - own[1];
        // x1: area, intersection width (if own is the max), hull width (if own is the min)
        let x1 = {
            let d_area = -own_h;
            let d_iw = if own[0] > other[0] { -one } else { zero };
            let d_cw = if own[0] < other[0] { -one } else { zero };
            (d_iw * ih, d_area, d_cw * ch)
        };
        let y1 = {
            let d_area = -own_w;
            let d_ih = if own[1] > other[1] { -one } else { zero };
            let d_ch = if own[1] < other[1] { -one } else { zero };
            (d_ih * iw, d_area, d_ch * cw)
        };
        let x2 = {
            let d_area = own_h;
            let d_iw = if own[2] < other[2] { one } else { zero };
            let d_cw = if own[2] > other[2] { one } else { zero };
            (d_iw * ih, d_area, d_cw * ch)
        };
        let y2 = {
            let d_area = own_w;
            let d_ih = if own[3] < other[3] { one } else { zero };
            let d_ch = if own[3] > other[3] { one } else { zero };
            (d_ih * iw, d_area, d_ch * cw)
        };
        [x1, y1, x2, y2].map(|(d_inter, d_area, d_hull)| {
            let d_union = d_area - d_inter;
            d_i * d_inter + d_u * d_union + d_c * d_hull
        })
    };
    (grad(a, b), grad(b, a))
}

impl<T: Scalar + Serialize> Serialize for BBox<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.corners().serialize(serializer)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for BBox<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let c = <[T; 4]>::deserialize(deserializer)?;
        BBox::from_corners(c).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(b(0., 0., 1., 1.).iou(&b(0., 0., 1., 1.)), 1.0);
        assert_eq!(b(0., 0., 0.4, 0.4).iou(&b(0.6, 0.6, 1., 1.)), 0.0);
        assert_eq!(b(0., 0., 1., 1.).iou(&b(0., 0., 0.5, 1.)), 0.5);
    }

    #[test]
    fn giou_examples() {
        let a = b(0.1, 0.2, 0.7, 0.9);
        assert_eq!(a.giou(&a), 1.0);
        assert_eq!(b(0., 0., 0.5, 0.5).giou(&b(0.5, 0.5, 1., 1.)), -0.5);
        // intersection 0, union 2e-4, hull 1 -> -(1 - 2e-4)
        let far = b(0., 0., 0.01, 0.01).giou(&b(0.99, 0.99, 1., 1.));
        assert!((far - (-0.9998)).abs() < 1e-12, "{far}");
    }

    #[test]
    fn construction_clamps_and_rejects() {
        let c = b(-0.5, 0.2, 1.5, 0.4);
        assert_eq!(c.corners(), [0.0, 0.2, 1.0, 0.4]);
        assert!(BBox::new(0.5, 0.5, 0.5, 0.9).is_err());
        assert!(BBox::new(0.6, 0.1, 0.5, 0.9).is_err());
        assert!(BBox::new(1.2, 0.1, 1.5, 0.9).is_err());
        assert!(BBox::new(f64::NAN, 0.1, 0.5, 0.9).is_err());
        assert!(BBox::new(0.0, 0.1, f64::INFINITY, 0.9).is_err());
    }

    #[test]
    fn center_size_examples() {
        let cs = BBox::<f64>::unit().to_center_size();
        assert_eq!((cs.cx, cs.cy, cs.w, cs.h), (0.5, 0.5, 1.0, 1.0));
        let back = CenterSize::new(0.5, 0.5, 0.2, 0.4).unwrap().to_bbox().unwrap();
        for (got, want) in back.corners().iter().zip([0.4f64, 0.3, 0.6, 0.7]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(CenterSize::new(0.5, 0.5, 0.0, 0.4).is_err());
    }

    #[test]
    fn serde_is_a_four_array() {
        let a = b(0.1, 0.2, 0.3, 0.4);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[0.1,0.2,0.3,0.4]");
        let back: BBox<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<BBox<f64>>("[0.5,0.5,0.5,0.6]").is_err());
        assert!(serde_json::from_str::<BBox<f64>>("[0.1,0.2,0.3]").is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = BBox::<f32>::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let c = BBox::<f32>::new(0.5, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(a.giou(&c), -0.5f32);
    }

    #[test]
    fn corner_grad_matches_central_difference() {
        let a = [0.1f64, 0.15, 0.55, 0.6];
        let c = [0.2, 0.1, 0.7, 0.5];
        let (ga, gc) = giou_corner_grad(&a, &c);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = a;
            let mut m = a;
            p[k] += h;
            m[k] -= h;
            let fd = (giou_corners(&p, &c) - giou_corners(&m, &c)) / (2.0 * h);
            assert!((fd - ga[k]).abs() < 1e-8, "a[{k}]: {fd} vs {}", ga[k]);
            let mut p = c;
            let mut m = c;
            p[k] += h;
            m[k] -= h;
            let fd = (giou_corners(&a, &p) - giou_corners(&a, &m)) / (2.0 * h);
            assert!((fd - gc[k]).abs() < 1e-8, "b[{k}]: {fd} vs {}", gc[k]);
        }
    }
}
