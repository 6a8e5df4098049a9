//! Deterministic synthetic scenes with latent identities.
//!
//! Every object owns a box that random-walks over the frame (reflected at the
//! borders) and a base appearance vector. The observed appearance of an
//! object at frame `t` is
//!
//! ```text
//! q_t = base + w_t + e_t,   w_t = w_{t-1} + N(0, (walk * drift)^2),   e_t ~ N(0, drift^2)
//! ```
//!
//! i.e. a slow accumulated random walk plus per-frame fluctuation, both
//! scaled by `appearance_drift`. Distractor detections with independent
//! features arrive as a Poisson process. Object 0 is the grounding target.
//! Objects are never dropped: every object is detected in every frame.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::association::{Detection, FrameDetections, Tube};
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::mining::GtTube;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub frames: usize,
    pub objects: usize,
    pub feature_dim: usize,
    /// Per-component scale of the appearance perturbation, relative to the
    /// unit-variance base features.
    pub appearance_drift: f64,
    /// Step of the accumulated appearance walk as a fraction of `appearance_drift`.
    pub appearance_walk: f64,
    /// Per-frame standard deviation of the box-center random walk.
    pub motion_step: f64,
    /// Expected number of spurious detections per frame.
    pub distractor_rate: f64,
    /// Per-corner jitter of detected boxes.
    pub detection_noise: f64,
    pub confidence_noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 64,
            objects: 4,
            feature_dim: 16,
            appearance_drift: 0.05,
            appearance_walk: 0.125,
            motion_step: 0.01,
            distractor_rate: 1.0,
            detection_noise: 0.005,
            confidence_noise: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return invalid("scene needs at least one frame");
        }
        if self.objects == 0 {
            return invalid("scene needs at least one object (object 0 is the target)");
        }
        if self.feature_dim < 2 {
            return invalid("feature dimension must be at least 2");
        }
        let scales = [
            ("appearance_drift", self.appearance_drift),
            ("appearance_walk", self.appearance_walk),
            ("motion_step", self.motion_step),
            ("distractor_rate", self.distractor_rate),
            ("detection_noise", self.detection_noise),
            ("confidence_noise", self.confidence_noise),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Latent source of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Identity {
    Object(usize),
    Distractor,
}

impl Identity {
    /// Object index, or `-1` for distractors.
    pub fn code(self) -> i64 {
        match self {
            Identity::Object(k) => k as i64,
            Identity::Distractor => -1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            -1 => Ok(Identity::Distractor),
            k if k >= 0 => Ok(Identity::Object(k as usize)),
            k => invalid(format!("identity code {k} is neither an object index nor -1")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub frames: Vec<FrameDetections<f64>>,
    /// `labels[t][k]` is the identity of detection `k` in frame `t`.
    pub labels: Vec<Vec<Identity>>,
    pub gt: GtTube<f64>,
    pub config: SceneConfig,
}

struct ObjectState {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    base: Vec<f64>,
    walk: Vec<f64>,
    confidence: f64,
}

impl ObjectState {
    fn bbox(&self) -> BBox<f64> {
        BBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
        .expect("object box kept inside the frame")
    }
}

/// Folds `v` back into `[lo, hi]` by mirroring at the bounds.
pub(crate) fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    v = (v - lo).rem_euclid(period);
    if v > span {
        v = period - v;
    }
    lo + v
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| gaussian(rng, sigma)).collect()
}

fn jittered(rng: &mut ChaCha8Rng, truth: &BBox<f64>, sigma: f64) -> BBox<f64> {
    if sigma == 0.0 {
        return *truth;
    }
    let c = truth.corners().map(|v| v + gaussian(rng, sigma));
    match BBox::from_corners(c) {
        Ok(b) if b.width() > 1e-3 && b.height() > 1e-3 => b,
        _ => *truth,
    }
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<LabeledScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;

    let mut objects: Vec<ObjectState> = (0..cfg.objects)
        .map(|k| {
            let w = rng.random_range(0.08..0.25);
            let h = rng.random_range(0.08..0.25);
            ObjectState {
                cx: rng.random_range(w / 2.0..1.0 - w / 2.0),
                cy: rng.random_range(h / 2.0..1.0 - h / 2.0),
                w,
                h,
                base: gaussian_vec(&mut rng, dim, 1.0),
                walk: vec![0.0; dim],
                confidence: if k == 0 { 0.9 } else { rng.random_range(0.3..0.85) },
            }
        })
        .collect();

    let min_len = cfg.frames.min(5.max(cfg.frames / 2));
    let gt_len = rng.random_range(min_len..=cfg.frames);
    let ts = rng.random_range(0..=cfg.frames - gt_len);
    let te = ts + gt_len - 1;

    let poisson = (cfg.distractor_rate > 0.0)
        .then(|| Poisson::new(cfg.distractor_rate).expect("positive rate"));
    let walk_sigma = cfg.appearance_drift * cfg.appearance_walk;

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    let mut gt_boxes = Vec::with_capacity(gt_len);

    for t in 0..cfg.frames {
        if t > 0 {
            for obj in &mut objects {
                obj.cx = reflect(obj.cx + gaussian(&mut rng, cfg.motion_step), obj.w / 2.0, 1.0 - obj.w / 2.0);
                obj.cy = reflect(obj.cy + gaussian(&mut rng, cfg.motion_step), obj.h / 2.0, 1.0 - obj.h / 2.0);
                for v in &mut obj.walk {
                    *v += gaussian(&mut rng, walk_sigma);
                }
            }
        }
        if (ts..=te).contains(&t) {
            gt_boxes.push(objects[0].bbox());
        }

        let mut entries: Vec<(Detection<f64>, Identity)> = Vec::new();
        for (k, obj) in objects.iter().enumerate() {
            let feature: Vec<f64> = obj
                .base
                .iter()
                .zip(&obj.walk)
                .map(|(b, w)| b + w + gaussian(&mut rng, cfg.appearance_drift))
                .collect();
            let confidence = (obj.confidence + gaussian(&mut rng, cfg.confidence_noise)).clamp(0.0, 1.0);
            let bbox = jittered(&mut rng, &obj.bbox(), cfg.detection_noise);
            entries.push((Detection { bbox, confidence, feature }, Identity::Object(k)));
        }

        let spurious = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..spurious {
            let w = rng.random_range(0.05..0.3);
            let h = rng.random_range(0.05..0.3);
            let x = rng.random_range(0.0..1.0 - w);
            let y = rng.random_range(0.0..1.0 - h);
            let bbox = BBox::new(x, y, x + w, y + h).expect("distractor box inside the frame");
            let confidence = (rng.random_range(0.05..0.5) + gaussian(&mut rng, cfg.confidence_noise)).clamp(0.0, 1.0);
            let feature = gaussian_vec(&mut rng, dim, 1.0);
            entries.push((Detection { bbox, confidence, feature }, Identity::Distractor));
        }

        entries.shuffle(&mut rng);
        let (detections, ids): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        frames.push(FrameDetections::new(t, detections));
        labels.push(ids);
    }

    Ok(LabeledScene {
        frames,
        labels,
        gt: GtTube::new(ts, te, gt_boxes)?,
        config: *cfg,
    })
}

impl LabeledScene {
    /// Latent identity behind a tube record; `None` for gap records.
    pub fn identity_of(&self, timestamp: usize, detection: Option<usize>) -> Result<Option<Identity>> {
        let Some(k) = detection else {
            return Ok(None);
        };
        self.labels
            .get(timestamp)
            .and_then(|row| row.get(k))
            .copied()
            .map(Some)
            .ok_or_else(|| crate::Error::Validation(format!("no detection {k} in frame {timestamp}")))
    }
}

/// Per tube, the fraction of consecutive record pairs whose latent
/// identities differ. Gap records carry no identity and count as a change.
pub fn identity_switch_rate(tubes: &[Tube<f64>], scene: &LabeledScene) -> Result<Vec<f64>> {
    tubes
        .iter()
        .map(|tube| {
            if tube.len() != scene.frames.len() {
                return invalid(format!(
                    "tube {} has {} records but the scene has {} frames",
                    tube.slot_id,
                    tube.len(),
                    scene.frames.len()
                ));
            }
            let ids = tube
                .records()
                .iter()
                .map(|r| scene.identity_of(r.timestamp, r.detection))
                .collect::<Result<Vec<_>>>()?;
            Ok(switch_fraction(&ids))
        })
        .collect()
}

pub(crate) fn switch_fraction<I: PartialEq>(ids: &[I]) -> f64 {
    if ids.len() < 2 {
        return 0.0;
    }
    let switches = ids.windows(2).filter(|w| w[0] != w[1]).count();
    switches as f64 / (ids.len() - 1) as f64
}
