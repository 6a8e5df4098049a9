//! Exposure bias of textualized box decoding.
//!
//! A box sequence decoded as `L` tokens, each wrong with probability `eps`,
//! is error-free with probability `(1 - eps)^L`. The Monte-Carlo decoder
//! below walks the token stream frame by frame; after the first wrong token
//! the emitted box leaves the ground truth and random-walks from the last
//! clean box. The post-error walk is a modelling choice, not part of the
//! closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::grounding_eval::{mean_by_fifths, DRIFT_PARTS};
use crate::simulator::reflect;

/// Exact and first-order error-free probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorFree {
    pub analytic: f64,
    pub linearized: f64,
}

pub fn p_error_free(sequence_length: usize, eps: f64) -> ErrorFree {
    ErrorFree {
        analytic: (1.0 - eps).powf(sequence_length as f64),
        linearized: 1.0 - sequence_length as f64 * eps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureConfig {
    /// Tokens spent on each frame's box; the sequence length is
    /// `frames * tokens_per_frame`.
    pub tokens_per_frame: usize,
    pub per_step_error: f64,
    pub trials: usize,
    /// Standard deviation of the per-frame center step once decoding has erred.
    pub drift_step: f64,
    pub seed: u64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            tokens_per_frame: 4,
            per_step_error: 0.01,
            trials: 10_000,
            drift_step: 0.05,
            seed: 0,
        }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens_per_frame == 0 {
            return invalid("tokens_per_frame must be at least 1");
        }
        if !(0.0..1.0).contains(&self.per_step_error) {
            return invalid(format!("per-step error {} is outside [0, 1)", self.per_step_error));
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if !(self.drift_step.is_finite() && self.drift_step >= 0.0) {
            return invalid(format!("drift_step {} must be finite and nonnegative", self.drift_step));
        }
        Ok(())
    }

    pub fn sequence_length(&self, frames: usize) -> usize {
        frames * self.tokens_per_frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingReport {
    pub sequence_length: usize,
    pub analytic: f64,
    pub linearized: f64,
    pub empirical: f64,
    /// Binomial standard error of `empirical` under the analytic rate.
    pub standard_error: f64,
    /// Mean IoU against the ground truth over five consecutive parts.
    pub profile: [f64; DRIFT_PARTS],
}

struct TrialOutcome {
    clean: bool,
    ious: Vec<f64>,
}

fn run_trial(cfg: &ExposureConfig, gt: &[BBox<f64>], trial: u64) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial);
    let step = (cfg.drift_step > 0.0).then(|| Normal::new(0.0, cfg.drift_step).expect("valid drift step"));

    let mut ious = Vec::with_capacity(gt.len());
    let mut drifted: Option<BBox<f64>> = None;
    for (f, truth) in gt.iter().enumerate() {
        if drifted.is_none() {
            let erred = (0..cfg.tokens_per_frame).any(|_| rng.random::<f64>() < cfg.per_step_error);
            if erred {
                drifted = Some(if f == 0 { *truth } else { gt[f - 1] });
            }
        }
        match drifted.as_mut() {
            None => ious.push(1.0),
            Some(b) => {
                if let Some(n) = &step {
                    *b = walk(b, n.sample(&mut rng), n.sample(&mut rng));
                }
                ious.push(b.iou(truth));
            }
        }
    }
    TrialOutcome { clean: drifted.is_none(), ious }
}

/// Moves the center by `(dx, dy)`, reflecting at the borders so the size is kept.
fn walk(b: &BBox<f64>, dx: f64, dy: f64) -> BBox<f64> {
    let (w, h) = (b.width(), b.height());
    let cs = b.to_center_size();
    let cx = reflect(cs.cx + dx, w / 2.0, 1.0 - w / 2.0);
    let cy = reflect(cs.cy + dy, h / 2.0, 1.0 - h / 2.0);
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).unwrap_or(*b)
}

/// Monte-Carlo decoding of `gt` (at least 5 frames). Trial `k` draws from
/// stream `k` of the seeded generator, so results do not depend on the
/// order trials are run in.
pub fn simulate_decoding(cfg: &ExposureConfig, gt: &[BBox<f64>]) -> Result<DecodingReport> {
    cfg.validate()?;
    if gt.len() < DRIFT_PARTS {
        return invalid(format!("decoding needs at least {DRIFT_PARTS} frames, got {}", gt.len()));
    }
    let mut clean = 0usize;
    let mut iou_sum = vec![0.0; gt.len()];
    for trial in 0..cfg.trials {
        let out = run_trial(cfg, gt, trial as u64);
        clean += out.clean as usize;
        for (acc, v) in iou_sum.iter_mut().zip(&out.ious) {
            *acc += v;
        }
    }
    let n = cfg.trials as f64;
    let mean_iou: Vec<f64> = iou_sum.iter().map(|s| s / n).collect();
    let sequence_length = cfg.sequence_length(gt.len());
    let ErrorFree { analytic, linearized } = p_error_free(sequence_length, cfg.per_step_error);
    Ok(DecodingReport {
        sequence_length,
        analytic,
        linearized,
        empirical: clean as f64 / n,
        standard_error: (analytic * (1.0 - analytic) / n).sqrt(),
        profile: mean_by_fifths(&mean_iou),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_gt(frames: usize) -> Vec<BBox<f64>> {
        vec![BBox::new(0.4, 0.4, 0.6, 0.6).unwrap(); frames]
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(p_error_free(37, 0.0).analytic, 1.0);
        assert_eq!(p_error_free(1, 0.25).analytic, 0.75);
        let p = p_error_free(100, 0.01);
        assert!((p.analytic - 0.366_032_341_273_229_3).abs() < 1e-12);
        assert!((p.linearized - 0.0).abs() < 1e-12);
    }

    #[test]
    fn error_free_decoding_is_perfect() {
        let cfg = ExposureConfig { per_step_error: 0.0, trials: 50, ..ExposureConfig::default() };
        let r = simulate_decoding(&cfg, &static_gt(12)).unwrap();
        assert_eq!(r.empirical, 1.0);
        assert_eq!(r.profile, [1.0; 5]);
    }

    #[test]
    fn zero_drift_keeps_profile_flat() {
        let cfg = ExposureConfig { per_step_error: 0.2, drift_step: 0.0, trials: 200, ..ExposureConfig::default() };
        let r = simulate_decoding(&cfg, &static_gt(10)).unwrap();
        assert_eq!(r.profile, [1.0; 5]);
        assert!(r.empirical < 0.01);
    }

    #[test]
    fn empirical_rate_tracks_closed_form() {
        let cfg = ExposureConfig { per_step_error: 0.02, trials: 4000, seed: 5, ..ExposureConfig::default() };
        let r = simulate_decoding(&cfg, &static_gt(10)).unwrap();
        assert_eq!(r.sequence_length, 40);
        assert!((r.empirical - r.analytic).abs() < 3.0 * r.standard_error);
    }

    #[test]
    fn invalid_configs() {
        let gt = static_gt(10);
        for cfg in [
            ExposureConfig { per_step_error: 1.0, ..ExposureConfig::default() },
            ExposureConfig { per_step_error: -0.1, ..ExposureConfig::default() },
            ExposureConfig { trials: 0, ..ExposureConfig::default() },
            ExposureConfig { tokens_per_frame: 0, ..ExposureConfig::default() },
            ExposureConfig { drift_step: f64::NAN, ..ExposureConfig::default() },
        ] {
            assert!(simulate_decoding(&cfg, &gt).is_err());
        }
        assert!(simulate_decoding(&ExposureConfig::default(), &static_gt(4)).is_err());
    }

    #[test]
    fn walk_keeps_size() {
        let b = BBox::new(0.7, 0.1, 0.9, 0.4).unwrap();
        let moved = walk(&b, 0.3, -0.5);
        assert!((moved.width() - b.width()).abs() < 1e-12);
        assert!((moved.height() - b.height()).abs() < 1e-12);
    }
}
