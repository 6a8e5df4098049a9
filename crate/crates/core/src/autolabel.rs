//! Pseudo-annotation assembly from per-segment candidate tubes.
//!
//! Candidates of the same category whose appearance embeddings are similar
//! and whose spans do not overlap are merged greedily into longer tubes.
//! Gap frames between merged pieces are filled by linear interpolation.
//! Tubes covering less than the coverage threshold of the queried interval
//! are discarded and the best remaining tube (by an injectable score)
//! becomes the pseudo ground truth.

use crate::assignment::cosine_similarity;
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::grounding_eval::FrameInterval;
use crate::mining::GtTube;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord<T> {
    pub timestamp: usize,
    pub bbox: BBox<T>,
    pub confidence: T,
    /// Filled in during a merge rather than observed.
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTube<T> {
    category: String,
    records: Vec<CandidateRecord<T>>,
    appearance: Vec<T>,
}

impl<T: Scalar> CandidateTube<T> {
    /// Records must cover consecutive frames.
    pub fn new(category: impl Into<String>, records: Vec<CandidateRecord<T>>, appearance: Vec<T>) -> Result<Self> {
        if records.is_empty() {
            return invalid("candidate tube has no records");
        }
        if let Some(w) = records.windows(2).find(|w| w[1].timestamp != w[0].timestamp + 1) {
            return invalid(format!(
                "candidate records jump from frame {} to {}",
                w[0].timestamp, w[1].timestamp
            ));
        }
        if records.iter().all(|r| r.interpolated) {
            return invalid("candidate tube has no observed records");
        }
        if appearance.is_empty() || appearance.iter().any(|v| !v.is_finite()) {
            return invalid("candidate appearance must be a nonempty finite vector");
        }
        if appearance.iter().all(|v| *v == T::zero()) {
            return invalid("candidate appearance is the zero vector");
        }
        Ok(Self { category: category.into(), records, appearance })
    }

    /// Observed boxes on consecutive frames starting at `start`.
    pub fn from_boxes(
        category: impl Into<String>,
        start: usize,
        boxes: &[(BBox<T>, T)],
        appearance: Vec<T>,
    ) -> Result<Self> {
        let records = boxes
            .iter()
            .enumerate()
            .map(|(k, &(bbox, confidence))| CandidateRecord {
                timestamp: start + k,
                bbox,
                confidence,
                interpolated: false,
            })
            .collect();
        Self::new(category, records, appearance)
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn records(&self) -> &[CandidateRecord<T>] {
        &self.records
    }

    pub fn appearance(&self) -> &[T] {
        &self.appearance
    }

    pub fn span(&self) -> FrameInterval {
        let first = self.records[0].timestamp;
        let last = self.records[self.records.len() - 1].timestamp;
        FrameInterval::new(first, last).expect("records are ordered")
    }

    pub fn observed_count(&self) -> usize {
        self.records.iter().filter(|r| !r.interpolated).count()
    }

    pub fn mean_observed_confidence(&self) -> T {
        let (sum, n) = self
            .records
            .iter()
            .filter(|r| !r.interpolated)
            .fold((T::zero(), 0usize), |(s, n), r| (s + r.confidence, n + 1));
        if n == 0 {
            T::zero()
        } else {
            sum / T::from_count(n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutolabelConfig<T> {
    /// Minimum appearance cosine similarity for a merge.
    pub appearance_threshold: T,
    /// Minimum fraction of the interval a tube must cover to be kept.
    pub coverage_threshold: T,
}

impl<T: Scalar> Default for AutolabelConfig<T> {
    fn default() -> Self {
        Self {
            appearance_threshold: T::lit(0.8),
            coverage_threshold: T::lit(0.5),
        }
    }
}

impl<T: Scalar> AutolabelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let a = self.appearance_threshold;
        if !(a >= -T::one() && a <= T::one()) {
            return invalid(format!("appearance threshold {a} is outside [-1, 1]"));
        }
        let c = self.coverage_threshold;
        if !(c > T::zero() && c <= T::one()) {
            return invalid(format!("coverage threshold {c} is outside (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome<T> {
    pub tubes: Vec<CandidateTube<T>>,
    /// Output index pairs that match on category and appearance but overlap
    /// in time, so were left apart.
    pub overlapping: Vec<(usize, usize)>,
}

fn similar<T: Scalar>(a: &CandidateTube<T>, b: &CandidateTube<T>, cfg: &AutolabelConfig<T>) -> Result<Option<T>> {
    if a.category != b.category {
        return Ok(None);
    }
    let sim = cosine_similarity(&a.appearance, &b.appearance)?;
    Ok((sim >= cfg.appearance_threshold).then_some(sim))
}

fn merged_appearance<T: Scalar>(a: &CandidateTube<T>, b: &CandidateTube<T>) -> Option<Vec<T>> {
    let (na, nb) = (T::from_count(a.observed_count()), T::from_count(b.observed_count()));
    let total = na + nb;
    let mixed: Vec<T> = a
        .appearance
        .iter()
        .zip(&b.appearance)
        .map(|(&x, &y)| (na * x + nb * y) / total)
        .collect();
    mixed.iter().any(|v| *v != T::zero()).then_some(mixed)
}

struct Candidate<T> {
    i: usize,
    j: usize,
    sim: T,
    starts: (usize, usize),
}

fn mergeable_pairs<T: Scalar>(tubes: &[CandidateTube<T>], cfg: &AutolabelConfig<T>) -> Result<Vec<Candidate<T>>> {
    let mut out = Vec::new();
    for i in 0..tubes.len() {
        for j in i + 1..tubes.len() {
            let (a, b) = (&tubes[i], &tubes[j]);
            if a.span().overlap(&b.span()) > 0 {
                continue;
            }
            let Some(sim) = similar(a, b, cfg)? else { continue };
            if merged_appearance(a, b).is_none() {
                continue;
            }
            let (sa, sb) = (a.span().start(), b.span().start());
            out.push(Candidate { i, j, sim, starts: (sa.min(sb), sa.max(sb)) });
        }
    }
    Ok(out)
}

fn join<T: Scalar>(a: &CandidateTube<T>, b: &CandidateTube<T>) -> CandidateTube<T> {
    let (first, second) = if a.span().start() < b.span().start() { (a, b) } else { (b, a) };
    let left = first.records.last().expect("nonempty");
    let right = &second.records[0];
    let (t0, t1) = (left.timestamp, right.timestamp);
    let mut records = first.records.clone();
    for t in t0 + 1..t1 {
        let s = T::from_count(t - t0) / T::from_count(t1 - t0);
        records.push(CandidateRecord {
            timestamp: t,
            bbox: left.bbox.lerp(&right.bbox, s),
            confidence: (T::one() - s) * left.confidence + s * right.confidence,
            interpolated: true,
        });
    }
    records.extend(second.records.iter().cloned());
    CandidateTube {
        category: first.category.clone(),
        records,
        appearance: merged_appearance(a, b).expect("checked when the pair was listed"),
    }
}

/// Greedy merging to a fixed point. The most similar admissible pair is
/// merged first; ties go to the pair whose spans start earlier.
pub fn merge_tubes<T: Scalar>(candidates: &[CandidateTube<T>], cfg: &AutolabelConfig<T>) -> Result<MergeOutcome<T>> {
    cfg.validate()?;
    if let Some(first) = candidates.first() {
        let dim = first.appearance.len();
        if candidates.iter().any(|c| c.appearance.len() != dim) {
            return invalid("candidate appearance vectors differ in length");
        }
    }
    let mut tubes = candidates.to_vec();
    loop {
        let pairs = mergeable_pairs(&tubes, cfg)?;
        let best = pairs.into_iter().reduce(|best, c| {
            let better = c.sim > best.sim
                || (c.sim == best.sim && (c.starts, c.i, c.j) < (best.starts, best.i, best.j));
            if better { c } else { best }
        });
        let Some(Candidate { i, j, .. }) = best else { break };
        let merged = join(&tubes[i], &tubes[j]);
        tubes[i] = merged;
        tubes.remove(j);
    }

    let mut overlapping = Vec::new();
    for i in 0..tubes.len() {
        for j in i + 1..tubes.len() {
            if tubes[i].span().overlap(&tubes[j].span()) > 0 && similar(&tubes[i], &tubes[j], cfg)?.is_some() {
                overlapping.push((i, j));
            }
        }
    }
    Ok(MergeOutcome { tubes, overlapping })
}

/// True when no pair of `tubes` could still be merged under `cfg`.
pub fn is_fixed_point<T: Scalar>(tubes: &[CandidateTube<T>], cfg: &AutolabelConfig<T>) -> Result<bool> {
    Ok(mergeable_pairs(tubes, cfg)?.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Keep,
    Discard,
}

pub fn coverage_fraction<T: Scalar>(tube: &CandidateTube<T>, interval: &FrameInterval) -> T {
    T::from_count(tube.span().overlap(interval)) / T::from_count(interval.len())
}

/// Keeps a tube iff it covers at least the configured fraction of `interval`.
pub fn coverage_filter<T: Scalar>(
    tube: &CandidateTube<T>,
    interval: &FrameInterval,
    cfg: &AutolabelConfig<T>,
) -> Result<Coverage> {
    cfg.validate()?;
    Ok(if coverage_fraction(tube, interval) >= cfg.coverage_threshold {
        Coverage::Keep
    } else {
        Coverage::Discard
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel<T> {
    pub gt: GtTube<T>,
    /// Index of the chosen tube in the merged list.
    pub source: usize,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutolabelOutcome<T> {
    pub merged: MergeOutcome<T>,
    pub coverage: Vec<Coverage>,
    pub label: Option<PseudoLabel<T>>,
}

/// Merge, filter by coverage, then turn the best-scoring survivor into a
/// ground-truth tube over its overlap with `interval`. Ties in score go to
/// the lower index.
pub fn autolabel<T: Scalar, F>(
    candidates: &[CandidateTube<T>],
    interval: &FrameInterval,
    cfg: &AutolabelConfig<T>,
    score: F,
) -> Result<AutolabelOutcome<T>>
where
    F: Fn(&CandidateTube<T>) -> T,
{
    let merged = merge_tubes(candidates, cfg)?;
    let coverage = merged
        .tubes
        .iter()
        .map(|t| coverage_filter(t, interval, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(usize, T)> = None;
    for (k, tube) in merged.tubes.iter().enumerate() {
        if coverage[k] == Coverage::Discard {
            continue;
        }
        let s = score(tube);
        if !s.is_finite() {
            return invalid(format!("score of tube {k} is not finite"));
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }

    let label = match best {
        None => None,
        Some((source, score)) => {
            let tube = &merged.tubes[source];
            let span = tube
                .span()
                .intersect(interval)
                .expect("kept tubes overlap the interval");
            let boxes = tube
                .records
                .iter()
                .filter(|r| span.contains(r.timestamp))
                .map(|r| r.bbox)
                .collect();
            Some(PseudoLabel { gt: GtTube::new(span.start(), span.end(), boxes)?, source, score })
        }
    };
    Ok(AutolabelOutcome { merged, coverage, label })
}
