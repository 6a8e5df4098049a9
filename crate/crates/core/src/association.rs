//! Memory-based tube association.
//!
//! The first frame's top-`n_q` detections (by confidence) seed one memory slot
//! each. Every later frame's top-`n_q` detections are matched against the
//! memory with the Hungarian solver on negative cosine similarity, appended to
//! the matching slot's tube, and folded into the memory with an exponential
//! moving average `M_t = (1 - alpha) M_{t-1} + alpha * reordered(q_t)`.

use crate::assignment::{cosine_similarity, solve_assignment, CostMatrix};
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub confidence: T,
    pub feature: Vec<T>,
}

/// All detections of one frame, in detector output order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections<T> {
    pub timestamp: usize,
    pub detections: Vec<Detection<T>>,
}

impl<T: Scalar> FrameDetections<T> {
    pub fn new(timestamp: usize, detections: Vec<Detection<T>>) -> Self {
        Self {
            timestamp,
            detections,
        }
    }

    /// Checks the frame against an expected feature dimension and returns it.
    pub fn validate(&self, dim: Option<usize>) -> Result<usize> {
        let Some(first) = self.detections.first() else {
            return invalid(format!("frame {} has no detections", self.timestamp));
        };
        let dim = dim.unwrap_or(first.feature.len());
        for (k, det) in self.detections.iter().enumerate() {
            if det.feature.len() != dim {
                return invalid(format!(
                    "frame {} detection {k}: feature dimension {} != {dim}",
                    self.timestamp,
                    det.feature.len()
                ));
            }
            if !(det.confidence >= T::zero() && det.confidence <= T::one()) {
                return invalid(format!(
                    "frame {} detection {k}: confidence {} outside [0, 1]",
                    self.timestamp, det.confidence
                ));
            }
            if det.feature.iter().any(|v| !v.is_finite()) {
                return invalid(format!(
                    "frame {} detection {k}: non-finite feature",
                    self.timestamp
                ));
            }
        }
        Ok(dim)
    }

    /// Indices of the `n` most confident detections, most confident first.
    /// Equal confidences keep input order.
    pub fn top_by_confidence(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.detections.len()).collect();
        order.sort_by(|&a, &b| {
            self.detections[b]
                .confidence
                .partial_cmp(&self.detections[a].confidence)
                .expect("validated confidences are comparable")
        });
        order.truncate(n);
        order
    }
}

/// One frame of a tube. `detection` indexes into the source frame's
/// detection list; it is `None` for gap records written when a slot found
/// no match.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeRecord<T> {
    pub timestamp: usize,
    pub bbox: BBox<T>,
    pub confidence: T,
    pub feature: Vec<T>,
    pub detection: Option<usize>,
}

/// The trajectory of one query slot. Timestamps are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube<T> {
    pub slot_id: usize,
    records: Vec<TubeRecord<T>>,
}

impl<T: Scalar> Tube<T> {
    pub fn new(slot_id: usize, records: Vec<TubeRecord<T>>) -> Result<Self> {
        if let Some(w) = records.windows(2).find(|w| w[0].timestamp >= w[1].timestamp) {
            return invalid(format!(
                "tube {slot_id}: timestamps not strictly increasing ({} then {})",
                w[0].timestamp, w[1].timestamp
            ));
        }
        Ok(Self { slot_id, records })
    }

    pub fn records(&self) -> &[TubeRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TubeRecord<T>) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.timestamp <= last.timestamp {
                return invalid(format!(
                    "tube {}: timestamp {} does not follow {}",
                    self.slot_id, record.timestamp, last.timestamp
                ));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BBox<T>> + '_ {
        self.records.iter().map(|r| &r.bbox)
    }

    /// Record at frame `t`, if the tube covers it.
    pub fn at(&self, t: usize) -> Option<&TubeRecord<T>> {
        self.records
            .binary_search_by_key(&t, |r| r.timestamp)
            .ok()
            .map(|k| &self.records[k])
    }

    pub fn first_timestamp(&self) -> Option<usize> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<usize> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn mean_confidence(&self) -> T {
        let n = T::from_count(self.records.len().max(1));
        self.records.iter().map(|r| r.confidence).sum::<T>() / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig<T> {
    /// Number of query slots kept per frame.
    pub n_q: usize,
    /// EMA update rate.
    pub alpha: T,
}

impl<T: Scalar> Default for AssociationConfig<T> {
    fn default() -> Self {
        Self {
            n_q: 15,
            alpha: T::lit(0.1),
        }
    }
}

impl<T: Scalar> AssociationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return invalid("n_q must be at least 1");
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return invalid(format!("alpha {} outside [0, 1]", self.alpha));
        }
        Ok(())
    }
}

/// Per-slot reference features.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeMemory<T> {
    slots: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> TubeMemory<T> {
    pub fn slots(&self) -> &[Vec<T>] {
        &self.slots
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Seeds the memory from the first frame.
///
/// Slot `i` holds the `i`-th most confident detection. When the frame has
/// fewer than `n_q` detections, only that many slots exist for the clip.
pub fn init_memory<T: Scalar>(
    first: &FrameDetections<T>,
    cfg: &AssociationConfig<T>,
) -> Result<(TubeMemory<T>, Vec<Tube<T>>)> {
    cfg.validate()?;
    let dim = first.validate(None)?;
    let chosen = first.top_by_confidence(cfg.n_q);
    let mut slots = Vec::with_capacity(chosen.len());
    let mut tubes = Vec::with_capacity(chosen.len());
    for (slot, &k) in chosen.iter().enumerate() {
        let det = &first.detections[k];
        if crate::assignment::norm(&det.feature) <= T::zero() {
            return invalid(format!(
                "frame {} detection {k}: zero-norm feature",
                first.timestamp
            ));
        }
        slots.push(det.feature.clone());
        tubes.push(Tube {
            slot_id: slot,
            records: vec![TubeRecord {
                timestamp: first.timestamp,
                bbox: det.bbox,
                confidence: det.confidence,
                feature: det.feature.clone(),
                detection: Some(k),
            }],
        });
    }
    Ok((TubeMemory { slots, dim }, tubes))
}

/// Matches one frame against the memory, extends every tube by one record
/// and applies the EMA update.
///
/// Slots left without a match (the frame had fewer candidates than slots)
/// keep their memory vector and repeat their last box with confidence zero.
pub fn associate_step<T: Scalar>(
    memory: &mut TubeMemory<T>,
    frame: &FrameDetections<T>,
    tubes: &mut [Tube<T>],
    cfg: &AssociationConfig<T>,
) -> Result<()> {
    cfg.validate()?;
    frame.validate(Some(memory.dim))?;
    if tubes.len() != memory.slot_count() {
        return invalid(format!(
            "{} tubes for {} memory slots",
            tubes.len(),
            memory.slot_count()
        ));
    }
    if let Some(last) = tubes.iter().filter_map(Tube::last_timestamp).max() {
        if frame.timestamp <= last {
            return invalid(format!(
                "frame timestamp {} does not follow {last}",
                frame.timestamp
            ));
        }
    }

    let candidates = frame.top_by_confidence(cfg.n_q);
    let mut sims = Vec::with_capacity(memory.slot_count() * candidates.len());
    for slot in &memory.slots {
        for &k in &candidates {
            sims.push(cosine_similarity(slot, &frame.detections[k].feature)?);
        }
    }
    let sims = CostMatrix::new(memory.slot_count(), candidates.len(), sims)?;
    let matching = solve_assignment(&sims.negated());

    let alpha = cfg.alpha;
    let keep = T::one() - alpha;
    for (slot, tube) in tubes.iter_mut().enumerate() {
        match matching.col_for_row(slot) {
            Some(col) => {
                let k = candidates[col];
                let det = &frame.detections[k];
                for (m, &q) in memory.slots[slot].iter_mut().zip(&det.feature) {
                    let mixed = keep * *m + alpha * q;
                    // Rounding can step one ulp outside the segment; pin it back.
                    *m = mixed.max(m.min(q)).min(m.max(q));
                }
                tube.push(TubeRecord {
                    timestamp: frame.timestamp,
                    bbox: det.bbox,
                    confidence: det.confidence,
                    feature: det.feature.clone(),
                    detection: Some(k),
                })?;
            }
            None => {
                let last = tube
                    .records
                    .last()
                    .cloned()
                    .expect("tubes are seeded with one record");
                tube.push(TubeRecord {
                    timestamp: frame.timestamp,
                    confidence: T::zero(),
                    detection: None,
                    ..last
                })?;
            }
        }
    }
    Ok(())
}

/// Runs association over a whole clip and returns one tube per slot.
pub fn run_association<T: Scalar>(
    frames: &[FrameDetections<T>],
    cfg: &AssociationConfig<T>,
) -> Result<Vec<Tube<T>>> {
    let Some((first, rest)) = frames.split_first() else {
        return invalid("association needs at least one frame");
    };
    let (mut memory, mut tubes) = init_memory(first, cfg)?;
    for frame in rest {
        associate_step(&mut memory, frame, &mut tubes, cfg)?;
    }
    Ok(tubes)
}
