//! On-disk schemas and their loaders.
//!
//! Per-frame streams are JSONL; tubes, ground truth, candidates and reports
//! are single JSON documents. Ground-truth and prediction files may hold
//! several concatenated documents (one per line).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use tubekit::association::{Detection, FrameDetections, Tube, TubeRecord};
use tubekit::autolabel::{CandidateRecord, CandidateTube};
use tubekit::grounding_eval::{FrameInterval, Prediction};
use tubekit::{BoundingBox, GtTube};

pub const SCHEMA_VERSION: u32 = 1;

/// Failure to read or decode an input file. Maps to exit status 2.
#[derive(Debug)]
pub struct FormatError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl FormatError {
    fn at(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { path: path.to_path_buf(), line, column: None, message: message.into() }
    }

    fn json(path: &Path, line_offset: usize, err: &serde_json::Error) -> Self {
        let (line, column) = if err.line() == 0 {
            (None, None)
        } else {
            (Some(line_offset + err.line()), Some(err.column()))
        };
        // serde_json appends " at line X column Y"; the prefix already says where.
        let text = err.to_string();
        let message = match text.rfind(" at line ") {
            Some(cut) => text[..cut].to_string(),
            None => text,
        };
        Self { path: path.to_path_buf(), line, column, message }
    }
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

fn read_text(path: &Path) -> FormatResult<String> {
    fs::read_to_string(path).map_err(|e| FormatError::at(path, None, format!("cannot read file: {e}")))
}

/// Decodes every JSON document in the file, in order, with its starting line.
fn read_documents<D: DeserializeOwned>(path: &Path) -> FormatResult<Vec<(usize, D)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut stream = serde_json::Deserializer::from_str(&text).into_iter::<D>();
    loop {
        let offset = stream.byte_offset();
        let start_line = 1 + text[..offset].matches('\n').count()
            + text[offset..].chars().take_while(|c| c.is_whitespace()).filter(|&c| c == '\n').count();
        match stream.next() {
            None => break,
            Some(Ok(doc)) => out.push((start_line, doc)),
            Some(Err(e)) => return Err(FormatError::json(path, 0, &e)),
        }
    }
    if out.is_empty() {
        return Err(FormatError::at(path, None, "file holds no JSON document"));
    }
    Ok(out)
}

fn read_single<D: DeserializeOwned>(path: &Path) -> FormatResult<D> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::json(path, 0, &e))
}

/// Rounds every non-integer number to 9 significant digits.
pub fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let v = n.as_f64().expect("f64 number");
            let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
            if let Some(r) = serde_json::Number::from_f64(rounded) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

pub fn to_compact<S: Serialize>(doc: &S) -> String {
    let mut v = serde_json::to_value(doc).expect("schema types serialize");
    round_floats(&mut v);
    serde_json::to_string(&v).expect("values serialize")
}

pub fn to_pretty<S: Serialize>(doc: &S) -> String {
    let mut v = serde_json::to_value(doc).expect("schema types serialize");
    round_floats(&mut v);
    serde_json::to_string_pretty(&v).expect("values serialize")
}

// ---------------------------------------------------------------- detections

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsHeader {
    pub video_id: String,
    pub fps: f64,
    pub frame_count: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub embed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLine {
    pub t: usize,
    pub detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone)]
pub struct DetectionsFile {
    pub header: DetectionsHeader,
    pub frames: Vec<FrameDetections<f64>>,
}

impl DetectionsFile {
    pub fn from_frames(video_id: &str, fps: f64, frames: Vec<FrameDetections<f64>>) -> Self {
        let feature_dim = frames
            .iter()
            .find_map(|f| f.detections.first())
            .map_or(0, |d| d.feature.len());
        Self {
            header: DetectionsHeader {
                video_id: video_id.to_string(),
                fps,
                frame_count: frames.len(),
                feature_dim,
            },
            frames,
        }
    }

    pub fn load(path: &Path) -> FormatResult<Self> {
        let text = read_text(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, htext)) = lines.next() else {
            return Err(FormatError::at(path, None, "detections file is empty"));
        };
        let header: DetectionsHeader =
            serde_json::from_str(htext).map_err(|e| FormatError::json(path, hline, &e))?;
        let mut frames = Vec::with_capacity(header.frame_count);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let frame: FrameLine = serde_json::from_str(line).map_err(|e| FormatError::json(path, idx, &e))?;
            if frame.t != frames.len() {
                return Err(FormatError::at(
                    path,
                    Some(lineno),
                    format!("expected frame t = {}, found t = {}", frames.len(), frame.t),
                ));
            }
            let mut detections = Vec::with_capacity(frame.detections.len());
            for (k, d) in frame.detections.into_iter().enumerate() {
                if d.embed.len() != header.feature_dim {
                    return Err(FormatError::at(
                        path,
                        Some(lineno),
                        format!("detection {k}: embed has {} values, header says {}", d.embed.len(), header.feature_dim),
                    ));
                }
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(FormatError::at(path, Some(lineno), format!("detection {k}: score {} outside [0, 1]", d.score)));
                }
                detections.push(Detection { bbox: d.bbox, confidence: d.score, feature: d.embed });
            }
            frames.push(FrameDetections::new(frame.t, detections));
        }
        if frames.len() != header.frame_count {
            return Err(FormatError::at(
                path,
                None,
                format!("header announces {} frames, file holds {}", header.frame_count, frames.len()),
            ));
        }
        Ok(Self { header, frames })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = to_compact(&self.header);
        out.push('\n');
        for f in &self.frames {
            let line = FrameLine {
                t: f.timestamp,
                detections: f
                    .detections
                    .iter()
                    .map(|d| DetectionEntry { bbox: d.bbox, score: d.confidence, embed: d.feature.clone() })
                    .collect(),
            };
            out.push_str(&to_compact(&line));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------- ground truth

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedBox {
    pub t: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFile {
    pub video_id: String,
    pub ts: usize,
    pub te: usize,
    pub boxes: Vec<TimedBox>,
}

impl GtFile {
    pub fn from_tube(video_id: &str, gt: &GtTube) -> Self {
        Self {
            video_id: video_id.to_string(),
            ts: gt.ts(),
            te: gt.te(),
            boxes: gt.iter().map(|(t, b)| TimedBox { t, bbox: *b }).collect(),
        }
    }

    fn to_tube(&self, path: &Path, line: usize) -> FormatResult<GtTube> {
        for (k, b) in self.boxes.iter().enumerate() {
            if b.t != self.ts + k {
                return Err(FormatError::at(
                    path,
                    Some(line),
                    format!("ground-truth box {k} has t = {}, expected {}", b.t, self.ts + k),
                ));
            }
        }
        GtTube::new(self.ts, self.te, self.boxes.iter().map(|b| b.bbox).collect())
            .map_err(|e| FormatError::at(path, Some(line), e.to_string()))
    }

    /// Every ground-truth document in the file, as `(video_id, tube)`.
    pub fn load_all(path: &Path) -> FormatResult<Vec<(String, GtTube)>> {
        read_documents::<GtFile>(path)?
            .into_iter()
            .map(|(line, doc)| Ok((doc.video_id.clone(), doc.to_tube(path, line)?)))
            .collect()
    }

    pub fn load_one(path: &Path) -> FormatResult<(String, GtTube)> {
        let mut all = Self::load_all(path)?;
        if all.len() != 1 {
            return Err(FormatError::at(path, None, format!("expected one ground-truth document, found {}", all.len())));
        }
        Ok(all.remove(0))
    }
}

// ---------------------------------------------------------------- tubes

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub t: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    /// Index of the source detection in its frame; absent for gap records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub det: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeEntry {
    pub slot_id: usize,
    pub records: Vec<RecordEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeFile {
    pub video_id: String,
    pub n_q: usize,
    pub tubes: Vec<TubeEntry>,
}

impl TubeFile {
    pub fn from_tubes(video_id: &str, n_q: usize, tubes: &[Tube<f64>], with_features: bool) -> Self {
        Self {
            video_id: video_id.to_string(),
            n_q,
            tubes: tubes
                .iter()
                .map(|tube| TubeEntry {
                    slot_id: tube.slot_id,
                    records: tube
                        .records()
                        .iter()
                        .map(|r| RecordEntry {
                            t: r.timestamp,
                            bbox: r.bbox,
                            score: r.confidence,
                            det: r.detection,
                            embed: with_features.then(|| r.feature.clone()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> FormatResult<(Self, Vec<Tube<f64>>)> {
        let file: TubeFile = read_single(path)?;
        let tubes = file
            .tubes
            .iter()
            .map(|entry| {
                let records = entry
                    .records
                    .iter()
                    .map(|r| TubeRecord {
                        timestamp: r.t,
                        bbox: r.bbox,
                        confidence: r.score,
                        feature: r.embed.clone().unwrap_or_default(),
                        detection: r.det,
                    })
                    .collect();
                Tube::new(entry.slot_id, records)
                    .map_err(|e| FormatError::at(path, None, format!("tube {}: {e}", entry.slot_id)))
            })
            .collect::<FormatResult<Vec<_>>>()?;
        Ok((file, tubes))
    }
}

// ---------------------------------------------------------------- predictions

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub video_id: String,
    pub ts: usize,
    pub te: usize,
    pub slot_id: usize,
    pub score: f64,
    pub boxes: Vec<TimedBox>,
}

impl PredictionLine {
    pub fn to_prediction(&self, path: &Path, line: usize) -> FormatResult<Prediction<f64>> {
        let interval = FrameInterval::new(self.ts, self.te).map_err(|e| FormatError::at(path, Some(line), e.to_string()))?;
        let records = self
            .boxes
            .iter()
            .map(|b| TubeRecord { timestamp: b.t, bbox: b.bbox, confidence: self.score, feature: vec![], detection: None })
            .collect();
        let tube = Tube::new(self.slot_id, records).map_err(|e| FormatError::at(path, Some(line), e.to_string()))?;
        Ok(Prediction { interval, tube })
    }

    pub fn load_all(path: &Path) -> FormatResult<Vec<(String, Prediction<f64>)>> {
        read_documents::<PredictionLine>(path)?
            .into_iter()
            .map(|(line, doc)| Ok((doc.video_id.clone(), doc.to_prediction(path, line)?)))
            .collect()
    }
}

// ---------------------------------------------------------------- candidates

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecordEntry {
    pub t: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub interpolated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEntry {
    pub category: String,
    pub appearance: Vec<f64>,
    pub records: Vec<CandidateRecordEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatesFile {
    pub video_id: String,
    pub candidates: Vec<CandidateEntry>,
}

impl CandidatesFile {
    pub fn from_tubes(video_id: &str, tubes: &[CandidateTube<f64>]) -> Self {
        Self {
            video_id: video_id.to_string(),
            candidates: tubes
                .iter()
                .map(|c| CandidateEntry {
                    category: c.category().to_string(),
                    appearance: c.appearance().to_vec(),
                    records: c
                        .records()
                        .iter()
                        .map(|r| CandidateRecordEntry {
                            t: r.timestamp,
                            bbox: r.bbox,
                            score: r.confidence,
                            interpolated: r.interpolated,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> FormatResult<(String, Vec<CandidateTube<f64>>)> {
        let file: CandidatesFile = read_single(path)?;
        let tubes = file
            .candidates
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                let records = c
                    .records
                    .into_iter()
                    .map(|r| CandidateRecord { timestamp: r.t, bbox: r.bbox, confidence: r.score, interpolated: r.interpolated })
                    .collect();
                CandidateTube::new(c.category, records, c.appearance)
                    .map_err(|e| FormatError::at(path, None, format!("candidate {k}: {e}")))
            })
            .collect::<FormatResult<Vec<_>>>()?;
        Ok((file.video_id, tubes))
    }
}

// ---------------------------------------------------------------- labels

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub video_id: String,
    /// Per frame, the identity code of each detection in file order
    /// (object index, or -1 for a distractor).
    pub labels: Vec<Vec<i64>>,
}

impl LabelsFile {
    pub fn load(path: &Path) -> FormatResult<Self> {
        read_single(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_nine_digits() {
        let mut v = serde_json::json!({"a": 0.1234567891234, "b": [1.0 / 3.0, 5], "c": 2.5e-10});
        round_floats(&mut v);
        assert_eq!(v["a"].as_f64().unwrap(), 0.123456789);
        assert_eq!(v["b"][0].as_f64().unwrap(), 0.333333333);
        assert_eq!(v["b"][1].as_u64().unwrap(), 5);
        assert_eq!(v["c"].as_f64().unwrap(), 2.5e-10);
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            "{\"video_id\":\"v\",\"fps\":30,\"frame_count\":2,\"feature_dim\":2}\n\
             {\"t\":0,\"detections\":[{\"box\":[0.1,0.1,0.2,0.2],\"score\":0.5,\"embed\":[1,0]}]}\n\
             {\"t\":1,\"detections\":[{\"box\":[0.1,0.1,0.2],\"score\":0.5,\"embed\":[1,0]}]}\n",
        )
        .unwrap();
        let err = DetectionsFile::load(&path).unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with(&format!("{}:3:", path.display())));
    }

    #[test]
    fn multi_document_files_report_start_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.jsonl");
        fs::write(
            &path,
            "{\"video_id\":\"a\",\"ts\":0,\"te\":0,\"boxes\":[{\"t\":0,\"box\":[0.1,0.1,0.2,0.2]}]}\n\
             \n\
             {\"video_id\":\"b\",\"ts\":1,\"te\":1,\"boxes\":[{\"t\":2,\"box\":[0.1,0.1,0.2,0.2]}]}\n",
        )
        .unwrap();
        let err = GtFile::load_all(&path).unwrap_err();
        assert_eq!(err.line, Some(3));
    }
}
