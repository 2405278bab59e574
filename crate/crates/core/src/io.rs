//! Line-delimited record formats.
//!
//! Every file is UTF-8 with one JSON object per line. Each record carries a
//! `version` field; readers reject other versions with an upgrade hint and
//! report malformed lines by 1-based line number. Writers go through a temp
//! file and an atomic rename.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::OrientedBox;
use crate::{Detection, MergedBox};
use crate::synth::ObjectSample;
use crate::BOX_DIMS;

pub const DATASET_VERSION: u32 = 1;
pub const DETECTIONS_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub seed: u64,
    pub occlusion_fraction: f64,
    pub distance: f64,
    /// Point count before any occlusion was applied.
    pub original_points: usize,
}

/// One annotated object: `{"version", "points", "box", "uncertainty"?, "meta"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub version: u32,
    pub points: Vec<[f64; 3]>,
    #[serde(rename = "box")]
    pub bbox: [f64; BOX_DIMS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<[f64; BOX_DIMS]>,
    pub meta: RecordMeta,
}

impl DatasetRecord {
    pub fn from_sample(s: &ObjectSample, uncertainty: Option<[f64; BOX_DIMS]>) -> Self {
        Self {
            version: DATASET_VERSION,
            points: s.points.clone(),
            bbox: s.bbox.to_array(),
            uncertainty,
            meta: RecordMeta {
                seed: s.seed,
                occlusion_fraction: s.occlusion_fraction,
                distance: s.distance,
                original_points: s.original_points,
            },
        }
    }

    pub fn to_sample(&self) -> Result<ObjectSample> {
        Ok(ObjectSample {
            points: self.points.clone(),
            bbox: OrientedBox::from_array(self.bbox)?,
            occlusion_fraction: self.meta.occlusion_fraction,
            distance: self.meta.distance,
            seed: self.meta.seed,
            original_points: self.meta.original_points,
        })
    }

    fn validate(&self) -> Result<()> {
        OrientedBox::from_array(self.bbox)?;
        if let Some(u) = &self.uncertainty {
            if u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::domain("uncertainty must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Detection dump line: `{"version", "box", "score", "variance"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub version: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; BOX_DIMS],
    pub score: f64,
    pub variance: [f64; BOX_DIMS],
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            version: DETECTIONS_VERSION,
            bbox: d.bbox.to_array(),
            score: d.score,
            variance: d.variance,
        }
    }

    pub fn to_detection(&self) -> Result<Detection> {
        Ok(Detection {
            bbox: OrientedBox::from_array(self.bbox)?,
            score: self.score,
            variance: self.variance,
        })
    }

    fn validate(&self) -> Result<()> {
        self.to_detection().map(|_| ())
    }
}

/// Voting output line: `{"version", "box", "score", "members"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergedRecord {
    pub version: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; BOX_DIMS],
    pub score: f64,
    pub members: Vec<usize>,
}

impl MergedRecord {
    pub fn from_merged(m: &MergedBox) -> Self {
        Self {
            version: DETECTIONS_VERSION,
            bbox: m.bbox.to_array(),
            score: m.score,
            members: m.members.clone(),
        }
    }
}

trait Versioned {
    const EXPECTED: u32;
    const KIND: &'static str;
    fn check(&self) -> Result<()>;
}

impl Versioned for DatasetRecord {
    const EXPECTED: u32 = DATASET_VERSION;
    const KIND: &'static str = "dataset";
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Versioned for DetectionRecord {
    const EXPECTED: u32 = DETECTIONS_VERSION;
    const KIND: &'static str = "detection";
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Versioned for MergedRecord {
    const EXPECTED: u32 = DETECTIONS_VERSION;
    const KIND: &'static str = "merged-box";
    fn check(&self) -> Result<()> {
        OrientedBox::from_array(self.bbox).map(|_| ())
    }
}

fn read_lines<T: DeserializeOwned + Versioned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let version = value.get("version").and_then(|v| v.as_u64()).ok_or(Error::Parse {
            line: lineno,
            message: format!("{} record without a numeric \"version\"", T::KIND),
        })?;
        if version != u64::from(T::EXPECTED) {
            return Err(Error::SchemaVersion {
                found: version as u32,
                expected: T::EXPECTED,
                hint: format!(
                    "line {lineno}: regenerate the {} file with this release",
                    T::KIND
                ),
            });
        }
        let rec: T = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        rec.check().map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn to_lines<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::structural(e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>> {
    read_lines(reader)
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<DetectionRecord>> {
    read_lines(reader)
}

pub fn read_merged<R: BufRead>(reader: R) -> Result<Vec<MergedRecord>> {
    read_lines(reader)
}

pub fn dataset_bytes(records: &[DatasetRecord]) -> Result<Vec<u8>> {
    to_lines(records)
}

pub fn detections_bytes(records: &[DetectionRecord]) -> Result<Vec<u8>> {
    to_lines(records)
}

pub fn merged_bytes(records: &[MergedRecord]) -> Result<Vec<u8>> {
    to_lines(records)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    read_dataset(open(path)?)
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    write_atomic(path, &dataset_bytes(records)?)
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_detections(open(path)?)
}

pub fn save_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    write_atomic(path, &detections_bytes(records)?)
}

pub fn save_merged(path: &Path, records: &[MergedRecord]) -> Result<()> {
    write_atomic(path, &merged_bytes(records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> DatasetRecord {
        DatasetRecord {
            version: DATASET_VERSION,
            points: vec![[1.0, 2.0, 0.5], [1.5, 2.0, 0.25]],
            bbox: [1.0, 2.0, 0.0, 1.6, 3.9, 1.5, 0.1],
            uncertainty: Some([0.01; 7]),
            meta: RecordMeta {
                seed: 7,
                occlusion_fraction: 0.0,
                distance: 2.2,
                original_points: 2,
            },
        }
    }

    #[test]
    fn dataset_lines_round_trip() {
        let recs = vec![record(), DatasetRecord { uncertainty: None, ..record() }];
        let bytes = dataset_bytes(&recs).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().nth(1).unwrap().contains("uncertainty"));
        assert_eq!(read_dataset(bytes.as_slice()).unwrap(), recs);
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut bytes = dataset_bytes(&[record()]).unwrap();
        bytes.extend_from_slice(b"{\"version\":1,\"points\":[}\n");
        match read_dataset(bytes.as_slice()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_box_is_a_parse_error() {
        let mut r = record();
        r.bbox[3] = -1.0;
        let bytes = dataset_bytes(&[r]).unwrap();
        assert!(matches!(read_dataset(bytes.as_slice()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let text = serde_json::to_string(&record()).unwrap();
        let extra = text.replacen('{', "{\"color\":1,", 1);
        assert!(matches!(read_dataset(extra.as_bytes()), Err(Error::Parse { .. })));
        let old = text.replace("\"version\":1", "\"version\":0");
        assert!(matches!(
            read_dataset(old.as_bytes()),
            Err(Error::SchemaVersion { found: 0, expected: 1, .. })
        ));
    }
}
