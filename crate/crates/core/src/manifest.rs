//! Case manifests: CSV with header
//! `case_id,volume_path,mask_path,label,anomaly_gt_path`.
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub volume_path: String,
    pub mask_path: String,
    pub label: Label,
    pub anomaly_gt_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub records: Vec<CaseRecord>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<CaseRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.case_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate case_id {:?}", r.case_id)));
            }
        }
        Ok(Manifest {
            base_dir: base_dir.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = parse_records(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(base, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, write_records(&self.records)?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn normals(&self) -> impl Iterator<Item = &CaseRecord> {
        self.records.iter().filter(|r| r.label == Label::Normal)
    }
}

pub fn parse_records(text: &str) -> Result<Vec<CaseRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .clone();
    let expected = ["case_id", "volume_path", "mask_path", "label", "anomaly_gt_path"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Manifest(format!(
            "expected header {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Manifest(e.to_string())))
        .collect()
}

pub fn write_records(records: &[CaseRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Written explicitly so an empty manifest still carries its header.
    w.write_record(["case_id", "volume_path", "mask_path", "label", "anomaly_gt_path"])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for r in records {
        w.write_record([
            r.case_id.as_str(),
            r.volume_path.as_str(),
            r.mask_path.as_str(),
            r.label.as_str(),
            r.anomaly_gt_path.as_deref().unwrap_or(""),
        ])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| Error::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_write() {
        let text = "case_id,volume_path,mask_path,label,anomaly_gt_path\n\
                    a,a.mvol,a_mask.mvol,normal,\n\
                    b,b.mvol,b_mask.mvol,abnormal,b_gt.mvol\n";
        let recs = parse_records(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].anomaly_gt_path, None);
        assert_eq!(recs[1].label, Label::Abnormal);
        assert_eq!(recs[1].anomaly_gt_path.as_deref(), Some("b_gt.mvol"));
        assert_eq!(String::from_utf8(write_records(&recs).unwrap()).unwrap(), text);
    }

    #[test]
    fn empty_manifest_keeps_header() {
        let bytes = write_records(&[]).unwrap();
        assert_eq!(bytes, b"case_id,volume_path,mask_path,label,anomaly_gt_path\n");
        assert!(parse_records(std::str::from_utf8(&bytes).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        let dup = "case_id,volume_path,mask_path,label,anomaly_gt_path\n\
                   a,x,y,normal,\na,x,y,normal,\n";
        let recs = parse_records(dup).unwrap();
        assert!(matches!(Manifest::new("", recs), Err(Error::Manifest(_))));

        let bad = "case_id,volume_path,mask_path,label,anomaly_gt_path\na,x,y,sick,\n";
        assert!(parse_records(bad).is_err());
        assert!(parse_records("id,label\n").is_err());
    }
}
