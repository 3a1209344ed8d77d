//! Dataset manifests: which files belong to which split.
//!
//! Paths inside a manifest are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// One case entry. `t1` is optional (only required for contrast-mapper
/// training); `mask` is present for labeled and test cases.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<String>,
    pub ged4: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub domain: String,
}

/// Declares the labeled set, unlabeled set, pseudo-label pool and held-out
/// test cases, plus the style-bank directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub style_bank_dir: String,
    pub labeled: Vec<CaseEntry>,
    pub unlabeled: Vec<CaseEntry>,
    pub pseudo_pool: Vec<CaseEntry>,
    pub test: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::format(path, format!("bad manifest: {e}")))?;
        for entry in manifest.labeled.iter().chain(&manifest.test) {
            if entry.mask.is_none() {
                return Err(PipelineError::format(
                    path,
                    format!("case '{}' needs a mask in this split", entry.id),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    /// Check that every referenced file exists.
    pub fn validate_paths(&self, base: &Path) -> Result<()> {
        let mut check = |rel: &str| -> Result<()> {
            let p = base.join(rel);
            if !p.exists() {
                return Err(PipelineError::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset file"),
                ));
            }
            Ok(())
        };
        for e in self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.pseudo_pool)
            .chain(&self.test)
        {
            check(&e.ged4)?;
            if let Some(t1) = &e.t1 {
                check(t1)?;
            }
            if let Some(m) = &e.mask {
                check(m)?;
            }
        }
        if !base.join(&self.style_bank_dir).is_dir() {
            return Err(PipelineError::io(
                base.join(&self.style_bank_dir),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing style bank dir"),
            ));
        }
        Ok(())
    }
}

/// Record of generated pseudo-labels, written next to the masks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PseudoManifest {
    pub source_checkpoint: String,
    pub threshold: f64,
    pub cases: Vec<PseudoEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PseudoEntry {
    pub id: String,
    pub volume: String,
    pub mask: String,
    pub confidence: f64,
}

impl PseudoManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::format(path, format!("bad pseudo manifest: {e}")))
    }
}

/// Resolve a manifest-relative path.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> DatasetManifest {
        DatasetManifest {
            style_bank_dir: "style_bank".into(),
            labeled: vec![CaseEntry {
                id: "a".into(),
                t1: Some("a_t1.mvol.json".into()),
                ged4: "a_ged4.mvol.json".into(),
                mask: Some("a_mask.mvol.json".into()),
                domain: "src0".into(),
            }],
            unlabeled: vec![],
            pseudo_pool: vec![],
            test: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = sample();
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn labeled_entries_require_masks() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = sample();
        m.labeled[0].mask = None;
        m.save(&path).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(
            &path,
            r#"{"style_bank_dir":"b","labeled":[],"unlabeled":[],"pseudo_pool":[],"test":[],"extra":1}"#,
        )
        .unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }

    #[test]
    fn missing_paths_are_reported() {
        let dir = tempdir().unwrap();
        let m = sample();
        let err = m.validate_paths(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
