//! Loading manifest-declared datasets into the in-memory structures the
//! core training engines consume.

use std::path::{Path, PathBuf};

use voxseg_core::contrast::AlignedPair;
use voxseg_core::hist::StyleBank;
use voxseg_core::teacher::{LabeledCase, TrainData};
use voxseg_core::volume::resample_trilinear;
use voxseg_core::{Mask, TrainConfig, Volume};

use crate::error::{PipelineError, Result};
use crate::manifest::{CaseEntry, DatasetManifest};
use crate::mvol::{read_mask, read_volume, MVOL_SUFFIX};

/// A manifest together with the directory its paths are relative to.
pub struct DatasetRoot {
    pub manifest: DatasetManifest,
    pub base: PathBuf,
}

impl DatasetRoot {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        manifest.validate_paths(&base)?;
        Ok(Self { manifest, base })
    }

    pub fn read_ged4(&self, entry: &CaseEntry, spacing: [f64; 3]) -> Result<Volume> {
        let v = read_volume(&self.base.join(&entry.ged4))?;
        Ok(resample_trilinear(&v, spacing)?)
    }

    pub fn read_mask_of(&self, entry: &CaseEntry) -> Result<Mask> {
        let rel = entry.mask.as_ref().ok_or_else(|| {
            PipelineError::format(&self.base, format!("case '{}' has no mask", entry.id))
        })?;
        read_mask(&self.base.join(rel))
    }

    /// Histograms of every volume in the style bank directory, in sorted
    /// file order.
    pub fn load_style_bank(&self, seed: u64) -> Result<StyleBank> {
        let dir = self.base.join(&self.manifest.style_bank_dir);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| PipelineError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(MVOL_SUFFIX))
            .collect();
        paths.sort();
        let mut volumes = Vec::with_capacity(paths.len());
        for p in &paths {
            volumes.push(read_volume(p)?);
        }
        Ok(StyleBank::from_volumes(volumes.iter(), seed))
    }

    /// Labeled plus unlabeled sets resampled to the training spacing.
    pub fn load_train_data(&self, config: &TrainConfig) -> Result<TrainData> {
        let spacing = config.target_spacing_mm;
        let mut labeled = Vec::with_capacity(self.manifest.labeled.len());
        for entry in &self.manifest.labeled {
            let volume = self.read_ged4(entry, spacing)?;
            let mask = self.read_mask_of(entry)?;
            if !mask.same_geometry_as_volume(&volume) {
                return Err(PipelineError::format(
                    self.base.join(&entry.ged4),
                    format!(
                        "mask geometry does not match resampled volume for case '{}'",
                        entry.id
                    ),
                ));
            }
            labeled.push(LabeledCase::new(volume, mask, entry.id.clone())?);
        }
        let mut unlabeled = Vec::with_capacity(self.manifest.unlabeled.len());
        for entry in &self.manifest.unlabeled {
            unlabeled.push(self.read_ged4(entry, spacing)?);
        }
        let bank = self.load_style_bank(config.seed)?;
        Ok(TrainData {
            labeled,
            unlabeled,
            bank,
        })
    }

    /// Aligned T1/GED4 pairs for contrast-mapper training, drawn from every
    /// source entry that carries a t1 volume.
    pub fn load_aligned_pairs(&self, spacing: [f64; 3]) -> Result<Vec<AlignedPair>> {
        let mut pairs = Vec::new();
        for entry in self
            .manifest
            .labeled
            .iter()
            .chain(&self.manifest.unlabeled)
        {
            let Some(t1_rel) = &entry.t1 else { continue };
            let t1 = resample_trilinear(&read_volume(&self.base.join(t1_rel))?, spacing)?;
            let ged4 = self.read_ged4(entry, spacing)?;
            pairs.push(AlignedPair::new(t1, ged4, entry.id.clone())?);
        }
        Ok(pairs)
    }

    /// Pool volumes for pseudo-labeling, with ids.
    pub fn load_pool(&self, spacing: [f64; 3]) -> Result<Vec<(String, Volume)>> {
        self.manifest
            .pseudo_pool
            .iter()
            .map(|e| Ok((e.id.clone(), self.read_ged4(e, spacing)?)))
            .collect()
    }

    /// Test volumes with ids, in manifest order.
    pub fn load_test_volumes(&self, spacing: [f64; 3]) -> Result<Vec<(String, Volume)>> {
        self.manifest
            .test
            .iter()
            .map(|e| Ok((e.id.clone(), self.read_ged4(e, spacing)?)))
            .collect()
    }
}
