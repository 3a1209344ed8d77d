//! Write a generated phantom dataset to disk as MVOL files plus
//! `manifest.json` and a style-bank directory holding one reference volume
//! per source domain.

use std::fs;
use std::path::{Path, PathBuf};

use voxseg_core::phantom::{generate_phantom_dataset, PhantomSpec, Split};

use crate::error::{PipelineError, Result};
use crate::manifest::{CaseEntry, DatasetManifest};
use crate::mvol::{write_mask, write_volume};

/// Generate and persist the dataset; returns the manifest path.
pub fn synth_dataset(spec: &PhantomSpec, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let bank_dir = out_dir.join("style_bank");
    fs::create_dir_all(&bank_dir).map_err(|e| PipelineError::io(&bank_dir, e))?;

    let cases = generate_phantom_dataset(spec)?;
    let mut manifest = DatasetManifest {
        style_bank_dir: "style_bank".into(),
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        pseudo_pool: Vec::new(),
        test: Vec::new(),
    };

    let mut bank_written: Vec<String> = Vec::new();
    for case in &cases {
        let t1_rel = format!("{}_t1.mvol.json", case.id);
        let ged4_rel = format!("{}_ged4.mvol.json", case.id);
        let mask_rel = format!("{}_mask.mvol.json", case.id);
        write_volume(&case.t1, &out_dir.join(&t1_rel))?;
        write_volume(&case.ged4, &out_dir.join(&ged4_rel))?;
        // ground truth is stored for every split; training only reads what
        // the manifest exposes
        write_mask(&case.mask, &out_dir.join(&mask_rel))?;

        // first two unlabeled cases of each source domain seed the style bank
        let in_bank = bank_written.iter().filter(|d| **d == case.domain).count();
        if case.split == Split::Unlabeled && in_bank < 2 {
            write_volume(
                &case.ged4,
                &bank_dir.join(format!("{}_ref{in_bank}.mvol.json", case.domain)),
            )?;
            bank_written.push(case.domain.clone());
        }

        let entry = CaseEntry {
            id: case.id.clone(),
            t1: Some(t1_rel),
            ged4: ged4_rel,
            mask: Some(mask_rel),
            domain: case.domain.clone(),
        };
        match case.split {
            Split::Labeled => manifest.labeled.push(entry),
            Split::Unlabeled => {
                // the unlabeled split must not expose labels
                manifest.unlabeled.push(CaseEntry {
                    mask: None,
                    ..entry
                });
            }
            Split::PseudoPool => manifest.pseudo_pool.push(CaseEntry {
                mask: None,
                ..entry
            }),
            Split::Test => manifest.test.push(entry),
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}
