//! Dataset preparation: rescale, drop blurred frames, split off validation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::blur::{blur_indicator, BlurConfig};
use super::image::{decode_image, resize_bilinear, write_image};
use super::manifest::{split_validation, write_manifest, DatasetManifest, ManifestEntry};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepConfig {
    pub side: usize,
    pub blur: BlurConfig,
    pub val_per_class: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            side: 256,
            blur: BlurConfig::default(),
            val_per_class: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepRow {
    pub class: String,
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepOutput {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub rows: Vec<PrepRow>,
}

impl PrepOutput {
    pub fn report_csv(&self) -> String {
        let mut s = String::from("class,input,kept,dropped,train,val\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.class, r.input, r.kept, r.dropped, r.train, r.val);
        }
        s
    }
}

/// Resizes every image to `side × side` PNG under `out_dir`, keeps frames whose
/// blur indicator reaches the threshold, and writes `train.txt`, `val.txt`
/// and `prep_report.csv`.
pub fn prepare(manifest: &DatasetManifest, out_dir: &Path, cfg: &PrepConfig, rng: &mut Rng) -> Result<PrepOutput> {
    manifest.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n = manifest.num_classes();
    let mut rows: Vec<PrepRow> = manifest
        .class_names
        .iter()
        .map(|c| PrepRow {
            class: c.clone(),
            input: 0,
            kept: 0,
            dropped: 0,
            train: 0,
            val: 0,
        })
        .collect();
    let mut kept = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries: Vec::new(),
        class_names: manifest.class_names.clone(),
        split: manifest.split,
    };
    for e in &manifest.entries {
        let img = decode_image(&manifest.resolve(e))?;
        let small = resize_bilinear(&img.pixels, cfg.side, cfg.side)?;
        let row = &mut rows[e.label];
        row.input += 1;
        if !blur_indicator(&small, &cfg.blur)?.is_sharp {
            row.dropped += 1;
            continue;
        }
        row.kept += 1;
        let rel: PathBuf = e.path.with_extension("png");
        let dest = out_dir.join(&rel);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        write_image(&small, &dest)?;
        kept.entries.push(ManifestEntry {
            path: rel,
            label: e.label,
        });
    }
    let (train, val) = split_validation(&kept, cfg.val_per_class, rng)?;
    let mut counts = vec![(0, 0); n];
    for e in &train.entries {
        counts[e.label].0 += 1;
    }
    for e in &val.entries {
        counts[e.label].1 += 1;
    }
    for (row, (t, v)) in rows.iter_mut().zip(counts) {
        row.train = t;
        row.val = v;
    }
    write_manifest(&train, &out_dir.join("train.txt"))?;
    write_manifest(&val, &out_dir.join("val.txt"))?;
    let out = PrepOutput { train, val, rows };
    let report = out_dir.join("prep_report.csv");
    std::fs::write(&report, out.report_csv()).map_err(|e| Error::io(&report, e))?;
    Ok(out)
}
