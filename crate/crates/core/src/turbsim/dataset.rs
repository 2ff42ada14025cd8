use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cn2_to_bucket, degrade, generate_planet_image, Bucket, SceneSpec, TurbulenceParams};
use crate::diffusion::ImageSample;
use crate::error::{Error, Result};
use crate::restoration::PairedSample;
use crate::rng::derive_seed;
use crate::{fsutil, imgio};

/// Scenes and turbulence strengths for one dataset split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub size: usize,
    pub channels: usize,
    pub scene_seeds: Vec<u64>,
    pub cn2_grid: Vec<f64>,
    /// Base seed of the tilt fields; each (scene, cn2) pair derives its own.
    pub degrade_seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scene_seeds.is_empty() || self.cn2_grid.is_empty() {
            return Err(Error::invalid("dataset needs at least one scene and one cn2 value"));
        }
        crate::diffusion::validate_image_shape(self.channels, self.size, self.size)?;
        for &c in &self.cn2_grid {
            cn2_to_bucket(c)?;
        }
        Ok(())
    }

    pub fn degrade_seed_for(&self, scene: usize, cn2_index: usize) -> u64 {
        derive_seed(self.degrade_seed, "degrade", (scene * self.cn2_grid.len() + cn2_index) as u64)
    }

    pub fn scene(&self, k: usize) -> SceneSpec {
        SceneSpec::sample(self.size, self.channels, self.scene_seeds[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clean_path: String,
    pub degraded_path: String,
    #[serde(serialize_with = "ser_cn2")]
    pub cn2: f64,
    pub bucket: Bucket,
    pub seed: u64,
}

fn ser_cn2<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_cn2(*v))
}

/// Scientific notation with three significant digits, e.g. `5.00e-16`.
pub fn format_cn2(v: f64) -> String {
    format!("{v:.2e}")
}

/// One clean image per scene and its degraded versions across the grid, in memory.
pub fn generate_pairs(spec: &DatasetSpec) -> Result<Vec<(PairedSample, u64)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.scene_seeds.len() * spec.cn2_grid.len());
    for k in 0..spec.scene_seeds.len() {
        let clean = generate_planet_image(&spec.scene(k))?;
        for (j, &cn2) in spec.cn2_grid.iter().enumerate() {
            let seed = spec.degrade_seed_for(k, j);
            let degraded = degrade(&clean, &TurbulenceParams::from_cn2(cn2, seed)?)?;
            out.push((PairedSample::new(clean.clone(), degraded, cn2)?, seed));
        }
    }
    Ok(out)
}

pub fn clean_name(scene_seed: u64) -> String {
    format!("clean/scene_{scene_seed}.png")
}

pub fn degraded_name(scene_seed: u64, cn2_index: usize) -> String {
    format!("degraded/scene_{scene_seed}_cn2_{cn2_index}.png")
}

fn probe_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Writes clean and degraded PNGs plus `manifest.csv` under `out_dir`.
/// Paths in the manifest are relative to `out_dir`.
pub fn build_paired_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    probe_writable(out_dir)?;
    let pairs = generate_pairs(spec)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (idx, (pair, seed)) in pairs.iter().enumerate() {
        let (k, j) = (idx / spec.cn2_grid.len(), idx % spec.cn2_grid.len());
        let scene_seed = spec.scene_seeds[k];
        let clean_path = clean_name(scene_seed);
        if j == 0 {
            imgio::save(&out_dir.join(&clean_path), &pair.clean)?;
        }
        let degraded_path = degraded_name(scene_seed, j);
        imgio::save(&out_dir.join(&degraded_path), &pair.degraded)?;
        rows.push(ManifestRow { clean_path, degraded_path, cn2: pair.cn2, bucket: pair.bucket, seed: *seed });
    }
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    fsutil::write_atomic(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<ManifestRow>, _> = r.deserialize().collect();
    Ok(rows?)
}

/// Loads the images a manifest refers to; paths resolve against `root`.
pub fn load_pairs(rows: &[ManifestRow], root: &Path) -> Result<Vec<PairedSample>> {
    rows.iter()
        .map(|r| {
            let clean = imgio::load(&root.join(&r.clean_path))?;
            let degraded = imgio::load(&root.join(&r.degraded_path))?;
            PairedSample::new(clean, degraded, r.cn2)
        })
        .collect()
}


/// Distinct clean images referenced by a manifest, in first-appearance order.
pub fn load_clean(rows: &[ManifestRow], root: &Path) -> Result<Vec<ImageSample>> {
    let mut seen = std::collections::BTreeSet::new();
    rows.iter()
        .filter(|r| seen.insert(r.clean_path.clone()))
        .map(|r| imgio::load(&root.join(&r.clean_path)))
        .collect()
}
