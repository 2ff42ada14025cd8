//! Synthetic planet scenes and a tilt-plus-blur turbulence model.

mod dataset;
mod degrade;
pub mod noise;
mod scene;

pub use dataset::{
    build_paired_dataset, clean_name, degraded_name, format_cn2, generate_pairs, load_clean, load_pairs, read_manifest,
    write_manifest, DatasetSpec, ManifestRow,
};
pub use degrade::{
    cn2_to_bucket, degrade, gaussian_blur, Bucket, TurbulenceParams, BLUR_COEFF, CN2_MAX, CN2_MIN, PAPER_CN2_GRID,
    REFERENCE_SIZE, TILT_COEFF, TILT_CORRELATION,
};
pub use scene::{disc_coverage, generate_planet_image, SceneSpec};
