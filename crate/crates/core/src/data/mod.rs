//! Fundus-style data: loading, input planes, patch sampling, synthetic
//! vessel images and dataset manifests.

pub mod fundus;
pub mod manifest;
pub mod patches;
pub mod synth;

pub use fundus::{
    load_binary, load_probability_map, load_sample, save_probability_map, save_rgb, save_sample, to_input_planes,
    FundusSample, InputMode, PreparedSample,
};
pub use manifest::{load_manifest, read_manifest, write_manifest, ManifestEntry};
pub use patches::{extract_patch, grid_origins, sample_patch_origins, sample_patches, Augment, PatchOrigin, PatchPair, Transform};
pub use synth::{synth_vessel_sample, SynthConfig};
