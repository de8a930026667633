//! Audio ingestion, manifests, stratified splits and synthetic clips.

mod batch;
mod manifest;
mod split;
mod synth;
mod wav;

pub use batch::ClipBatch;
pub use manifest::{count_positive, load_manifest, parse_manifest, write_manifest, ManifestEntry};
pub use split::{stratified_split, Split, SplitAssignment};
pub use synth::{synth_clip, synth_dataset, SynthClip, SynthConfig};
pub use wav::{load_wav, normalize_dbfs, read_wav, resample_linear, write_wav, LoadOptions};
