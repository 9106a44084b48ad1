//! Volume I/O, normalization, patching, phantoms and stitching.

mod dataset;
pub mod nifti;
mod normalize;
mod patch;
pub mod pgm;
mod phantom;
mod stitch;
mod volume;

pub use dataset::{list_cases, modality_file, read_case, write_case, Case, LABEL_FILE, REGION_FILE};
pub use nifti::{read_nifti, write_nifti, NiftiData, NiftiImage};
pub use normalize::{normalize, normalize_grid};
pub use patch::{annotate, axis_starts, build_patch_grid, PatchGrid, PatchRef, PatchSampler, SamplingMode};
pub use phantom::{generate_phantom, Contrast, CorruptionMode, CorruptionSpec, ModalitySpec, Phantom, PhantomSpec};
pub use stitch::{argmax_classes, stitch};
pub use volume::{Grid, Volume};
