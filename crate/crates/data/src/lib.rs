//! Procedural chest phantoms, affine mask synthesis and the on-disk dataset
//! format.

pub mod affine;
pub mod error;
pub mod io;
pub mod phantom;
pub mod render;
pub mod sample;
pub mod split;

pub use affine::{affine_transform_maskset, sample_affine_params, AffineParams, AffineRanges};
pub use error::{DataError, Result};
pub use io::{read_sample, read_split, write_sample, write_split, Manifest};
pub use phantom::{generate_masks, generate_phantom, PhantomConfig};
pub use render::{render_xray, RenderConfig};
pub use sample::{MaskSet, Provenance, Sample};
pub use split::{split_dataset, split_sizes};
