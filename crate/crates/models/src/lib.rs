//! Network definitions: the mask-to-image generator, the PatchGAN
//! discriminator, the guidance UNet and MTUNet, plus the weight file format.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod mtunet;
pub mod unet;
pub mod weights;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{split_groups, Generator, GeneratorConfig};
pub use mtunet::{MTUNet, MTUNetConfig, MTUNetTrace};
pub use unet::{GuidanceUNet, GuidanceUNetConfig};
pub use weights::{load_store, load_weights, save_store, save_weights, ModelWeights, WeightsError};
