//! Composite blocks of the encoder and decoders, each with a hand-written
//! backward pass that accumulates into a shared [`Gradients`](crate::params::Gradients).

pub mod downsampler;
pub mod exchange;
pub mod layers;
pub mod merge;
pub mod nonbt1d;
pub mod spatial;

pub use downsampler::Downsampler;
pub use exchange::{parse_layout, InfoExchange, Stage, DEFAULT_LAYOUT};
pub use layers::{apply_bn_updates, BatchNorm, BnUpdate, Conv, ConvTranspose, Ctx, Linear};
pub use merge::FeatureMerge;
pub use nonbt1d::NonBottleneck1d;
pub use spatial::{spatial_conv_vertical, spatial_conv_vertical_backward, Direction, SpatialConv, SpatialConvParams};
