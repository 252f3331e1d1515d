//! Full model assembly and weight files.

mod config;
mod model;
mod weights;

pub use config::{layout_string, ModelConfig};
pub use model::{Forward, LaneNet, ModelOutput};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, MAGIC, VERSION};
