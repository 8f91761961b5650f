//! Positional encoding and the radiance-field network.

pub mod encoding;
mod network;

pub use encoding::{anneal_alpha, band_weights, encode, encode_batch, EncodingSpec, Input};
pub use network::{field_eval, FieldArch, FieldCache, FieldOutput, FieldParams};
