//! The recommender network: disentangled global layers, local attention,
//! dual session embeddings, losses and scoring.

mod forward;
mod layers;
mod params;

pub use forward::*;
pub use layers::*;
pub use params::*;
