pub mod agents;
pub mod chain;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod neural;
pub mod radio;
pub mod scalar;

pub use error::{Result, SimError};
pub use scalar::Scalar;

pub type QNetwork64 = neural::QNetwork<f64>;
pub type QNetwork32 = neural::QNetwork<f32>;
pub type D3qnAgent64 = agents::D3qnAgent<f64>;
pub type D3qnAgent32 = agents::D3qnAgent<f32>;
