pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod lrph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = model::SpeechReModel<f32>;
pub type Model64 = model::SpeechReModel<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type FeatureMatrix32 = data::FeatureMatrix<f32>;
pub type FeatureMatrix64 = data::FeatureMatrix<f64>;
