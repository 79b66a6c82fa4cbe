pub mod dataset;
pub mod grounder;
pub mod models;
pub mod numerics;
pub mod prediction;
pub mod retrieval;
pub mod scalar;
pub mod snapshot;
pub mod synthetic;
pub mod text;
pub mod training;
pub mod vocab;

pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type Gradients32 = numerics::Gradients<f32>;
pub type Gradients64 = numerics::Gradients<f64>;

/// IEEE quad precision, used where f64 rounding would swamp a measurement.
#[cfg(feature = "quad")]
pub type Quad = f128::f128;
#[cfg(feature = "quad")]
pub type ParamStoreQuad = numerics::ParamStore<Quad>;
