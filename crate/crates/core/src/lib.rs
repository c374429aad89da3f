pub mod analysis;
pub mod cam;
pub mod data;
pub mod error;
pub mod hierarchy;
pub mod kv;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{deepspace_spec, ModelSpec, ModelState};
pub use rng::{Distribution, Rng};
pub use tensor::{Real, Tensor};
