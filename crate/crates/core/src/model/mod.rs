//! The DeepSpace network: declarative description, parameters, whole-network
//! forward/backward, and weight files.

pub mod io;
pub mod spec;
pub mod state;

pub use io::{load, save};
pub use spec::{deepspace_spec, ActShape, DeepSpaceConfig, LayerSpec, ModelSpec, ParamGroup, FIRST_CONV_CANDIDATES};
pub use state::{ForwardPass, Gradients, ModelState, ParamSet};
