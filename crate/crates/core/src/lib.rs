//! Test-time adaptation for camouflaged-object segmentation through
//! hierarchical consistency learning: masked spatial and spectral
//! reconstruction, cross-branch affinity guidance and variational prototype
//! consistency, all driving per-sample gradient updates at inference.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hrr;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pcc;
pub mod pipeline;
pub mod spectral;
pub mod tag;
pub mod tensor;
pub mod verify;

pub use autograd::{Gradients, Tape, Var};
pub use error::{HclError, Result};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;
