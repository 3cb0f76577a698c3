//! Hand-differentiated tensor operators and the unfolded autofocus network.
//!
//! Everything runs on single-sample planar buffers (`[re-plane, im-plane]`
//! for complex images) with explicit backward functions; there is no tape.

pub mod checks;
pub mod complex;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use model::{IfnetArch, UnfoldingModel};
pub use params::{ParamSpec, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor4;
pub use train::{infer, score, train, EpochLog, Scores, TrainConfig, TrainPair, TrainReport};
