//! SAP-net for no-reference quality assessment of omnidirectional images,
//! built on a small reverse-mode autograd engine over f64 NCHW tensors.

pub mod graph;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use graph::{Graph, Var};
pub use model::{Ablation, ForwardOutputs, ModelConfig, SapNet};
pub use tensor::{Shape, Tensor};
pub use train::{TrainConfig, Trainer};
