//! Minimal neural-network core: 1-D convolutions, dense layers, gradient
//! reversal, hand-written backpropagation and SGD.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, jitter_biases, reduced_arch, FdReport};
pub use layers::{grl_backward, Act, Layer, LayerGrad, LayerSpec};
pub use loss::{bce_domain_loss, mse_loss, BCE_EPS};
pub use model::{Architecture, Gradients, LossParts, Model, Objective, Sequential};
pub use optim::Sgd;
