//! Minimal dense-network substrate: matrices, MLP forward/backward, losses,
//! Adam, and a finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
pub mod ops;

pub use adam::{adam_step, adam_step_with_lr, AdamConfig, AdamState};
pub use gradcheck::{
    finite_diff_check, relative_error, GradCheckReport, Parameterized, REL_ERR_FLOOR,
};
pub use matrix::Matrix;
pub use mlp::{Activation, Dropout, Layer, MlpNetwork, NetGradients};
pub use ops::{cross_entropy, mse, softmax};
