//! Dense-network numerical kernel: matrices, layers with hand-derived
//! backpropagation, Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod matrix;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_terms, relative_error, Evaluation, GradCheck,
    Parameterized, FD_STEP,
};
pub use layers::{
    activation_apply, dropout_forward, sigmoid, Activation, BatchNormCache, BatchNormLayer,
    DenseLayer, Layer, Mode, Sequential, SequentialCache,
};
pub use matrix::{cosine, dot, Matrix};
