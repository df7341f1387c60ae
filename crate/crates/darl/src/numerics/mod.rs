//! Numerics kernel: tensors, stable softmax/cross-entropy, categorical
//! sampling, a splittable deterministic RNG, and finite-difference gradient
//! checking. Everything above this module is built from these pieces.

mod check;
mod rng;
mod tensor;

pub use check::{grad_check, FD_STEP};
pub use rng::Rng;
pub use tensor::{
    cross_entropy, matmul, sample_categorical, softmax, softmax_xent_grad, Tensor, CE_FLOOR,
    MASS_TOLERANCE,
};

pub(crate) use tensor::softmax_slice;
