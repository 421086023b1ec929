//! Dense `f32` tensors, reverse-mode autodiff, seeded randomness, Adam and
//! the `FFT1` tensor file format.

pub mod fft1;
mod kernels;
pub mod ops;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use rng::{derive_seed, randn, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
