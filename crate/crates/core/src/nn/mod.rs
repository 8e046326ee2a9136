//! Dense MLP core: seeded Glorot initialization, taped forward/backward
//! passes with exact reverse-mode gradients, and first-order optimizers.
//!
//! Everything is `f64`; the gradient-exactness tests compare analytic
//! gradients against central finite differences at 1e-4 relative tolerance,
//! which single precision cannot sustain.

mod mlp;
mod optim;

pub use mlp::{Activation, Dense, MlpCheckpoint, MlpGradients, MlpParams, MlpSpec, MlpTape};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, ModuleOptState, Optimizer};
