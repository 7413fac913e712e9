//! Minimal neural-network substrate: tape-based reverse-mode autodiff,
//! named parameter sets with SGD/Adam, and binary checkpoint I/O.

pub mod checkpoint;
pub mod gru;
pub mod optim;
pub mod tape;

pub use checkpoint::{load_params, read_params, save_params, write_params};
pub use optim::{init_uniform, zeros, Optimizer, OptimizerKind, ParamSet};
pub use tape::{log_sum_exp, stable_sigmoid, Gradients, Mat, ParamRef, Tape, Var};
