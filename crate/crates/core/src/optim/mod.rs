//! Quasi-Newton minimization and the proximal point training loop.

mod lbfgs;
mod prox;

pub use lbfgs::{minimize, LbfgsConfig, MinimizeResult, SolverStatus};
pub use prox::{proximal_train, ProxConfig, TrainResult};
