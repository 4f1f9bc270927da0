pub mod baselines;
pub mod bench;
pub mod checks;
pub mod diagnostics;
pub mod dynac;
pub mod error;
pub mod exact;
pub mod io;
mod kernel;
pub mod mdp;
pub mod random;
pub mod rng;
pub mod softmax;
pub mod stochastic;
pub mod track;
