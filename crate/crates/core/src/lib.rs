pub mod error;
pub mod dqn;
pub mod engine;
pub mod harness;
pub mod heuristic;
pub mod kpi;
pub mod nn;
pub mod observe;
pub mod ppo;
pub mod reward;
pub mod scenario;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
