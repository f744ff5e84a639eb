pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod planning;
pub mod posterior;

pub use error::{Error, Result};
pub use mdp::{Policy, TabularMdp};
