//! Training ReLU classifiers whose output is certified to stay on one side of
//! the decision boundary over a norm ball, using a semidefinite relaxation
//! solved by ADMM.

pub mod admm;
pub mod attack;
pub mod bounds;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod region;
pub mod sdp;
pub mod verify;

pub use error::{Error, Result};
pub use network::{init_xavier, Checkpoint, NetworkParams};
pub use region::{InputRegion, Norm};
