//! Reachability analysis for discrete-time bilinear control systems.
//!
//! The crate computes the bilinear reachability Gramian, lower bounds on
//! minimum control energy, Gramian-based actuator selection and scaling
//! sweeps over network families.

pub mod energy;
pub mod error;
pub mod gramian;
pub mod io;
pub mod network;
pub mod numerics;
pub mod selection;
pub mod system;

pub use error::{Error, Result};
pub use gramian::{gramian_series, gramian_vec_solve, GramianMethod, GramianOptions, GramianResult};
pub use numerics::Matrix;
pub use system::{BilinearSystem, GeneralBilinearSystem, Trajectory};
