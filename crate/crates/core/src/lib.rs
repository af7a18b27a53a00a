//! Arm-nonuse scoring from bimanual reaching sessions.
//!
//! The crate simulates and ingests timed reaching sessions over a 3D
//! workspace, fits Gaussian-process models of hand choice, reach success and
//! reach time, selects kernels by cross-validated marginal likelihood, and
//! reduces the fitted models to a scalar nonuse score. Clinical reliability
//! and usability statistics live in [`stats`].

pub mod gp;
pub mod kernel;
pub mod nonuse;
mod optim;
pub mod protocol;
pub mod selection;
pub mod session;
pub mod sim;
pub mod stats;
pub mod util;
pub mod workspace;

pub use gp::{FitOptions, FitReport, GpClassifier, GpError, GpRegressor};
pub use kernel::{Hyperparams, KernelExpr};
pub use workspace::{Point3, WorkspaceSpec};
