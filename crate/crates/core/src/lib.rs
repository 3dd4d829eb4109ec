// NaN must fail range checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assumptions;
pub mod cli;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod plot;
pub mod reference;
pub mod rng;
pub mod stats;

pub use engine::{Initial, TrajectoryConfig, TrajectoryPath};
pub use error::{Error, Result};
pub use kernel::{Observable, PoissonConfig, PoissonSolution};
pub use measures::DiscreteMeasure;
pub use model::{ComplexMatrix, KrausFamily, ProjectiveState, Word, C64};
pub use reference::KeepSwitchModel;
