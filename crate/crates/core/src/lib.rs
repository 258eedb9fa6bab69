//! Sparse multinomial logistic regression with fast leave-one-out error
//! estimates from a single fit.
//!
//! The crate ships an elastic-net MLR path solver together with two
//! single-fit approximations of the leave-one-out CV error — a per-sample
//! corrected estimator ([`acv`]) and a self-averaging variant with cost
//! linear in the problem size ([`saacv`]) — plus the literal k-fold/LOO
//! oracle ([`literalcv`]) they are validated against, synthetic data
//! generators ([`datagen`]), and the report/IO plumbing behind the `mlrcv`
//! command-line tool.

pub mod acv;
pub mod binomial;
pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod literalcv;
pub mod model;
pub mod report;
pub mod saacv;
pub mod solver;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{ActiveSet, Dataset, SampleBlocks, WeightMatrix};
pub use solver::{FitOptions, FitResult, HyperParams};
