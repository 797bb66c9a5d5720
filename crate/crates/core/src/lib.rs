//! Rank-based estimation for partly linear and additive accelerated failure
//! time models.
//!
//! Log survival times are modeled as `φ(X) + ϑᵀZ + ε`, with `φ` a truncated
//! power spline in one or more clinical covariates and `Z` a possibly
//! high-dimensional feature block. Estimates minimize the Gehan loss plus an
//! L1 penalty on the knot coefficients (weight γ) and on the feature
//! coefficients (weight λ), either exactly as an L1 regression over
//! pseudo-observations or through a smoothed quasi-Newton solver.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision types.
//!
//! ```
//! use plaft::{fit, Dataset64, ModelSpec64};
//!
//! let times = [1.0, 2.0, 0.5, 3.0, 1.5, 2.5];
//! let events = [true, true, false, true, true, false];
//! let x = [0.1, 0.4, -0.3, 0.9, 0.2, 0.7];
//! let z = [0.5, 1.0, -1.0, 2.0, 0.0, 1.5];
//! let ds = Dataset64::from_columns(&times, &events, &x, 1, &z, 1).unwrap();
//! let spec = ModelSpec64::new(vec![], vec![0]).with_penalty(0.0, 0.01);
//! let fr = fit(&ds, &spec).unwrap();
//! assert_eq!(fr.vartheta_hat.len(), 2);
//! ```

pub mod data;
pub mod error;
pub mod gehan;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod simgen;
pub mod solver;
pub mod splines;
pub mod tuning;

pub use error::{Error, Result};
pub use model::{fit, fit_additive, fit_from};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type ModelSpec64 = model::ModelSpec<f64>;
pub type ModelSpec32 = model::ModelSpec<f32>;
pub type FitResult64 = model::FitResult<f64>;
pub type FitResult32 = model::FitResult<f32>;
pub type TuningGrid64 = tuning::TuningGrid<f64>;
pub type TuningReport64 = tuning::TuningReport<f64>;
pub type SplineBasisSpec64 = splines::SplineBasisSpec<f64>;
pub type PseudoProblem64 = gehan::PseudoProblem<f64>;
