//! Semi-supervised inference for linear functionals `vᵀθ*` of a
//! high-dimensional least-squares projection parameter.
//!
//! The crate contains the sparse solvers (coordinate-descent lasso, group
//! lasso, a dual-simplex Dantzig selector), node-wise precision estimation,
//! a spline surrogate for the conditional mean, the four debiased
//! estimators with their variance estimates, an M-estimation extension and
//! a Monte-Carlo driver.
//!
//! ```no_run
//! use sslinfer::{data, estimators, sim};
//!
//! let (ds, truth) = sim::generate(sim::Model::One, 300, 2400, 100, 7).unwrap();
//! let analysis = estimators::Analysis::new(&ds, estimators::AnalysisOptions::new(7)).unwrap();
//! let fit = analysis.sssl(1.0).unwrap();
//! let v = data::ContrastVector::unit(ds.p(), 0).unwrap();
//! let ci = fit.infer(&v, 0.05).unwrap();
//! println!("{:.3} in [{:.3}, {:.3}], truth {}", ci.estimate, ci.ci_low, ci.ci_high, truth[0]);
//! ```

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod meanmodel;
pub mod mest;
pub mod precision;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
