//! Ensemble Kalman filtering with recalibrated updates, trace back-out and
//! adaptive nonlinearity compensation, together with SLAM and Lorenz-96
//! benchmarks and a Monte-Carlo harness.
//!
//! ```no_run
//! use car_enkf::filter::{FilterConfig, Mode, Variant};
//! use car_enkf::harness::{run_experiment, Execution};
//! use car_enkf::models::{Benchmark, Lorenz96};
//!
//! let bench = Lorenz96::default();
//! let filters = [
//!     FilterConfig::new(Variant::Etkf, Mode::Conventional),
//!     FilterConfig::new(Variant::Etkf, Mode::Car),
//! ];
//! let results = run_experiment(&bench, &filters, 10, 42, bench.default_steps(), Execution::Parallel).unwrap();
//! for r in &results {
//!     println!("{}: {:.4e}", r.filter.label(), r.time_avg_rmse);
//! }
//! ```

pub mod checks;
pub mod ensemble;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod measurement;
pub mod models;

pub use ensemble::{Dynamics, Ensemble};
pub use error::{Error, Result};
pub use filter::{Filter, FilterConfig, Mode, Observation, StepReport, Variant};
pub use linalg::{GaussianSampler, SymMatrix};
pub use measurement::MeasurementFn;
