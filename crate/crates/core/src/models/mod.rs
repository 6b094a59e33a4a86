//! Benchmark systems: feature-based SLAM with range-bearing observations and
//! the 40-variable Lorenz-96 model with squared observations.

pub mod lorenz96;
pub mod slam;

pub use lorenz96::{lorenz96_measure, lorenz96_rhs, rk4_step, Lorenz96, SquaredObservation};
pub use slam::{slam_measure, Slam, SlamObservation};

use nalgebra::DVector;

use crate::ensemble::{Dynamics, Ensemble};
use crate::error::Result;
use crate::linalg::{GaussianSampler, NoiseFactor, SymMatrix};
use crate::measurement::MeasurementFn;

/// One step of a simulated truth: state, which sensors fired, and the
/// noisy measurement vector stacked in sensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthStep {
    pub state: DVector<f64>,
    pub active: Vec<usize>,
    pub z: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub initial: DVector<f64>,
    pub steps: Vec<TruthStep>,
}

/// What the Monte-Carlo harness needs from a benchmark system.
pub trait Benchmark: Dynamics + Sync {
    type Measurement: MeasurementFn;

    fn name(&self) -> &'static str;

    /// Control input applied at `step` (both truth and filters see it).
    fn input(&self, step: usize) -> Vec<f64>;

    /// Measurement map restricted to the given sensors.
    fn measurement(&self, active: &[usize]) -> Self::Measurement;

    fn measurement_noise(&self, active: &[usize]) -> SymMatrix;

    /// Diagonal standard deviations of the initial-ensemble spread.
    fn prior_std(&self) -> DVector<f64>;

    fn ensemble_size(&self) -> usize;

    fn default_steps(&self) -> usize;

    /// State coordinates included in the RMSE.
    fn metric_coords(&self) -> Vec<usize>;

    /// Copy with measurement-noise standard deviations multiplied by `scale`.
    fn with_noise_scale(&self, scale: f64) -> Self
    where
        Self: Sized;

    fn make_truth(&self, sampler: &mut GaussianSampler, steps: usize) -> Result<TruthTrajectory>;
}

/// `truth0 + N(0, diag(prior_std²))` draws, one per member.
pub fn make_initial_ensemble(
    truth0: &DVector<f64>,
    prior_std: &DVector<f64>,
    size: usize,
    sampler: &mut GaussianSampler,
) -> Result<Ensemble> {
    let noise = NoiseFactor::Diagonal(prior_std.clone());
    let mut members = sampler.sample_factored(&noise, size);
    for mut col in members.column_iter_mut() {
        col += truth0;
    }
    Ensemble::from_members(&members)
}
