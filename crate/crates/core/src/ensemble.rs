//! Ensemble container and forecast-side statistics.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::{GaussianSampler, NoiseFactor};

/// State-transition map `x ↦ f(x, u)` with optional additive Gaussian noise.
pub trait Dynamics {
    fn state_dim(&self) -> usize;

    fn transition(&self, x: DVectorView<'_, f64>, input: &[f64]) -> DVector<f64>;

    /// Square-root factor of the process-noise covariance, `None` for a
    /// perfect model.
    fn process_noise(&self) -> Option<&NoiseFactor> {
        None
    }
}

/// Adapter turning a closure into [`Dynamics`].
pub struct FnDynamics<F> {
    dim: usize,
    f: F,
    noise: Option<NoiseFactor>,
}

impl<F> FnDynamics<F>
where
    F: Fn(DVectorView<'_, f64>, &[f64]) -> DVector<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            f,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseFactor) -> Self {
        self.noise = Some(noise);
        self
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(DVectorView<'_, f64>, &[f64]) -> DVector<f64>,
{
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn transition(&self, x: DVectorView<'_, f64>, input: &[f64]) -> DVector<f64> {
        (self.f)(x, input)
    }

    fn process_noise(&self) -> Option<&NoiseFactor> {
        self.noise.as_ref()
    }
}

/// `N` state samples stored as mean plus anomaly matrix.
///
/// Keeping the anomalies explicitly makes recentering and inflation exact:
/// neither touches the anomaly columns except for the inflation scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    mean: DVector<f64>,
    anomalies: DMatrix<f64>,
}

/// Mean and anomalies of an ensemble. Sample covariance is
/// `A Aᵀ / (N - 1)`, formed only on request.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub anomalies: DMatrix<f64>,
}

impl EnsembleStats {
    pub fn size(&self) -> usize {
        self.anomalies.ncols()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.anomalies * self.anomalies.transpose() / (self.size() - 1) as f64
    }

    /// `trace(P) = ‖A‖_F² / (N - 1)`.
    pub fn covariance_trace(&self) -> f64 {
        self.anomalies.norm_squared() / (self.size() - 1) as f64
    }
}

impl Ensemble {
    /// Builds an ensemble from an `n × N` member matrix (column `i` is member `i`).
    pub fn from_members(members: &DMatrix<f64>) -> Result<Self> {
        let size = members.ncols();
        if size < 2 {
            return Err(Error::EnsembleTooSmall(size));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        let mean = members.column_mean();
        let mut anomalies = members.clone();
        for mut col in anomalies.column_iter_mut() {
            col -= &mean;
        }
        Ok(Self { mean, anomalies })
    }

    /// Builds `mean 1ᵀ + anomalies`. The anomaly columns are taken as given.
    pub fn from_mean_and_anomalies(mean: DVector<f64>, anomalies: DMatrix<f64>) -> Result<Self> {
        if anomalies.ncols() < 2 {
            return Err(Error::EnsembleTooSmall(anomalies.ncols()));
        }
        if anomalies.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: anomalies.nrows(),
            });
        }
        if mean.iter().chain(anomalies.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(Self { mean, anomalies })
    }

    pub fn state_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn size(&self) -> usize {
        self.anomalies.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn anomalies(&self) -> &DMatrix<f64> {
        &self.anomalies
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        &self.mean + self.anomalies.column(i)
    }

    pub fn members(&self) -> DMatrix<f64> {
        let mut m = self.anomalies.clone();
        for mut col in m.column_iter_mut() {
            col += &self.mean;
        }
        m
    }

    pub fn stats(&self) -> EnsembleStats {
        EnsembleStats {
            mean: self.mean.clone(),
            anomalies: self.anomalies.clone(),
        }
    }

    pub fn covariance_trace(&self) -> f64 {
        self.anomalies.norm_squared() / (self.size() - 1) as f64
    }

    /// Multiplicative inflation: anomalies scaled by `√rho`, mean untouched.
    pub fn inflate(&self, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 1.0 {
            return Err(Error::InvalidRho(rho));
        }
        if rho == 1.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            mean: self.mean.clone(),
            anomalies: &self.anomalies * rho.sqrt(),
        })
    }

    /// Same anomalies about a new mean.
    pub fn recenter(&self, new_mean: &DVector<f64>) -> Self {
        assert_eq!(
            new_mean.len(),
            self.state_dim(),
            "recenter: dimension mismatch"
        );
        Self {
            mean: new_mean.clone(),
            anomalies: self.anomalies.clone(),
        }
    }

    /// Pushes every member through `f` and adds process noise when the
    /// model has any.
    pub fn propagate(
        &self,
        model: &dyn Dynamics,
        input: &[f64],
        sampler: &mut GaussianSampler,
    ) -> Result<Self> {
        if model.state_dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.state_dim(),
                actual: self.state_dim(),
            });
        }
        let n = self.state_dim();
        let mut next = DMatrix::zeros(n, self.size());
        for i in 0..self.size() {
            let x = self.member(i);
            next.set_column(i, &model.transition(x.as_view(), input));
        }
        if let Some(noise) = model.process_noise() {
            next += sampler.sample_factored(noise, self.size());
        }
        Self::from_members(&next)
    }
}
