//! Lorenz-96 with classical RK4 and the squared odd-component observation operator.

use nalgebra::{DVector, DVectorView};

use super::{Benchmark, TruthStep, TruthTrajectory};
use crate::ensemble::Dynamics;
use crate::error::{Error, Result};
use crate::linalg::{GaussianSampler, SymMatrix};
use crate::measurement::MeasurementFn;

/// `dxᵢ/dt = (x_{i+1} - x_{i-2}) x_{i-1} - xᵢ + F`, cyclic indices.
pub fn lorenz96_rhs(x: DVectorView<'_, f64>, forcing: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| {
        let ip1 = x[(i + 1) % n];
        let im1 = x[(i + n - 1) % n];
        let im2 = x[(i + n - 2) % n];
        (ip1 - im2) * im1 - x[i] + forcing
    })
}

fn rk4_unchecked(x: DVectorView<'_, f64>, dt: f64, forcing: f64) -> DVector<f64> {
    let k1 = lorenz96_rhs(x, forcing);
    let x2 = x + &k1 * (0.5 * dt);
    let k2 = lorenz96_rhs(x2.as_view(), forcing);
    let x3 = x + &k2 * (0.5 * dt);
    let k3 = lorenz96_rhs(x3.as_view(), forcing);
    let x4 = x + &k3 * dt;
    let k4 = lorenz96_rhs(x4.as_view(), forcing);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One classical RK4 step of Lorenz-96.
pub fn rk4_step(x: DVectorView<'_, f64>, dt: f64, forcing: f64) -> Result<DVector<f64>> {
    let next = rk4_unchecked(x, dt, forcing);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFiniteState)
    }
}

/// `[x₁², x₃², …, x₃₉²]` (1-based odd components).
pub fn lorenz96_measure(x: DVectorView<'_, f64>) -> DVector<f64> {
    DVector::from_iterator(x.len().div_ceil(2), x.iter().step_by(2).map(|v| v * v))
}

/// Squares of selected state components.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredObservation {
    state_indices: Vec<usize>,
}

impl SquaredObservation {
    pub fn new(state_indices: Vec<usize>) -> Self {
        Self { state_indices }
    }
}

impl MeasurementFn for SquaredObservation {
    fn dim(&self) -> usize {
        self.state_indices.len()
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.state_indices.len(),
            self.state_indices.iter().map(|&i| x[i] * x[i]),
        )
    }
}

/// Identical-twin Lorenz-96 setup. One RK4 step per assimilation cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96 {
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
    pub sigma_y: f64,
    pub spin_up: usize,
    pub steps: usize,
    pub ensemble_size: usize,
    pub prior_std: f64,
}

impl Default for Lorenz96 {
    fn default() -> Self {
        Self {
            dim: 40,
            forcing: 8.0,
            dt: 0.05,
            sigma_y: 1e-2,
            spin_up: 1000,
            steps: 120,
            ensemble_size: 50,
            prior_std: 1.0,
        }
    }
}

impl Lorenz96 {
    /// Number of observed components (`⌈n/2⌉`).
    pub fn obs_dim(&self) -> usize {
        self.dim.div_ceil(2)
    }

    /// Draws `F·1 + ξ` and integrates it through the spin-up.
    pub fn spun_up_state(&self, sampler: &mut GaussianSampler) -> Result<DVector<f64>> {
        let mut x = DVector::from_fn(self.dim, |_, _| self.forcing + sampler.standard_normal());
        for _ in 0..self.spin_up {
            x = rk4_step(x.as_view(), self.dt, self.forcing)?;
        }
        Ok(x)
    }
}

impl Dynamics for Lorenz96 {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn transition(&self, x: DVectorView<'_, f64>, _input: &[f64]) -> DVector<f64> {
        rk4_unchecked(x, self.dt, self.forcing)
    }
}

impl Benchmark for Lorenz96 {
    type Measurement = SquaredObservation;

    fn name(&self) -> &'static str {
        "lorenz96"
    }

    fn input(&self, _step: usize) -> Vec<f64> {
        Vec::new()
    }

    /// Sensor `j` observes state component `2j` (0-based).
    fn measurement(&self, active: &[usize]) -> SquaredObservation {
        SquaredObservation::new(active.iter().map(|j| 2 * j).collect())
    }

    fn measurement_noise(&self, active: &[usize]) -> SymMatrix {
        SymMatrix::from_diagonal(&vec![self.sigma_y * self.sigma_y; active.len()])
    }

    fn prior_std(&self) -> DVector<f64> {
        DVector::from_element(self.dim, self.prior_std)
    }

    fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    fn default_steps(&self) -> usize {
        self.steps
    }

    fn metric_coords(&self) -> Vec<usize> {
        (0..self.dim).collect()
    }

    fn with_noise_scale(&self, scale: f64) -> Self {
        Self {
            sigma_y: Self::default().sigma_y * scale,
            ..self.clone()
        }
    }

    fn make_truth(&self, sampler: &mut GaussianSampler, steps: usize) -> Result<TruthTrajectory> {
        let initial = self.spun_up_state(sampler)?;
        let active: Vec<usize> = (0..self.obs_dim()).collect();
        let h = self.measurement(&active);
        let mut x = initial.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            x = rk4_step(x.as_view(), self.dt, self.forcing)?;
            let mut z = h.eval(x.as_view());
            for v in z.iter_mut() {
                *v += self.sigma_y * sampler.standard_normal();
            }
            out.push(TruthStep {
                state: x.clone(),
                active: active.clone(),
                z,
            });
        }
        Ok(TruthTrajectory {
            initial,
            steps: out,
        })
    }
}
