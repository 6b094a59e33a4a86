//! Measurement-space ensemble statistics at an arbitrary linearization
//! ensemble (forecast or recentered), innovation covariances and the gain.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, wrap_angle, SymMatrix};

/// A measurement map `h: Rⁿ → Rᵐ` for one assimilation step.
///
/// Components flagged angular are compared modulo 2π: their anomalies,
/// mismatch and innovations are wrapped to `(-π, π]`.
pub trait MeasurementFn {
    fn dim(&self) -> usize;

    fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64>;

    fn is_angular(&self, _component: usize) -> bool {
        false
    }
}

/// Affine map `x ↦ H x + c`.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub h: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearMeasurement {
    pub fn new(h: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(h.nrows());
        Self { h, offset }
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Self {
        assert_eq!(offset.len(), self.h.nrows());
        self.offset = offset;
        self
    }
}

impl MeasurementFn for LinearMeasurement {
    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        &self.h * x + &self.offset
    }
}

/// Closure-backed measurement map.
pub struct FnMeasurement<F> {
    dim: usize,
    f: F,
    angular: Vec<bool>,
}

impl<F> FnMeasurement<F>
where
    F: Fn(DVectorView<'_, f64>) -> DVector<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            f,
            angular: vec![false; dim],
        }
    }

    pub fn with_angular(mut self, angular: Vec<bool>) -> Self {
        assert_eq!(angular.len(), self.dim);
        self.angular = angular;
        self
    }
}

impl<F> MeasurementFn for FnMeasurement<F>
where
    F: Fn(DVectorView<'_, f64>) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        (self.f)(x)
    }

    fn is_angular(&self, component: usize) -> bool {
        self.angular[component]
    }
}

/// Predicted-measurement statistics of one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasStats {
    /// `Z`, one predicted measurement per member.
    pub z_ensemble: DMatrix<f64>,
    /// `z̄`.
    pub z_mean: DVector<f64>,
    /// `𝒵 = Z - z̄ 1ᵀ`.
    pub z_anoms: DMatrix<f64>,
    /// `P_xz = A 𝒵ᵀ / (N - 1)`.
    pub cross_cov: DMatrix<f64>,
    /// `d = h(x̄) - z̄`.
    pub mismatch: DVector<f64>,
    angular: Vec<bool>,
}

impl MeasStats {
    pub fn dim(&self) -> usize {
        self.z_mean.len()
    }

    pub fn size(&self) -> usize {
        self.z_anoms.ncols()
    }

    pub fn angular(&self) -> &[bool] {
        &self.angular
    }

    /// Wraps the angular components of a measurement-space difference.
    pub fn wrap_difference(&self, v: &mut DVector<f64>) {
        wrap_rows(&self.angular, v);
    }

    /// `z - z̄`, angle-wrapped.
    pub fn innovation(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut e = z - &self.z_mean;
        self.wrap_difference(&mut e);
        e
    }
}

fn wrap_rows(angular: &[bool], v: &mut DVector<f64>) {
    for (x, _) in v.iter_mut().zip(angular).filter(|(_, a)| **a) {
        *x = wrap_angle(*x);
    }
}

/// Evaluates `h` on every member of `e` and at its mean.
pub fn measure_stats(e: &Ensemble, h: &dyn MeasurementFn) -> Result<MeasStats> {
    let m = h.dim();
    if m == 0 {
        return Err(Error::EmptyMeasurement);
    }
    let size = e.size();
    let mut z_ensemble = DMatrix::zeros(m, size);
    for i in 0..size {
        let zi = h.eval(e.member(i).as_view());
        if zi.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: zi.len(),
            });
        }
        z_ensemble.set_column(i, &zi);
    }
    let angular: Vec<bool> = (0..m).map(|c| h.is_angular(c)).collect();

    let mut z_mean = z_ensemble.column_mean();
    let mut z_anoms = z_ensemble.clone();
    for mut col in z_anoms.column_iter_mut() {
        col -= &z_mean;
    }
    for r in (0..m).filter(|r| angular[*r]) {
        // Average the wrapped offsets from the first member so a cluster
        // straddling ±π keeps a sensible mean; re-centering the offsets keeps
        // the anomaly row summing to zero.
        let reference = z_ensemble[(r, 0)];
        let offsets: Vec<f64> = (0..size)
            .map(|c| wrap_angle(z_ensemble[(r, c)] - reference))
            .collect();
        let avg = offsets.iter().sum::<f64>() / size as f64;
        z_mean[r] = wrap_angle(reference + avg);
        for (c, off) in offsets.iter().enumerate() {
            z_anoms[(r, c)] = off - avg;
        }
    }

    let mut mismatch = h.eval(e.mean().as_view()) - &z_mean;
    wrap_rows(&angular, &mut mismatch);

    let cross_cov = e.anomalies() * z_anoms.transpose() / (size - 1) as f64;
    if cross_cov.iter().any(|v| !v.is_finite()) || mismatch.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }

    Ok(MeasStats {
        z_ensemble,
        z_mean,
        z_anoms,
        cross_cov,
        mismatch,
        angular,
    })
}

/// `𝒵𝒵ᵀ/(N-1) + β d dᵀ + R` together with the `β` and `d` used.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationCov {
    pub matrix: SymMatrix,
    pub beta_used: f64,
    pub d_used: DVector<f64>,
}

pub fn innovation_cov(ms: &MeasStats, r: &SymMatrix, beta: f64) -> Result<InnovationCov> {
    if r.dim() != ms.dim() {
        return Err(Error::DimensionMismatch {
            expected: ms.dim(),
            actual: r.dim(),
        });
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let mut s = &ms.z_anoms * ms.z_anoms.transpose() / (ms.size() - 1) as f64;
    s += r.as_matrix();
    let matrix = SymMatrix::symmetrize(s).add_rank_one(beta, &ms.mismatch);
    Ok(InnovationCov {
        matrix,
        beta_used: beta,
        d_used: ms.mismatch.clone(),
    })
}

/// `K = P_xz S⁻¹`, computed as the transpose of `S⁻¹ P_xzᵀ`.
pub fn kalman_gain(cross_cov: &DMatrix<f64>, s: &InnovationCov) -> Result<DMatrix<f64>> {
    Ok(spd_solve(&s.matrix, &cross_cov.transpose())?.transpose())
}
