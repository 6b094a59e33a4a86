//! Dense symmetric linear algebra and Gaussian sampling shared by all filters.
//!
//! Matrices here are small (innovation covariances of dimension `m`, ETKF
//! transforms of dimension `N`), so everything is dense `f64` on top of
//! `nalgebra`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues below `-PSD_CLAMP_TOL * max|λ|` are treated as a genuine
/// loss of semidefiniteness rather than round-off.
pub const PSD_CLAMP_TOL: f64 = 1e-8;
/// Diagonal jitter multipliers (of `trace(A)/dim`) tried by [`spd_solve`].
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// A square matrix that is symmetric up to round-off.
///
/// Construction symmetrizes the entries exactly, so downstream code may rely
/// on `a[(i, j)] == a[(j, i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to [`SYMMETRY_TOL`] (relative to the largest entry)
    /// and stores the exact symmetric part.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asymmetry = (&m - m.transpose()).amax();
        if asymmetry > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry });
        }
        Ok(Self::symmetrize(m))
    }

    /// Takes `(m + mᵀ)/2` without checking how asymmetric `m` was.
    ///
    /// # Panics
    /// If `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// `self + beta * d dᵀ`.
    pub fn add_rank_one(&self, beta: f64, d: &DVector<f64>) -> Self {
        let mut m = self.0.clone();
        if beta != 0.0 {
            m.ger(beta, d, d, 1.0);
        }
        Self::symmetrize(m)
    }

    /// Diagonal entries when every off-diagonal entry is exactly zero.
    pub fn diagonal_if_diagonal(&self) -> Option<DVector<f64>> {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if i != j && self.0[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(self.0.diagonal())
    }
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
///
/// If the plain factorization fails, diagonal jitter of
/// `{1e-12, 1e-10, 1e-8} * trace(A)/dim` is tried in turn. One step of
/// iterative refinement against the unjittered `A` follows the solve.
pub fn spd_solve(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.dim();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.nrows(),
        });
    }
    if n == 0 {
        return Ok(b.clone());
    }
    let chol = factor_with_jitter(a)?;
    let mut x = chol.solve(b);
    let residual = b - a.as_matrix() * &x;
    x += chol.solve(&residual);
    Ok(x)
}

fn factor_with_jitter(a: &SymMatrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(a.as_matrix().clone()) {
        return Ok(c);
    }
    let n = a.dim();
    let base = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for mult in JITTER_LADDER {
        jitter = mult * base;
        let mut m = a.as_matrix().clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            log::debug!("spd_solve: factorized with jitter {jitter:e}");
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite { jitter })
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Negative eigenvalues within [`PSD_CLAMP_TOL`] of the spectral radius are
/// clamped to zero; anything more negative is reported as [`Error::NotPsd`].
pub fn sym_sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim();
    if n == 0 {
        return Ok(SymMatrix::zeros(0));
    }
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let max_abs = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -PSD_CLAMP_TOL * max_abs {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            max_abs_eigenvalue: max_abs,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut scaled = eig.eigenvectors.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*r);
    }
    Ok(SymMatrix::symmetrize(
        &scaled * eig.eigenvectors.transpose(),
    ))
}

/// Square-root factor of a Gaussian covariance, computed once and reused
/// for many draws.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFactor {
    /// Per-component standard deviations of a diagonal covariance.
    Diagonal(DVector<f64>),
    /// Symmetric square root of a dense covariance.
    Dense(DMatrix<f64>),
}

impl NoiseFactor {
    pub fn new(cov: &SymMatrix) -> Result<Self> {
        if let Some(diag) = cov.diagonal_if_diagonal() {
            if let Some(&neg) = diag.iter().find(|v| **v < 0.0) {
                return Err(Error::NotPsd {
                    min_eigenvalue: neg,
                    max_abs_eigenvalue: diag.amax(),
                });
            }
            return Ok(Self::Diagonal(diag.map(f64::sqrt)));
        }
        Ok(Self::Dense(sym_sqrt_psd(cov)?.into_matrix()))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(s) => s.len(),
            Self::Dense(m) => m.nrows(),
        }
    }

    fn apply(&self, standard: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Diagonal(stds) => {
                let mut out = standard;
                for (i, s) in stds.iter().enumerate() {
                    out.row_mut(i).scale_mut(*s);
                }
                out
            }
            Self::Dense(root) => root * standard,
        }
    }
}

/// Purpose of a derived random stream within one Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Truth = 0,
    InitialEnsemble = 1,
    ProcessNoise = 2,
    Perturbation = 3,
}

/// Seeded Gaussian sampler. Same seed and stream give the same sequence.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for one purpose of one run.
    pub fn derived(run_seed: u64, stream: Stream) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        rng.set_stream(stream as u64);
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// `rows × cols` i.i.d. standard normals, drawn in column-major order.
    pub fn standard_normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.standard_normal()).collect();
        DMatrix::from_vec(rows, cols, data)
    }

    /// `count` columns drawn i.i.d. from `N(0, cov)`.
    pub fn sample_gaussian(&mut self, cov: &SymMatrix, count: usize) -> Result<DMatrix<f64>> {
        let factor = NoiseFactor::new(cov)?;
        Ok(self.sample_factored(&factor, count))
    }

    pub fn sample_factored(&mut self, factor: &NoiseFactor, count: usize) -> DMatrix<f64> {
        let z = self.standard_normal_matrix(factor.dim(), count);
        factor.apply(z)
    }

    /// Columns drawn from `N(0, base + beta d dᵀ)` as `η_base + √beta ξ d`
    /// with one scalar `ξ ~ N(0, 1)` per column.
    pub fn sample_gaussian_rank1(
        &mut self,
        base: &SymMatrix,
        beta: f64,
        d: &DVector<f64>,
        count: usize,
    ) -> Result<DMatrix<f64>> {
        let factor = NoiseFactor::new(base)?;
        self.sample_rank1_factored(&factor, beta, d, count)
    }

    pub fn sample_rank1_factored(
        &mut self,
        base: &NoiseFactor,
        beta: f64,
        d: &DVector<f64>,
        count: usize,
    ) -> Result<DMatrix<f64>> {
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta must be >= 0, got {beta}"
            )));
        }
        if d.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                actual: d.len(),
            });
        }
        let mut eta = self.sample_factored(base, count);
        // No extra draws when the rank-one term vanishes, so beta = 0
        // reproduces plain sampling exactly.
        if beta > 0.0 && d.iter().any(|v| *v != 0.0) {
            let amp = beta.sqrt();
            for mut col in eta.column_iter_mut() {
                let xi = self.standard_normal();
                col.axpy(amp * xi, d, 1.0);
            }
        }
        Ok(eta)
    }
}
