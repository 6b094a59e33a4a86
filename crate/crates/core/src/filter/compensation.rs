//! NIS-driven adaptation of the compensation magnitude `β`.
//!
//! The controller smooths the per-step NIS excess `ε_k - m_k` with an
//! exponentially weighted average and integrates it into `β`, projected onto
//! `[0, ∞)`. Smoothing the excess instead of the raw NIS keeps the law
//! meaningful when the measurement dimension changes from step to step; for a
//! fixed `m` it is the same recursion as smoothing `ε` and subtracting `m`.

use nalgebra::{DMatrix, DVector};

use super::config::FilterConfig;
use crate::error::Result;
use crate::linalg::{spd_solve, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationState {
    pub beta: f64,
    /// Smoothed `ε - m`.
    pub smoothed_excess: f64,
    /// False until the first innovation has been seen; the first excess
    /// seeds the average directly.
    pub initialized: bool,
}

impl CompensationState {
    pub fn new(beta0: f64) -> Self {
        Self {
            beta: beta0,
            smoothed_excess: 0.0,
            initialized: false,
        }
    }

    /// Smoothed NIS `ε̄` for measurement dimension `m`.
    pub fn smoothed_nis(&self, m: usize) -> f64 {
        self.smoothed_excess + m as f64
    }

    /// One controller step from an already computed NIS value.
    pub fn advance(&self, nis: f64, m: usize, lambda: f64, mu: f64) -> Self {
        let excess = nis - m as f64;
        let smoothed = if self.initialized {
            lambda * self.smoothed_excess + (1.0 - lambda) * excess
        } else {
            excess
        };
        Self {
            beta: (self.beta + mu * smoothed).max(0.0),
            smoothed_excess: smoothed,
            initialized: true,
        }
    }
}

/// Normalized innovation squared `eᵀ S⁻¹ e`.
pub fn nis(innovation: &DVector<f64>, s: &SymMatrix) -> Result<f64> {
    let rhs = DMatrix::from_column_slice(innovation.len(), 1, innovation.as_slice());
    let x = spd_solve(s, &rhs)?;
    Ok(innovation.dot(&x.column(0)))
}

/// Computes the NIS of `innovation` under `s_used` and advances the
/// controller. Returns the new state and the NIS.
pub fn beta_update(
    comp: &CompensationState,
    innovation: &DVector<f64>,
    s_used: &SymMatrix,
    cfg: &FilterConfig,
) -> Result<(CompensationState, f64)> {
    let eps = nis(innovation, s_used)?;
    Ok((comp.advance(eps, innovation.len(), cfg.lambda, cfg.mu), eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Mode, Variant};
    use proptest::prelude::*;

    #[test]
    fn nis_identity_is_squared_norm() {
        let e = DVector::from_vec(vec![3.0, 4.0]);
        assert!((nis(&e, &SymMatrix::identity(2)).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn consistent_filter_keeps_beta() {
        let c = CompensationState {
            beta: 1.5,
            smoothed_excess: 0.0,
            initialized: true,
        };
        let next = c.advance(4.0, 4, 0.9, 0.1);
        assert_eq!(next.beta, 1.5);
        assert_eq!(next.smoothed_nis(4), 4.0);
    }

    #[test]
    fn beta_is_projected_at_zero() {
        // smoothed deficit of -1 after the update
        let c = CompensationState {
            beta: 0.05,
            smoothed_excess: -1.0,
            initialized: true,
        };
        let next = c.advance(2.0, 3, 0.9, 0.1);
        assert!((next.smoothed_excess + 1.0).abs() < 1e-15);
        assert_eq!(next.beta, 0.0);
    }

    #[test]
    fn first_step_seeds_the_average() {
        let c = CompensationState::new(2.0);
        let next = c.advance(7.0, 2, 0.9, 0.1);
        assert_eq!(next.smoothed_excess, 5.0);
        assert!((next.beta - 2.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_dimension_matches_raw_nis_smoothing() {
        let (lambda, mu, m) = (0.9, 0.1, 3usize);
        let seq = [5.0, 1.0, 2.5, 9.0, 0.2, 3.3];
        let mut c = CompensationState::new(2.0);
        let mut eps_bar = seq[0];
        let mut beta = 2.0f64;
        for (k, e) in seq.iter().enumerate() {
            c = c.advance(*e, m, lambda, mu);
            if k > 0 {
                eps_bar = lambda * eps_bar + (1.0 - lambda) * e;
            }
            beta = (beta + mu * (eps_bar - m as f64)).max(0.0);
            assert!((c.beta - beta).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_update_uses_innovation_dimension() {
        let cfg = FilterConfig::new(Variant::Etkf, Mode::Car);
        let comp = CompensationState::new(0.0);
        let e = DVector::from_vec(vec![1.0, 1.0]);
        let (next, eps) = beta_update(&comp, &e, &SymMatrix::identity(2), &cfg).unwrap();
        assert_eq!(eps, 2.0);
        assert_eq!(next.beta, 0.0);
    }

    proptest! {
        #[test]
        fn beta_never_negative(nis in proptest::collection::vec(0.0f64..50.0, 1..60),
                               dims in proptest::collection::vec(1usize..30, 60),
                               beta0 in 0.0f64..5.0) {
            let mut c = CompensationState::new(beta0);
            for (e, m) in nis.iter().zip(&dims) {
                c = c.advance(*e, *m, 0.9, 0.1);
                prop_assert!(c.beta >= 0.0);
            }
        }
    }
}
