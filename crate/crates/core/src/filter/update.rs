//! Variant-specific analysis kernels and the recalibrated posterior target.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, sym_sqrt_psd, GaussianSampler, NoiseFactor, SymMatrix};
use crate::measurement::MeasStats;

/// `x̄a = x̄f + K e` for an (already wrapped) innovation `e = z - z̄f`.
pub fn mean_update(
    forecast_mean: &DVector<f64>,
    gain: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> DVector<f64> {
    forecast_mean + gain * innovation
}

/// Perturbed-observation update `xᵢ + K(z + ηᵢ - zᵢ)` with `ηᵢ ~ N(0, R)`.
/// No recentering.
pub fn conventional_stochastic_update(
    forecast: &Ensemble,
    gain: &DMatrix<f64>,
    z: &DVector<f64>,
    stats: &MeasStats,
    r: &SymMatrix,
    sampler: &mut GaussianSampler,
) -> Result<Ensemble> {
    let eta = sampler.sample_gaussian(r, forecast.size())?;
    let members = perturbed_members(forecast, gain, z, stats, &eta);
    Ensemble::from_members(&members)
}

fn perturbed_members(
    base: &Ensemble,
    gain: &DMatrix<f64>,
    z: &DVector<f64>,
    stats: &MeasStats,
    eta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut members = base.members();
    for i in 0..base.size() {
        let mut innov = z + eta.column(i) - stats.z_ensemble.column(i);
        stats.wrap_difference(&mut innov);
        let mut col = members.column_mut(i);
        col.gemv(1.0, gain, &innov, 1.0);
    }
    members
}

/// Symmetric ETKF transform `(I - 𝒵ᵀ(𝒵𝒵ᵀ + (N-1)R)⁻¹𝒵)^{1/2}`.
pub fn conventional_etkf_transform(z_anoms: &DMatrix<f64>, r: &SymMatrix) -> Result<SymMatrix> {
    let size = z_anoms.ncols();
    let c =
        SymMatrix::symmetrize(z_anoms * z_anoms.transpose() + r.as_matrix() * (size - 1) as f64);
    let g = spd_solve(&c, z_anoms)?;
    let inner = DMatrix::identity(size, size) - z_anoms.transpose() * g;
    sym_sqrt_psd(&SymMatrix::symmetrize(inner))
}

/// Recalibrated perturbed-observation update.
///
/// Draws `ηᵢ ~ N(0, R + β d dᵀ)` with `d` the recalibrated mismatch, forms
/// `x*ᵢ = x^rcᵢ + K(z + ηᵢ - z^rcᵢ)`, then translates the result so its mean
/// is exactly `analysis_mean`.
#[allow(clippy::too_many_arguments)]
pub fn car_stochastic_update(
    recentered: &Ensemble,
    gain: &DMatrix<f64>,
    z: &DVector<f64>,
    rc_stats: &MeasStats,
    r: &SymMatrix,
    beta: f64,
    analysis_mean: &DVector<f64>,
    sampler: &mut GaussianSampler,
) -> Result<Ensemble> {
    let base = NoiseFactor::new(r)?;
    let eta = sampler.sample_rank1_factored(&base, beta, &rc_stats.mismatch, recentered.size())?;
    let members = perturbed_members(recentered, gain, z, rc_stats, &eta);
    Ok(Ensemble::from_members(&members)?.recenter(analysis_mean))
}

/// Recalibrated (and optionally compensated) ETKF transform.
///
/// With `B = (𝒵f𝒵fᵀ + (N-1)(β d_f d_fᵀ + R))⁻¹` and
/// `Γ = 𝒵rc𝒵rcᵀ + (N-1)(β d_rc d_rcᵀ + R)`, the square root is taken of
///
/// ```text
/// I - 𝒵fᵀB𝒵rc - 𝒵rcᵀB𝒵f + 𝒵fᵀBΓB𝒵f
///   = (I - W)ᵀ(I - W) + (N-1) Gᵀ(R + β d_rc d_rcᵀ)G,   G = B𝒵f, W = 𝒵rcᵀG
/// ```
///
/// which is assembled in the second (sum of Gram terms) form so it stays
/// semidefinite under round-off.
pub fn car_etkf_transform(
    z_forecast: &DMatrix<f64>,
    z_recal: &DMatrix<f64>,
    r: &SymMatrix,
    beta: f64,
    d_forecast: &DVector<f64>,
    d_recal: &DVector<f64>,
) -> Result<SymMatrix> {
    let size = z_forecast.ncols();
    if z_recal.shape() != z_forecast.shape() {
        return Err(Error::DimensionMismatch {
            expected: z_forecast.nrows(),
            actual: z_recal.nrows(),
        });
    }
    let scale = (size - 1) as f64;
    let r_f = r.add_rank_one(beta, d_forecast);
    let c = SymMatrix::symmetrize(z_forecast * z_forecast.transpose() + r_f.as_matrix() * scale);
    let g = spd_solve(&c, z_forecast)?;
    let residual = DMatrix::identity(size, size) - z_recal.transpose() * &g;
    let r_rc = r.add_rank_one(beta, d_recal);
    let noise_term = g.transpose() * r_rc.as_matrix() * &g * scale;
    let inner = residual.transpose() * &residual + noise_term;
    sym_sqrt_psd(&SymMatrix::symmetrize(inner))
}

/// Traces of the forecast covariance and of the recalibrated posterior target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTrace {
    pub target: f64,
    pub forecast: f64,
}

/// `tr(P^f + K S Kᵀ - K P_xzᵀ - P_xz Kᵀ)` without forming any `n × n` matrix.
pub fn posterior_trace(
    forecast_anoms: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    s_used: &SymMatrix,
    cross_recal: &DMatrix<f64>,
) -> PosteriorTrace {
    let size = forecast_anoms.ncols();
    let forecast = forecast_anoms.norm_squared() / (size - 1) as f64;
    let ks = gain * s_used.as_matrix();
    let gain_term = ks.dot(gain);
    let cross_term = gain.dot(cross_recal);
    PosteriorTrace {
        target: forecast + gain_term - 2.0 * cross_term,
        forecast,
    }
}

/// Explicit `P^f + K S Kᵀ - K P_xzᵀ - P_xz Kᵀ`.
pub fn posterior_target_matrix(
    forecast_cov: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    s_used: &SymMatrix,
    cross_recal: &DMatrix<f64>,
) -> DMatrix<f64> {
    let kpt = gain * cross_recal.transpose();
    forecast_cov + gain * s_used.as_matrix() * gain.transpose() - &kpt - kpt.transpose()
}

/// Accept the recalibrated update iff it does not enlarge the trace.
pub fn backout_decide(trace_target: f64, trace_forecast: f64) -> bool {
    trace_target <= trace_forecast
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{
        innovation_cov, kalman_gain, measure_stats, FnMeasurement, LinearMeasurement,
    };
    use nalgebra::DVectorView;

    fn random_ensemble(n: usize, size: usize, seed: u64) -> Ensemble {
        Ensemble::from_members(&GaussianSampler::new(seed).standard_normal_matrix(n, size)).unwrap()
    }

    fn cubic(x: DVectorView<'_, f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            x[0] * x[0] + x[1],
            x[2].powi(3) - x[0],
            (x[1] * x[3]).sin(),
        ])
    }

    fn random_spd(m: usize, seed: u64) -> SymMatrix {
        let g = GaussianSampler::new(seed).standard_normal_matrix(m, m);
        SymMatrix::symmetrize(&g * g.transpose() * 0.1 + DMatrix::identity(m, m) * 0.05)
    }

    #[test]
    fn mean_update_examples() {
        let xf = DVector::from_vec(vec![1.0]);
        let k = DMatrix::from_element(1, 1, 0.5);
        let e = DVector::from_vec(vec![3.0 - 2.0]);
        assert_eq!(mean_update(&xf, &k, &e)[0], 1.5);
        assert_eq!(mean_update(&xf, &DMatrix::zeros(1, 1), &e), xf);
        assert_eq!(mean_update(&xf, &k, &DVector::zeros(1)), xf);
    }

    #[test]
    fn stochastic_update_with_zero_gain_is_identity() {
        let e = random_ensemble(3, 5, 1);
        let h = LinearMeasurement::new(DMatrix::identity(2, 3));
        let ms = measure_stats(&e, &h).unwrap();
        let mut s = GaussianSampler::new(2);
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let out = conventional_stochastic_update(
            &e,
            &DMatrix::zeros(3, 2),
            &z,
            &ms,
            &SymMatrix::zeros(2),
            &mut s,
        )
        .unwrap();
        assert!((out.members() - e.members()).amax() < 1e-14);
    }

    #[test]
    fn etkf_transform_uninformative_is_identity() {
        let t =
            conventional_etkf_transform(&DMatrix::zeros(2, 6), &SymMatrix::identity(2)).unwrap();
        assert!((t.as_matrix() - DMatrix::<f64>::identity(6, 6)).amax() < 1e-14);
        let t = car_etkf_transform(
            &DMatrix::zeros(2, 6),
            &GaussianSampler::new(3).standard_normal_matrix(2, 6),
            &SymMatrix::identity(2),
            2.0,
            &DVector::from_vec(vec![1.0, 0.5]),
            &DVector::from_vec(vec![0.2, 0.1]),
        )
        .unwrap();
        assert!((t.as_matrix() - DMatrix::<f64>::identity(6, 6)).amax() < 1e-14);
    }

    #[test]
    fn etkf_transform_matches_kalman_posterior() {
        let e = random_ensemble(4, 8, 5);
        let ms = measure_stats(&e, &FnMeasurement::new(3, cubic)).unwrap();
        let r = random_spd(3, 6);
        let s = innovation_cov(&ms, &r, 0.0).unwrap();
        let k = kalman_gain(&ms.cross_cov, &s).unwrap();
        let t = conventional_etkf_transform(&ms.z_anoms, &r).unwrap();
        let aa = e.anomalies() * t.as_matrix();
        let realized = &aa * aa.transpose() / 7.0;
        let target = e.stats().covariance() - &k * s.matrix.as_matrix() * k.transpose();
        assert!((realized - &target).norm() <= 1e-8 * target.norm());
    }

    #[test]
    fn etkf_transform_tends_to_identity_for_huge_noise() {
        let e = random_ensemble(4, 8, 7);
        let ms = measure_stats(&e, &FnMeasurement::new(3, cubic)).unwrap();
        let r = SymMatrix::identity(3).scale(1e8);
        let t = conventional_etkf_transform(&ms.z_anoms, &r).unwrap();
        assert!((t.as_matrix() - DMatrix::<f64>::identity(8, 8)).norm() <= 1e-3);
    }

    #[test]
    fn car_transform_reduces_to_conventional() {
        let z = GaussianSampler::new(8).standard_normal_matrix(3, 9);
        let z = &z - z.column_mean() * DMatrix::from_element(1, 9, 1.0);
        let r = random_spd(3, 9);
        let d = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        let conv = conventional_etkf_transform(&z, &r).unwrap();
        let car = car_etkf_transform(&z, &z, &r, 0.0, &d, &d).unwrap();
        assert!((conv.as_matrix() - car.as_matrix()).norm() <= 1e-10);
    }

    #[test]
    fn car_transform_realizes_compensated_target() {
        let e = random_ensemble(5, 10, 11);
        let h = FnMeasurement::new(3, cubic);
        let r = random_spd(3, 12);
        let beta = 2.0;
        let fs = measure_stats(&e, &h).unwrap();
        let sf = innovation_cov(&fs, &r, beta).unwrap();
        let k = kalman_gain(&fs.cross_cov, &sf).unwrap();
        let z = DVector::from_vec(vec![0.4, -0.2, 0.1]);
        let xa = mean_update(e.mean(), &k, &fs.innovation(&z));
        let rc = e.recenter(&xa);
        let rs = measure_stats(&rc, &h).unwrap();
        let src = innovation_cov(&rs, &r, beta).unwrap();
        let t = car_etkf_transform(
            &fs.z_anoms,
            &rs.z_anoms,
            &r,
            beta,
            &fs.mismatch,
            &rs.mismatch,
        )
        .unwrap();
        let aa = e.anomalies() * t.as_matrix();
        let realized = &aa * aa.transpose() / 9.0;
        let target =
            posterior_target_matrix(&e.stats().covariance(), &k, &src.matrix, &rs.cross_cov);
        assert!((realized - &target).norm() <= 1e-8 * target.norm());
    }

    #[test]
    fn car_stochastic_mean_is_exact() {
        let e = random_ensemble(4, 7, 13);
        let h = FnMeasurement::new(3, cubic);
        let r = random_spd(3, 14);
        let fs = measure_stats(&e, &h).unwrap();
        let k = kalman_gain(&fs.cross_cov, &innovation_cov(&fs, &r, 1.0).unwrap()).unwrap();
        let xa = mean_update(
            e.mean(),
            &k,
            &fs.innovation(&DVector::from_vec(vec![1.0, 0.0, -1.0])),
        );
        let rc = e.recenter(&xa);
        let rs = measure_stats(&rc, &h).unwrap();
        let mut s = GaussianSampler::new(15);
        for _ in 0..20 {
            let out = car_stochastic_update(
                &rc,
                &k,
                &DVector::from_vec(vec![1.0, 0.0, -1.0]),
                &rs,
                &r,
                1.0,
                &xa,
                &mut s,
            )
            .unwrap();
            let realized_mean = out.members().column_mean();
            assert!((realized_mean - &xa).amax() <= 1e-12);
        }
    }

    #[test]
    fn car_stochastic_zero_beta_linear_equals_recentered_conventional() {
        let e = random_ensemble(3, 6, 16);
        let h = LinearMeasurement::new(GaussianSampler::new(17).standard_normal_matrix(2, 3));
        let r = random_spd(2, 18);
        let z = DVector::from_vec(vec![0.5, 0.5]);
        let fs = measure_stats(&e, &h).unwrap();
        let k = kalman_gain(&fs.cross_cov, &innovation_cov(&fs, &r, 0.0).unwrap()).unwrap();
        let xa = mean_update(e.mean(), &k, &fs.innovation(&z));
        let rc = e.recenter(&xa);
        let rs = measure_stats(&rc, &h).unwrap();
        let car = car_stochastic_update(
            &rc,
            &k,
            &z,
            &rs,
            &r,
            0.0,
            &xa,
            &mut GaussianSampler::new(19),
        )
        .unwrap();
        let conv =
            conventional_stochastic_update(&e, &k, &z, &fs, &r, &mut GaussianSampler::new(19))
                .unwrap()
                .recenter(&xa);
        assert!((car.members() - conv.members()).amax() < 1e-10);
    }

    #[test]
    fn posterior_trace_cases() {
        let e = random_ensemble(4, 6, 20);
        let h = FnMeasurement::new(3, cubic);
        let r = random_spd(3, 21);
        let fs = measure_stats(&e, &h).unwrap();
        let s = innovation_cov(&fs, &r, 0.5).unwrap();

        let zero = posterior_trace(
            e.anomalies(),
            &DMatrix::zeros(4, 3),
            &s.matrix,
            &fs.cross_cov,
        );
        assert_eq!(zero.target, zero.forecast);

        let k = kalman_gain(&fs.cross_cov, &s).unwrap();
        let pt = posterior_trace(e.anomalies(), &k, &s.matrix, &fs.cross_cov);
        let explicit =
            posterior_target_matrix(&e.stats().covariance(), &k, &s.matrix, &fs.cross_cov);
        assert!((pt.target - explicit.trace()).abs() <= 1e-10 * explicit.trace().abs());
        assert!((pt.forecast - e.stats().covariance().trace()).abs() <= 1e-12 * pt.forecast);
    }

    #[test]
    fn linear_measurements_never_back_out() {
        for seed in 0..20 {
            let e = random_ensemble(4, 6, 100 + seed);
            let h = LinearMeasurement::new(
                GaussianSampler::new(200 + seed).standard_normal_matrix(2, 4),
            );
            let r = random_spd(2, 300 + seed);
            let fs = measure_stats(&e, &h).unwrap();
            let s = innovation_cov(&fs, &r, 0.0).unwrap();
            let k = kalman_gain(&fs.cross_cov, &s).unwrap();
            let rc = e.recenter(&mean_update(
                e.mean(),
                &k,
                &DVector::from_vec(vec![3.0, -2.0]),
            ));
            let rs = measure_stats(&rc, &h).unwrap();
            let src = innovation_cov(&rs, &r, 0.0).unwrap();
            let pt = posterior_trace(e.anomalies(), &k, &src.matrix, &rs.cross_cov);
            assert!(backout_decide(pt.target, pt.forecast));
        }
    }

    #[test]
    fn backout_rule() {
        assert!(backout_decide(3.0, 3.0));
        assert!(!backout_decide(4.0, 3.0));
        assert!(backout_decide(0.0, 3.0));
    }
}
