//! Exact and statistical consistency checks of the analysis kernels, run by
//! `car-enkf selftest`.

use std::fmt;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::ensemble::{Ensemble, FnDynamics};
use crate::error::Result;
use crate::filter::{
    car_etkf_transform, car_stochastic_update, conventional_etkf_transform, mean_update,
    posterior_target_matrix, Filter, FilterConfig, Mode, Observation, Variant,
};
use crate::linalg::{GaussianSampler, NoiseFactor, SymMatrix};
use crate::measurement::{
    innovation_cov, kalman_gain, measure_stats, FnMeasurement, LinearMeasurement, MeasurementFn,
};
use crate::models::{lorenz96_measure, rk4_step};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Random Lorenz-like ensemble with `n` states around a level of 8.
fn lorenz_like_ensemble(n: usize, size: usize, sampler: &mut GaussianSampler) -> Result<Ensemble> {
    let center = DVector::from_fn(n, |_, _| 8.0 + 3.0 * sampler.standard_normal());
    let mut members = sampler.standard_normal_matrix(n, size);
    for mut c in members.column_iter_mut() {
        c += &center;
    }
    Ensemble::from_members(&members)
}

/// Recalibrated ETKF anomalies against the explicit recalibrated target, for
/// `instances` random squared-observation problems per `β`.
pub fn etkf_target_check(
    instances: usize,
    n: usize,
    size: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut sampler = GaussianSampler::new(seed);
    let m = n.div_ceil(2);
    let h = FnMeasurement::new(m, lorenz96_measure);
    let r = SymMatrix::identity(m).scale(1e-4);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let e = lorenz_like_ensemble(n, size, &mut sampler)?;
        let z = h.eval(e.member(0).as_view());
        for beta in [0.0, 2.0] {
            let fs = measure_stats(&e, &h)?;
            let sf = innovation_cov(&fs, &r, beta)?;
            let k = kalman_gain(&fs.cross_cov, &sf)?;
            let xa = mean_update(e.mean(), &k, &fs.innovation(&z));
            let rs = measure_stats(&e.recenter(&xa), &h)?;
            let src = innovation_cov(&rs, &r, beta)?;
            let t = car_etkf_transform(
                &fs.z_anoms,
                &rs.z_anoms,
                &r,
                beta,
                &fs.mismatch,
                &rs.mismatch,
            )?;
            let aa = e.anomalies() * t.as_matrix();
            let realized = &aa * aa.transpose() / (size - 1) as f64;
            let target =
                posterior_target_matrix(&e.stats().covariance(), &k, &src.matrix, &rs.cross_cov);
            worst = worst.max(relative_frobenius(&realized, &target));
        }
    }
    Ok(outcome(
        "etkf-recalibrated-target",
        worst <= 1e-8,
        format!("max relative Frobenius error {worst:.3e} (tol 1e-8)"),
    ))
}

/// Perturbation-averaged covariance of the recalibrated stochastic update
/// against the recalibrated target, elementwise within 3 standard errors.
pub fn stochastic_expectation_check(redraws: usize, seed: u64) -> Result<CheckOutcome> {
    let (n, m, size, beta) = (5, 3, 10, 1.5);
    let mut sampler = GaussianSampler::new(seed);
    let e = Ensemble::from_members(&sampler.standard_normal_matrix(n, size))?;
    let h = FnMeasurement::new(m, |x: DVectorView<'_, f64>| {
        DVector::from_vec(vec![x[0] * x[0] + x[1], x[2] * x[3], (x[4] + x[0]).sin()])
    });
    let r = SymMatrix::from_diagonal(&[0.3, 0.2, 0.1]);
    let z = DVector::from_vec(vec![0.5, -0.2, 0.3]);
    let fs = measure_stats(&e, &h)?;
    let k = kalman_gain(&fs.cross_cov, &innovation_cov(&fs, &r, beta)?)?;
    let xa = mean_update(e.mean(), &k, &fs.innovation(&z));
    let rc = e.recenter(&xa);
    let rs = measure_stats(&rc, &h)?;
    let src = innovation_cov(&rs, &r, beta)?;
    let target = posterior_target_matrix(&e.stats().covariance(), &k, &src.matrix, &rs.cross_cov);

    let mut sum = DMatrix::zeros(n, n);
    let mut sum_sq = DMatrix::zeros(n, n);
    let mut worst_mean: f64 = 0.0;
    for _ in 0..redraws {
        let out = car_stochastic_update(&rc, &k, &z, &rs, &r, beta, &xa, &mut sampler)?;
        worst_mean = worst_mean.max((out.members().column_mean() - &xa).amax());
        let cov = out.stats().covariance();
        sum_sq += cov.component_mul(&cov);
        sum += cov;
    }
    let count = redraws as f64;
    let mean = &sum / count;
    let mut worst_z: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let var = (sum_sq[(i, j)] / count - mean[(i, j)].powi(2)) * count / (count - 1.0);
            let se = (var / count).sqrt();
            worst_z = worst_z.max((mean[(i, j)] - target[(i, j)]).abs() / se);
        }
    }
    Ok(outcome(
        "stochastic-recalibrated-expectation",
        worst_z <= 3.0 && worst_mean <= 1e-12,
        format!("max |z| {worst_z:.2} (tol 3), max mean error {worst_mean:.1e} (tol 1e-12)"),
    ))
}

/// Affine measurements: recalibrated and conventional ETKF transforms agree
/// and a 100-step linear run never backs out.
pub fn linear_reduction_check(seed: u64) -> Result<CheckOutcome> {
    let (n, m, size) = (6, 4, 20);
    let mut sampler = GaussianSampler::new(seed);
    let hmat = sampler.standard_normal_matrix(m, n);
    let h = LinearMeasurement::new(hmat.clone()).with_offset(DVector::from_element(m, 0.7));
    let r = SymMatrix::identity(m).scale(0.25);
    let e = Ensemble::from_members(&sampler.standard_normal_matrix(n, size))?;
    let z = DVector::from_fn(m, |_, _| sampler.standard_normal());
    let fs = measure_stats(&e, &h)?;
    let k = kalman_gain(&fs.cross_cov, &innovation_cov(&fs, &r, 0.0)?)?;
    let xa = mean_update(e.mean(), &k, &fs.innovation(&z));
    let rs = measure_stats(&e.recenter(&xa), &h)?;
    let car = car_etkf_transform(
        &fs.z_anoms,
        &rs.z_anoms,
        &r,
        0.0,
        &fs.mismatch,
        &rs.mismatch,
    )?;
    let conv = conventional_etkf_transform(&fs.z_anoms, &r)?;
    let diff = (car.as_matrix() - conv.as_matrix()).norm();

    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.95
        } else if j == (i + 1) % n {
            0.1
        } else {
            0.0
        }
    });
    let q = SymMatrix::identity(n).scale(0.01);
    let a_model = a.clone();
    let dynamics = FnDynamics::new(n, move |x: DVectorView<'_, f64>, _: &[f64]| &a_model * x)
        .with_noise(NoiseFactor::new(&q)?);
    let config = FilterConfig::new(Variant::Etkf, Mode::Car).with_compensation(0.0, 0.9, 0.1);
    let mut filter = Filter::new(config, seed)?;
    let mut truth = DVector::zeros(n);
    let mut ens = Ensemble::from_members(&sampler.standard_normal_matrix(n, size))?;
    let mut rejected = 0;
    for _ in 0..100 {
        truth = &a * &truth + DVector::from_fn(n, |_, _| 0.1 * sampler.standard_normal());
        let zk = &hmat * &truth
            + DVector::from_element(m, 0.7)
            + DVector::from_fn(m, |_, _| 0.5 * sampler.standard_normal());
        let (next, rep) = filter.step(
            &ens,
            &dynamics,
            &[],
            Some(Observation {
                h: &h,
                noise: &r,
                z: &zk,
            }),
        )?;
        rejected += usize::from(!rep.accepted);
        ens = next;
    }
    Ok(outcome(
        "linear-reduction",
        diff <= 1e-10 && rejected == 0,
        format!("transform difference {diff:.2e} (tol 1e-10), {rejected} back-outs in 100 steps"),
    ))
}

/// Mismatch of a quadratic measurement against its closed form
/// `-(N-1)/(2N) tr(ℋ P^f)`.
pub fn quadratic_mismatch_check(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let (n, size) = (4, 12);
    let mut sampler = GaussianSampler::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let g = sampler.standard_normal_matrix(n, n);
        let hess = &g + g.transpose();
        let e = Ensemble::from_members(&sampler.standard_normal_matrix(n, size))?;
        let hq = hess.clone();
        let h = FnMeasurement::new(1, move |x: DVectorView<'_, f64>| {
            DVector::from_element(1, 0.5 * (x.transpose() * &hq * x)[(0, 0)])
        });
        let d = measure_stats(&e, &h)?.mismatch[0];
        let closed =
            -((size - 1) as f64) / (2.0 * size as f64) * (&hess * e.stats().covariance()).trace();
        worst = worst.max((d - closed).abs() / closed.abs());
    }
    Ok(outcome(
        "quadratic-mismatch",
        worst <= 1e-10,
        format!("max relative error {worst:.2e} (tol 1e-10)"),
    ))
}

/// Observed RK4 order on Lorenz-96: least-squares slope of log error
/// against log step over `dt ∈ {0.05, 0.025, 0.0125}`, with errors measured
/// against a `dt/256` reference over a 0.2 horizon and pooled over eight
/// attractor states.
pub fn rk4_order(seed: u64) -> Result<f64> {
    let mut s = GaussianSampler::new(seed);
    let horizon = 0.2;
    let integrate = |x0: &DVector<f64>, dt: f64| -> Result<DVector<f64>> {
        let steps = (horizon / dt).round() as usize;
        let mut x = x0.clone();
        for _ in 0..steps {
            x = rk4_step(x.as_view(), dt, 8.0)?;
        }
        Ok(x)
    };
    let dts = [0.05, 0.025, 0.0125];
    let mut sq = [0.0; 3];
    for _ in 0..8 {
        let mut x0 = DVector::from_fn(40, |_, _| 8.0 + s.standard_normal());
        for _ in 0..200 {
            x0 = rk4_step(x0.as_view(), 0.05, 8.0)?;
        }
        let reference = integrate(&x0, 0.05 / 256.0)?;
        for (acc, dt) in sq.iter_mut().zip(dts) {
            *acc += (integrate(&x0, dt)? - &reference).norm_squared();
        }
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = sq.iter().map(|e| 0.5 * e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(cov / var)
}

pub fn rk4_order_check(seed: u64) -> Result<CheckOutcome> {
    let p = rk4_order(seed)?;
    Ok(outcome(
        "rk4-order",
        p >= 3.9,
        format!("observed order {p:.3} (min 3.9)"),
    ))
}

/// Every check at selftest size.
pub fn run_all(seed: u64) -> Vec<Result<CheckOutcome>> {
    vec![
        etkf_target_check(20, 40, 50, seed),
        stochastic_expectation_check(4000, seed),
        linear_reduction_check(seed),
        quadratic_mismatch_check(100, seed),
        rk4_order_check(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_pass() {
        assert!(etkf_target_check(2, 10, 12, 1).unwrap().passed);
        assert!(linear_reduction_check(2).unwrap().passed);
        assert!(quadratic_mismatch_check(10, 3).unwrap().passed);
        assert!(rk4_order_check(4).unwrap().passed);
    }
}
