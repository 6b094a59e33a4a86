//! Stochastic EnKF and ETKF, each in conventional, recalibrated
//! (Improvement 1) and covariance-adaptive recalibrated (CAR) form.
//!
//! One assimilation cycle is
//!
//! 1. propagate every member and inflate the anomalies by `ρ` (skipped in CAR mode),
//! 2. compute forecast measurement statistics, the (compensated) innovation
//!    covariance `S̃f`, the gain `K = P_xz S̃f⁻¹` and the analysis mean,
//! 3. in recalibrating modes, re-evaluate the measurement statistics on the
//!    forecast anomalies recentered at the analysis mean, form the trace of
//!    the recalibrated posterior target and back out to the forecast when it
//!    exceeds the forecast trace,
//! 4. build the analysis anomalies with the variant-specific rule,
//! 5. in CAR mode, feed the NIS of the forecast innovation to the `β` controller.

mod compensation;
mod config;
mod update;

pub use compensation::{beta_update, nis, CompensationState};
pub use config::{FilterConfig, Mode, Variant};
pub use update::{
    backout_decide, car_etkf_transform, car_stochastic_update, conventional_etkf_transform,
    conventional_stochastic_update, mean_update, posterior_target_matrix, posterior_trace,
    PosteriorTrace,
};

use nalgebra::DVector;

use crate::ensemble::{Dynamics, Ensemble};
use crate::error::{Error, Result};
use crate::linalg::{GaussianSampler, Stream, SymMatrix};
use crate::measurement::{innovation_cov, kalman_gain, measure_stats, MeasurementFn};

/// Measurement available at one step.
#[derive(Clone, Copy)]
pub struct Observation<'a> {
    pub h: &'a dyn MeasurementFn,
    pub noise: &'a SymMatrix,
    pub z: &'a DVector<f64>,
}

/// Diagnostics of one assimilation cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Whether the candidate analysis was kept (always true in conventional mode).
    pub accepted: bool,
    /// Whether the recalibration branch ran.
    pub recalibrated: bool,
    pub trace_forecast: f64,
    /// Trace of the posterior target (recalibrated in I1/CAR modes).
    pub trace_target: f64,
    pub nis: Option<f64>,
    pub beta_used: f64,
    pub beta_after: f64,
    /// Number of scalar measurements assimilated.
    pub m: usize,
}

/// One filter instance: configuration, compensation state and its own
/// random streams.
#[derive(Debug, Clone)]
pub struct Filter {
    config: FilterConfig,
    comp: CompensationState,
    process: GaussianSampler,
    perturbation: GaussianSampler,
}

impl Filter {
    /// Filter whose process-noise and perturbation streams derive from `run_seed`.
    pub fn new(config: FilterConfig, run_seed: u64) -> Result<Self> {
        Self::with_samplers(
            config,
            GaussianSampler::derived(run_seed, Stream::ProcessNoise),
            GaussianSampler::derived(run_seed, Stream::Perturbation),
        )
    }

    pub fn with_samplers(
        config: FilterConfig,
        process: GaussianSampler,
        perturbation: GaussianSampler,
    ) -> Result<Self> {
        config.validate()?;
        let beta0 = match config.mode {
            Mode::Car => config.beta0,
            _ => 0.0,
        };
        Ok(Self {
            config,
            comp: CompensationState::new(beta0),
            process,
            perturbation,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn compensation(&self) -> &CompensationState {
        &self.comp
    }

    /// Full cycle: predict, inflate, and assimilate `obs` if present.
    pub fn step(
        &mut self,
        previous: &Ensemble,
        dynamics: &dyn Dynamics,
        input: &[f64],
        obs: Option<Observation<'_>>,
    ) -> Result<(Ensemble, StepReport)> {
        let forecast = previous
            .propagate(dynamics, input, &mut self.process)?
            .inflate(self.config.rho())?;
        match obs {
            Some(o) if o.h.dim() > 0 => self.analyze(&forecast, o),
            _ => {
                let trace = forecast.covariance_trace();
                let report = StepReport {
                    accepted: true,
                    recalibrated: false,
                    trace_forecast: trace,
                    trace_target: trace,
                    nis: None,
                    beta_used: self.comp.beta,
                    beta_after: self.comp.beta,
                    m: 0,
                };
                Ok((forecast, report))
            }
        }
    }

    /// Measurement update of an already inflated forecast ensemble.
    pub fn analyze(
        &mut self,
        forecast: &Ensemble,
        obs: Observation<'_>,
    ) -> Result<(Ensemble, StepReport)> {
        let cfg = self.config;
        if obs.z.len() != obs.h.dim() {
            return Err(Error::DimensionMismatch {
                expected: obs.h.dim(),
                actual: obs.z.len(),
            });
        }
        let beta = match cfg.mode {
            Mode::Car => self.comp.beta,
            _ => 0.0,
        };

        let fs = measure_stats(forecast, obs.h)?;
        let s_f = innovation_cov(&fs, obs.noise, beta)?;
        let gain = kalman_gain(&fs.cross_cov, &s_f)?;
        let innovation = fs.innovation(obs.z);
        let analysis_mean = mean_update(forecast.mean(), &gain, &innovation);

        let (analysis, accepted, trace) = if cfg.mode.recalibrates() {
            let recentered = forecast.recenter(&analysis_mean);
            let rs = measure_stats(&recentered, obs.h)?;
            let s_rc = innovation_cov(&rs, obs.noise, beta)?;
            let trace = posterior_trace(forecast.anomalies(), &gain, &s_rc.matrix, &rs.cross_cov);
            let accepted = backout_decide(trace.target, trace.forecast);
            let analysis = if !accepted {
                forecast.clone()
            } else {
                match cfg.variant {
                    Variant::Stochastic => car_stochastic_update(
                        &recentered,
                        &gain,
                        obs.z,
                        &rs,
                        obs.noise,
                        beta,
                        &analysis_mean,
                        &mut self.perturbation,
                    )?,
                    Variant::Etkf => {
                        let t = car_etkf_transform(
                            &fs.z_anoms,
                            &rs.z_anoms,
                            obs.noise,
                            beta,
                            &fs.mismatch,
                            &rs.mismatch,
                        )?;
                        Ensemble::from_mean_and_anomalies(
                            analysis_mean,
                            forecast.anomalies() * t.as_matrix(),
                        )?
                    }
                }
            };
            (analysis, accepted, trace)
        } else {
            // conventional target P^f - K S Kᵀ, for diagnostics only
            let trace = posterior_trace(forecast.anomalies(), &gain, &s_f.matrix, &fs.cross_cov);
            let analysis = match cfg.variant {
                Variant::Stochastic => conventional_stochastic_update(
                    forecast,
                    &gain,
                    obs.z,
                    &fs,
                    obs.noise,
                    &mut self.perturbation,
                )?,
                Variant::Etkf => {
                    let t = conventional_etkf_transform(&fs.z_anoms, obs.noise)?;
                    Ensemble::from_mean_and_anomalies(
                        analysis_mean,
                        forecast.anomalies() * t.as_matrix(),
                    )?
                }
            };
            (analysis, true, trace)
        };

        let eps = match cfg.mode {
            Mode::Car => {
                let (next, eps) = beta_update(&self.comp, &innovation, &s_f.matrix, &cfg)?;
                self.comp = next;
                eps
            }
            _ => nis(&innovation, &s_f.matrix)?,
        };

        Ok((
            analysis,
            StepReport {
                accepted,
                recalibrated: cfg.mode.recalibrates(),
                trace_forecast: trace.forecast,
                trace_target: trace.target,
                nis: Some(eps),
                beta_used: beta,
                beta_after: self.comp.beta,
                m: obs.h.dim(),
            },
        ))
    }
}
