//! Monte-Carlo execution and RMSE aggregation.

use log::{debug, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::{Filter, FilterConfig, Observation, StepReport};
use crate::linalg::{GaussianSampler, Stream};
use crate::models::{make_initial_ensemble, Benchmark, TruthTrajectory};

/// First step (1-based) included in the time-averaged RMSE.
pub const AVERAGE_FROM_STEP: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    /// Runs distributed over the rayon pool. Falls back to serial when the
    /// `parallel` feature is off.
    #[default]
    Parallel,
}

/// Per-run seed: `base_seed ⊕ run_index`.
pub fn run_seed(base_seed: u64, run_index: usize) -> u64 {
    base_seed ^ run_index as u64
}

/// One filter on one Monte-Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    /// Per-step sum of squared errors over the metric coordinates.
    pub sq_err: Vec<f64>,
    pub reports: Vec<StepReport>,
    /// Set when the run hit a numerical failure; such runs are excluded from RMSE.
    pub diverged: Option<Error>,
}

impl RunRecord {
    pub fn is_diverged(&self) -> bool {
        self.diverged.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub filter: FilterConfig,
    /// `sqrt(mean over healthy runs and metric coordinates of squared error)` per step.
    pub rmse: Vec<f64>,
    pub time_avg_rmse: f64,
    /// Mean `β` after each step over healthy runs.
    pub beta_mean: Vec<f64>,
    /// Fraction of recalibrated steps that were accepted.
    pub acceptance_rate: f64,
    pub runs: usize,
    pub diverged_runs: usize,
}

/// Mean of `curve` over steps `AVERAGE_FROM_STEP..=len` (1-based). NaN if
/// the curve is too short.
pub fn time_average(curve: &[f64]) -> f64 {
    let tail = curve.get(AVERAGE_FROM_STEP - 1..).unwrap_or(&[]);
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn squared_error(estimate: &DVector<f64>, truth: &DVector<f64>, coords: &[usize]) -> f64 {
    coords
        .iter()
        .map(|&i| (estimate[i] - truth[i]).powi(2))
        .sum()
}

/// Runs one filter over a prepared truth trajectory.
pub fn run_filter<B: Benchmark>(
    bench: &B,
    truth: &TruthTrajectory,
    config: FilterConfig,
    seed: u64,
    run_index: usize,
) -> RunRecord {
    let coords = bench.metric_coords();
    let mut record = RunRecord {
        run_index,
        sq_err: Vec::with_capacity(truth.steps.len()),
        reports: Vec::with_capacity(truth.steps.len()),
        diverged: None,
    };
    let result = (|| -> Result<()> {
        let mut init = GaussianSampler::derived(seed, Stream::InitialEnsemble);
        let mut ens = make_initial_ensemble(
            &truth.initial,
            &bench.prior_std(),
            bench.ensemble_size(),
            &mut init,
        )?;
        let mut filter = Filter::new(config, seed)?;
        for (k, step) in truth.steps.iter().enumerate() {
            let h = bench.measurement(&step.active);
            let noise = bench.measurement_noise(&step.active);
            let obs = Observation {
                h: &h,
                noise: &noise,
                z: &step.z,
            };
            let (next, report) = filter.step(&ens, bench, &bench.input(k), Some(obs))?;
            record
                .sq_err
                .push(squared_error(next.mean(), &step.state, &coords));
            record.reports.push(report);
            ens = next;
        }
        Ok(())
    })();
    if let Err(e) = result {
        debug!("{} run {run_index} diverged: {e}", config.label());
        record.diverged = Some(e);
    }
    record
}

/// All filters on one run, sharing the truth and the initial ensemble draw.
pub fn run_single<B: Benchmark>(
    bench: &B,
    filters: &[FilterConfig],
    base_seed: u64,
    run_index: usize,
    steps: usize,
) -> Vec<RunRecord> {
    let seed = run_seed(base_seed, run_index);
    let mut truth_sampler = GaussianSampler::derived(seed, Stream::Truth);
    match bench.make_truth(&mut truth_sampler, steps) {
        Ok(truth) => filters
            .iter()
            .map(|cfg| run_filter(bench, &truth, *cfg, seed, run_index))
            .collect(),
        Err(e) => filters
            .iter()
            .map(|_| RunRecord {
                run_index,
                sq_err: Vec::new(),
                reports: Vec::new(),
                diverged: Some(e.clone()),
            })
            .collect(),
    }
}

fn execute<B: Benchmark>(
    bench: &B,
    filters: &[FilterConfig],
    runs: usize,
    base_seed: u64,
    steps: usize,
    exec: Execution,
) -> Vec<Vec<RunRecord>> {
    let one = |r: usize| run_single(bench, filters, base_seed, r, steps);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..runs).into_par_iter().map(one).collect()
        }
        _ => (0..runs).map(one).collect(),
    }
}

/// Aggregates the records of one filter. Records must be in run order for
/// bit-reproducible sums.
pub fn aggregate(
    filter: FilterConfig,
    records: &[RunRecord],
    metric_dim: usize,
    steps: usize,
) -> AggregateResult {
    let healthy: Vec<&RunRecord> = records.iter().filter(|r| !r.is_diverged()).collect();
    let diverged_runs = records.len() - healthy.len();
    let mut rmse = vec![f64::NAN; steps];
    let mut beta_mean = vec![f64::NAN; steps];
    if !healthy.is_empty() {
        let denom = (healthy.len() * metric_dim) as f64;
        for k in 0..steps {
            let sse: f64 = healthy.iter().map(|r| r.sq_err[k]).sum();
            rmse[k] = (sse / denom).sqrt();
            beta_mean[k] =
                healthy.iter().map(|r| r.reports[k].beta_after).sum::<f64>() / healthy.len() as f64;
        }
    }
    let (recal, accepted) = healthy
        .iter()
        .flat_map(|r| r.reports.iter())
        .filter(|rep| rep.recalibrated)
        .fold((0usize, 0usize), |(n, a), rep| {
            (n + 1, a + rep.accepted as usize)
        });
    AggregateResult {
        filter,
        time_avg_rmse: time_average(&rmse),
        rmse,
        beta_mean,
        acceptance_rate: if recal == 0 {
            1.0
        } else {
            accepted as f64 / recal as f64
        },
        runs: records.len(),
        diverged_runs,
    }
}

/// Runs `runs` Monte-Carlo repetitions of every filter and aggregates per filter.
pub fn run_experiment<B: Benchmark>(
    bench: &B,
    filters: &[FilterConfig],
    runs: usize,
    base_seed: u64,
    steps: usize,
    exec: Execution,
) -> Result<Vec<AggregateResult>> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    if filters.is_empty() {
        return Err(Error::InvalidConfig("no filters selected".into()));
    }
    for f in filters {
        f.validate()?;
    }
    let per_run = execute(bench, filters, runs, base_seed, steps, exec);
    let metric_dim = bench.metric_coords().len();
    Ok(filters
        .iter()
        .enumerate()
        .map(|(j, cfg)| {
            let records: Vec<RunRecord> = per_run.iter().map(|r| r[j].clone()).collect();
            let agg = aggregate(*cfg, &records, metric_dim, steps);
            if agg.diverged_runs > 0 {
                warn!(
                    "{}: {} of {} runs diverged",
                    cfg.label(),
                    agg.diverged_runs,
                    runs
                );
            }
            agg
        })
        .collect())
}

/// One cell of a noise sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    pub result: AggregateResult,
}

/// Validates, sorts and deduplicates a scale list.
pub fn normalize_scales(scales: &[f64]) -> Result<Vec<f64>> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig("sweep scale list is empty".into()));
    }
    if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "noise scale must be positive, got {bad}"
        )));
    }
    let mut out = scales.to_vec();
    out.sort_by(f64::total_cmp);
    let before = out.len();
    out.dedup();
    if out.len() != before {
        warn!("dropped {} duplicate noise scales", before - out.len());
    }
    Ok(out)
}

/// `10^(-1 + 0.25 i)`, `i = 0..=12`: thirteen scales from 0.1 to 100.
pub fn default_sweep_scales() -> Vec<f64> {
    (0..=12)
        .map(|i| 10f64.powf(-1.0 + 0.25 * i as f64))
        .collect()
}

/// One experiment per noise scale. Rows are ordered by scale, then by filter.
pub fn run_sweep<B: Benchmark>(
    bench: &B,
    scales: &[f64],
    filters: &[FilterConfig],
    runs: usize,
    base_seed: u64,
    steps: usize,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let scales = normalize_scales(scales)?;
    let mut rows = Vec::with_capacity(scales.len() * filters.len());
    for s in scales {
        let scaled = bench.with_noise_scale(s);
        for result in run_experiment(&scaled, filters, runs, base_seed, steps, exec)? {
            rows.push(SweepRow { scale: s, result });
        }
    }
    Ok(rows)
}
