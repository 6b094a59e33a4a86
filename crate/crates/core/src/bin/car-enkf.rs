use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;

use car_enkf::checks;
use car_enkf::filter::{FilterConfig, Mode};
use car_enkf::harness::config::{DEFAULT_CURVE_RUNS, DEFAULT_SWEEP_RUNS};
use car_enkf::harness::{
    curve_csv, default_sweep_scales, run_experiment, run_sweep, series_csv, sweep_csv, write_text,
    AggregateResult, BenchmarkKind, Execution, ExperimentConfig, LinePlot, SweepRow,
};
use car_enkf::models::{Benchmark, Lorenz96, Slam};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "car-enkf",
    version,
    about = "Monte-Carlo experiments for recalibrated ensemble Kalman filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment file with `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// slam or lorenz96.
    #[arg(long, global = true)]
    benchmark: Option<String>,
    #[arg(long, global = true)]
    runs: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Single value or comma-separated list.
    #[arg(long = "noise-scale", global = true)]
    noise_scale: Option<String>,
    /// stochastic, etkf, a comma list, or all.
    #[arg(long, global = true)]
    filter: Option<String>,
    /// conventional, i1, car, a comma list, or all.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    steps: Option<String>,
    /// Exit with status 2 if any run diverged.
    #[arg(long, global = true)]
    strict: bool,
    /// Run Monte-Carlo repetitions on one thread.
    #[arg(long, global = true)]
    serial: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// RMSE-versus-time curves at one noise level.
    Curve,
    /// Time-averaged RMSE over a list of noise scales.
    Sweep,
    /// Exact and statistical checks of the analysis kernels.
    Selftest,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentConfig::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    let overrides = [
        ("benchmark", &cli.benchmark),
        ("runs", &cli.runs),
        ("seed", &cli.seed),
        ("noise_scale", &cli.noise_scale),
        ("filter", &cli.filter),
        ("mode", &cli.mode),
        ("out", &cli.out),
        ("steps", &cli.steps),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| e.to_string())?;
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

struct Settings<'a> {
    cfg: &'a ExperimentConfig,
    filters: Vec<FilterConfig>,
    exec: Execution,
}

fn report(results: &[AggregateResult]) {
    println!(
        "{:<24} {:>14} {:>10} {:>9}",
        "filter", "rmse_avg", "accepted", "diverged"
    );
    for r in results {
        println!(
            "{:<24} {:>14.6e} {:>9.1}% {:>5}/{}",
            r.filter.label(),
            r.time_avg_rmse,
            100.0 * r.acceptance_rate,
            r.diverged_runs,
            r.runs
        );
    }
}

fn curve<B: Benchmark>(bench: &B, s: &Settings<'_>) -> Result<usize, String> {
    let scale = match s.cfg.noise_scales.as_slice() {
        [] => 1.0,
        [one] => *one,
        _ => return Err("curve takes a single noise scale".into()),
    };
    let bench = bench.with_noise_scale(scale);
    let runs = s.cfg.runs.unwrap_or(DEFAULT_CURVE_RUNS);
    let steps = s.cfg.steps.unwrap_or(bench.default_steps());
    info!(
        "{}: {runs} runs x {steps} steps at noise scale {scale}",
        bench.name()
    );
    let results = run_experiment(&bench, &s.filters, runs, s.cfg.base_seed, steps, s.exec)
        .map_err(|e| e.to_string())?;
    report(&results);

    let out = &s.cfg.out_dir;
    let name = bench.name();
    let mut plot = LinePlot::new(
        &format!("{name}, noise scale {scale}"),
        "step",
        "RMSE",
        false,
    );
    for r in &results {
        let label = r.filter.label();
        write_out(
            &out.join(format!("curve_{name}_{label}.csv")),
            &curve_csv(&r.rmse),
        )?;
        if r.filter.mode == Mode::Car {
            write_out(
                &out.join(format!("beta_{name}_{label}.csv")),
                &series_csv("beta", &r.beta_mean),
            )?;
        }
        plot.add(
            &label,
            r.rmse
                .iter()
                .enumerate()
                .map(|(k, v)| ((k + 1) as f64, *v))
                .collect(),
        );
    }
    plot.write(&out.join(format!("curve_{name}.svg")))
        .map_err(|e| e.to_string())?;
    Ok(results.iter().map(|r| r.diverged_runs).sum())
}

fn sweep<B: Benchmark>(bench: &B, s: &Settings<'_>) -> Result<usize, String> {
    let scales = if s.cfg.noise_scales.is_empty() {
        default_sweep_scales()
    } else {
        s.cfg.noise_scales.clone()
    };
    let runs = s.cfg.runs.unwrap_or(DEFAULT_SWEEP_RUNS);
    let steps = s.cfg.steps.unwrap_or(bench.default_steps());
    info!(
        "{}: sweep over {} scales, {runs} runs each",
        bench.name(),
        scales.len()
    );
    let rows = run_sweep(
        bench,
        &scales,
        &s.filters,
        runs,
        s.cfg.base_seed,
        steps,
        s.exec,
    )
    .map_err(|e| e.to_string())?;
    println!(
        "{:>10} {:<24} {:>14} {:>9}",
        "scale", "filter", "rmse_avg", "diverged"
    );
    for r in &rows {
        println!(
            "{:>10.4} {:<24} {:>14.6e} {:>9}",
            r.scale,
            r.result.filter.label(),
            r.result.time_avg_rmse,
            r.result.diverged_runs
        );
    }
    let name = bench.name();
    let out = &s.cfg.out_dir;
    write_out(&out.join(format!("sweep_{name}.csv")), &sweep_csv(&rows))?;
    let mut plot = LinePlot::new(
        &format!("{name} noise sweep"),
        "noise scale s",
        "time-averaged RMSE",
        true,
    );
    for f in &s.filters {
        let pts = rows
            .iter()
            .filter(|r: &&SweepRow| r.result.filter == *f)
            .map(|r| (r.scale, r.result.time_avg_rmse))
            .collect();
        plot.add(&f.label(), pts);
    }
    plot.write(&out.join(format!("sweep_{name}.svg")))
        .map_err(|e| e.to_string())?;
    Ok(rows.iter().map(|r| r.result.diverged_runs).sum())
}

fn write_out(path: &Path, text: &str) -> Result<(), String> {
    write_text(path, text).map_err(|e| e.to_string())
}

fn selftest(seed: u64) -> ExitCode {
    let mut ok = true;
    for check in checks::run_all(seed) {
        match check {
            Ok(c) => {
                ok &= c.passed;
                println!("{c}");
            }
            Err(e) => {
                ok = false;
                println!("[FAIL] error: {e}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SELFTEST)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.command == Command::Selftest {
        return selftest(cfg.base_seed);
    }
    let settings = Settings {
        cfg: &cfg,
        filters: cfg.filters(),
        exec: if cli.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        },
    };
    let started = Instant::now();
    let outcome = match (cli.command, cfg.benchmark) {
        (Command::Curve, BenchmarkKind::Slam) => curve(&slam(&cfg), &settings),
        (Command::Curve, BenchmarkKind::Lorenz96) => curve(&lorenz(&cfg), &settings),
        (Command::Sweep, BenchmarkKind::Slam) => sweep(&slam(&cfg), &settings),
        (Command::Sweep, BenchmarkKind::Lorenz96) => sweep(&lorenz(&cfg), &settings),
        (Command::Selftest, _) => unreachable!(),
    };
    match outcome {
        Ok(diverged) => {
            info!(
                "done in {:.1}s; outputs in {}",
                started.elapsed().as_secs_f64(),
                cfg.out_dir.display()
            );
            if diverged > 0 && cli.strict {
                eprintln!("{diverged} diverged runs");
                ExitCode::from(EXIT_DIVERGED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn slam(cfg: &ExperimentConfig) -> Slam {
    let mut s = Slam::default();
    if let Some(n) = cfg.ensemble_size {
        s.ensemble_size = n;
    }
    s
}

fn lorenz(cfg: &ExperimentConfig) -> Lorenz96 {
    let mut l = Lorenz96::default();
    if let Some(n) = cfg.ensemble_size {
        l.ensemble_size = n;
    }
    l
}
