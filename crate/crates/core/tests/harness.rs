use std::process::Command;

use nalgebra::{DMatrix, DVector, DVectorView};

use car_enkf::ensemble::Dynamics;
use car_enkf::filter::{FilterConfig, Mode, Variant};
use car_enkf::harness::{
    curve_csv, default_sweep_scales, parse_curve_csv, parse_sweep_csv, run_experiment, run_sweep,
    sweep_csv, Execution, LinePlot,
};
use car_enkf::linalg::{GaussianSampler, SymMatrix};
use car_enkf::measurement::LinearMeasurement;
use car_enkf::models::{Benchmark, Lorenz96, TruthStep, TruthTrajectory};

/// Two-state rotation observed through its first coordinate.
#[derive(Clone)]
struct Rotation {
    sigma: f64,
    filter_r: f64,
    prior: f64,
}

impl Dynamics for Rotation {
    fn state_dim(&self) -> usize {
        2
    }

    fn transition(&self, x: DVectorView<'_, f64>, _input: &[f64]) -> DVector<f64> {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        DVector::from_vec(vec![c * x[0] - s * x[1], s * x[0] + c * x[1]])
    }
}

impl Benchmark for Rotation {
    type Measurement = LinearMeasurement;

    fn name(&self) -> &'static str {
        "rotation"
    }

    fn input(&self, _step: usize) -> Vec<f64> {
        Vec::new()
    }

    fn measurement(&self, _active: &[usize]) -> LinearMeasurement {
        LinearMeasurement::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
    }

    fn measurement_noise(&self, _active: &[usize]) -> SymMatrix {
        SymMatrix::from_diagonal(&[self.filter_r])
    }

    fn prior_std(&self) -> DVector<f64> {
        DVector::from_element(2, self.prior)
    }

    fn ensemble_size(&self) -> usize {
        10
    }

    fn default_steps(&self) -> usize {
        20
    }

    fn metric_coords(&self) -> Vec<usize> {
        vec![0, 1]
    }

    fn with_noise_scale(&self, scale: f64) -> Self {
        Self {
            sigma: self.sigma * scale,
            filter_r: self.filter_r * scale * scale,
            ..self.clone()
        }
    }

    fn make_truth(
        &self,
        sampler: &mut GaussianSampler,
        steps: usize,
    ) -> car_enkf::Result<TruthTrajectory> {
        let initial = DVector::from_vec(vec![1.0, 0.0]);
        let mut x = initial.clone();
        let steps = (0..steps)
            .map(|_| {
                x = self.transition(x.as_view(), &[]);
                let z = DVector::from_element(1, x[0] + self.sigma * sampler.standard_normal());
                TruthStep {
                    state: x.clone(),
                    active: vec![0],
                    z,
                }
            })
            .collect();
        Ok(TruthTrajectory { initial, steps })
    }
}

fn all_filters() -> Vec<FilterConfig> {
    Variant::ALL
        .iter()
        .flat_map(|v| Mode::ALL.iter().map(move |m| FilterConfig::new(*v, *m)))
        .collect()
}

fn small_lorenz() -> Lorenz96 {
    Lorenz96 {
        spin_up: 100,
        ..Lorenz96::default()
    }
}

#[test]
fn same_seed_gives_identical_csv_bytes() {
    let bench = small_lorenz();
    let filters = all_filters();
    let a = run_experiment(&bench, &filters, 1, 17, 30, Execution::Serial).unwrap();
    let b = run_experiment(&bench, &filters, 1, 17, 30, Execution::Serial).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            curve_csv(&x.rmse).into_bytes(),
            curve_csv(&y.rmse).into_bytes()
        );
    }
}

#[test]
fn parallel_matches_serial() {
    let bench = small_lorenz();
    let filters = all_filters();
    let serial = run_experiment(&bench, &filters, 6, 5, 25, Execution::Serial).unwrap();
    let parallel = run_experiment(&bench, &filters, 6, 5, 25, Execution::Parallel).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn different_seeds_differ() {
    let bench = small_lorenz();
    let f = [FilterConfig::new(Variant::Etkf, Mode::Car)];
    let a = run_experiment(&bench, &f, 2, 1, 15, Execution::Serial).unwrap();
    let b = run_experiment(&bench, &f, 2, 2, 15, Execution::Serial).unwrap();
    assert_ne!(a[0].rmse, b[0].rmse);
}

#[test]
fn noiseless_perfect_start_stays_exact() {
    let bench = Rotation {
        sigma: 0.0,
        filter_r: 1e-6,
        prior: 0.0,
    };
    let res = run_experiment(&bench, &all_filters(), 3, 0, 30, Execution::Serial).unwrap();
    for r in &res {
        assert_eq!(r.diverged_runs, 0);
        assert!(
            r.rmse.iter().all(|v| *v <= 1e-12),
            "{}: {:?}",
            r.filter.label(),
            r.rmse
        );
    }
}

#[test]
fn rotation_filters_track_the_truth() {
    let bench = Rotation {
        sigma: 0.05,
        filter_r: 0.0025,
        prior: 0.5,
    };
    let res = run_experiment(&bench, &all_filters(), 20, 3, 40, Execution::Parallel).unwrap();
    for r in &res {
        assert_eq!(r.diverged_runs, 0);
        assert!(
            r.time_avg_rmse < 0.1,
            "{}: {}",
            r.filter.label(),
            r.time_avg_rmse
        );
        assert!(r.rmse.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn sweep_has_one_row_per_scale_and_filter() {
    let bench = Rotation {
        sigma: 0.05,
        filter_r: 0.0025,
        prior: 0.5,
    };
    let filters = [
        FilterConfig::new(Variant::Etkf, Mode::Conventional),
        FilterConfig::new(Variant::Etkf, Mode::Car),
    ];
    let mut scales = default_sweep_scales();
    scales.push(scales[3]);
    let rows = run_sweep(&bench, &scales, &filters, 2, 9, 15, Execution::Serial).unwrap();
    assert_eq!(rows.len(), 13 * 2);
    assert!(rows.windows(2).all(|w| w[0].scale <= w[1].scale));

    let text = sweep_csv(&rows);
    assert_eq!(text.lines().count(), 27);
    let parsed = parse_sweep_csv(&text).unwrap();
    for (row, rec) in rows.iter().zip(&parsed) {
        assert_eq!(row.scale.to_bits(), rec.0.to_bits());
        assert_eq!(rec.1, row.result.filter.variant.name());
        assert_eq!(rec.2, row.result.filter.mode.name());
        assert_eq!(row.result.time_avg_rmse.to_bits(), rec.3.to_bits());
        assert_eq!(rec.4, row.result.diverged_runs);
    }

    let mut plot = LinePlot::new("sweep", "s", "rmse", true);
    for f in &filters {
        plot.add(
            &f.label(),
            rows.iter()
                .filter(|r| r.result.filter == *f)
                .map(|r| (r.scale, r.result.time_avg_rmse))
                .collect(),
        );
    }
    let ax = plot.axes().unwrap();
    assert!((ax.x_domain.0 - 0.1).abs() < 1e-12 && (ax.x_domain.1 - 100.0).abs() < 1e-9);
    let svg = plot.render().unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">etkf-car<"));
}

#[test]
fn curve_round_trip_through_files() {
    let bench = small_lorenz();
    let res = run_experiment(
        &bench,
        &[FilterConfig::new(Variant::Etkf, Mode::Car)],
        2,
        4,
        50,
        Execution::Serial,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/curve.csv");
    car_enkf::harness::write_text(&path, &curve_csv(&res[0].rmse)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 51);
    let back = parse_curve_csv(&text).unwrap();
    assert!(back
        .iter()
        .zip(&res[0].rmse)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_car-enkf"));
    c.env("RUST_LOG", "error");
    c
}

#[test]
fn cli_config_errors_exit_with_one() {
    let out = cli().args(["curve", "--runs", "zero"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = cli().args(["curve", "--runs", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = cli().args(["curve", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = cli()
        .args(["sweep", "--noise-scale", "1,-2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_curve_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "benchmark = lorenz96\nfilter = etkf\nmode = conventional, car\nruns = 2\nsteps = 15\nseed = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = cli()
        .args([
            "curve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--strict",
            "--serial",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for name in [
        "curve_lorenz96_etkf-conventional.csv",
        "curve_lorenz96_etkf-car.csv",
        "beta_lorenz96_etkf-car.csv",
        "curve_lorenz96.svg",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let text = std::fs::read_to_string(out_dir.join("curve_lorenz96_etkf-car.csv")).unwrap();
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn cli_selftest_passes() {
    let out = cli().args(["selftest", "--seed", "11"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().count() >= 5);
    assert!(!stdout.contains("[FAIL]"));
}
