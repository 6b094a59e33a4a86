//! Feature-based 2-D SLAM with known correspondence.
//!
//! State layout: `[p_x, p_y, θ, ℓ₁ₓ, ℓ₁ᵧ, …, ℓ_Mₓ, ℓ_Mᵧ]`. Landmarks are
//! static; the robot drives a closed circular walk at constant speed and
//! turn rate. Heading is carried unwrapped; only bearings are wrapped.

use std::f64::consts::PI;

use nalgebra::{DVector, DVectorView};

use super::{Benchmark, TruthStep, TruthTrajectory};
use crate::ensemble::Dynamics;
use crate::error::Result;
use crate::linalg::{wrap_angle, GaussianSampler, NoiseFactor, SymMatrix};
use crate::measurement::MeasurementFn;

const POSE_DIM: usize = 3;

/// Range and bearing to each listed landmark, stacked in the given order.
pub fn slam_measure(x: DVectorView<'_, f64>, landmarks: &[usize]) -> DVector<f64> {
    let (px, py, theta) = (x[0], x[1], x[2]);
    let mut z = DVector::zeros(2 * landmarks.len());
    for (k, &j) in landmarks.iter().enumerate() {
        let dx = x[POSE_DIM + 2 * j] - px;
        let dy = x[POSE_DIM + 2 * j + 1] - py;
        z[2 * k] = dx.hypot(dy);
        z[2 * k + 1] = wrap_angle(dy.atan2(dx) - theta);
    }
    z
}

/// Range-bearing measurement of a fixed set of landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct SlamObservation {
    landmarks: Vec<usize>,
}

impl SlamObservation {
    pub fn new(landmarks: Vec<usize>) -> Self {
        Self { landmarks }
    }

    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }
}

impl MeasurementFn for SlamObservation {
    fn dim(&self) -> usize {
        2 * self.landmarks.len()
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        slam_measure(x, &self.landmarks)
    }

    fn is_angular(&self, component: usize) -> bool {
        component % 2 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slam {
    pub landmarks: usize,
    pub range_max: f64,
    pub dt: f64,
    /// Steps per revolution.
    pub period: usize,
    pub speed: f64,
    pub pose_noise_std: [f64; 3],
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    pub half_width: f64,
    pub pose_prior_std: [f64; 3],
    pub landmark_prior_std: f64,
    pub steps: usize,
    pub ensemble_size: usize,
    process_noise: NoiseFactor,
}

impl Default for Slam {
    fn default() -> Self {
        Self::new(150)
    }
}

impl Slam {
    pub fn new(landmarks: usize) -> Self {
        let pose_noise_std = [0.1, 0.1, 0.01];
        Self {
            landmarks,
            range_max: 30.0,
            dt: 1.0,
            period: 50,
            speed: 8.0,
            pose_noise_std,
            sigma_range: 0.1,
            sigma_bearing: 0.01,
            half_width: 90.0,
            pose_prior_std: [2.0, 2.0, 15f64.to_radians()],
            landmark_prior_std: 8.0,
            steps: 50,
            ensemble_size: 100,
            process_noise: Self::pose_noise(landmarks, pose_noise_std),
        }
    }

    fn pose_noise(landmarks: usize, std: [f64; 3]) -> NoiseFactor {
        let mut s = DVector::zeros(POSE_DIM + 2 * landmarks);
        for (i, v) in std.iter().enumerate() {
            s[i] = *v;
        }
        NoiseFactor::Diagonal(s)
    }

    pub fn with_pose_noise(mut self, std: [f64; 3]) -> Self {
        self.pose_noise_std = std;
        self.process_noise = Self::pose_noise(self.landmarks, std);
        self
    }

    pub fn turn_rate(&self) -> f64 {
        2.0 * PI / self.period as f64
    }

    /// Noise-free pose update.
    pub fn move_pose(&self, x: &mut DVector<f64>, speed: f64, turn: f64) {
        let heading = x[2] + turn;
        x[0] += self.dt * speed * heading.cos();
        x[1] += self.dt * speed * heading.sin();
        x[2] += turn;
    }

    /// Truth transition including pose noise drawn from `sampler`.
    pub fn slam_dynamics(&self, x: &DVector<f64>, sampler: &mut GaussianSampler) -> DVector<f64> {
        let mut next = x.clone();
        self.move_pose(&mut next, self.speed, self.turn_rate());
        for i in 0..POSE_DIM {
            next[i] += self.pose_noise_std[i] * sampler.standard_normal();
        }
        next
    }

    /// Start pose that centers the closed walk on the world origin.
    pub fn start_pose(&self) -> [f64; 3] {
        let mut p = DVector::zeros(POSE_DIM);
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..self.period {
            sx += p[0];
            sy += p[1];
            self.move_pose(&mut p, self.speed, self.turn_rate());
        }
        let k = self.period as f64;
        [-sx / k, -sy / k, 0.0]
    }

    /// Landmarks whose true range from the pose in `x` is at most `range_max`.
    pub fn visible(&self, x: &DVector<f64>) -> Vec<usize> {
        (0..self.landmarks)
            .filter(|&j| {
                let dx = x[POSE_DIM + 2 * j] - x[0];
                let dy = x[POSE_DIM + 2 * j + 1] - x[1];
                dx.hypot(dy) <= self.range_max
            })
            .collect()
    }
}

impl Dynamics for Slam {
    fn state_dim(&self) -> usize {
        POSE_DIM + 2 * self.landmarks
    }

    /// `input = [v, α]`.
    fn transition(&self, x: DVectorView<'_, f64>, input: &[f64]) -> DVector<f64> {
        let mut next = x.into_owned();
        self.move_pose(&mut next, input[0], input[1]);
        next
    }

    fn process_noise(&self) -> Option<&NoiseFactor> {
        Some(&self.process_noise)
    }
}

impl Benchmark for Slam {
    type Measurement = SlamObservation;

    fn name(&self) -> &'static str {
        "slam"
    }

    fn input(&self, _step: usize) -> Vec<f64> {
        vec![self.speed, self.turn_rate()]
    }

    fn measurement(&self, active: &[usize]) -> SlamObservation {
        SlamObservation::new(active.to_vec())
    }

    fn measurement_noise(&self, active: &[usize]) -> SymMatrix {
        let unit = [self.sigma_range.powi(2), self.sigma_bearing.powi(2)];
        let diag: Vec<f64> = active.iter().flat_map(|_| unit).collect();
        SymMatrix::from_diagonal(&diag)
    }

    fn prior_std(&self) -> DVector<f64> {
        let mut s = DVector::from_element(self.state_dim(), self.landmark_prior_std);
        for i in 0..POSE_DIM {
            s[i] = self.pose_prior_std[i];
        }
        s
    }

    fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    fn default_steps(&self) -> usize {
        self.steps
    }

    /// Robot position and all landmark coordinates; heading excluded.
    fn metric_coords(&self) -> Vec<usize> {
        [0, 1]
            .into_iter()
            .chain(POSE_DIM..self.state_dim())
            .collect()
    }

    fn with_noise_scale(&self, scale: f64) -> Self {
        Self {
            sigma_range: 0.1 * scale,
            sigma_bearing: 0.01 * scale,
            ..self.clone()
        }
    }

    fn make_truth(&self, sampler: &mut GaussianSampler, steps: usize) -> Result<TruthTrajectory> {
        let n = self.state_dim();
        let mut x = DVector::zeros(n);
        let [px, py, th] = self.start_pose();
        x[0] = px;
        x[1] = py;
        x[2] = th;
        for i in POSE_DIM..n {
            x[i] = sampler.uniform(-self.half_width, self.half_width);
        }
        let initial = x.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            x = self.slam_dynamics(&x, sampler);
            let active = self.visible(&x);
            let mut z = slam_measure(x.as_view(), &active);
            for k in 0..active.len() {
                z[2 * k] += self.sigma_range * sampler.standard_normal();
                z[2 * k + 1] =
                    wrap_angle(z[2 * k + 1] + self.sigma_bearing * sampler.standard_normal());
            }
            out.push(TruthStep {
                state: x.clone(),
                active,
                z,
            });
        }
        Ok(TruthTrajectory {
            initial,
            steps: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(pose: [f64; 3], landmarks: &[(f64, f64)]) -> DVector<f64> {
        let mut x = DVector::zeros(3 + 2 * landmarks.len());
        x[0] = pose[0];
        x[1] = pose[1];
        x[2] = pose[2];
        for (j, (lx, ly)) in landmarks.iter().enumerate() {
            x[3 + 2 * j] = *lx;
            x[4 + 2 * j] = *ly;
        }
        x
    }

    #[test]
    fn straight_motion() {
        let s = Slam::new(2);
        let x = state_with([0.0, 0.0, 0.0], &[(1.0, 2.0), (3.0, 4.0)]);
        let next = s.transition(x.as_view(), &[8.0, 0.0]);
        assert_eq!(next[0], 8.0);
        assert_eq!(next[1], 0.0);
        assert_eq!(next.rows(3, 4), x.rows(3, 4));
    }

    #[test]
    fn full_revolution_turns_two_pi() {
        let s = Slam::new(1);
        let mut x = state_with([0.0, 0.0, 0.0], &[(0.0, 0.0)]);
        for _ in 0..s.period {
            x = s.transition(x.as_view(), &s.input(0));
        }
        assert!((x[2] - 2.0 * PI).abs() < 1e-12);
        // closed polygon returns to the start
        assert!(x[0].abs() < 1e-9 && x[1].abs() < 1e-9);
    }

    #[test]
    fn noisy_dynamics_keep_landmarks() {
        let s = Slam::new(3);
        let x = state_with([1.0, 2.0, 0.3], &[(5.0, 6.0), (-7.0, 8.0), (9.0, -1.0)]);
        let next = s.slam_dynamics(&x, &mut GaussianSampler::new(4));
        assert_eq!(next.rows(3, 6), x.rows(3, 6));
        assert_ne!(next[0], x[0]);
    }

    #[test]
    fn range_bearing_examples() {
        let x = state_with([0.0, 0.0, 0.0], &[(3.0, 4.0), (5.0, 0.0)]);
        let z = slam_measure(x.as_view(), &[0, 1]);
        assert!((z[0] - 5.0).abs() < 1e-15);
        assert!((z[1] - 4f64.atan2(3.0)).abs() < 1e-15);
        assert!((z[1] - 0.9273).abs() < 1e-4);
        assert_eq!(z[3], 0.0);

        let behind = state_with([0.0, 0.0, PI], &[(-1.0, 0.0)]);
        let z = slam_measure(behind.as_view(), &[0]);
        assert!(z[1].abs() < 1e-15);
    }

    #[test]
    fn start_pose_centers_the_walk() {
        let s = Slam::default();
        let [px, py, _] = s.start_pose();
        let mut x = state_with([px, py, 0.0], &[]);
        let (mut cx, mut cy) = (0.0, 0.0);
        for _ in 0..s.period {
            cx += x[0];
            cy += x[1];
            s.move_pose(&mut x, s.speed, s.turn_rate());
        }
        assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
    }

    #[test]
    fn truth_visibility_and_determinism() {
        let s = Slam::default();
        let a = s.make_truth(&mut GaussianSampler::new(8), 50).unwrap();
        let b = s.make_truth(&mut GaussianSampler::new(8), 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.initial.len(), 303);
        let mut total = 0;
        for step in &a.steps {
            assert_eq!(step.z.len(), 2 * step.active.len());
            let exact = slam_measure(step.state.as_view(), &step.active);
            for k in 0..step.active.len() {
                assert!(exact[2 * k] <= 30.0);
                assert!(step.z[2 * k + 1] > -PI && step.z[2 * k + 1] <= PI);
            }
            total += step.active.len();
            assert_eq!(step.state.rows(3, 300), a.initial.rows(3, 300));
        }
        assert!(total > 0);
    }

    #[test]
    fn noise_and_metric_layout() {
        let s = Slam::default().with_noise_scale(2.0);
        let r = s.measurement_noise(&[4, 9]);
        let d = r.as_matrix().diagonal();
        assert!((d[0] - 0.04).abs() < 1e-15 && (d[1] - 0.0004).abs() < 1e-15);
        assert_eq!(d.len(), 4);
        let coords = s.metric_coords();
        assert_eq!(coords.len(), 302);
        assert!(!coords.contains(&2));
        let p = s.prior_std();
        assert!((p[2] - 0.2617993877991494).abs() < 1e-15);
        assert_eq!(p[10], 8.0);
    }
}
