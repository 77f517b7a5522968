//! The simulated scenario: models, ground-truth generation by forward and
//! backward sampling from the midpoint, and measurement simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::density::WeightedGaussian;
use crate::error::{Error, Result};
use crate::filter::{BirthModel, SensorModel};
use crate::gaussian::{GaussianDensity, LinearGaussianModel};
use crate::text::{fmt_slice, Reader, Writer};

pub const HORIZON: usize = 101;
pub const MIDPOINT_STEP: usize = 50;
pub const N_TARGETS: usize = 4;
/// Surveillance region `[0, 300] x [0, 300]`.
pub const REGION: (f64, f64) = (0.0, 300.0);
pub const SAMPLING_TIME: f64 = 1.0;
pub const PROCESS_NOISE: f64 = 0.01;
pub const SURVIVAL_PROB: f64 = 0.99;
pub const CLUTTER_RATE: f64 = 10.0;
pub const GATE_THRESHOLD: f64 = 20.0;
/// Truth seed of the canonical scenario.
pub const DEFAULT_TRUTH_SEED: u64 = 11;

const MIDPOINT_CENTRE: f64 = 150.0;
const MIDPOINT_BOX: f64 = 10.0;
const MAX_MIDPOINT_SPEED: f64 = 2.0;
const MIDPOINT_POSITION_SD: f64 = 0.5;
const MIDPOINT_SPEED_SD: f64 = 0.3;
const MAX_RESAMPLES: u64 = 10_000;

pub fn dynamics() -> LinearGaussianModel {
    LinearGaussianModel::constant_velocity(SAMPLING_TIME, PROCESS_NOISE)
}

pub fn region_area() -> f64 {
    (REGION.1 - REGION.0).powi(2)
}

pub fn sensor(detection_prob: f64, clutter_rate: f64, gate_threshold: f64) -> SensorModel {
    SensorModel {
        detection_prob,
        clutter_rate,
        clutter_region_area: region_area(),
        model: dynamics(),
        gate_threshold,
    }
}

/// Birth intensity at time step `step` (1-based).
pub fn birth(step: usize) -> BirthModel {
    let weight = if step == 1 { 3.0 } else { 5e-3 };
    let mean = DVector::from_vec(vec![100.0, 0.0, 100.0, 0.0]);
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![150.0f64.powi(2), 1.0, 150.0f64.powi(2), 1.0]));
    BirthModel {
        terms: vec![WeightedGaussian {
            weight,
            density: GaussianDensity::new(mean, cov).expect("birth covariance is positive definite"),
        }],
    }
}

/// Position components `[p_x, p_y]` of a state `[p_x, v_x, p_y, v_y]`.
pub fn position(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![x[0], x[2]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrajectory {
    pub birth_step: usize,
    pub death_step: usize,
    /// One state per step from `birth_step` to `death_step` inclusive.
    pub states: Vec<DVector<f64>>,
}

impl TargetTrajectory {
    pub fn state_at(&self, step: usize) -> Option<&DVector<f64>> {
        if step < self.birth_step || step > self.death_step {
            return None;
        }
        self.states.get(step - self.birth_step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub horizon: usize,
    pub targets: Vec<TargetTrajectory>,
}

impl ScenarioTruth {
    /// States of the targets alive at `step`.
    pub fn states_at(&self, step: usize) -> Vec<DVector<f64>> {
        self.targets.iter().filter_map(|t| t.state_at(step)).cloned().collect()
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line("format", "scenario/1");
        w.line("horizon", self.horizon);
        w.line("targets", self.targets.len());
        for (t, traj) in self.targets.iter().enumerate() {
            w.line(format_args!("target.{t}.birth_step"), traj.birth_step);
            w.line(format_args!("target.{t}.death_step"), traj.death_step);
            for (k, x) in traj.states.iter().enumerate() {
                w.line(format_args!("target.{t}.state.{}", traj.birth_step + k), fmt_slice(x.as_slice()));
            }
        }
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text)?;
        let format = r.expect("format")?;
        if format != "scenario/1" {
            return Err(r.error(format!("unsupported format {format:?}")));
        }
        let horizon = r.natural("horizon")?;
        let n: usize = r.natural("targets")?;
        let mut targets = Vec::with_capacity(n);
        for t in 0..n {
            let birth_step: usize = r.natural(&format!("target.{t}.birth_step"))?;
            let death_step: usize = r.natural(&format!("target.{t}.death_step"))?;
            if death_step < birth_step {
                return Err(r.error("death step before birth step"));
            }
            let states = (birth_step..=death_step)
                .map(|k| r.vector(&format!("target.{t}.state.{k}")).map(DVector::from_vec))
                .collect::<Result<Vec<_>>>()?;
            targets.push(TargetTrajectory { birth_step, death_step, states });
        }
        r.finish()?;
        Ok(Self { horizon, targets })
    }
}

fn inside_region(x: &DVector<f64>) -> bool {
    let ok = |v: f64| (REGION.0..=REGION.1).contains(&v);
    ok(x[0]) && ok(x[2])
}

/// Draws from `N(0, cov)` given a lower Cholesky factor of `cov`.
fn sample_noise(rng: &mut ChaCha8Rng, chol_l: &DMatrix<f64>) -> DVector<f64> {
    let n = DVector::from_fn(chol_l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol_l * n
}

/// Four targets near the region centre at the midpoint step, propagated
/// forward and backward in time. Midpoint offsets and velocities are
/// Gaussian, clipped to a 10 m box and 2 m/s per axis. All are born at step 1; target 0 dies at
/// the midpoint. A trajectory that leaves the region is redrawn from a fresh
/// sub-stream of the seed.
pub fn generate_scenario(seed: u64) -> Result<ScenarioTruth> {
    let model = dynamics();
    let q_chol = noise_factor(&model.process_noise);
    let f_inv = model
        .transition
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::contract("transition matrix is not invertible"))?;
    let mut targets = Vec::with_capacity(N_TARGETS);
    for t in 0..N_TARGETS {
        let death_step = if t == 0 { MIDPOINT_STEP } else { HORIZON };
        let mut attempt = 0;
        let states = loop {
            if attempt == MAX_RESAMPLES {
                return Err(Error::contract(format!("target {t} keeps leaving the region")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 * MAX_RESAMPLES + attempt);
            attempt += 1;
            let half = MIDPOINT_BOX / 2.0;
            let mut draw = |sd: f64, bound: f64| (sd * rng.sample::<f64, _>(StandardNormal)).clamp(-bound, bound);
            let mid = DVector::from_vec(vec![
                MIDPOINT_CENTRE + draw(MIDPOINT_POSITION_SD, half),
                draw(MIDPOINT_SPEED_SD, MAX_MIDPOINT_SPEED),
                MIDPOINT_CENTRE + draw(MIDPOINT_POSITION_SD, half),
                draw(MIDPOINT_SPEED_SD, MAX_MIDPOINT_SPEED),
            ]);
            let mut backward = vec![mid.clone()];
            for _ in 1..MIDPOINT_STEP {
                let next = &f_inv * (backward.last().unwrap() - sample_noise(&mut rng, &q_chol));
                backward.push(next);
            }
            backward.reverse();
            let mut states = backward;
            for _ in MIDPOINT_STEP..death_step {
                let next = &model.transition * states.last().unwrap() + sample_noise(&mut rng, &q_chol);
                states.push(next);
            }
            if states.iter().all(inside_region) {
                break states;
            }
        };
        targets.push(TargetTrajectory { birth_step: 1, death_step, states });
    }
    Ok(ScenarioTruth { horizon: HORIZON, targets })
}

/// Lower factor `L` with `L L^T = cov` for a positive semi-definite `cov`.
fn noise_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = cov.clone().symmetric_eigen();
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        }
    }
}

/// Measurement sets for steps `1..=horizon` (index 0 is step 1). Target
/// detections come first, then clutter uniform over the region.
pub fn simulate_measurements(truth: &ScenarioTruth, sensor: &SensorModel, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_chol = noise_factor(&sensor.model.obs_noise);
    let clutter = if sensor.clutter_rate > 0.0 {
        Some(Poisson::new(sensor.clutter_rate).map_err(|e| Error::contract(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(truth.horizon);
    for step in 1..=truth.horizon {
        let mut zs = Vec::new();
        for x in truth.states_at(step) {
            if rng.random_bool(sensor.detection_prob) {
                zs.push(&sensor.model.obs * x + sample_noise(&mut rng, &r_chol));
            }
        }
        let n_clutter = clutter.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_clutter {
            zs.push(DVector::from_fn(sensor.model.obs_dim(), |_, _| rng.random_range(REGION.0..REGION.1)));
        }
        out.push(zs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_shape() {
        let truth = generate_scenario(DEFAULT_TRUTH_SEED).unwrap();
        assert_eq!(truth.horizon, 101);
        assert_eq!(truth.targets.len(), 4);
        assert_eq!(truth.targets.iter().filter(|t| t.death_step == 50).count(), 1);
        for t in &truth.targets {
            assert_eq!(t.states.len(), t.death_step - t.birth_step + 1);
            assert!(t.states.iter().all(inside_region));
            let mid = t.state_at(MIDPOINT_STEP).unwrap();
            assert!((mid[0] - 150.0).abs() <= 5.0 && (mid[2] - 150.0).abs() <= 5.0);
        }
        assert_eq!(truth.states_at(50).len(), 4);
        assert_eq!(truth.states_at(51).len(), 3);
    }

    #[test]
    fn scenario_is_deterministic_and_round_trips() {
        let a = generate_scenario(7).unwrap();
        let b = generate_scenario(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scenario(8).unwrap());
        let text = a.to_text();
        assert_eq!(ScenarioTruth::from_text(&text).unwrap(), a);
    }

    #[test]
    fn backward_steps_follow_the_dynamics() {
        let truth = generate_scenario(3).unwrap();
        let f = dynamics().transition;
        for t in &truth.targets {
            for w in t.states.windows(2) {
                // Process noise with q = 0.01 keeps one-step residuals small.
                assert!((&w[1] - &f * &w[0]).amax() < 1.0);
            }
        }
    }

    #[test]
    fn measurement_edge_cases() {
        let truth = generate_scenario(DEFAULT_TRUTH_SEED).unwrap();
        let silent = simulate_measurements(&truth, &sensor(0.0, 0.0, 20.0), 1).unwrap();
        assert!(silent.iter().all(Vec::is_empty));

        let mut s = sensor(1.0, 0.0, 20.0);
        s.model.obs_noise = DMatrix::identity(2, 2) * 1e-16;
        let zs = simulate_measurements(&truth, &s, 1).unwrap();
        for (k, z) in zs.iter().enumerate() {
            let states = truth.states_at(k + 1);
            assert_eq!(z.len(), states.len());
            for (z, x) in z.iter().zip(&states) {
                assert!((z - position(x)).amax() < 1e-6);
            }
        }
        assert_eq!(simulate_measurements(&truth, &sensor(0.9, 10.0, 20.0), 5).unwrap(), simulate_measurements(&truth, &sensor(0.9, 10.0, 20.0), 5).unwrap());
    }

    #[test]
    fn clutter_count_mean() {
        let truth = ScenarioTruth {
            horizon: 10_000,
            targets: Vec::new(),
        };
        let zs = simulate_measurements(&truth, &sensor(0.9, 10.0, 20.0), 9).unwrap();
        let mean = zs.iter().map(Vec::len).sum::<usize>() as f64 / zs.len() as f64;
        assert!((mean - 10.0).abs() < 0.3, "{mean}");
        assert!(zs.iter().flatten().all(|z| z.iter().all(|v| (0.0..300.0).contains(v))));
    }
}
