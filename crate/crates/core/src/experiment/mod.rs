//! Monte-Carlo experiment harness: configuration, the five trackers, GOSPA
//! evaluation per step and CSV output.

mod scenario;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::density::{estimate_targets, PmbDensity, PmbmDensity};
use crate::error::{Error, Result};
use crate::filter::{predict, step, FilterThresholds, SensorModel};
use crate::gaussian::LinearGaussianModel;
use crate::gospa::{gospa, rms_gospa};
use crate::projection::{bp_pmb_update, gnn_pmb, to_pmb, vpmb_project};

pub use scenario::{
    birth, dynamics, generate_scenario, position, region_area, sensor, simulate_measurements,
    ScenarioTruth, TargetTrajectory, CLUTTER_RATE, DEFAULT_TRUTH_SEED, GATE_THRESHOLD, HORIZON,
    MIDPOINT_STEP, N_TARGETS, REGION, SURVIVAL_PROB,
};

pub const GOSPA_P: f64 = 2.0;
pub const GOSPA_C: f64 = 10.0;
/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "VPMB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Pmbm,
    MPmb,
    BpPmb,
    GnnPmb,
    VPmb,
}

impl FilterKind {
    /// In the column order of the results table.
    pub const ALL: [FilterKind; 5] = [Self::Pmbm, Self::MPmb, Self::BpPmb, Self::GnnPmb, Self::VPmb];

    pub fn label(self) -> &'static str {
        match self {
            Self::Pmbm => "PMBM",
            Self::MPmb => "M-PMB",
            Self::BpPmb => "BP-PMB",
            Self::GnnPmb => "GNN-PMB",
            Self::VPmb => "V-PMB",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pmbm => "pmbm",
            Self::MPmb => "m-pmb",
            Self::BpPmb => "bp-pmb",
            Self::GnnPmb => "gnn-pmb",
            Self::VPmb => "v-pmb",
        })
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s) || k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::contract(format!("unknown filter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub filter_kind: FilterKind,
    pub p_detect: f64,
    pub clutter_rate: f64,
    pub n_runs: usize,
    pub max_hyp: usize,
    pub gamma_ppp: f64,
    pub gamma_bern: f64,
    pub estimator_threshold: f64,
    pub gate_threshold: f64,
    pub gamma_vpmb: f64,
    pub vpmb_max_iter: usize,
    /// Base seed of the measurement streams; run `r` uses `rng_seed + r`.
    pub rng_seed: u64,
    pub truth_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            filter_kind: FilterKind::Pmbm,
            p_detect: 0.9,
            clutter_rate: CLUTTER_RATE,
            n_runs: 100,
            max_hyp: 200,
            gamma_ppp: 1e-5,
            gamma_bern: 1e-5,
            estimator_threshold: 0.4,
            gate_threshold: GATE_THRESHOLD,
            gamma_vpmb: 0.1,
            vpmb_max_iter: 20,
            rng_seed: 0,
            truth_seed: DEFAULT_TRUTH_SEED,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            self.clutter_rate,
            self.gamma_ppp,
            self.gamma_bern,
            self.estimator_threshold,
            self.gate_threshold,
            self.gamma_vpmb,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::contract("thresholds and rates must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(Error::contract(format!("detection probability {} outside [0, 1]", self.p_detect)));
        }
        if self.n_runs == 0 || self.max_hyp == 0 || self.vpmb_max_iter == 0 {
            return Err(Error::contract("runs, max-hyp and vpmb-max-iter must be at least 1"));
        }
        Ok(())
    }

    /// Sets one option by its command-line name (without dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::contract(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "filter" => self.filter_kind = value.parse()?,
            "pd" => self.p_detect = parse(key, value)?,
            "clutter-rate" => self.clutter_rate = parse(key, value)?,
            "runs" => self.n_runs = parse(key, value)?,
            "max-hyp" => self.max_hyp = parse(key, value)?,
            "gamma-ppp" => self.gamma_ppp = parse(key, value)?,
            "gamma-bern" => self.gamma_bern = parse(key, value)?,
            "estimator-threshold" => self.estimator_threshold = parse(key, value)?,
            "gate" => self.gate_threshold = parse(key, value)?,
            "gamma-vpmb" => self.gamma_vpmb = parse(key, value)?,
            "vpmb-max-iter" => self.vpmb_max_iter = parse(key, value)?,
            "seed" => self.rng_seed = parse(key, value)?,
            "truth-seed" => self.truth_seed = parse(key, value)?,
            _ => return Err(Error::contract(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file of `key = value` lines on top of `self`. Blank
    /// lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            self.set(k.trim().trim_start_matches("--"), v.trim()).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn sensor(&self) -> SensorModel {
        sensor(self.p_detect, self.clutter_rate, self.gate_threshold)
    }

    fn thresholds(&self, max_hyp: usize) -> FilterThresholds {
        FilterThresholds {
            gamma_ppp: self.gamma_ppp,
            gamma_bern: self.gamma_bern,
            max_hyp,
        }
    }
}

/// Removes small PPP terms and Bernoullis that are nonexistent or below
/// `gamma_bern`.
fn prune_pmb(mut pmb: PmbDensity, gamma_ppp: f64, gamma_bern: f64) -> PmbDensity {
    pmb.ppp.terms.retain(|t| t.weight >= gamma_ppp);
    pmb.bernoullis.retain(|b| b.existence > 0.0 && b.existence >= gamma_bern);
    pmb
}

/// One filter of the comparison, carrying its posterior between steps.
pub struct Tracker {
    cfg: ExperimentConfig,
    dynamics: LinearGaussianModel,
    sensor: SensorModel,
    density: PmbmDensity,
    next_id: u64,
    step: usize,
}

impl Tracker {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            dynamics: dynamics(),
            sensor: cfg.sensor(),
            density: PmbmDensity::empty(),
            next_id: 0,
            step: 0,
        }
    }

    pub fn density(&self) -> &PmbmDensity {
        &self.density
    }

    /// Processes the measurements of the next time step and returns the
    /// state estimates.
    pub fn step(&mut self, measurements: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.step += 1;
        let cfg = &self.cfg;
        let birth = birth(self.step);
        let run_step = |max_hyp: usize| {
            step(
                &self.density,
                &self.dynamics,
                SURVIVAL_PROB,
                &birth,
                &self.sensor,
                measurements,
                &cfg.thresholds(max_hyp),
            )
        };
        let pmb = match cfg.filter_kind {
            FilterKind::Pmbm => {
                self.density = run_step(cfg.max_hyp)?;
                return Ok(estimate_targets(&self.density, cfg.estimator_threshold));
            }
            FilterKind::MPmb => to_pmb(&run_step(cfg.max_hyp)?)?,
            FilterKind::VPmb => vpmb_project(&run_step(cfg.max_hyp)?, cfg.gamma_vpmb, cfg.vpmb_max_iter)?.0,
            FilterKind::GnnPmb => gnn_pmb(&run_step(1)?)?,
            FilterKind::BpPmb => {
                let predicted = predict(&self.density, &self.dynamics, SURVIVAL_PROB, &birth)?;
                bp_pmb_update(&predicted, &self.sensor, measurements)?.0
            }
        };
        let pmb = prune_pmb(pmb, cfg.gamma_ppp, cfg.gamma_bern);
        let estimates = pmb.estimates(cfg.estimator_threshold);
        let n = pmb.bernoullis.len() as u64;
        self.density = PmbmDensity::from_pmb(pmb, self.next_id);
        self.next_id += n;
        Ok(estimates)
    }
}

/// RMS-GOSPA at one time step across runs. The components are square roots
/// of the mean per-run costs, which are already squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub rms_total: f64,
    pub rms_loc: f64,
    pub rms_missed: f64,
    pub rms_false: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub totals: Vec<f64>,
    pub localisation: Vec<f64>,
    pub missed: Vec<f64>,
    pub false_: Vec<f64>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub steps: Vec<StepStats>,
    /// RMS over every (step, run) GOSPA total.
    pub summary_rms: f64,
    pub runs: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn mean_runtime_secs(&self) -> f64 {
        self.runs.iter().map(|r| r.runtime_secs).sum::<f64>() / self.runs.len() as f64
    }
}

/// Runs one Monte-Carlo run against `truth`.
pub fn run_single(cfg: &ExperimentConfig, truth: &ScenarioTruth, run: usize) -> Result<RunRecord> {
    let measurements = simulate_measurements(truth, &cfg.sensor(), cfg.rng_seed.wrapping_add(run as u64))?;
    let mut tracker = Tracker::new(cfg);
    let mut record = RunRecord {
        totals: Vec::with_capacity(truth.horizon),
        localisation: Vec::with_capacity(truth.horizon),
        missed: Vec::with_capacity(truth.horizon),
        false_: Vec::with_capacity(truth.horizon),
        runtime_secs: 0.0,
    };
    for (k, zs) in measurements.iter().enumerate() {
        let step = k + 1;
        let start = Instant::now();
        let estimates = tracker.step(zs).map_err(|e| Error::Run {
            run,
            step,
            source: Box::new(e),
        })?;
        record.runtime_secs += start.elapsed().as_secs_f64();
        let truth_pos: Vec<_> = truth.states_at(step).iter().map(position).collect();
        let est_pos: Vec<_> = estimates.iter().map(position).collect();
        let g = gospa(&truth_pos, &est_pos, GOSPA_P, GOSPA_C)?;
        record.totals.push(g.total);
        record.localisation.push(g.localisation);
        record.missed.push(g.missed_cost);
        record.false_.push(g.false_cost);
    }
    Ok(record)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::contract(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::contract(e.to_string()))
}

fn aggregate(cfg: &ExperimentConfig, runs: Vec<RunRecord>) -> Result<ExperimentResult> {
    let horizon = runs[0].totals.len();
    let n = runs.len() as f64;
    let mean_at = |f: &dyn Fn(&RunRecord) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let steps = (0..horizon)
        .map(|k| {
            Ok(StepStats {
                step: k + 1,
                rms_total: rms_gospa(&runs.iter().map(|r| r.totals[k]).collect::<Vec<_>>())?,
                rms_loc: mean_at(&|r| r.localisation[k]).sqrt(),
                rms_missed: mean_at(&|r| r.missed[k]).sqrt(),
                rms_false: mean_at(&|r| r.false_[k]).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = runs.iter().flat_map(|r| r.totals.iter().copied()).collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        steps,
        summary_rms: rms_gospa(&all)?,
        runs,
    })
}

/// Runs `cfg.n_runs` Monte-Carlo runs on the scenario of `cfg.truth_seed`.
/// Runs execute in parallel; the result does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let truth = generate_scenario(cfg.truth_seed)?;
    run_experiment_on(cfg, &truth)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, truth: &ScenarioTruth) -> Result<ExperimentResult> {
    cfg.validate()?;
    let pool = worker_pool()?;
    let runs = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|run| run_single(cfg, truth, run))
            .collect::<Result<Vec<_>>>()
    })?;
    aggregate(cfg, runs)
}

pub const TABLE1_DETECTION_PROBS: [f64; 4] = [0.9, 0.99, 0.8, 0.7];

/// All five filters at every detection probability of the results table.
/// Each row holds one result per filter in [`FilterKind::ALL`] order.
pub fn run_table1(base: &ExperimentConfig) -> Result<Vec<(f64, Vec<ExperimentResult>)>> {
    let truth = generate_scenario(base.truth_seed)?;
    TABLE1_DETECTION_PROBS
        .iter()
        .map(|&pd| {
            let results = FilterKind::ALL
                .iter()
                .map(|&kind| {
                    let cfg = ExperimentConfig {
                        filter_kind: kind,
                        p_detect: pd,
                        ..base.clone()
                    };
                    run_experiment_on(&cfg, &truth)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((pd, results))
        })
        .collect()
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// Per-step RMS-GOSPA table: `step,filter,rms_total,rms_loc,rms_missed,rms_false`.
pub fn write_steps_csv<W: Write>(mut w: W, results: &[ExperimentResult]) -> Result<()> {
    writeln!(w, "step,filter,rms_total,rms_loc,rms_missed,rms_false")?;
    for r in results {
        for s in &r.steps {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.step,
                r.config.filter_kind,
                fmt_sig6(s.rms_total),
                fmt_sig6(s.rms_loc),
                fmt_sig6(s.rms_missed),
                fmt_sig6(s.rms_false)
            )?;
        }
    }
    Ok(())
}

/// Summary in the layout of the results table: one row per detection
/// probability, one column per filter that appears in the results.
pub fn write_summary_csv<W: Write>(mut w: W, rows: &[(f64, Vec<ExperimentResult>)]) -> Result<()> {
    let kinds: Vec<FilterKind> = FilterKind::ALL
        .into_iter()
        .filter(|k| rows.iter().any(|(_, rs)| rs.iter().any(|r| r.config.filter_kind == *k)))
        .collect();
    let header: Vec<&str> = kinds.iter().map(|k| k.label()).collect();
    writeln!(w, "pd,{}", header.join(","))?;
    for (pd, results) in rows {
        let cells: Vec<String> = kinds
            .iter()
            .map(|k| {
                results
                    .iter()
                    .find(|r| r.config.filter_kind == *k)
                    .map_or_else(String::new, |r| fmt_sig6(r.summary_rms))
            })
            .collect();
        writeln!(w, "{},{}", fmt_sig6(*pd), cells.join(","))?;
    }
    Ok(())
}
