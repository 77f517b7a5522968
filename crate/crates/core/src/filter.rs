//! Point-target PMBM filter recursion: prediction, gated measurement update
//! with new-track creation, and global-hypothesis generation with Murty's
//! algorithm.

use nalgebra::DVector;

use crate::assignment::{murty_kbest, CostMatrix};
use crate::density::{
    canonicalize, merge_duplicate_hypotheses, prune_and_cap, Bernoulli, GlobalHypothesis,
    PmbmDensity, PppIntensity, Track, WeightedGaussian,
};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{kalman_predict, mix, GaussianDensity, KalmanGain, LinearGaussianModel};

/// Lower bound on the log missed-detection factor, reached when `r = 1` and
/// `p_D = 1`.
const MIN_LOG_FACTOR: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BirthModel {
    pub terms: Vec<WeightedGaussian>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub detection_prob: f64,
    /// Expected number of clutter measurements per scan.
    pub clutter_rate: f64,
    pub clutter_region_area: f64,
    /// Only `obs` and `obs_noise` are used.
    pub model: LinearGaussianModel,
    /// Squared Mahalanobis distance above which a pairing is gated out.
    pub gate_threshold: f64,
}

impl SensorModel {
    /// Clutter intensity, constant over the surveillance region.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / self.clutter_region_area
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(Error::contract(format!(
                "detection probability {} outside [0, 1]",
                self.detection_prob
            )));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_region_area > 0.0 && self.gate_threshold > 0.0) {
            return Err(Error::contract("invalid clutter rate, region area or gate threshold"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub gamma_ppp: f64,
    pub gamma_bern: f64,
    pub max_hyp: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            gamma_ppp: 1e-5,
            gamma_bern: 1e-5,
            max_hyp: 200,
        }
    }
}

pub fn predict(
    d: &PmbmDensity,
    dynamics: &LinearGaussianModel,
    survival: f64,
    birth: &BirthModel,
) -> Result<PmbmDensity> {
    if !(0.0..=1.0).contains(&survival) {
        return Err(Error::contract(format!("survival probability {survival} outside [0, 1]")));
    }
    let mut terms = Vec::with_capacity(d.ppp.terms.len() + birth.terms.len());
    for t in &d.ppp.terms {
        terms.push(WeightedGaussian {
            weight: t.weight * survival,
            density: kalman_predict(&t.density, dynamics)?,
        });
    }
    terms.extend(birth.terms.iter().cloned());
    let tracks = d
        .tracks
        .iter()
        .map(|t| {
            let locals = t
                .locals
                .iter()
                .map(|b| {
                    Ok(Bernoulli {
                        existence: b.existence * survival,
                        density: kalman_predict(&b.density, dynamics)?,
                        assoc_weight_log: b.assoc_weight_log,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Track { id: t.id, locals })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PmbmDensity {
        ppp: PppIntensity::new(terms),
        tracks,
        hypotheses: d.hypotheses.clone(),
    })
}

/// Locals spawned by one prior local hypothesis.
struct Spawned {
    missed: usize,
    missed_log: f64,
    /// `(measurement, local index, log weight factor)` for gated measurements.
    detections: Vec<(usize, usize, f64)>,
}

/// Measurement-independent quantities of the update shared with the BP
/// approximation.
pub(crate) struct NewTrack {
    /// `e(z) + lambda_C`; zero when the measurement can be neither clutter
    /// nor a new target.
    pub(crate) total: f64,
    pub(crate) detection: Bernoulli,
}

/// New track created by measurement `z` from the gated PPP components.
pub(crate) fn new_track(
    ppp_gains: &[(f64, KalmanGain)],
    sensor: &SensorModel,
    z: &DVector<f64>,
    state_dim: usize,
    gate: bool,
) -> Result<NewTrack> {
    let clutter = sensor.clutter_intensity();
    let mut weighted = Vec::new();
    let mut e = 0.0;
    for (w, g) in ppp_gains {
        let maha = g.mahalanobis_sq(z)?;
        if gate && maha > sensor.gate_threshold {
            continue;
        }
        let we = w * sensor.detection_prob * g.log_likelihood_from_mahalanobis(maha).exp();
        if we > 0.0 {
            e += we;
            weighted.push((we, g.posterior(z)?));
        }
    }
    let total = e + clutter;
    let (existence, density) = if e > 0.0 {
        (e / total, mix(weighted.iter().map(|(w, g)| (*w, g)))?)
    } else {
        (0.0, GaussianDensity::standard(state_dim))
    };
    Ok(NewTrack {
        total,
        detection: Bernoulli {
            existence,
            density,
            assoc_weight_log: total.ln(),
        },
    })
}

pub(crate) fn ppp_gains(ppp: &PppIntensity, model: &LinearGaussianModel) -> Result<Vec<(f64, KalmanGain)>> {
    ppp.terms
        .iter()
        .map(|t| Ok((t.weight, KalmanGain::new(&t.density, model)?)))
        .collect()
}

/// Missed-detection local of `b` and its log weight factor.
pub(crate) fn missed_local(b: &Bernoulli, pd: f64) -> (Bernoulli, f64) {
    let factor = 1.0 - b.existence * pd;
    let existence = if factor > 0.0 {
        b.existence * (1.0 - pd) / factor
    } else {
        0.0
    };
    let log = factor.ln().max(MIN_LOG_FACTOR);
    (
        Bernoulli {
            existence,
            density: b.density.clone(),
            assoc_weight_log: log,
        },
        log,
    )
}

pub(crate) fn check_measurements(measurements: &[DVector<f64>], sensor: &SensorModel) -> Result<()> {
    for z in measurements {
        check_dim("measurement", sensor.model.obs_dim(), z.len())?;
    }
    Ok(())
}

/// PMBM measurement update. Each parent hypothesis receives a Murty budget
/// proportional to its weight; the result holds at most `max_hyp`
/// hypotheses.
pub fn update(
    d: &PmbmDensity,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
    max_hyp: usize,
) -> Result<PmbmDensity> {
    sensor.validate()?;
    check_measurements(measurements, sensor)?;
    if max_hyp == 0 {
        return Err(Error::contract("max_hyp must be at least 1"));
    }
    let pd = sensor.detection_prob;
    let n = d.tracks.len();
    let m = measurements.len();
    let state_dim = sensor.model.state_dim();

    // Locals of the prior tracks.
    let mut tracks = Vec::with_capacity(n + m);
    let mut spawned: Vec<Vec<Spawned>> = Vec::with_capacity(n);
    for t in &d.tracks {
        let mut locals = Vec::new();
        let mut per_local = Vec::with_capacity(t.locals.len());
        for b in &t.locals {
            let (miss, missed_log) = missed_local(b, pd);
            let missed = locals.len();
            locals.push(miss);
            let mut detections = Vec::new();
            if b.existence > 0.0 && pd > 0.0 {
                let gain = KalmanGain::new(&b.density, &sensor.model)?;
                let log_rp = (b.existence * pd).ln();
                for (j, z) in measurements.iter().enumerate() {
                    let maha = gain.mahalanobis_sq(z)?;
                    if maha > sensor.gate_threshold {
                        continue;
                    }
                    let log = log_rp + gain.log_likelihood_from_mahalanobis(maha);
                    detections.push((j, locals.len(), log));
                    locals.push(Bernoulli {
                        existence: 1.0,
                        density: gain.posterior(z)?,
                        assoc_weight_log: log,
                    });
                }
            }
            per_local.push(Spawned {
                missed,
                missed_log,
                detections,
            });
        }
        tracks.push(Track { id: t.id, locals });
        spawned.push(per_local);
    }

    // One new track per measurement: local 0 is nonexistence, local 1 the
    // measurement's first detection.
    let gains = ppp_gains(&d.ppp, &sensor.model)?;
    let first_id = d.next_track_id();
    let mut new_logs = Vec::with_capacity(m);
    for (j, z) in measurements.iter().enumerate() {
        let nt = new_track(&gains, sensor, z, state_dim, true)?;
        new_logs.push(nt.detection.assoc_weight_log);
        let absent = Bernoulli {
            existence: 0.0,
            density: nt.detection.density.clone(),
            assoc_weight_log: 0.0,
        };
        tracks.push(Track {
            id: first_id + j as u64,
            locals: vec![absent, nt.detection],
        });
    }

    let mut hypotheses = Vec::new();
    for parent in &d.hypotheses {
        // Only measurements inside some track gate and the tracks gating them
        // enter the assignment; every other measurement starts a new track
        // and every other track is missed.
        let mut row_of = vec![usize::MAX; m];
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for (i, &l) in parent.locals_chosen.iter().enumerate() {
            let s = &spawned[i][l];
            if !s.detections.is_empty() {
                cols.push(i);
            }
            for &(j, _, _) in &s.detections {
                if row_of[j] == usize::MAX {
                    row_of[j] = 0;
                    rows.push(j);
                }
            }
        }
        rows.sort_unstable();
        for (r, &j) in rows.iter().enumerate() {
            row_of[j] = r;
        }
        if (0..m).any(|j| row_of[j] == usize::MAX && new_logs[j] == f64::NEG_INFINITY) {
            continue;
        }
        let nc = cols.len();
        let mut cost = CostMatrix::filled(rows.len(), nc + rows.len(), f64::INFINITY);
        for (c, &i) in cols.iter().enumerate() {
            let s = &spawned[i][parent.locals_chosen[i]];
            for &(j, _, log) in &s.detections {
                cost.set(row_of[j], c, -(log - s.missed_log));
            }
        }
        for (r, &j) in rows.iter().enumerate() {
            if new_logs[j] > f64::NEG_INFINITY {
                cost.set(r, nc + r, -new_logs[j]);
            }
        }

        let k = ((max_hyp as f64 * parent.weight()).ceil() as usize).max(1);
        for a in murty_kbest(&cost, k)? {
            let mut chosen: Vec<usize> = parent
                .locals_chosen
                .iter()
                .enumerate()
                .map(|(i, &l)| spawned[i][l].missed)
                .collect();
            chosen.extend((0..m).map(|j| usize::from(row_of[j] == usize::MAX)));
            for (r, &col) in a.mapping.iter().enumerate() {
                let j = rows[r];
                if col < nc {
                    let i = cols[col];
                    let s = &spawned[i][parent.locals_chosen[i]];
                    chosen[i] = s.detections.iter().find(|x| x.0 == j).unwrap().1;
                } else {
                    chosen[n + j] = 1;
                }
            }
            let log_weight = parent.log_weight
                + chosen
                    .iter()
                    .zip(&tracks)
                    .map(|(&l, t)| t.locals[l].assoc_weight_log)
                    .sum::<f64>();
            hypotheses.push(GlobalHypothesis {
                log_weight,
                locals_chosen: chosen,
            });
        }
    }
    if hypotheses.is_empty() {
        return Err(Error::Infeasible);
    }

    let mut ppp = d.ppp.clone();
    for t in &mut ppp.terms {
        t.weight *= 1.0 - pd;
    }
    let mut out = PmbmDensity {
        ppp,
        tracks,
        hypotheses,
    };
    merge_duplicate_hypotheses(&mut out);
    canonicalize(&mut out)?;
    if out.hypotheses.len() > max_hyp {
        out = prune_and_cap(&out, 0.0, 0.0, max_hyp)?;
    }
    Ok(out)
}

/// One filter recursion: predict, update, then prune and cap.
#[allow(clippy::too_many_arguments)]
pub fn step(
    d: &PmbmDensity,
    dynamics: &LinearGaussianModel,
    survival: f64,
    birth: &BirthModel,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
    thresholds: &FilterThresholds,
) -> Result<PmbmDensity> {
    let predicted = predict(d, dynamics, survival, birth)?;
    let updated = update(&predicted, sensor, measurements, thresholds.max_hyp)?;
    prune_and_cap(&updated, thresholds.gamma_ppp, thresholds.gamma_bern, thresholds.max_hyp)
}
