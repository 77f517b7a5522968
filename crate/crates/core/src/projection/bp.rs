//! PMB update with association marginals from loopy belief propagation on the
//! bipartite track/measurement graph.

use nalgebra::DVector;

use super::{merge, state_dim, to_pmb};
use crate::density::{Bernoulli, PmbDensity, PmbmDensity};
use crate::error::Result;
use crate::filter::{check_measurements, missed_local, new_track, ppp_gains, SensorModel};
use crate::gaussian::KalmanGain;

pub const BP_TOLERANCE: f64 = 1e-4;
pub const BP_DAMPING: f64 = 0.5;
pub const BP_MAX_ITERATIONS: usize = 1000;

const MIN_LOG: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BpReport {
    pub iterations: usize,
    /// False if the iteration cap was hit; the last iterate is used anyway.
    pub converged: bool,
}

pub(crate) struct Marginals {
    /// `track[i][0]` is the missed-detection probability of track `i`,
    /// `track[i][j + 1]` the probability it generated measurement `j`.
    pub track: Vec<Vec<f64>>,
    /// Probability that measurement `j` is not generated by a prior track.
    pub new: Vec<f64>,
    pub report: BpReport,
}

/// Calls `f(k, sum of all terms except k)` for each k, without subtraction.
fn for_each_leave_one_out(terms: &[f64], suffix: &mut Vec<f64>, mut f: impl FnMut(usize, f64)) {
    suffix.clear();
    suffix.resize(terms.len() + 1, 0.0);
    for k in (0..terms.len()).rev() {
        suffix[k] = suffix[k + 1] + terms[k];
    }
    let mut prefix = 0.0;
    for (k, t) in terms.iter().enumerate() {
        f(k, prefix + suffix[k + 1]);
        prefix += t;
    }
}

/// Association marginals for likelihood ratios
/// `psi[i][j] = w(i, j) / (w(i, missed) * w(new j))`.
pub(crate) fn bp_marginals(psi: &[Vec<f64>], m: usize) -> Marginals {
    let n = psi.len();
    // Messages are stored row-major by track: `mu[i * m + j]` goes from track
    // i to measurement j, `nu[i * m + j]` from measurement j to track i.
    let psi: Vec<f64> = psi.iter().flatten().copied().collect();
    let mut nu = vec![1.0; n * m];
    let mut mu = vec![0.0; n * m];
    let mut report = BpReport {
        iterations: 0,
        converged: n == 0 || m == 0,
    };
    let mut terms = vec![0.0; m];
    let mut column = vec![0.0; n];
    let mut fresh = vec![0.0; n];
    let mut suffix = Vec::new();
    let mut update_mu = |nu: &[f64], mu: &mut [f64], suffix: &mut Vec<f64>| {
        for i in 0..n {
            let row = i * m..(i + 1) * m;
            for ((t, p), v) in terms.iter_mut().zip(&psi[row.clone()]).zip(&nu[row.clone()]) {
                *t = p * v;
            }
            let (psi_row, mu_row) = (&psi[row.clone()], &mut mu[row]);
            for_each_leave_one_out(&terms, suffix, |j, others| mu_row[j] = psi_row[j] / (1.0 + others));
        }
    };
    while !report.converged && report.iterations < BP_MAX_ITERATIONS {
        update_mu(&nu, &mut mu, &mut suffix);
        let mut delta: f64 = 0.0;
        for j in 0..m {
            for (i, c) in column.iter_mut().enumerate() {
                *c = mu[i * m + j];
            }
            for_each_leave_one_out(&column, &mut suffix, |i, others| fresh[i] = 1.0 / (1.0 + others));
            for (i, &new) in fresh.iter().enumerate() {
                let old = &mut nu[i * m + j];
                let damped = BP_DAMPING * *old + (1.0 - BP_DAMPING) * new;
                delta = delta.max((damped - *old).abs());
                *old = damped;
            }
        }
        report.iterations += 1;
        report.converged = delta <= BP_TOLERANCE;
    }
    update_mu(&nu, &mut mu, &mut suffix);

    let track = (0..n)
        .map(|i| {
            let mut p: Vec<f64> = std::iter::once(1.0)
                .chain((0..m).map(|j| psi[i * m + j] * nu[i * m + j]))
                .collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= total);
            p
        })
        .collect();
    let new = (0..m)
        .map(|j| 1.0 / (1.0 + (0..n).map(|i| mu[i * m + j]).sum::<f64>()))
        .collect();
    Marginals { track, new, report }
}

/// PMB update of a predicted density using BP association marginals instead
/// of enumerated global hypotheses. A PMBM input is first reduced with
/// [`to_pmb`]. No gating is applied.
pub fn bp_pmb_update(
    d_predicted: &PmbmDensity,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
) -> Result<(PmbDensity, BpReport)> {
    check_measurements(measurements, sensor)?;
    let prior = if d_predicted.is_pmb() {
        PmbDensity {
            ppp: d_predicted.ppp.clone(),
            bernoullis: d_predicted.tracks.iter().map(|t| t.locals[0].clone()).collect(),
        }
    } else {
        to_pmb(d_predicted)?
    };
    let pd = sensor.detection_prob;
    let dim = state_dim(d_predicted);
    let m = measurements.len();

    let gains = ppp_gains(&prior.ppp, &sensor.model)?;
    let fresh = measurements
        .iter()
        .map(|z| new_track(&gains, sensor, z, dim, false))
        .collect::<Result<Vec<_>>>()?;
    let log_new: Vec<f64> = fresh.iter().map(|t| t.total.ln().max(MIN_LOG)).collect();

    let mut missed = Vec::with_capacity(prior.bernoullis.len());
    let mut track_gains = Vec::with_capacity(prior.bernoullis.len());
    let mut psi = Vec::with_capacity(prior.bernoullis.len());
    for b in &prior.bernoullis {
        let (miss, log_missed) = missed_local(b, pd);
        let mut row = vec![0.0; m];
        let gain = if b.existence > 0.0 && pd > 0.0 {
            let gain = KalmanGain::new(&b.density, &sensor.model)?;
            let log_rp = (b.existence * pd).ln();
            for (j, z) in measurements.iter().enumerate() {
                row[j] = (log_rp + gain.log_likelihood(z)? - log_missed - log_new[j]).exp();
            }
            Some(gain)
        } else {
            None
        };
        missed.push(miss);
        track_gains.push(gain);
        psi.push(row);
    }

    let marginals = bp_marginals(&psi, m);
    let mut bernoullis = Vec::with_capacity(prior.bernoullis.len() + m);
    for ((miss, gain), p) in missed.iter().zip(&track_gains).zip(&marginals.track) {
        let mut parts: Vec<(f64, Bernoulli)> = vec![(p[0], miss.clone())];
        let detected: f64 = p[1..].iter().sum();
        if let Some(gain) = gain.as_ref().filter(|_| detected > 0.0) {
            parts.push((detected, Bernoulli::new(1.0, gain.posterior_mixture(&p[1..], measurements)?)));
        }
        bernoullis.push(merge(parts.iter().map(|(w, b)| (*w, b)), dim)?);
    }
    for (t, p_new) in fresh.into_iter().zip(&marginals.new) {
        let mut b = t.detection;
        b.existence *= p_new;
        b.assoc_weight_log = 0.0;
        bernoullis.push(b);
    }

    let mut ppp = prior.ppp;
    for t in &mut ppp.terms {
        t.weight *= 1.0 - pd;
    }
    Ok((PmbDensity { ppp, bernoullis }, marginals.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{PppIntensity, WeightedGaussian};
    use crate::filter::tests::scalar_sensor;
    use crate::filter::update;
    use crate::gaussian::GaussianDensity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn n1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::scalar(mean, var).unwrap()
    }

    fn z(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn prior(bernoullis: Vec<Bernoulli>) -> PmbmDensity {
        PmbmDensity::from_pmb(
            PmbDensity {
                ppp: PppIntensity::new(vec![WeightedGaussian { weight: 0.5, density: n1(0.0, 9.0) }]),
                bernoullis,
            },
            0,
        )
    }

    #[test]
    fn no_measurements_matches_exact_update() {
        let d = prior(vec![Bernoulli::new(0.7, n1(1.0, 1.0)), Bernoulli::new(0.2, n1(-3.0, 2.0))]);
        let sensor = scalar_sensor(0.9, 10.0);
        let (q, report) = bp_pmb_update(&d, &sensor, &[]).unwrap();
        assert!(report.converged);
        let exact = super::super::to_pmb(&update(&d, &sensor, &[], 10).unwrap()).unwrap();
        assert_eq!(q, exact);
    }

    #[test]
    fn single_pair_is_exact() {
        let b = Bernoulli::new(0.8, n1(0.0, 1.0));
        let d = prior(vec![b.clone()]);
        let sensor = scalar_sensor(0.9, 10.0);
        let zs = [z(0.5)];
        let (q, _) = bp_pmb_update(&d, &sensor, &zs).unwrap();
        let exact = super::super::to_pmb(&update(&d, &sensor, &zs, 10).unwrap()).unwrap();
        assert_eq!(q.bernoullis.len(), exact.bernoullis.len());
        for (a, e) in q.bernoullis.iter().zip(&exact.bernoullis) {
            assert!((a.existence - e.existence).abs() < 1e-12);
            assert!((a.density.mean() - e.density.mean()).amax() < 1e-12);
            assert!((a.density.cov() - e.density.cov()).amax() < 1e-12);
        }
    }

    /// Exact marginals by enumerating association maps.
    fn brute_marginals(psi: &[Vec<f64>], m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = psi.len();
        let mut maps: Vec<Vec<Option<usize>>> = vec![Vec::new()];
        for _ in 0..m {
            maps = maps
                .into_iter()
                .flat_map(|mp| {
                    std::iter::once(None)
                        .chain((0..n).map(Some))
                        .filter(|c| c.is_none() || !mp.contains(c))
                        .map(|c| {
                            let mut x = mp.clone();
                            x.push(c);
                            x
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        let mut track = vec![vec![0.0; m + 1]; n];
        let mut new = vec![0.0; m];
        let mut total = 0.0;
        for mp in &maps {
            let w: f64 = mp.iter().enumerate().filter_map(|(j, c)| c.map(|i| psi[i][j])).product();
            total += w;
            for i in 0..n {
                match mp.iter().position(|&c| c == Some(i)) {
                    Some(j) => track[i][j + 1] += w,
                    None => track[i][0] += w,
                }
            }
            for (j, c) in mp.iter().enumerate() {
                if c.is_none() {
                    new[j] += w;
                }
            }
        }
        track.iter_mut().flatten().for_each(|x| *x /= total);
        new.iter_mut().for_each(|x| *x /= total);
        (track, new)
    }

    #[test]
    fn marginals_close_to_enumeration_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..500 {
            let n = 2;
            let m = 2;
            // Each track can take at most one measurement besides missing it.
            let psi: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let k = rng.random_range(0..m);
                    (0..m).map(|j| if j == k { 10f64.powf(rng.random_range(-2.0..2.0)) } else { 0.0 }).collect()
                })
                .collect();
            let bp = bp_marginals(&psi, m);
            assert!(bp.report.converged);
            let (track, new) = brute_marginals(&psi, m);
            for (a, b) in bp.track.iter().flatten().zip(track.iter().flatten()) {
                assert!((a - b).abs() < 0.02, "{a} vs {b}");
            }
            for (a, b) in bp.new.iter().zip(&new) {
                assert!((a - b).abs() < 0.02, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn two_tracks_two_measurements() {
        let d = prior(vec![Bernoulli::new(0.9, n1(-1.0, 1.0)), Bernoulli::new(0.9, n1(1.0, 1.0))]);
        let sensor = scalar_sensor(0.9, 10.0);
        let zs = [z(-0.8), z(1.1)];
        let (q, report) = bp_pmb_update(&d, &sensor, &zs).unwrap();
        assert!(report.converged);
        assert_eq!(q.bernoullis.len(), 4);
        assert!(q.bernoullis[0].density.mean()[0] < 0.0);
        assert!(q.bernoullis[1].density.mean()[0] > 0.0);
        let exact = super::super::to_pmb(&update(&d, &sensor, &zs, 100).unwrap()).unwrap();
        for (a, e) in q.bernoullis.iter().zip(&exact.bernoullis).take(2) {
            assert!((a.existence - e.existence).abs() < 0.02);
        }
    }
}
