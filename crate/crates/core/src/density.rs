//! PMBM and PMB densities with Gaussian single-target densities.
//!
//! A [`PmbmDensity`] is a Poisson point process (undetected targets) plus a
//! multi-Bernoulli mixture in track-oriented form: every track owns a list of
//! local hypotheses and every global hypothesis picks one local per track.
//! Global hypothesis weights are stored as logarithms and normalised with
//! log-sum-exp.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianDensity;

pub type TrackId = u64;

/// Value returned by [`bernoulli_kld`] in place of `+inf` when absolute
/// continuity fails.
pub const DIVERGENCE_CAP: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGaussian {
    pub weight: f64,
    pub density: GaussianDensity,
}

/// Gaussian-mixture intensity of a Poisson point process.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PppIntensity {
    pub terms: Vec<WeightedGaussian>,
}

impl PppIntensity {
    pub fn new(terms: Vec<WeightedGaussian>) -> Self {
        Self { terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.terms {
            sum += t.weight * t.density.pdf(x)?;
        }
        Ok(sum)
    }
}

/// One local hypothesis of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct Bernoulli {
    pub existence: f64,
    pub density: GaussianDensity,
    /// Log of the weight factor this local hypothesis contributed in the
    /// update that created it.
    pub assoc_weight_log: f64,
}

impl Bernoulli {
    pub fn new(existence: f64, density: GaussianDensity) -> Self {
        Self {
            existence,
            density,
            assoc_weight_log: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub locals: Vec<Bernoulli>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHypothesis {
    pub log_weight: f64,
    /// Local hypothesis index for every track, in track order.
    pub locals_chosen: Vec<usize>,
}

impl GlobalHypothesis {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmbmDensity {
    pub ppp: PppIntensity,
    pub tracks: Vec<Track>,
    pub hypotheses: Vec<GlobalHypothesis>,
}

/// Poisson multi-Bernoulli density: one Bernoulli per potential target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PmbDensity {
    pub ppp: PppIntensity,
    pub bernoullis: Vec<Bernoulli>,
}

impl PmbDensity {
    pub fn expected_cardinality(&self) -> f64 {
        self.bernoullis.iter().map(|b| b.existence).sum()
    }

    /// Means of the Bernoullis with existence above `threshold`.
    pub fn estimates(&self, threshold: f64) -> Vec<DVector<f64>> {
        self.bernoullis
            .iter()
            .filter(|b| b.existence > threshold)
            .map(|b| b.density.mean().clone())
            .collect()
    }
}

impl Default for PmbmDensity {
    fn default() -> Self {
        Self::empty()
    }
}

impl PmbmDensity {
    /// No undetected targets and no tracks: a single, empty global hypothesis.
    pub fn empty() -> Self {
        Self {
            ppp: PppIntensity::default(),
            tracks: Vec::new(),
            hypotheses: vec![GlobalHypothesis {
                log_weight: 0.0,
                locals_chosen: Vec::new(),
            }],
        }
    }

    /// Embeds a PMB as a one-hypothesis PMBM. Tracks get ids `first_id..`.
    pub fn from_pmb(pmb: PmbDensity, first_id: TrackId) -> Self {
        let n = pmb.bernoullis.len();
        let tracks = pmb
            .bernoullis
            .into_iter()
            .zip(first_id..)
            .map(|(b, id)| Track { id, locals: vec![b] })
            .collect();
        Self {
            ppp: pmb.ppp,
            tracks,
            hypotheses: vec![GlobalHypothesis {
                log_weight: 0.0,
                locals_chosen: vec![0; n],
            }],
        }
    }

    /// A PMB in disguise: one hypothesis and one local per track.
    pub fn is_pmb(&self) -> bool {
        self.hypotheses.len() == 1 && self.tracks.iter().all(|t| t.locals.len() == 1)
    }

    pub fn next_track_id(&self) -> TrackId {
        self.tracks.iter().map(|t| t.id + 1).max().unwrap_or(0)
    }

    /// The Bernoulli that hypothesis `hyp` selects for track `track`.
    pub fn chosen(&self, hyp: usize, track: usize) -> &Bernoulli {
        &self.tracks[track].locals[self.hypotheses[hyp].locals_chosen[track]]
    }

    /// Linear-domain hypothesis weights.
    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(GlobalHypothesis::weight).collect()
    }

    /// Rescales the log weights so the linear weights sum to one.
    pub fn normalize(&mut self) {
        let logs: Vec<f64> = self.hypotheses.iter().map(|h| h.log_weight).collect();
        let norm = log_sum_exp(&logs);
        for h in &mut self.hypotheses {
            h.log_weight -= norm;
        }
    }

    /// Index of the highest-weight hypothesis; ties go to the lower index.
    pub fn best_hypothesis(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (a, h) in self.hypotheses.iter().enumerate() {
            if best.is_none_or(|b| h.log_weight > self.hypotheses[b].log_weight) {
                best = Some(a);
            }
        }
        best
    }

    /// Checks the structural invariants of the density.
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses.is_empty() {
            return Err(Error::contract("PMBM has no global hypotheses"));
        }
        for t in &self.ppp.terms {
            if !(t.weight >= 0.0) {
                return Err(Error::contract("negative PPP weight"));
            }
        }
        let mut ids: Vec<TrackId> = self.tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate track id"));
        }
        for t in &self.tracks {
            if t.locals.is_empty() {
                return Err(Error::contract(format!("track {} has no local hypotheses", t.id)));
            }
            if t.locals.iter().any(|b| !(0.0..=1.0).contains(&b.existence)) {
                return Err(Error::contract(format!("track {} has existence outside [0, 1]", t.id)));
            }
        }
        for h in &self.hypotheses {
            check_dim("global hypothesis length", self.tracks.len(), h.locals_chosen.len())?;
            for (t, &l) in self.tracks.iter().zip(&h.locals_chosen) {
                if l >= t.locals.len() {
                    return Err(Error::contract(format!(
                        "hypothesis selects local {l} of track {} with {} locals",
                        t.id,
                        t.locals.len()
                    )));
                }
            }
        }
        let total: f64 = self.weights().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("hypothesis weights sum to {total}")));
        }
        Ok(())
    }
}

/// `log(sum(exp(values)))`, `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Kullback-Leibler divergence between two Bernoulli densities.
pub fn bernoulli_kld(f: &Bernoulli, q: &Bernoulli) -> Result<f64> {
    for r in [f.existence, q.existence] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::contract(format!("existence probability {r} outside [0, 1]")));
        }
    }
    bernoulli_kld_with(f.existence, q.existence, || {
        crate::gaussian::gaussian_kld(&f.density, &q.density)
    })
}

/// Bernoulli KLD given the existence probabilities and a lazily evaluated
/// single-target Gaussian KLD.
pub(crate) fn bernoulli_kld_with<F>(r_f: f64, r_q: f64, gauss: F) -> Result<f64>
where
    F: FnOnce() -> Result<f64>,
{
    if r_q <= 0.0 {
        return Ok(if r_f <= 0.0 { 0.0 } else { DIVERGENCE_CAP });
    }
    if r_q >= 1.0 {
        return if r_f >= 1.0 { gauss() } else { Ok(DIVERGENCE_CAP) };
    }
    let mut d = 0.0;
    if r_f < 1.0 {
        d += (1.0 - r_f) * ((1.0 - r_f) / (1.0 - r_q)).ln();
    }
    if r_f > 0.0 {
        d += r_f * (r_f / r_q).ln() + r_f * gauss()?;
    }
    Ok(d)
}

/// Probability hypothesis density of `d` at `x`.
pub fn compute_phd(d: &PmbmDensity, x: &DVector<f64>) -> Result<f64> {
    let mut phd = d.ppp.evaluate(x)?;
    for (i, local_weights) in local_hypothesis_weights(d).iter().enumerate() {
        for (b, w) in d.tracks[i].locals.iter().zip(local_weights) {
            if *w > 0.0 && b.existence > 0.0 {
                phd += w * b.existence * b.density.pdf(x)?;
            }
        }
    }
    Ok(phd)
}

/// For every track, the total global-hypothesis weight placed on each of its
/// local hypotheses.
pub(crate) fn local_hypothesis_weights(d: &PmbmDensity) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = d.tracks.iter().map(|t| vec![0.0; t.locals.len()]).collect();
    for h in &d.hypotheses {
        let w = h.weight();
        for (i, &l) in h.locals_chosen.iter().enumerate() {
            out[i][l] += w;
        }
    }
    out
}

/// Removes small PPP terms, marks low-existence locals as nonexistent, keeps
/// the `max_hyp` highest-weight global hypotheses and drops tracks that no
/// surviving hypothesis gives a non-zero existence. Weights are renormalised.
pub fn prune_and_cap(
    d: &PmbmDensity,
    gamma_ppp: f64,
    gamma_bern: f64,
    max_hyp: usize,
) -> Result<PmbmDensity> {
    if !(gamma_ppp >= 0.0 && gamma_bern >= 0.0) {
        return Err(Error::contract("pruning thresholds must be non-negative"));
    }
    if max_hyp == 0 {
        return Err(Error::contract("max_hyp = 0 would remove every global hypothesis"));
    }
    let mut out = d.clone();
    out.ppp.terms.retain(|t| t.weight >= gamma_ppp);
    for t in &mut out.tracks {
        for b in &mut t.locals {
            if b.existence < gamma_bern {
                b.existence = 0.0;
            }
        }
    }
    canonicalize(&mut out)?;
    if out.hypotheses.len() > max_hyp {
        let mut order: Vec<usize> = (0..out.hypotheses.len()).collect();
        order.sort_by(|&a, &b| {
            out.hypotheses[b]
                .log_weight
                .total_cmp(&out.hypotheses[a].log_weight)
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; out.hypotheses.len()];
        for &a in &order[..max_hyp] {
            keep[a] = true;
        }
        let mut it = keep.iter();
        out.hypotheses.retain(|_| *it.next().unwrap());
        canonicalize(&mut out)?;
    }
    Ok(out)
}

/// Brings a PMBM to canonical form without changing the multi-target density:
/// nonexistent locals of a track are collapsed into one, duplicate and
/// zero-weight global hypotheses are merged or dropped, unreferenced locals
/// and tracks that never exist are removed, and weights are normalised.
pub(crate) fn canonicalize(d: &mut PmbmDensity) -> Result<()> {
    d.hypotheses.retain(|h| h.log_weight > f64::NEG_INFINITY);
    if d.hypotheses.is_empty() {
        return Err(Error::contract("all global hypotheses have zero weight"));
    }

    // Collapse r = 0 locals onto the first one.
    for (i, t) in d.tracks.iter().enumerate() {
        let Some(first_zero) = t.locals.iter().position(|b| b.existence == 0.0) else {
            continue;
        };
        for h in &mut d.hypotheses {
            let l = &mut h.locals_chosen[i];
            if t.locals[*l].existence == 0.0 {
                *l = first_zero;
            }
        }
    }

    merge_duplicate_hypotheses(d);

    // Drop unreferenced locals.
    let n_tracks = d.tracks.len();
    let mut referenced: Vec<Vec<bool>> = d.tracks.iter().map(|t| vec![false; t.locals.len()]).collect();
    for h in &d.hypotheses {
        for (i, &l) in h.locals_chosen.iter().enumerate() {
            referenced[i][l] = true;
        }
    }
    let mut keep_track = vec![false; n_tracks];
    for (i, t) in d.tracks.iter_mut().enumerate() {
        let mut remap = vec![usize::MAX; t.locals.len()];
        let mut next = 0;
        for (l, r) in referenced[i].iter().enumerate() {
            if *r {
                remap[l] = next;
                next += 1;
            }
        }
        let mut it = referenced[i].iter();
        t.locals.retain(|_| *it.next().unwrap());
        keep_track[i] = t.locals.iter().any(|b| b.existence > 0.0);
        for h in &mut d.hypotheses {
            h.locals_chosen[i] = remap[h.locals_chosen[i]];
        }
    }

    // Tracks that never exist carry no information.
    if keep_track.iter().any(|k| !k) {
        for h in &mut d.hypotheses {
            let mut it = keep_track.iter();
            h.locals_chosen.retain(|_| *it.next().unwrap());
        }
        let mut it = keep_track.iter();
        d.tracks.retain(|_| *it.next().unwrap());
    }

    d.normalize();
    Ok(())
}

/// Merges global hypotheses with identical local selections, summing their
/// weights. The first occurrence keeps its position.
pub(crate) fn merge_duplicate_hypotheses(d: &mut PmbmDensity) {
    use std::collections::HashMap;
    let mut index: HashMap<Vec<usize>, usize> = HashMap::with_capacity(d.hypotheses.len());
    let mut merged: Vec<GlobalHypothesis> = Vec::with_capacity(d.hypotheses.len());
    for h in d.hypotheses.drain(..) {
        match index.get(&h.locals_chosen) {
            Some(&k) => {
                let acc = &mut merged[k].log_weight;
                *acc = log_sum_exp(&[*acc, h.log_weight]);
            }
            None => {
                index.insert(h.locals_chosen.clone(), merged.len());
                merged.push(h);
            }
        }
    }
    d.hypotheses = merged;
}

/// Means of the Bernoullis selected by the highest-weight global hypothesis
/// whose existence exceeds `threshold`.
pub fn estimate_targets(d: &PmbmDensity, threshold: f64) -> Vec<DVector<f64>> {
    let Some(best) = d.best_hypothesis() else {
        return Vec::new();
    };
    (0..d.tracks.len())
        .map(|i| d.chosen(best, i))
        .filter(|b| b.existence > threshold)
        .map(|b| b.density.mean().clone())
        .collect()
}
