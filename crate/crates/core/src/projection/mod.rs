//! Projections of a PMBM onto a single PMB: track-oriented marginalisation,
//! global nearest neighbour, and the variational projection that alternates
//! between merging Bernoullis under fixed permutations and re-optimising the
//! permutation of every global hypothesis.

mod bp;

use std::fmt::Write as _;

use crate::assignment::{solve_assignment_with, CostMatrix, Lsap};
use crate::density::{bernoulli_kld_with, local_hypothesis_weights, Bernoulli, PmbDensity, PmbmDensity};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{mix, GaussianDensity, PreparedGaussian};
use crate::text::fmt_real;

pub use bp::{bp_pmb_update, BpReport, BP_DAMPING, BP_MAX_ITERATIONS, BP_TOLERANCE};

/// For every global hypothesis, `per_hypothesis[a][slot]` is the track whose
/// local hypothesis fills `slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub per_hypothesis: Vec<Vec<usize>>,
}

impl PermutationSet {
    pub fn identity(n_hypotheses: usize, n_tracks: usize) -> Self {
        Self {
            per_hypothesis: vec![(0..n_tracks).collect(); n_hypotheses],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub iterations_run: usize,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

impl ProjectionReport {
    pub fn to_text(&self) -> String {
        let trace: Vec<String> = self.cost_trace.iter().map(|&c| fmt_real(c)).collect();
        let mut s = String::new();
        writeln!(s, "iterations_run = {}", self.iterations_run).unwrap();
        writeln!(s, "converged = {}", self.converged).unwrap();
        writeln!(s, "cost_trace = [{}]", trace.join(", ")).unwrap();
        s
    }
}

fn state_dim(d: &PmbmDensity) -> usize {
    d.tracks
        .iter()
        .flat_map(|t| t.locals.first())
        .map(|b| b.density.dim())
        .chain(d.ppp.terms.iter().map(|t| t.density.dim()))
        .next()
        .unwrap_or(1)
}

/// Bernoulli with existence `sum(w r)` and the moment-matched density of the
/// weighted locals, or a nonexistent placeholder when the sum vanishes.
fn merge<'a>(parts: impl IntoIterator<Item = (f64, &'a Bernoulli)>, dim: usize) -> Result<Bernoulli> {
    let weighted: Vec<(f64, &GaussianDensity)> = parts
        .into_iter()
        .map(|(w, b)| (w * b.existence, &b.density))
        .filter(|(w, _)| *w > 0.0)
        .collect();
    let existence: f64 = weighted.iter().map(|(w, _)| w).sum();
    if existence > 0.0 {
        Ok(Bernoulli::new(existence.min(1.0), mix(weighted)?))
    } else {
        Ok(Bernoulli::new(0.0, GaussianDensity::standard(dim)))
    }
}

/// The optimal PMB for fixed permutations: slot `i` merges, across global
/// hypotheses, the locals that the permutations place in slot `i`.
pub fn merge_bernoullis_under_permutations(d: &PmbmDensity, perms: &PermutationSet) -> Result<PmbDensity> {
    check_dim("permutation set", d.hypotheses.len(), perms.per_hypothesis.len())?;
    let n = d.tracks.len();
    for p in &perms.per_hypothesis {
        check_dim("permutation length", n, p.len())?;
        let mut seen = vec![false; n];
        for &t in p {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return Err(Error::contract("permutation is not a bijection on the tracks"));
            }
        }
    }
    let dim = state_dim(d);
    let weights = d.weights();
    let mut slots: Vec<Vec<(usize, usize, f64)>> = vec![Vec::with_capacity(d.hypotheses.len()); n];
    for ((h, p), &w) in d.hypotheses.iter().zip(&perms.per_hypothesis).zip(&weights) {
        for (slot, &t) in p.iter().enumerate() {
            slots[slot].push((t, h.locals_chosen[t], w));
        }
    }
    let bernoullis = slots
        .into_iter()
        .map(|mut parts| {
            parts.sort_by_key(|&(t, l, _)| (t, l));
            let mut combined: Vec<(usize, usize, f64)> = Vec::with_capacity(parts.len());
            for (t, l, w) in parts {
                match combined.last_mut() {
                    Some(last) if last.0 == t && last.1 == l => last.2 += w,
                    _ => combined.push((t, l, w)),
                }
            }
            merge(combined.iter().map(|&(t, l, w)| (w, &d.tracks[t].locals[l])), dim)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PmbDensity {
        ppp: d.ppp.clone(),
        bernoullis,
    })
}

/// Track-oriented PMB approximation: every track's locals are merged with
/// their marginal hypothesis weights.
pub fn to_pmb(d: &PmbmDensity) -> Result<PmbDensity> {
    let dim = state_dim(d);
    let bernoullis = local_hypothesis_weights(d)
        .iter()
        .zip(&d.tracks)
        .map(|(w, t)| merge(w.iter().copied().zip(&t.locals), dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(PmbDensity {
        ppp: d.ppp.clone(),
        bernoullis,
    })
}

/// PMB given by the highest-weight global hypothesis; ties go to the lower
/// index.
pub fn gnn_pmb(d: &PmbmDensity) -> Result<PmbDensity> {
    let best = d
        .best_hypothesis()
        .ok_or_else(|| Error::contract("PMBM has no global hypotheses"))?;
    Ok(PmbDensity {
        ppp: d.ppp.clone(),
        bernoullis: (0..d.tracks.len()).map(|i| d.chosen(best, i).clone()).collect(),
    })
}

/// Bernoulli KLD from a prepared local to a prepared slot.
fn kld(f: &(f64, PreparedGaussian), q: &(f64, PreparedGaussian)) -> f64 {
    // Existences are in [0, 1] by construction, so this cannot fail.
    bernoulli_kld_with(f.0, q.0, || Ok(f.1.kld_to(&q.1))).unwrap()
}

fn prepare(b: &Bernoulli) -> Result<(f64, PreparedGaussian)> {
    Ok((b.existence, PreparedGaussian::new(&b.density)?))
}

/// Optimal permutation of every global hypothesis against the PMB `q`, and
/// the total cost `sum_a w_a sum_i D(f^{pi_a(i)} || q^i)`.
pub fn optimize_permutations(d: &PmbmDensity, q: &PmbDensity) -> Result<(PermutationSet, f64)> {
    optimize_permutations_near(d, q, None)
}

/// As [`optimize_permutations`], but a hypothesis keeps its permutation in
/// `prefer` whenever that one is also optimal.
fn optimize_permutations_near(
    d: &PmbmDensity,
    q: &PmbDensity,
    prefer: Option<&PermutationSet>,
) -> Result<(PermutationSet, f64)> {
    let n = d.tracks.len();
    check_dim("PMB slot count", n, q.bernoullis.len())?;
    let slots = q.bernoullis.iter().map(prepare).collect::<Result<Vec<_>>>()?;

    // kl[i][l] is filled only for locals some hypothesis uses.
    let mut used: Vec<Vec<bool>> = d.tracks.iter().map(|t| vec![false; t.locals.len()]).collect();
    for h in &d.hypotheses {
        for (i, &l) in h.locals_chosen.iter().enumerate() {
            used[i][l] = true;
        }
    }
    let mut kl: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for (t, u) in d.tracks.iter().zip(&used) {
        let mut per_local = Vec::with_capacity(t.locals.len());
        for (b, &referenced) in t.locals.iter().zip(u) {
            if referenced {
                let f = prepare(b)?;
                per_local.push(slots.iter().map(|q| kld(&f, q)).collect());
            } else {
                per_local.push(Vec::new());
            }
        }
        kl.push(per_local);
    }

    let mut per_hypothesis = Vec::with_capacity(d.hypotheses.len());
    let mut total = 0.0;
    let mut cost = CostMatrix::filled(n, n, 0.0);
    let mut workspace = Lsap::default();
    let mut last: Option<&[usize]> = None;
    let mut changed = Vec::with_capacity(n);
    for h in &d.hypotheses {
        changed.clear();
        for (i, &l) in h.locals_chosen.iter().enumerate() {
            if last.is_none_or(|p| p[i] != l) {
                changed.push(i);
                for (slot, &c) in kl[i][l].iter().enumerate() {
                    cost.set(i, slot, c);
                }
            }
        }
        let warm = last.is_some() && 2 * changed.len() <= n;
        let a = solve_assignment_with(&mut workspace, &cost, warm.then_some(&changed[..]))?;
        last = Some(&h.locals_chosen);
        let kept = prefer.map(|p| &p.per_hypothesis[per_hypothesis.len()]).filter(|p| {
            let c: f64 = p.iter().enumerate().map(|(slot, &t)| cost[(t, slot)]).sum();
            c <= a.cost + 1e-12 * a.cost.abs().max(1.0)
        });
        let perm = match kept {
            Some(p) => p.clone(),
            None => {
                let mut perm = vec![0; n];
                for (track, &slot) in a.mapping.iter().enumerate() {
                    perm[slot] = track;
                }
                perm
            }
        };
        total += h.weight() * a.cost;
        per_hypothesis.push(perm);
    }
    Ok((PermutationSet { per_hypothesis }, total))
}

/// Variational PMB projection by coordinate descent. Stops when the cost
/// changes by at most `gamma` or after `max_iter` permutation updates.
pub fn vpmb_project(d: &PmbmDensity, gamma: f64, max_iter: usize) -> Result<(PmbDensity, ProjectionReport)> {
    if !(gamma >= 0.0) || max_iter == 0 {
        return Err(Error::contract("vpmb_project needs gamma >= 0 and max_iter >= 1"));
    }
    let mut current = PermutationSet::identity(d.hypotheses.len(), d.tracks.len());
    let mut q = merge_bernoullis_under_permutations(d, &current)?;
    let mut report = ProjectionReport {
        iterations_run: 0,
        cost_trace: Vec::new(),
        converged: false,
    };
    let mut previous = f64::INFINITY;
    while report.iterations_run < max_iter {
        let (perms, cost) = optimize_permutations_near(d, &q, Some(&current))?;
        report.iterations_run += 1;
        report.cost_trace.push(cost);
        let mut converged = (cost - previous).abs() <= gamma;
        if perms != current {
            q = merge_bernoullis_under_permutations(d, &perms)?;
            current = perms;
        } else if !converged && report.iterations_run < max_iter {
            // q is unchanged, so the next update would reproduce this one.
            report.iterations_run += 1;
            report.cost_trace.push(cost);
            converged = true;
        }
        if converged {
            report.converged = true;
            break;
        }
        previous = cost;
    }
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::tests::random_pmbm;
    use crate::density::{compute_phd, GlobalHypothesis, PppIntensity, Track};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn n1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::scalar(mean, var).unwrap()
    }

    fn bern(r: f64, mean: f64, var: f64) -> Bernoulli {
        Bernoulli::new(r, n1(mean, var))
    }

    fn hyp(w: f64, chosen: Vec<usize>) -> GlobalHypothesis {
        GlobalHypothesis {
            log_weight: w.ln(),
            locals_chosen: chosen,
        }
    }

    /// Hypothesis A puts the two targets at (-5, +5), hypothesis B at (+5, -5).
    fn swap_scenario_weighted(w_a: f64) -> PmbmDensity {
        PmbmDensity {
            ppp: PppIntensity::default(),
            tracks: vec![
                Track { id: 0, locals: vec![bern(1.0, -5.0, 1.0), bern(1.0, 5.0, 1.0)] },
                Track { id: 1, locals: vec![bern(1.0, 5.0, 1.0), bern(1.0, -5.0, 1.0)] },
            ],
            hypotheses: vec![hyp(w_a, vec![0, 0]), hyp(1.0 - w_a, vec![1, 1])],
        }
    }

    fn swap_scenario() -> PmbmDensity {
        swap_scenario_weighted(0.5)
    }

    fn assert_close(b: &Bernoulli, r: f64, mean: f64, var: f64) {
        assert!((b.existence - r).abs() < 1e-12, "{b:?}");
        assert!((b.density.mean()[0] - mean).abs() < 1e-12, "{b:?}");
        assert!((b.density.cov()[(0, 0)] - var).abs() < 1e-12, "{b:?}");
    }

    fn expected_cost(d: &PmbmDensity, q: &PmbDensity, perms: &PermutationSet) -> f64 {
        let mut c = 0.0;
        for (h, p) in d.hypotheses.iter().zip(&perms.per_hypothesis) {
            for (slot, &t) in p.iter().enumerate() {
                c += h.weight()
                    * crate::density::bernoulli_kld(&d.tracks[t].locals[h.locals_chosen[t]], &q.bernoullis[slot]).unwrap();
            }
        }
        c
    }

    #[test]
    fn merge_examples() {
        let d = PmbmDensity {
            ppp: PppIntensity::default(),
            tracks: vec![Track { id: 0, locals: vec![bern(0.4, 0.0, 1.0), bern(0.8, 0.0, 1.0)] }],
            hypotheses: vec![hyp(0.5, vec![0]), hyp(0.5, vec![1])],
        };
        let q = merge_bernoullis_under_permutations(&d, &PermutationSet::identity(2, 1)).unwrap();
        assert!((q.bernoullis[0].existence - 0.6).abs() < 1e-15);

        let d = swap_scenario();
        let q = merge_bernoullis_under_permutations(&d, &PermutationSet::identity(2, 2)).unwrap();
        assert_close(&q.bernoullis[0], 1.0, 0.0, 26.0);
        assert_close(&q.bernoullis[1], 1.0, 0.0, 26.0);
        let swap = PermutationSet { per_hypothesis: vec![vec![0, 1], vec![1, 0]] };
        let q = merge_bernoullis_under_permutations(&d, &swap).unwrap();
        assert_close(&q.bernoullis[0], 1.0, -5.0, 1.0);
        assert_close(&q.bernoullis[1], 1.0, 5.0, 1.0);

        let bad = PermutationSet { per_hypothesis: vec![vec![0, 0], vec![0, 1]] };
        assert!(merge_bernoullis_under_permutations(&d, &bad).is_err());
    }

    #[test]
    fn swap_scenario_is_resolved() {
        let d = swap_scenario();
        let to = to_pmb(&d).unwrap();
        assert_close(&to.bernoullis[0], 1.0, 0.0, 26.0);
        assert_close(&to.bernoullis[1], 1.0, 0.0, 26.0);

        // With equal weights both slots of the starting point coincide, every
        // permutation costs the same and the descent cannot leave it.
        let (q, report) = vpmb_project(&d, 0.1, 20).unwrap();
        assert_eq!(q, to);
        assert!(report.converged);

        // Any asymmetry breaks the tie and the targets separate.
        let d = swap_scenario_weighted(0.55);
        let (q, report) = vpmb_project(&d, 0.1, 20).unwrap();
        assert_close(&q.bernoullis[0], 1.0, -5.0, 1.0);
        assert_close(&q.bernoullis[1], 1.0, 5.0, 1.0);
        assert!(report.converged);
        assert!(report.cost_trace[1] < report.cost_trace[0]);
        assert_eq!(report.cost_trace.len(), 3);
        assert_eq!(report.cost_trace[1], report.cost_trace[2]);
        let to = to_pmb(&d).unwrap();
        assert!((to.bernoullis[0].density.cov()[(0, 0)] - (1.0 + 100.0 * 0.55 * 0.45)).abs() < 1e-12);
    }

    #[test]
    fn optimize_examples() {
        let d = swap_scenario();
        let single = PmbmDensity { hypotheses: vec![hyp(1.0, vec![0, 0])], ..d.clone() };
        let q = to_pmb(&single).unwrap();
        let (perms, cost) = optimize_permutations(&single, &q).unwrap();
        assert_eq!(perms, PermutationSet::identity(1, 2));
        assert_eq!(cost, 0.0);

        let separated = PmbDensity { ppp: PppIntensity::default(), bernoullis: vec![bern(1.0, -5.0, 1.0), bern(1.0, 5.0, 1.0)] };
        let (perms, cost) = optimize_permutations(&d, &separated).unwrap();
        assert_eq!(perms.per_hypothesis, vec![vec![0, 1], vec![1, 0]]);
        assert!(cost.abs() < 1e-12);

        // Against the coalesced PMB both permutations cost the same.
        let coalesced = to_pmb(&d).unwrap();
        let (perms, cost) = optimize_permutations(&d, &coalesced).unwrap();
        let identity = expected_cost(&d, &coalesced, &PermutationSet::identity(2, 2));
        let swapped = expected_cost(&d, &coalesced, &PermutationSet { per_hypothesis: vec![vec![0, 1], vec![1, 0]] });
        assert!((identity - swapped).abs() < 1e-12);
        assert!((cost - expected_cost(&d, &coalesced, &perms)).abs() < 1e-9);
    }

    #[test]
    fn cost_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(1..5);
            let d = random_pmbm(&mut rng, n, 8);
            let q = to_pmb(&d).unwrap();
            let (perms, cost) = optimize_permutations(&d, &q).unwrap();
            assert!((cost - expected_cost(&d, &q, &perms)).abs() < 1e-9);
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn permutation_step_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let d = random_pmbm(&mut rng, n, 4);
            let (q, _) = vpmb_project(&d, 0.0, 1).unwrap();
            let (perms, _) = optimize_permutations(&d, &q).unwrap();
            let all = permutations(n);
            for (a, h) in d.hypotheses.iter().enumerate() {
                let cost_of = |p: &[usize]| -> f64 {
                    p.iter()
                        .enumerate()
                        .map(|(slot, &t)| {
                            crate::density::bernoulli_kld(&d.tracks[t].locals[h.locals_chosen[t]], &q.bernoullis[slot]).unwrap()
                        })
                        .sum()
                };
                let best = all.iter().map(|p| cost_of(p)).fold(f64::INFINITY, f64::min);
                assert!((cost_of(&perms.per_hypothesis[a]) - best).abs() <= 1e-12 * best.max(1.0));
            }
        }
    }

    /// Mass, first and second moment of the Bernoulli part of the PHD.
    fn phd_moments<'a>(parts: impl IntoIterator<Item = (f64, &'a Bernoulli)>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut mass = 0.0;
        let mut first = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for (w, b) in parts {
            let wr = w * b.existence;
            let mu = b.density.mean();
            mass += wr;
            first += mu * wr;
            second += (b.density.cov() + mu * mu.transpose()) * wr;
        }
        (mass, first, second)
    }

    #[test]
    fn projection_preserves_phd_moments_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let d = random_pmbm(&mut rng, n, 10);
            let (q, report) = vpmb_project(&d, 0.0, 20).unwrap();
            for w in report.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", report.cost_trace);
            }
            let input = phd_moments(
                d.hypotheses
                    .iter()
                    .flat_map(|h| h.locals_chosen.iter().enumerate().map(|(i, &l)| (h.weight(), &d.tracks[i].locals[l]))),
            );
            let output = phd_moments(q.bernoullis.iter().map(|b| (1.0, b)));
            assert!((input.0 - output.0).abs() < 1e-12);
            assert!((&input.1 - &output.1).amax() < 1e-9);
            assert!((&input.2 - &output.2).amax() < 1e-9 * input.2.amax().max(1.0));
            assert_eq!(q.ppp, d.ppp);
        }
    }

    #[test]
    fn phd_is_pointwise_preserved_when_slots_do_not_mix() {
        // Every hypothesis selects the same locals, so each slot merges copies
        // of one Gaussian and the projected PHD equals the input PHD.
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..50 {
            let n = rng.random_range(1..5);
            let mut d = random_pmbm(&mut rng, n, 1);
            let chosen = d.hypotheses[0].locals_chosen.clone();
            d.hypotheses = vec![hyp(0.25, chosen.clone()), hyp(0.75, chosen)];
            let (q, _) = vpmb_project(&d, 0.0, 20).unwrap();
            let as_pmbm = PmbmDensity::from_pmb(q, 0);
            for _ in 0..100 {
                let x = DVector::from_fn(2, |_, _| rng.random_range(-8.0..8.0));
                let a = compute_phd(&d, &x).unwrap();
                let b = compute_phd(&as_pmbm, &x).unwrap();
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn unchanged_permutations_repeat_the_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let n = rng.random_range(1..5);
            let d = random_pmbm(&mut rng, n, 6);
            let (q, _) = vpmb_project(&d, 0.0, 20).unwrap();
            let (p1, c1) = optimize_permutations(&d, &q).unwrap();
            let q1 = merge_bernoullis_under_permutations(&d, &p1).unwrap();
            let (p2, c2) = optimize_permutations(&d, &q1).unwrap();
            if p1 == p2 {
                let q2 = merge_bernoullis_under_permutations(&d, &p2).unwrap();
                let (_, c3) = optimize_permutations(&d, &q2).unwrap();
                assert_eq!(c2, c3);
            }
            assert!(c2 <= c1 + 1e-9);
        }
    }

    #[test]
    fn pmb_input_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..50 {
            let n = rng.random_range(0..5);
            let pmb = PmbDensity {
                ppp: PppIntensity::default(),
                bernoullis: (0..n).map(|_| bern(rng.random_range(0.1..1.0), rng.random_range(-9.0..9.0), rng.random_range(0.5..2.0))).collect(),
            };
            let d = PmbmDensity::from_pmb(pmb.clone(), 0);
            let (q, report) = vpmb_project(&d, 0.1, 20).unwrap();
            assert_eq!(q, pmb);
            assert!(report.converged);
            assert_eq!(to_pmb(&d).unwrap(), pmb);
            assert_eq!(gnn_pmb(&d).unwrap(), pmb);
        }
    }

    #[test]
    fn iteration_zero_is_track_oriented() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let n = rng.random_range(0..5);
            let d = random_pmbm(&mut rng, n, 8);
            let a = to_pmb(&d).unwrap();
            let b = merge_bernoullis_under_permutations(&d, &PermutationSet::identity(d.hypotheses.len(), d.tracks.len())).unwrap();
            for (x, y) in a.bernoullis.iter().zip(&b.bernoullis) {
                assert!((x.existence - y.existence).abs() < 1e-10);
                assert!((x.density.mean() - y.density.mean()).amax() < 1e-10);
                assert!((x.density.cov() - y.density.cov()).amax() < 1e-10);
            }
        }
        let d = PmbmDensity {
            ppp: PppIntensity::default(),
            tracks: vec![Track { id: 0, locals: vec![bern(0.3, 1.0, 1.0)] }],
            hypotheses: vec![hyp(0.5, vec![0]), hyp(0.5, vec![0])],
        };
        assert_close(&to_pmb(&d).unwrap().bernoullis[0], 0.3, 1.0, 1.0);
    }

    #[test]
    fn gnn_examples() {
        let d = PmbmDensity {
            ppp: PppIntensity::default(),
            tracks: vec![Track { id: 0, locals: vec![bern(0.3, 1.0, 1.0), bern(0.9, 2.0, 1.0)] }],
            hypotheses: vec![hyp(0.7, vec![0]), hyp(0.3, vec![1])],
        };
        assert_close(&gnn_pmb(&d).unwrap().bernoullis[0], 0.3, 1.0, 1.0);
        let tie = PmbmDensity { hypotheses: vec![hyp(0.5, vec![1]), hyp(0.5, vec![0])], ..d };
        assert_close(&gnn_pmb(&tie).unwrap().bernoullis[0], 0.9, 2.0, 1.0);
    }

    #[test]
    fn report_text() {
        let r = ProjectionReport { iterations_run: 2, cost_trace: vec![1.5, 1.0], converged: true };
        assert_eq!(
            r.to_text(),
            "iterations_run = 2\nconverged = true\ncost_trace = [1.5000000000000000e0, 1.0000000000000000e0]\n"
        );
    }

    /// Coordinate descent without skipping the repeated update.
    fn reference_vpmb(d: &PmbmDensity, gamma: f64, max_iter: usize) -> (PmbDensity, Vec<f64>, bool) {
        let mut q = to_pmb(d).unwrap();
        let mut perms = PermutationSet::identity(d.hypotheses.len(), d.tracks.len());
        let mut trace = Vec::new();
        let mut previous = f64::INFINITY;
        for _ in 0..max_iter {
            let (next, cost) = optimize_permutations_near(d, &q, Some(&perms)).unwrap();
            perms = next;
            trace.push(cost);
            q = merge_bernoullis_under_permutations(d, &perms).unwrap();
            if (cost - previous).abs() <= gamma {
                return (q, trace, true);
            }
            previous = cost;
        }
        (q, trace, false)
    }

    #[test]
    fn matches_plain_coordinate_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for _ in 0..200 {
            let n = rng.random_range(0..5);
            let d = random_pmbm(&mut rng, n, 8);
            let gamma = [0.0, 1e-3, 0.1][rng.random_range(0..3)];
            let max_iter = rng.random_range(1..6);
            let (q, report) = vpmb_project(&d, gamma, max_iter).unwrap();
            let (q_ref, trace, converged) = reference_vpmb(&d, gamma, max_iter);
            assert_eq!(report.cost_trace, trace);
            assert_eq!(report.iterations_run, trace.len());
            assert_eq!(report.converged, converged);
            for (a, b) in q.bernoullis.iter().zip(&q_ref.bernoullis) {
                assert!((a.existence - b.existence).abs() < 1e-12);
                assert!((a.density.mean() - b.density.mean()).amax() < 1e-9);
            }
        }
    }
}
