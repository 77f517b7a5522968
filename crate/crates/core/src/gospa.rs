//! GOSPA metric with `alpha = 2` and its decomposition into localisation,
//! missed-target and false-target costs.

use nalgebra::DVector;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};

/// Costs are in the `p`-th power domain: `total^p = localisation + missed_cost + false_cost`.
#[derive(Debug, Clone, PartialEq)]
pub struct GospaResult {
    pub total: f64,
    pub localisation: f64,
    pub missed: usize,
    pub missed_cost: f64,
    pub false_: usize,
    pub false_cost: f64,
}

pub fn gospa(truth: &[DVector<f64>], estimates: &[DVector<f64>], p: f64, c: f64) -> Result<GospaResult> {
    if !(p >= 1.0 && c > 0.0) {
        return Err(Error::contract(format!("GOSPA needs p >= 1 and c > 0, got p = {p}, c = {c}")));
    }
    let cp = c.powf(p);
    let half = cp / 2.0;
    let n = truth.len();
    let m = estimates.len();
    let mut dist = vec![vec![0.0; m]; n];
    for (i, x) in truth.iter().enumerate() {
        for (j, y) in estimates.iter().enumerate() {
            if x.len() != y.len() {
                return Err(Error::contract("GOSPA points of different dimension"));
            }
            dist[i][j] = (x - y).norm();
        }
    }
    // Columns: estimates, then one "unassigned" column per truth point. Every
    // estimate starts out charged as false, so pairing refunds its half.
    let mut cost = CostMatrix::filled(n, m + n, half);
    for (i, row) in dist.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            cost.set(i, j, d.powf(p).min(cp) - half);
        }
    }
    let a = solve_assignment(&cost)?;
    let mut localisation = 0.0;
    let mut paired = 0;
    for (i, &j) in a.mapping.iter().enumerate() {
        if j < m && dist[i][j] < c {
            localisation += dist[i][j].powf(p);
            paired += 1;
        }
    }
    let missed = n - paired;
    let false_ = m - paired;
    let missed_cost = half * missed as f64;
    let false_cost = half * false_ as f64;
    Ok(GospaResult {
        total: (localisation + missed_cost + false_cost).powf(1.0 / p),
        localisation,
        missed,
        missed_cost,
        false_,
        false_cost,
    })
}

/// Root mean square of per-run GOSPA totals.
pub fn rms_gospa(per_run_totals: &[f64]) -> Result<f64> {
    if per_run_totals.is_empty() {
        return Err(Error::contract("rms_gospa of an empty sequence"));
    }
    Ok((per_run_totals.iter().map(|t| t * t).sum::<f64>() / per_run_totals.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[&[f64]]) -> Vec<DVector<f64>> {
        v.iter().map(|x| DVector::from_column_slice(x)).collect()
    }

    #[test]
    fn examples() {
        let x = pts(&[&[1.0, 2.0], &[30.0, 4.0]]);
        let r = gospa(&x, &x, 2.0, 10.0).unwrap();
        assert_eq!(r.total, 0.0);

        let r = gospa(&pts(&[&[0.0, 0.0]]), &[], 2.0, 10.0).unwrap();
        assert!((r.total - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!((r.missed, r.false_), (1, 0));

        let r = gospa(&pts(&[&[0.0]]), &pts(&[&[3.0]]), 2.0, 10.0).unwrap();
        assert!((r.total - 3.0).abs() < 1e-12);
        assert!((r.localisation - 9.0).abs() < 1e-12);
        assert_eq!((r.missed, r.false_), (0, 0));

        assert!(gospa(&[], &[], 0.5, 10.0).is_err());
        assert_eq!(gospa(&[], &[], 2.0, 10.0).unwrap().total, 0.0);
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms_gospa(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((rms_gospa(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rms_gospa(&[2.5]).unwrap(), 2.5);
        assert!(rms_gospa(&[]).is_err());
    }

    /// Minimum over all partial assignments, by recursion over truth points.
    fn brute(truth: &[DVector<f64>], est: &[DVector<f64>], p: f64, c: f64) -> f64 {
        fn rec(i: usize, truth: &[DVector<f64>], est: &[DVector<f64>], used: &mut Vec<bool>, p: f64, c: f64) -> f64 {
            let half = c.powf(p) / 2.0;
            if i == truth.len() {
                return half * used.iter().filter(|u| !**u).count() as f64;
            }
            let mut best = half + rec(i + 1, truth, est, used, p, c);
            for j in 0..est.len() {
                if !used[j] {
                    used[j] = true;
                    let d = (&truth[i] - &est[j]).norm().powf(p);
                    best = best.min(d + rec(i + 1, truth, est, used, p, c));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, truth, est, &mut vec![false; est.len()], p, c).powf(1.0 / p)
    }

    fn random_set(rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        let k = rng.random_range(0..=4);
        (0..k).map(|_| DVector::from_fn(2, |_, _| rng.random_range(0.0..25.0))).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..500 {
            let x = random_set(&mut rng);
            let y = random_set(&mut rng);
            let p = [1.0, 2.0, 3.0][rng.random_range(0..3)];
            let r = gospa(&x, &y, p, 10.0).unwrap();
            assert!((r.total - brute(&x, &y, p, 10.0)).abs() < 1e-9);
            let sum = r.localisation + r.missed_cost + r.false_cost;
            assert!((r.total.powf(p) - sum).abs() < 1e-9 * sum.max(1.0));
            assert_eq!(x.len() - r.missed, y.len() - r.false_);
        }
    }

    #[test]
    fn symmetric_and_never_pairs_beyond_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for _ in 0..500 {
            let x = random_set(&mut rng);
            let y = random_set(&mut rng);
            let a = gospa(&x, &y, 2.0, 10.0).unwrap();
            let b = gospa(&y, &x, 2.0, 10.0).unwrap();
            assert!((a.total - b.total).abs() < 1e-9);
            assert_eq!((a.missed, a.false_), (b.false_, b.missed));
            // Localisation only counts pairs closer than c.
            let paired = x.len() - a.missed;
            assert!(a.localisation < 100.0 * paired as f64 + 1e-9);
        }
        let far = gospa(&pts(&[&[0.0]]), &pts(&[&[10.0]]), 2.0, 10.0).unwrap();
        assert_eq!((far.missed, far.false_, far.localisation), (1, 1, 0.0));
    }
}
