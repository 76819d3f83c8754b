use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{resolvent, Matrix, Vector};

use super::MixingConstants;

fn successors(p: &Matrix, s: usize) -> impl Iterator<Item = usize> + '_ {
    (0..p.ncols()).filter(move |&t| p[(s, t)] > 0.0)
}

fn reach(p: &Matrix, start: usize, reverse: bool) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let edge = if reverse { p[(v, u)] } else { p[(u, v)] };
            if edge > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

pub fn is_irreducible(p: &Matrix) -> bool {
    reach(p, 0, false).iter().all(|&x| x) && reach(p, 0, true).iter().all(|&x| x)
}

/// Aperiodicity of an irreducible chain (gcd of cycle lengths is 1).
pub fn is_aperiodic(p: &Matrix) -> bool {
    let n = p.nrows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    let mut g = 0usize;
    while let Some(u) = queue.pop_front() {
        for v in successors(p, u) {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                let d = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, d);
            }
        }
    }
    g == 1
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fails with the first transient state from which the absorbing set cannot be reached.
pub(crate) fn check_absorption(p: &Matrix, absorbing: &[bool]) -> Result<()> {
    let n = p.nrows();
    let mut reaches = absorbing.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| absorbing[s]).collect();
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !reaches[v] && p[(v, u)] > 0.0 {
                reaches[v] = true;
                queue.push_back(v);
            }
        }
    }
    match reaches.iter().position(|&x| !x) {
        Some(state) => Err(Error::AbsorptionUnreachable { state }),
        None => Ok(()),
    }
}

pub(crate) fn check_ergodic(p: &Matrix) -> Result<()> {
    if !is_irreducible(p) {
        return Err(Error::ErgodicityViolated("chain is reducible".into()));
    }
    if !is_aperiodic(p) {
        return Err(Error::ErgodicityViolated("chain is periodic".into()));
    }
    Ok(())
}

/// Expected steps to absorption from each state, `(I - P~)^{-1} 1` on transient states, 0 on absorbing ones.
pub fn absorption_times(p: &Matrix, absorbing: &[bool]) -> Result<Vector> {
    check_absorption(p, absorbing)?;
    let transient: Vec<usize> = (0..p.nrows()).filter(|&s| !absorbing[s]).collect();
    let sub = p.select_rows(&transient).select_columns(&transient);
    let inv = resolvent(&sub, "absorption times")?;
    let t = &inv.inv * Vector::from_element(transient.len(), 1.0);
    let mut out = Vector::zeros(p.nrows());
    for (i, &s) in transient.iter().enumerate() {
        out[s] = t[i];
    }
    Ok(out)
}

/// `d_k = max_s TV(P^k(s,.), rho)` for `k = 1..=k_fit`.
pub fn mixing_profile(p: &Matrix, rho: &Vector, k_fit: usize) -> Vec<f64> {
    let n = p.nrows();
    let mut pk = p.clone();
    let mut out = Vec::with_capacity(k_fit);
    for _ in 0..k_fit {
        let d = (0..n)
            .map(|s| 0.5 * (0..n).map(|t| (pk[(s, t)] - rho[t]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        out.push(d);
        pk = &pk * p;
    }
    out
}

/// Distances below this are treated as fully mixed (round-off level).
const MIXED_FLOOR: f64 = 1e-13;

/// Geometric envelope `C beta^k >= d_k` minimizing `(2 ln C + 1)/(1 - beta)`.
///
/// `C = max(1, max_k d_k / beta^k)`; beta is searched on a grid dense near 1 and refined.
pub fn fit_mixing(profile: &[f64]) -> MixingConstants {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > MIXED_FLOOR)
        .map(|(i, &d)| ((i + 1) as f64, d.ln()))
        .collect();
    let ln_c = |beta: f64| -> f64 {
        let lb = beta.ln();
        pts.iter().map(|&(k, ld)| ld - k * lb).fold(0.0, f64::max)
    };
    let cost = |beta: f64| (2.0 * ln_c(beta) + 1.0) / (1.0 - beta);
    let mut best = (f64::INFINITY, 0.5);
    let consider = |best: &mut (f64, f64), beta: f64| {
        let c = cost(beta);
        if c < best.0 {
            *best = (c, beta);
        }
    };
    for i in 1..1000 {
        consider(&mut best, i as f64 / 1000.0);
    }
    for i in 1..=600 {
        consider(&mut best, 1.0 - 10f64.powf(-3.0 - i as f64 * 0.01));
    }
    // local refinement around the grid optimum
    let mut step = 1e-3;
    for _ in 0..60 {
        let b = best.1;
        for cand in [b - step, b + step] {
            if cand > 0.0 && cand < 1.0 {
                consider(&mut best, cand);
            }
        }
        step *= 0.7;
    }
    let beta = best.1;
    MixingConstants {
        c: ln_c(beta).exp(),
        beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_two_cycle() {
        let p = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(is_irreducible(&p));
        assert!(!is_aperiodic(&p));
        let q = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        assert!(is_aperiodic(&q));
    }

    #[test]
    fn reducible_detected() {
        let p = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!(!is_irreducible(&p));
        assert!(check_ergodic(&p).is_err());
    }

    #[test]
    fn geometric_absorption_time() {
        // leave w.p. 0.25 each step: mean 4 steps
        let p = Matrix::from_row_slice(2, 2, &[0.75, 0.25, 0.0, 1.0]);
        let t = absorption_times(&p, &[false, true]).unwrap();
        assert!((t[0] - 4.0).abs() < 1e-12);
        let trap = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            absorption_times(&trap, &[false, false, true]),
            Err(Error::AbsorptionUnreachable { state: 0 })
        ));
    }

    #[test]
    fn envelope_covers_profile() {
        let p = Matrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4]);
        let (rho, _) = crate::linalg::stationary(&p).unwrap();
        let prof = mixing_profile(&p, &rho, 200);
        let m = fit_mixing(&prof);
        assert!(m.c >= 1.0 && m.beta > 0.0 && m.beta < 1.0);
        for (i, d) in prof.iter().enumerate() {
            if *d > MIXED_FLOOR {
                assert!(*d <= m.c * m.beta.powi(i as i32 + 1) * (1.0 + 1e-9));
            }
        }
    }
}
