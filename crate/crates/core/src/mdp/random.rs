//! Random instance generators for verification sweeps.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::linalg::{Matrix, Vector};

use super::{PolicySpec, TabularMdp};

/// Shape of a random MDP.
#[derive(Clone, Debug)]
pub struct RandomMdpSpec {
    /// Number of non-absorbing states.
    pub n_states: usize,
    /// `P_1 = (1 - epsilon) P_0 + epsilon U`.
    pub epsilon: f64,
    /// Add one absorbing state reached from every state with probability in `exit_range`.
    pub absorbing: bool,
    pub exit_range: (f64, f64),
    pub reward_range: (f64, f64),
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        RandomMdpSpec {
            n_states: 4,
            epsilon: 0.1,
            absorbing: false,
            exit_range: (0.1, 0.5),
            reward_range: (0.0, 1.0),
        }
    }
}

/// Dirichlet(1, ..., 1) probability vector.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Row-stochastic matrix with Dirichlet(1) rows.
pub fn random_stochastic<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for s in 0..n {
        for (t, x) in random_simplex(rng, n).into_iter().enumerate() {
            m[(s, t)] = x;
        }
    }
    m
}

fn absorbing_kernel<R: Rng + ?Sized>(rng: &mut R, n: usize, exit: (f64, f64)) -> Matrix {
    let mut m = Matrix::zeros(n + 1, n + 1);
    for s in 0..n {
        let q = rng.random_range(exit.0..=exit.1);
        for (t, x) in random_simplex(rng, n).into_iter().enumerate() {
            m[(s, t)] = (1.0 - q) * x;
        }
        m[(s, n)] = q;
    }
    m[(n, n)] = 1.0;
    m
}

/// Normalizes rows exactly to 1 after mixing.
fn renormalize(m: &mut Matrix) {
    for s in 0..m.nrows() {
        let total: f64 = m.row(s).iter().sum();
        for t in 0..m.ncols() {
            m[(s, t)] /= total;
        }
    }
}

/// A random two-action MDP. Action 1 is a perturbation of action 0.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, spec: &RandomMdpSpec) -> TabularMdp {
    let n = spec.n_states;
    let (p0, u, total) = if spec.absorbing {
        (
            absorbing_kernel(rng, n, spec.exit_range),
            absorbing_kernel(rng, n, spec.exit_range),
            n + 1,
        )
    } else {
        (random_stochastic(rng, n), random_stochastic(rng, n), n)
    };
    let mut p1 = &p0 * (1.0 - spec.epsilon) + &u * spec.epsilon;
    renormalize(&mut p1);
    let (lo, hi) = spec.reward_range;
    let mut r = Matrix::from_fn(total, 2, |_, _| rng.random_range(lo..=hi));
    let mut rho = Vector::from_vec(random_simplex(rng, n));
    if spec.absorbing {
        r.row_mut(n).fill(0.0);
        rho = rho.push(0.0);
    }
    let absorbing = spec.absorbing.then(|| vec![n]);
    TabularMdp::from_parts(vec![p0, p1], r, rho, absorbing).expect("generator output is valid")
}

/// A random state-dependent policy.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> PolicySpec {
    PolicySpec::Tabular {
        probs: (0..n_states).map(|_| random_simplex(rng, n_actions)).collect(),
    }
}
