#![allow(dead_code)]

use dqlab::data::{SessionLog, SessionStep};
use dqlab::linalg::{Matrix, Vector};
use dqlab::mdp::random::random_simplex;
use dqlab::mdp::TabularMdp;
use rand::Rng;

/// Absorbing MDP whose states come in `layers` layers of `width`; every step moves one
/// layer down or absorbs, so sessions last at most `layers` steps.
pub fn layered_mdp<R: Rng>(rng: &mut R, layers: usize, width: usize) -> TabularMdp {
    let n = layers * width + 1;
    let abs = n - 1;
    let kernel = |rng: &mut R| {
        let mut m = Matrix::zeros(n, n);
        for l in 0..layers {
            for x in 0..width {
                let s = l * width + x;
                if l + 1 == layers {
                    m[(s, abs)] = 1.0;
                    continue;
                }
                let stop = rng.random_range(0.0..0.4);
                for (y, q) in random_simplex(rng, width).into_iter().enumerate() {
                    m[(s, (l + 1) * width + y)] = (1.0 - stop) * q;
                }
                m[(s, abs)] = stop;
            }
        }
        m[(abs, abs)] = 1.0;
        m
    };
    let p0 = kernel(rng);
    let p1 = kernel(rng);
    let mut r = Matrix::from_fn(n, 2, |_, _| rng.random_range(0.0..5.0));
    r.row_mut(abs).fill(0.0);
    let mut rho = Vector::zeros(n);
    for (x, q) in random_simplex(rng, width).into_iter().enumerate() {
        rho[x] = q;
    }
    TabularMdp::from_parts(vec![p0, p1], r, rho, Some(vec![abs])).unwrap()
}

/// Every session with its probability when each step's action is Bernoulli(`p`) on its
/// own creator (creator id = step index). States are recorded.
pub fn enumerate_sessions(mdp: &TabularMdp, p: f64) -> Vec<(f64, SessionLog)> {
    fn go(mdp: &TabularMdp, p: f64, s: usize, prob: f64, steps: &mut Vec<SessionStep>, watched: f64, out: &mut Vec<(f64, SessionLog)>) {
        if mdp.is_absorbing(s) {
            out.push((
                prob,
                SessionLog {
                    viewer_id: out.len() as u64,
                    steps: steps.clone(),
                    terminated: true,
                },
            ));
            return;
        }
        for a in 0..2usize {
            let pa = if a == 1 { p } else { 1.0 - p };
            if pa == 0.0 {
                continue;
            }
            let r = mdp.reward(s, a);
            steps.push(SessionStep {
                creator: steps.len() as u32,
                action: a as u8,
                reward: r,
                cumulative_watch: watched,
                state: Some(s as u32),
            });
            let k = mdp.transition(a);
            for u in 0..mdp.n_states() {
                if k[(s, u)] > 0.0 {
                    go(mdp, p, u, prob * pa * k[(s, u)], steps, watched + r, out);
                }
            }
            steps.pop();
        }
    }
    let mut out = Vec::new();
    for s in 0..mdp.n_states() {
        let q = mdp.rho_init()[s];
        if q > 0.0 {
            go(mdp, p, s, q, &mut Vec::new(), 0.0, &mut out);
        }
    }
    out
}

/// `E[f(session)]` over an enumeration.
pub fn expectation(sessions: &[(f64, SessionLog)], f: impl Fn(&SessionLog) -> f64) -> f64 {
    sessions.iter().map(|(q, s)| q * f(s)).sum()
}

/// A session over the given creators and rewards, actions from `assignments`.
pub fn session(viewer_id: u64, creators: &[u32], rewards: &[f64], assignments: &[u8]) -> SessionLog {
    let mut w = 0.0;
    SessionLog {
        viewer_id,
        steps: creators
            .iter()
            .zip(rewards)
            .map(|(&c, &r)| {
                let s = SessionStep {
                    creator: c,
                    action: assignments[c as usize],
                    reward: r,
                    cumulative_watch: w,
                    state: None,
                };
                w += r;
                s
            })
            .collect(),
        terminated: true,
    }
}
