//! Sampling sessions from a tabular MDP.

use rand::Rng;

use crate::data::{SessionLog, SessionStep};
use crate::error::{invalid, Result};

use super::{PolicySpec, TabularMdp};

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// One episode until absorption (or `max_steps`), with states recorded.
///
/// Creator ids are `first_unit, first_unit + 1, ...`: each step is its own randomization
/// unit, so actions are independent across steps.
pub fn sample_session<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicySpec,
    viewer_id: u64,
    first_unit: u32,
    max_steps: usize,
    rng: &mut R,
) -> Result<SessionLog> {
    if mdp.absorbing_set().is_none() {
        return Err(invalid("rollout", "sessions need an absorbing set"));
    }
    if mdp.n_actions() > u8::MAX as usize + 1 {
        return Err(invalid("rollout", "too many actions"));
    }
    let n = mdp.n_states();
    let mut s = draw_index(rng, mdp.rho_init().iter().copied());
    let mut steps = Vec::new();
    let mut watched = 0.0;
    while !mdp.is_absorbing(s) {
        if steps.len() == max_steps {
            return Ok(SessionLog {
                viewer_id,
                steps,
                terminated: false,
            });
        }
        let dist = policy.distribution(Some(s), mdp.n_actions())?;
        let a = draw_index(rng, dist.into_iter());
        let r = mdp.reward(s, a);
        steps.push(SessionStep {
            creator: first_unit + steps.len() as u32,
            action: a as u8,
            reward: r,
            cumulative_watch: watched,
            state: Some(s as u32),
        });
        watched += r;
        let p = mdp.transition(a);
        s = draw_index(rng, (0..n).map(|t| p[(s, t)]));
    }
    Ok(SessionLog {
        viewer_id,
        steps,
        terminated: true,
    })
}
