//! Finite tabular MDPs and their exact evaluation under four reward settings.

mod chain;
mod eval;
pub mod instances;
mod policy;
pub mod random;
pub mod rollout;
mod setting;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{Matrix, Vector};

pub use chain::{absorption_times, fit_mixing, is_aperiodic, is_irreducible, mixing_profile};
pub(crate) use eval::Evaluator;
pub use eval::{QLayout, QTable};
pub use policy::PolicySpec;
pub use setting::{MixingConstants, SettingSpec};

const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite MDP with per-action kernels, per-(state, action) rewards and an initial law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    transitions: Vec<Matrix>,
    rewards: Matrix,
    rho_init: Vector,
    absorbing: Option<Vec<usize>>,
    absorbing_mask: Vec<bool>,
}

/// JSON shape of a [`TabularMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub rho_init: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorbing: Option<Vec<usize>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;
    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.p.len() != doc.n_actions {
            return Err(Error::DimensionMismatch {
                axis: "P actions",
                expected: doc.n_actions,
                found: doc.p.len(),
            });
        }
        TabularMdp::new(doc.p, doc.r, doc.rho_init, doc.absorbing).and_then(|m| {
            if m.n_states() != doc.n_states {
                Err(Error::DimensionMismatch {
                    axis: "states",
                    expected: doc.n_states,
                    found: m.n_states(),
                })
            } else {
                Ok(m)
            }
        })
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let n = m.n_states();
        MdpDocument {
            n_states: n,
            n_actions: m.n_actions(),
            p: m
                .transitions
                .iter()
                .map(|pa| (0..n).map(|s| pa.row(s).iter().copied().collect()).collect())
                .collect(),
            r: (0..n).map(|s| m.rewards.row(s).iter().copied().collect()).collect(),
            rho_init: m.rho_init.iter().copied().collect(),
            absorbing: m.absorbing,
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP. `p[a][s][s']`, `r[s][a]`.
    pub fn new(
        p: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
        rho_init: Vec<f64>,
        absorbing: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n_actions = p.len();
        if n_actions == 0 {
            return Err(invalid("mdp", "no actions"));
        }
        let n = rho_init.len();
        if n == 0 {
            return Err(invalid("mdp", "no states"));
        }
        let mut transitions = Vec::with_capacity(n_actions);
        for pa in &p {
            if pa.len() != n {
                return Err(Error::DimensionMismatch {
                    axis: "P rows",
                    expected: n,
                    found: pa.len(),
                });
            }
            let mut m = Matrix::zeros(n, n);
            for (s, row) in pa.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::DimensionMismatch {
                        axis: "P columns",
                        expected: n,
                        found: row.len(),
                    });
                }
                for (t, &x) in row.iter().enumerate() {
                    m[(s, t)] = x;
                }
            }
            transitions.push(m);
        }
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                axis: "r states",
                expected: n,
                found: r.len(),
            });
        }
        let mut rewards = Matrix::zeros(n, n_actions);
        for (s, row) in r.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch {
                    axis: "r actions",
                    expected: n_actions,
                    found: row.len(),
                });
            }
            for (a, &x) in row.iter().enumerate() {
                rewards[(s, a)] = x;
            }
        }
        Self::from_parts(transitions, rewards, Vector::from_vec(rho_init), absorbing)
    }

    /// Builds from nalgebra parts: one `n x n` kernel per action, `n x A` rewards.
    pub fn from_parts(
        transitions: Vec<Matrix>,
        rewards: Matrix,
        rho_init: Vector,
        absorbing: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = rho_init.len();
        let n_actions = transitions.len();
        if rewards.nrows() != n {
            return Err(Error::DimensionMismatch {
                axis: "r states",
                expected: n,
                found: rewards.nrows(),
            });
        }
        if rewards.ncols() != n_actions {
            return Err(Error::DimensionMismatch {
                axis: "r actions",
                expected: n_actions,
                found: rewards.ncols(),
            });
        }
        for (a, pa) in transitions.iter().enumerate() {
            if pa.nrows() != n || pa.ncols() != n {
                return Err(Error::DimensionMismatch {
                    axis: "P states",
                    expected: n,
                    found: if pa.nrows() != n { pa.nrows() } else { pa.ncols() },
                });
            }
            for s in 0..n {
                let row = pa.row(s);
                if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(invalid("mdp", format!("P[{a}] row {s} has a negative entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(invalid("mdp", format!("P[{a}] row {s} sums to {sum}")));
                }
            }
        }
        if rewards.iter().any(|x| !x.is_finite()) {
            return Err(invalid("mdp", "non-finite reward"));
        }
        if rho_init.iter().any(|&x| !(x >= 0.0)) {
            return Err(invalid("mdp", "negative initial probability"));
        }
        let total: f64 = rho_init.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(invalid("mdp", format!("rho_init sums to {total}")));
        }
        let mut absorbing_mask = vec![false; n];
        if let Some(set) = &absorbing {
            for &s in set {
                if s >= n {
                    return Err(Error::DimensionMismatch {
                        axis: "absorbing state",
                        expected: n,
                        found: s + 1,
                    });
                }
                absorbing_mask[s] = true;
            }
            for &s in set {
                for (a, pa) in transitions.iter().enumerate() {
                    let inside: f64 = (0..n).filter(|&t| absorbing_mask[t]).map(|t| pa[(s, t)]).sum();
                    if (inside - 1.0).abs() > STOCHASTIC_TOL {
                        return Err(invalid("mdp", format!("absorbing state {s} leaks under action {a}")));
                    }
                    if rewards[(s, a)] != 0.0 {
                        return Err(invalid("mdp", format!("absorbing state {s} pays reward under action {a}")));
                    }
                }
            }
        }
        Ok(TabularMdp {
            transitions,
            rewards,
            rho_init,
            absorbing,
            absorbing_mask,
        })
    }

    pub fn n_states(&self) -> usize {
        self.rho_init.len()
    }
    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }
    pub fn transition(&self, action: usize) -> &Matrix {
        &self.transitions[action]
    }
    pub fn rewards(&self) -> &Matrix {
        &self.rewards
    }
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[(state, action)]
    }
    pub fn rho_init(&self) -> &Vector {
        &self.rho_init
    }
    pub fn absorbing_set(&self) -> Option<&[usize]> {
        self.absorbing.as_deref()
    }
    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing_mask[state]
    }
    pub fn transient_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| !self.absorbing_mask[s]).collect()
    }

    /// `max_{s,a} |r(s,a)|`.
    pub fn r_max(&self) -> f64 {
        self.rewards.amax()
    }

    /// Same MDP with actions 0 and 1 swapped.
    pub fn swap_binary_actions(&self) -> Result<Self> {
        if self.n_actions() != 2 {
            return Err(Error::DimensionMismatch {
                axis: "actions",
                expected: 2,
                found: self.n_actions(),
            });
        }
        let mut rewards = self.rewards.clone();
        rewards.swap_columns(0, 1);
        Self::from_parts(
            vec![self.transitions[1].clone(), self.transitions[0].clone()],
            rewards,
            self.rho_init.clone(),
            self.absorbing.clone(),
        )
    }

    /// Same MDP with the reward table replaced.
    pub fn with_rewards(&self, rewards: Matrix) -> Result<Self> {
        Self::from_parts(
            self.transitions.clone(),
            rewards,
            self.rho_init.clone(),
            self.absorbing.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `P_pi(s,s') = sum_a pi(a|s) P[a](s,s')` and `r_pi(s) = sum_a pi(a|s) r(s,a)`.
pub fn induced_kernel(mdp: &TabularMdp, policy: &PolicySpec) -> Result<(Matrix, Vector)> {
    let pi = policy.matrix(mdp.n_states(), mdp.n_actions())?;
    Ok(induced_from_matrix(mdp, &pi))
}

pub(crate) fn induced_from_matrix(mdp: &TabularMdp, pi: &Matrix) -> (Matrix, Vector) {
    let n = mdp.n_states();
    let mut kernel = Matrix::zeros(n, n);
    let mut reward = Vector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = pi[(s, a)];
            if w == 0.0 {
                continue;
            }
            reward[s] += w * mdp.rewards[(s, a)];
            for t in 0..n {
                kernel[(s, t)] += w * mdp.transitions[a][(s, t)];
            }
        }
    }
    (kernel, reward)
}

/// Total-variation distance between two kernels, maximized over rows.
pub fn tv_between(p: &Matrix, q: &Matrix) -> f64 {
    (0..p.nrows())
        .map(|s| 0.5 * (0..p.ncols()).map(|t| (p[(s, t)] - q[(s, t)]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `max_s TV(P_0(s,.), P_1(s,.))`.
pub fn tv_delta(mdp: &TabularMdp) -> Result<f64> {
    if mdp.n_actions() < 2 {
        return Err(Error::DimensionMismatch {
            axis: "actions",
            expected: 2,
            found: mdp.n_actions(),
        });
    }
    Ok(tv_between(mdp.transition(0), mdp.transition(1)))
}

/// `Ẽ_pi r_pi`, the policy's value weighted by the initial law.
pub fn value(mdp: &TabularMdp, policy: &PolicySpec, setting: &SettingSpec) -> Result<f64> {
    let ev = Evaluator::new(mdp, policy, setting)?;
    Ok(ev.value())
}

/// Q-table of `policy` for the per-(s,a) reward `reward_override` (defaults to the MDP's rewards).
pub fn q_function(
    mdp: &TabularMdp,
    policy: &PolicySpec,
    setting: &SettingSpec,
    reward_override: Option<&Matrix>,
) -> Result<QTable> {
    let ev = Evaluator::new(mdp, policy, setting)?;
    let r = match reward_override {
        Some(r) => {
            if r.nrows() != mdp.n_states() || r.ncols() != mdp.n_actions() {
                return Err(Error::DimensionMismatch {
                    axis: "reward override",
                    expected: mdp.n_states() * mdp.n_actions(),
                    found: r.nrows() * r.ncols(),
                });
            }
            r.clone()
        }
        None => mdp.rewards.clone(),
    };
    Ok(ev.q_table(&ev.lift_sa(&r)))
}

/// `J_{pi_1} - J_{pi_0}`.
pub fn exact_ate(mdp: &TabularMdp, setting: &SettingSpec) -> Result<f64> {
    Ok(value(mdp, &PolicySpec::GlobalTreatment, setting)?
        - value(mdp, &PolicySpec::GlobalControl, setting)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        TabularMdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.9, 0.1], vec![0.9, 0.1]],
            ],
            vec![vec![1.0, 2.0], vec![0.0, 3.0]],
            vec![0.5, 0.5],
            None,
        )
        .unwrap()
    }

    #[test]
    fn hand_tv() {
        assert!((tv_delta(&two_state()).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn half_mixture_is_average() {
        let m = two_state();
        let (k, r) = induced_kernel(&m, &PolicySpec::bernoulli(0.5)).unwrap();
        let expect = (m.transition(0) + m.transition(1)) * 0.5;
        assert_eq!(k, expect);
        assert_eq!(r[0], 1.5);
        let (k0, _) = induced_kernel(&m, &PolicySpec::bernoulli(0.0)).unwrap();
        assert_eq!(&k0, m.transition(0));
    }

    #[test]
    fn rejects_leaky_absorbing_state() {
        let err = TabularMdp::new(
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
            vec![vec![1.0], vec![0.0]],
            vec![1.0, 0.0],
            Some(vec![1]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_wrong_shapes() {
        let e = TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0, 2.0]], vec![1.0], None).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { axis: "r actions", .. }));
    }

    #[test]
    fn json_round_trip() {
        let m = instances::fixed_session_length();
        let back = TabularMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = r#"{"n_states":1,"n_actions":1,"P":[[[0.7]]],"r":[[0]],"rho_init":[1]}"#;
        assert!(TabularMdp::from_json(bad).is_err());
    }
}
