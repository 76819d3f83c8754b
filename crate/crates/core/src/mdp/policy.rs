use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// How actions are chosen in each state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Always action 0.
    GlobalControl,
    /// Always action 1.
    GlobalTreatment,
    /// Action 1 with probability `p`, else action 0.
    BernoulliMix { p: f64 },
    /// Always `action`.
    Fixed { action: usize },
    /// The same action distribution in every state.
    Categorical { probs: Vec<f64> },
    /// One action distribution per state.
    Tabular { probs: Vec<Vec<f64>> },
}

const SUM_TOL: f64 = 1e-12;

fn check_distribution(probs: &[f64], n_actions: usize) -> Result<()> {
    if probs.len() != n_actions {
        return Err(Error::DimensionMismatch {
            axis: "policy actions",
            expected: n_actions,
            found: probs.len(),
        });
    }
    if probs.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid("policy", "negative or non-finite action probability"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(invalid("policy", format!("action probabilities sum to {total}")));
    }
    Ok(())
}

impl PolicySpec {
    pub fn bernoulli(p: f64) -> Self {
        PolicySpec::BernoulliMix { p }
    }

    /// Action distribution in `state`. State-free policies accept `None`.
    pub fn distribution(&self, state: Option<usize>, n_actions: usize) -> Result<Vec<f64>> {
        let binary = |p1: f64| -> Result<Vec<f64>> {
            if n_actions < 2 {
                return Err(Error::DimensionMismatch {
                    axis: "policy actions",
                    expected: 2,
                    found: n_actions,
                });
            }
            let mut v = vec![0.0; n_actions];
            v[0] = 1.0 - p1;
            v[1] = p1;
            Ok(v)
        };
        let out = match self {
            PolicySpec::GlobalControl => binary(0.0)?,
            PolicySpec::GlobalTreatment => binary(1.0)?,
            PolicySpec::BernoulliMix { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(invalid("policy", format!("mixing probability {p} outside [0,1]")));
                }
                if n_actions != 2 {
                    return Err(Error::DimensionMismatch {
                        axis: "policy actions",
                        expected: 2,
                        found: n_actions,
                    });
                }
                binary(*p)?
            }
            PolicySpec::Fixed { action } => {
                if *action >= n_actions {
                    return Err(Error::DimensionMismatch {
                        axis: "policy actions",
                        expected: n_actions,
                        found: action + 1,
                    });
                }
                let mut v = vec![0.0; n_actions];
                v[*action] = 1.0;
                v
            }
            PolicySpec::Categorical { probs } => {
                check_distribution(probs, n_actions)?;
                probs.clone()
            }
            PolicySpec::Tabular { probs } => {
                let s = state.ok_or_else(|| invalid("policy", "tabular policy needs a state"))?;
                let row = probs.get(s).ok_or(Error::DimensionMismatch {
                    axis: "policy states",
                    expected: s + 1,
                    found: probs.len(),
                })?;
                check_distribution(row, n_actions)?;
                row.clone()
            }
        };
        Ok(out)
    }

    /// Whether the action distribution is the same in every state.
    pub fn is_state_free(&self) -> bool {
        !matches!(self, PolicySpec::Tabular { .. })
    }

    /// `n_states x n_actions` matrix of action probabilities.
    pub fn matrix(&self, n_states: usize, n_actions: usize) -> Result<Matrix> {
        if let PolicySpec::Tabular { probs } = self {
            if probs.len() != n_states {
                return Err(Error::DimensionMismatch {
                    axis: "policy states",
                    expected: n_states,
                    found: probs.len(),
                });
            }
        }
        let mut m = Matrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            let d = self.distribution(Some(s), n_actions)?;
            for (a, x) in d.into_iter().enumerate() {
                m[(s, a)] = x;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_rows() {
        let m = PolicySpec::bernoulli(0.3).matrix(2, 2).unwrap();
        assert_eq!(m[(1, 0)], 0.7);
        assert_eq!(m[(1, 1)], 0.3);
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(PolicySpec::bernoulli(1.5).matrix(2, 2).is_err());
        let t = PolicySpec::Tabular {
            probs: vec![vec![0.5, 0.6]],
        };
        assert!(t.matrix(1, 2).is_err());
    }

    #[test]
    fn fixed_out_of_range() {
        assert!(PolicySpec::Fixed { action: 3 }.matrix(2, 3).is_err());
        assert_eq!(PolicySpec::Fixed { action: 2 }.matrix(1, 3).unwrap()[(0, 2)], 1.0);
    }
}
