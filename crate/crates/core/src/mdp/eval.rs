use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{deviation, resolvent, stationary, Matrix, Vector};

use super::chain::{check_absorption, check_ergodic};
use super::{induced_from_matrix, PolicySpec, SettingSpec, TabularMdp};

/// Row layout of a [`QTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QLayout {
    /// One row per state.
    States,
    /// One row per (time, state), row index `t * n_states + s`.
    TimeStates { horizon: usize },
}

/// `Q(s, a)` values, time-indexed in the finite-horizon setting.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub layout: QLayout,
    pub n_states: usize,
    pub values: Matrix,
}

impl QTable {
    /// `Q(s, a)` at the first time step.
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[(state, action)]
    }

    /// `Q_t(s, a)`; `t` must be 0 outside the finite-horizon layout.
    pub fn at(&self, t: usize, state: usize, action: usize) -> f64 {
        self.values[(t * self.n_states + state, action)]
    }
}

enum Repr {
    Discounted { gamma: f64, inv: Matrix },
    Absorbing { transient: Vec<usize>, inv: Matrix },
    Finite { horizon: usize },
    Average { rho: Vector, dev: Matrix },
}

/// Linear-algebra view of one policy under one setting.
///
/// Row vectors have one entry per state, or per (time, state) in the finite-horizon setting.
pub(crate) struct Evaluator<'a> {
    mdp: &'a TabularMdp,
    pi: Matrix,
    kernel: Matrix,
    reward: Vector,
    repr: Repr,
    condition: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(mdp: &'a TabularMdp, policy: &PolicySpec, setting: &SettingSpec) -> Result<Self> {
        let pi = policy.matrix(mdp.n_states(), mdp.n_actions())?;
        Self::from_policy_matrix(mdp, pi, setting)
    }

    pub fn from_policy_matrix(mdp: &'a TabularMdp, pi: Matrix, setting: &SettingSpec) -> Result<Self> {
        setting.validate()?;
        let (kernel, reward) = induced_from_matrix(mdp, &pi);
        let mut condition = 1.0;
        let repr = match setting {
            SettingSpec::Discounted { gamma } => {
                let inv = resolvent(&(&kernel * *gamma), "discounted resolvent")?;
                condition = inv.condition;
                Repr::Discounted {
                    gamma: *gamma,
                    inv: inv.inv,
                }
            }
            SettingSpec::Absorbing { .. } => {
                if mdp.absorbing_set().is_none() {
                    return Err(invalid("setting", "absorbing setting needs an absorbing set"));
                }
                check_absorption(&kernel, &mdp.absorbing_mask)?;
                let transient = mdp.transient_states();
                let sub = kernel.select_rows(&transient).select_columns(&transient);
                let inv = resolvent(&sub, "transient resolvent")?;
                condition = inv.condition;
                Repr::Absorbing {
                    transient,
                    inv: inv.inv,
                }
            }
            SettingSpec::FiniteHorizon { horizon } => Repr::Finite { horizon: *horizon },
            SettingSpec::Average { .. } => {
                check_ergodic(&kernel)?;
                let (rho, c1) = stationary(&kernel)?;
                let (dev, c2) = deviation(&kernel, &rho)?;
                condition = c1.max(c2);
                Repr::Average { rho, dev }
            }
        };
        Ok(Evaluator {
            mdp,
            pi,
            kernel,
            reward,
            repr,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn policy_matrix(&self) -> &Matrix {
        &self.pi
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    fn n(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn rows(&self) -> usize {
        match self.repr {
            Repr::Finite { horizon } => self.n() * horizon,
            _ => self.n(),
        }
    }

    pub fn layout(&self) -> QLayout {
        match self.repr {
            Repr::Finite { horizon } => QLayout::TimeStates { horizon },
            _ => QLayout::States,
        }
    }

    /// Copies a state vector into every time layer.
    pub fn lift(&self, x: &Vector) -> Vector {
        let n = self.n();
        Vector::from_fn(self.rows(), |row, _| x[row % n])
    }

    pub fn lift_sa(&self, r: &Matrix) -> Matrix {
        let n = self.n();
        Matrix::from_fn(self.rows(), r.ncols(), |row, a| r[(row % n, a)])
    }

    /// `sum_a pi(a|s) r(row, a)`.
    pub fn policy_average(&self, r: &Matrix) -> Vector {
        let n = self.n();
        Vector::from_fn(self.rows(), |row, _| {
            let s = row % n;
            (0..r.ncols()).map(|a| self.pi[(s, a)] * r[(row, a)]).sum()
        })
    }

    /// Reward-to-go of a state reward `x`: `(I - A)^{-1} x`, or `D x` in the average setting.
    pub fn value_to_go(&self, x: &Vector) -> Vector {
        let n = self.n();
        match &self.repr {
            Repr::Discounted { inv, .. } => inv * x,
            Repr::Absorbing { transient, inv } => {
                let xt = Vector::from_fn(transient.len(), |i, _| x[transient[i]]);
                let vt = inv * xt;
                let mut v = Vector::zeros(n);
                for (i, &s) in transient.iter().enumerate() {
                    v[s] = vt[i];
                }
                v
            }
            Repr::Finite { horizon } => {
                let h = *horizon;
                let mut v = Vector::zeros(n * h);
                for t in (0..h).rev() {
                    for s in 0..n {
                        let mut acc = x[t * n + s];
                        if t + 1 < h {
                            for u in 0..n {
                                acc += self.kernel[(s, u)] * v[(t + 1) * n + u];
                            }
                        }
                        v[t * n + s] = acc;
                    }
                }
                v
            }
            Repr::Average { dev, .. } => dev * x,
        }
    }

    /// `Ẽ_pi x`.
    pub fn functional(&self, x: &Vector) -> f64 {
        let n = self.n();
        let rho = self.mdp.rho_init();
        match &self.repr {
            Repr::Average { rho: stat, .. } => stat.dot(x),
            _ => {
                let v = self.value_to_go(x);
                (0..n).map(|s| rho[s] * v[s]).sum()
            }
        }
    }

    pub fn value(&self) -> f64 {
        self.functional(&self.lift(&self.reward))
    }

    /// Q-table for a per-(row, action) reward.
    pub fn q_table(&self, r: &Matrix) -> QTable {
        let n = self.n();
        let na = self.mdp.n_actions();
        let x = self.policy_average(r);
        let v = self.value_to_go(&x);
        let mut q = Matrix::zeros(self.rows(), na);
        let cont = |a: usize, s: usize, offset: usize| -> f64 {
            let p = self.mdp.transition(a);
            (0..n).map(|u| p[(s, u)] * v[offset + u]).sum()
        };
        match &self.repr {
            Repr::Discounted { gamma, .. } => {
                for s in 0..n {
                    for a in 0..na {
                        q[(s, a)] = r[(s, a)] + gamma * cont(a, s, 0);
                    }
                }
            }
            Repr::Absorbing { .. } => {
                for s in 0..n {
                    if self.mdp.is_absorbing(s) {
                        continue;
                    }
                    for a in 0..na {
                        q[(s, a)] = r[(s, a)] + cont(a, s, 0);
                    }
                }
            }
            Repr::Finite { horizon } => {
                for t in 0..*horizon {
                    for s in 0..n {
                        for a in 0..na {
                            let next = if t + 1 < *horizon { cont(a, s, (t + 1) * n) } else { 0.0 };
                            q[(t * n + s, a)] = r[(t * n + s, a)] + next;
                        }
                    }
                }
            }
            Repr::Average { rho, .. } => {
                let g = rho.dot(&x);
                for s in 0..n {
                    for a in 0..na {
                        q[(s, a)] = r[(s, a)] - g + cont(a, s, 0);
                    }
                }
            }
        }
        QTable {
            layout: self.layout(),
            n_states: n,
            values: q,
        }
    }

    /// `sum_a (pi'(a|s) - pi(a|s)) Q_pi(row, a; x)`.
    pub fn dq_step(&self, x: &Vector, pi_prime: &Matrix) -> Vector {
        let n = self.n();
        let na = self.mdp.n_actions();
        let r = Matrix::from_fn(self.rows(), na, |row, _| x[row]);
        let q = self.q_table(&r);
        Vector::from_fn(self.rows(), |row, _| {
            let s = row % n;
            (0..na)
                .map(|a| (pi_prime[(s, a)] - self.pi[(s, a)]) * q.values[(row, a)])
                .sum()
        })
    }
}
