//! Taylor expansion of a target policy's value around a data policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{deviation, max_abs, resolvent, stationary, Matrix, Vector};
use crate::mdp::{
    absorption_times, fit_mixing, is_irreducible, mixing_profile, tv_between, tv_delta, Evaluator, MixingConstants,
    PolicySpec, SettingSpec, TabularMdp,
};

/// Horizon used when fitting mixing envelopes.
pub const MIXING_FIT_STEPS: usize = 200;
/// Multiplier applied to the average-setting bound, whose constant is not derived exactly.
pub const AVERAGE_BOUND_SLACK: f64 = 2.0;
const TOL: f64 = 1e-9;

/// Terms of the expansion of `J_{pi'}` around `pi`, with the remainder envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub setting: SettingSpec,
    pub order: usize,
    /// `terms[k] = Ẽ_pi[DQ^(k)]`.
    pub terms: Vec<f64>,
    /// `Ẽ_pi'[DQ^(K+1)]`.
    pub remainder: f64,
    /// `Ẽ_pi' r_pi'`.
    pub exact_value: f64,
    pub h_eff: f64,
    pub scaling_const: f64,
    /// Max-row TV distance between the two induced kernels.
    pub delta: f64,
    pub r_max: f64,
    /// `(delta h_eff)^(K+1) scaling_const r_max`.
    pub bound: f64,
    /// 1, or [`AVERAGE_BOUND_SLACK`] in the average setting.
    pub bound_slack: f64,
    /// True when h_eff rests on fitted mixing constants.
    pub constants_estimated: bool,
    /// Worst condition estimate among the solves.
    pub condition: f64,
}

impl ExpansionReport {
    pub fn approximation(&self) -> f64 {
        self.terms.iter().sum()
    }

    pub fn identity_residual(&self) -> f64 {
        (self.approximation() + self.remainder - self.exact_value).abs()
    }

    pub fn identity_holds(&self) -> bool {
        self.identity_residual() <= TOL * self.exact_value.abs().max(1.0)
    }

    pub fn bound_holds(&self) -> bool {
        self.remainder.abs() <= self.bound_slack * self.bound + TOL
    }
}

/// `DQ^(k)` as a row vector: one entry per state, or per (time, state) in the
/// finite-horizon setting (row `t * n_states + s`).
pub fn dq_term(
    mdp: &TabularMdp,
    pi: &PolicySpec,
    pi_prime: &PolicySpec,
    setting: &SettingSpec,
    k: usize,
) -> Result<Vector> {
    let ev = Evaluator::new(mdp, pi, setting)?;
    let target = pi_prime.matrix(mdp.n_states(), mdp.n_actions())?;
    let mut x = ev.lift(&crate::mdp::induced_from_matrix(mdp, &target).1);
    for _ in 0..k {
        x = ev.dq_step(&x, &target);
    }
    Ok(x)
}

/// Largest expected absorption time over the given policies and all transient starts.
pub fn absorption_horizon(mdp: &TabularMdp, policies: &[PolicySpec]) -> Result<f64> {
    let mask: Vec<bool> = (0..mdp.n_states()).map(|s| mdp.is_absorbing(s)).collect();
    let mut worst: f64 = 0.0;
    for p in policies {
        let (k, _) = crate::mdp::induced_kernel(mdp, p)?;
        worst = worst.max(absorption_times(&k, &mask)?.max());
    }
    Ok(worst)
}

/// Tightest geometric envelope covering the mixing profiles of all `kernels`.
pub fn joint_mixing(kernels: &[&Matrix]) -> Result<MixingConstants> {
    let mut env = vec![0.0; MIXING_FIT_STEPS];
    for k in kernels {
        let (rho, _) = stationary(k)?;
        for (e, d) in env.iter_mut().zip(mixing_profile(k, &rho, MIXING_FIT_STEPS)) {
            *e = f64::max(*e, d);
        }
    }
    Ok(fit_mixing(&env))
}

/// Effective horizon, scaling constant and whether constants were fitted, for the
/// given setting and the policies whose chains the bound must cover.
fn constants(mdp: &TabularMdp, setting: &SettingSpec, policies: &[PolicySpec]) -> Result<(f64, f64, bool)> {
    Ok(match setting {
        SettingSpec::Discounted { gamma } => (1.0 / (1.0 - gamma), 1.0 / (1.0 - gamma), false),
        SettingSpec::FiniteHorizon { horizon } => (*horizon as f64, *horizon as f64, false),
        SettingSpec::Absorbing { t_abs } => {
            let t = match t_abs {
                Some(t) => *t,
                None => absorption_horizon(mdp, policies)?,
            };
            (t, t, false)
        }
        SettingSpec::Average { mixing } => {
            let (m, est) = match mixing {
                Some(m) => (*m, false),
                None => {
                    let kernels = policies
                        .iter()
                        .map(|p| crate::mdp::induced_kernel(mdp, p).map(|k| k.0))
                        .collect::<Result<Vec<_>>>()?;
                    (joint_mixing(&kernels.iter().collect::<Vec<_>>())?, true)
                }
            };
            (m.effective_horizon(), 1.0, est)
        }
    })
}

/// Order-`order` expansion of `J_{pi'}` around `pi`.
pub fn expand(
    mdp: &TabularMdp,
    pi: &PolicySpec,
    pi_prime: &PolicySpec,
    setting: &SettingSpec,
    order: usize,
) -> Result<ExpansionReport> {
    let ev = Evaluator::new(mdp, pi, setting)?;
    let ev_prime = Evaluator::new(mdp, pi_prime, setting)?;
    let target = ev_prime.policy_matrix().clone();
    let mut x = ev.lift(&crate::mdp::induced_from_matrix(mdp, &target).1);
    let mut terms = Vec::with_capacity(order + 1);
    terms.push(ev.functional(&x));
    for _ in 0..order {
        x = ev.dq_step(&x, &target);
        terms.push(ev.functional(&x));
    }
    let remainder = ev_prime.functional(&ev.dq_step(&x, &target));
    let exact_value = ev_prime.value();
    let (h_eff, scaling_const, constants_estimated) = constants(mdp, setting, &[pi.clone(), pi_prime.clone()])?;
    let delta = tv_between(ev.kernel(), ev_prime.kernel());
    let r_max = mdp.r_max();
    let bound = (delta * h_eff).powi(order as i32 + 1) * scaling_const * r_max;
    let bound_slack = if matches!(setting, SettingSpec::Average { .. }) {
        AVERAGE_BOUND_SLACK
    } else {
        1.0
    };
    Ok(ExpansionReport {
        setting: setting.clone(),
        order,
        terms,
        remainder,
        exact_value,
        h_eff,
        scaling_const,
        delta,
        r_max,
        bound,
        bound_slack,
        constants_estimated,
        condition: ev.condition().max(ev_prime.condition()),
    })
}

fn check_square(a: &Matrix, b: &Matrix) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            axis: "matrix shape",
            expected: a.nrows(),
            found: if a.is_square() { b.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

/// Max-norm residual of `(I-A')^{-1} = (I-A)^{-1} + (I-A')^{-1}(A'-A)(I-A)^{-1}`.
pub fn matrix_perturbation_identity(a: &Matrix, a_prime: &Matrix) -> Result<f64> {
    matrix_series_identity(a, a_prime, 0)
}

/// Max-norm residual of the order-`k` series for `(I-A')^{-1}` around `(I-A)^{-1}`.
pub fn matrix_series_identity(a: &Matrix, a_prime: &Matrix, k: usize) -> Result<f64> {
    check_square(a, a_prime)?;
    let r = resolvent(a, "resolvent of A")?.inv;
    let r_prime = resolvent(a_prime, "resolvent of A'")?.inv;
    let step = (a_prime - a) * &r;
    let n = a.nrows();
    let mut power = Matrix::identity(n, n);
    let mut series = Matrix::zeros(n, n);
    for _ in 0..=k {
        series += &power;
        power = &power * &step;
    }
    let rhs = &r * series + &r_prime * power;
    Ok(max_abs(&(r_prime - rhs)))
}

/// Max-norm residual of `rho'^T = rho^T + rho'^T (P' - P) (I - P)^#`.
pub fn stationary_perturbation_identity(p: &Matrix, p_prime: &Matrix) -> Result<f64> {
    check_square(p, p_prime)?;
    for m in [p, p_prime] {
        if !is_irreducible(m) {
            return Err(Error::ErgodicityViolated("chain is reducible".into()));
        }
    }
    let (rho, _) = stationary(p)?;
    let (rho_prime, _) = stationary(p_prime)?;
    let (dev, _) = deviation(p, &rho)?;
    let rhs = rho.transpose() + rho_prime.transpose() * (p_prime - p) * dev;
    Ok((rho_prime.transpose() - rhs).amax())
}

/// `max |(1-gamma)(I - gamma P)^{-1} - 1 rho^T|` for an irreducible `p`.
pub fn resolvent_limit_gap(p: &Matrix, gamma: f64) -> Result<f64> {
    if !is_irreducible(p) {
        return Err(Error::ErgodicityViolated("chain is reducible".into()));
    }
    let (rho, _) = stationary(p)?;
    let n = p.nrows();
    let r = resolvent(&(p * gamma), "discounted resolvent")?.inv * (1.0 - gamma);
    Ok(max_abs(&(r - Matrix::from_fn(n, n, |_, j| rho[j]))))
}

/// Exact Naive and DQ expectations against the ATE, with their bias envelopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasBoundReport {
    pub ate: f64,
    /// Zeroth-order cross-expansion around the 1/2 mixture.
    pub naive_expect: f64,
    /// First-order cross-expansion around the 1/2 mixture.
    pub dq_expect: f64,
    pub naive_gap: f64,
    pub dq_gap: f64,
    /// `delta H S r_max` (`delta T_abs^2 r_max` when absorbing).
    pub naive_bound: f64,
    /// `delta^2 H^2 S r_max` (`T_abs^3 r_max delta^2` when absorbing).
    pub dq_bound: f64,
    pub delta: f64,
    pub h_eff: f64,
    pub scaling_const: f64,
    pub r_max: f64,
    /// Absorption horizons under control, treatment and the 1/2 mixture (absorbing only).
    pub per_policy_t_abs: Option<[f64; 3]>,
    pub bound_slack: f64,
    pub constants_estimated: bool,
}

impl BiasBoundReport {
    pub fn naive_ok(&self) -> bool {
        self.naive_gap <= self.bound_slack * self.naive_bound + TOL
    }
    pub fn dq_ok(&self) -> bool {
        self.dq_gap <= self.bound_slack * self.dq_bound + TOL
    }
}

/// Compares the ATE with the expectations of the Naive and DQ estimators under the 1/2 mixture.
pub fn verify_bias_bounds(mdp: &TabularMdp, setting: &SettingSpec) -> Result<BiasBoundReport> {
    let half = PolicySpec::bernoulli(0.5);
    let to1 = expand(mdp, &half, &PolicySpec::GlobalTreatment, setting, 1)?;
    let to0 = expand(mdp, &half, &PolicySpec::GlobalControl, setting, 1)?;
    let ate = to1.exact_value - to0.exact_value;
    let naive_expect = to1.terms[0] - to0.terms[0];
    let dq_expect = to1.approximation() - to0.approximation();
    let policies = [PolicySpec::GlobalControl, PolicySpec::GlobalTreatment, half];
    let (h, s, est) = constants(mdp, setting, &policies)?;
    let per_policy_t_abs = match setting {
        SettingSpec::Absorbing { .. } => Some([
            absorption_horizon(mdp, &policies[0..1])?,
            absorption_horizon(mdp, &policies[1..2])?,
            absorption_horizon(mdp, &policies[2..3])?,
        ]),
        _ => None,
    };
    let delta = tv_delta(mdp)?;
    let r_max = mdp.r_max();
    Ok(BiasBoundReport {
        ate,
        naive_expect,
        dq_expect,
        naive_gap: (ate - naive_expect).abs(),
        dq_gap: (ate - dq_expect).abs(),
        naive_bound: delta * h * s * r_max,
        dq_bound: delta * delta * h * h * s * r_max,
        delta,
        h_eff: h,
        scaling_const: s,
        r_max,
        per_policy_t_abs,
        bound_slack: to1.bound_slack,
        constants_estimated: est,
    })
}
