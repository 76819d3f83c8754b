//! Streaming per-session estimators of treatment effects.
//!
//! Each estimator maps one session to a number; the estimate is the mean over sessions.

mod general;
mod regression;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExperimentDataset, SessionLog};
use crate::error::{invalid, Error, Result};
use crate::stats::Summary;

pub use general::DqGeneral;
pub use regression::{
    fit_q_regression, fit_reward_regression, ActionValueModel, LinearFit, QRegressionModel, TabularModel, ZeroModel,
};

/// Per-session side information, merged by maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SessionDiagnostics {
    /// Largest cumulative importance weight seen.
    pub max_weight: f64,
    /// Largest disagreement between two algebraic forms of the same statistic.
    pub form_gap: f64,
}

impl SessionDiagnostics {
    fn merge(&mut self, other: &SessionDiagnostics) {
        self.max_weight = self.max_weight.max(other.max_weight);
        self.form_gap = self.form_gap.max(other.form_gap);
    }
}

/// A statistic computed session by session.
pub trait SessionStatistic: Sync {
    fn name(&self) -> &str;
    fn session_value(&self, log: &SessionLog, diag: &mut SessionDiagnostics) -> f64;
    /// Flags reported with every estimate.
    fn flags(&self) -> Vec<&'static str> {
        Vec::new()
    }
}

/// Result of running one estimator over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub point: f64,
    /// Viewer-level variance of the mean, `var(values) / n`.
    pub variance: f64,
    pub n_sessions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_session_values: Option<Vec<f64>>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub const CSV_HEADER: [&'static str; 5] = ["estimator", "point", "variance", "n_sessions", "diagnostics"];

    pub fn csv_record(&self) -> [String; 5] {
        let diag = self
            .diagnostics
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        [
            self.estimator.clone(),
            self.point.to_string(),
            self.variance.to_string(),
            self.n_sessions.to_string(),
            diag,
        ]
    }
}

/// Session values in input order plus merged diagnostics. Deterministic for any thread count.
pub fn session_values(stat: &dyn SessionStatistic, sessions: &[SessionLog]) -> (Vec<f64>, SessionDiagnostics) {
    let pairs: Vec<(f64, SessionDiagnostics)> = sessions
        .par_iter()
        .map(|log| {
            let mut d = SessionDiagnostics::default();
            let v = stat.session_value(log, &mut d);
            (v, d)
        })
        .collect();
    let mut diag = SessionDiagnostics::default();
    let mut values = Vec::with_capacity(pairs.len());
    for (v, d) in pairs {
        diag.merge(&d);
        values.push(v);
    }
    (values, diag)
}

/// Builds a report from collected session values.
pub fn report_from_values(
    stat: &dyn SessionStatistic,
    values: Vec<f64>,
    diag: SessionDiagnostics,
    truncated: usize,
    keep_values: bool,
) -> Result<EstimateReport> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = Summary::of(&values);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("max_weight".to_string(), diag.max_weight);
    diagnostics.insert("form_gap".to_string(), diag.form_gap);
    diagnostics.insert("truncated_sessions".to_string(), truncated as f64);
    for f in stat.flags() {
        diagnostics.insert(f.to_string(), 1.0);
    }
    Ok(EstimateReport {
        estimator: stat.name().to_string(),
        point: s.mean,
        variance: if s.n > 1 { s.sd * s.sd / s.n as f64 } else { f64::NAN },
        n_sessions: s.n,
        per_session_values: keep_values.then_some(values),
        diagnostics,
    })
}

/// Runs `stat` over the main sessions.
pub fn evaluate(stat: &dyn SessionStatistic, sessions: &[SessionLog], keep_values: bool) -> Result<EstimateReport> {
    let (values, diag) = session_values(stat, sessions);
    let truncated = sessions.iter().filter(|s| !s.terminated).count();
    report_from_values(stat, values, diag, truncated, keep_values)
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(invalid("estimator", format!("treatment probability {p} outside (0,1)")))
    }
}

#[inline]
fn ipw(action: u8, p: f64) -> f64 {
    if action == 1 {
        1.0 / p
    } else {
        -1.0 / (1.0 - p)
    }
}

/// Inverse-propensity difference of immediate rewards.
#[derive(Clone, Copy, Debug)]
pub struct Naive {
    pub p: f64,
}

impl SessionStatistic for Naive {
    fn name(&self) -> &str {
        "naive"
    }
    fn session_value(&self, log: &SessionLog, _: &mut SessionDiagnostics) -> f64 {
        log.steps.iter().map(|s| ipw(s.action, self.p) * s.reward).sum()
    }
}

/// Differences-in-Qs with Monte-Carlo reward-to-go.
#[derive(Clone, Copy, Debug)]
pub struct DqMonteCarlo {
    pub p: f64,
}

impl DqMonteCarlo {
    /// Same statistic written as `sum_t c_t r_t`, `c_t` the running sum of weights up to `t`.
    pub fn credit_form(&self, log: &SessionLog) -> f64 {
        let mut credit = 0.0;
        let mut total = 0.0;
        for s in &log.steps {
            credit += ipw(s.action, self.p);
            total += credit * s.reward;
        }
        total
    }
}

impl SessionStatistic for DqMonteCarlo {
    fn name(&self) -> &str {
        "dq"
    }
    fn session_value(&self, log: &SessionLog, diag: &mut SessionDiagnostics) -> f64 {
        let g = log.suffix_sums();
        let v: f64 = log.steps.iter().zip(&g).map(|(s, g)| ipw(s.action, self.p) * g).sum();
        let c = self.credit_form(log);
        let gap = (v - c).abs() / v.abs().max(1.0);
        debug_assert!(gap <= 1e-9, "credit-assignment form disagrees: {v} vs {c}");
        diag.form_gap = diag.form_gap.max(gap);
        v
    }
}

/// Differences-in-Qs with a fitted Q model as control variate.
pub struct DqDoublyRobust<'m> {
    pub p: f64,
    pub model: &'m dyn ActionValueModel,
}

impl SessionStatistic for DqDoublyRobust<'_> {
    fn name(&self) -> &str {
        "dq_dr"
    }
    fn session_value(&self, log: &SessionLog, _: &mut SessionDiagnostics) -> f64 {
        let g = log.suffix_sums();
        let q = 1.0 - self.p;
        log.steps
            .iter()
            .zip(&g)
            .map(|(s, g)| {
                let q1 = self.model.predict(s, 1);
                let q0 = self.model.predict(s, 0);
                let mut v = q1 - q0;
                if s.action == 1 {
                    v += (g - q1) / self.p;
                } else {
                    v -= (g - q0) / q;
                }
                v
            })
            .sum()
    }
}

/// Stepwise importance sampling of each global policy.
#[derive(Clone, Copy, Debug)]
pub struct OpeStepwise {
    pub p: f64,
}

/// Running log-weights of the treated and control arms, `-inf` after the first mismatch.
fn arm_log_weights(action: u8, p: f64, lw1: &mut f64, lw0: &mut f64) {
    if action == 1 {
        *lw1 -= p.ln();
        *lw0 = f64::NEG_INFINITY;
    } else {
        *lw0 -= (1.0 - p).ln();
        *lw1 = f64::NEG_INFINITY;
    }
}

impl SessionStatistic for OpeStepwise {
    fn name(&self) -> &str {
        "ope"
    }
    fn session_value(&self, log: &SessionLog, diag: &mut SessionDiagnostics) -> f64 {
        let (mut lw1, mut lw0) = (0.0f64, 0.0f64);
        let mut total = 0.0;
        for s in &log.steps {
            arm_log_weights(s.action, self.p, &mut lw1, &mut lw0);
            let w = lw1.exp() - lw0.exp();
            diag.max_weight = diag.max_weight.max(lw1.max(lw0).exp());
            total += w * s.reward;
        }
        total
    }
}

/// Naive with a reward model as control variate.
pub struct NaiveDoublyRobust<'m> {
    pub p: f64,
    pub model: &'m dyn ActionValueModel,
}

impl SessionStatistic for NaiveDoublyRobust<'_> {
    fn name(&self) -> &str {
        "naive_dr"
    }
    fn session_value(&self, log: &SessionLog, _: &mut SessionDiagnostics) -> f64 {
        let q = 1.0 - self.p;
        log.steps
            .iter()
            .map(|s| {
                let m1 = self.model.predict(s, 1);
                let m0 = self.model.predict(s, 0);
                let mut v = m1 - m0;
                if s.action == 1 {
                    v += (s.reward - m1) / self.p;
                } else {
                    v -= (s.reward - m0) / q;
                }
                v
            })
            .sum()
    }
    fn flags(&self) -> Vec<&'static str> {
        vec!["reconstructed_variant"]
    }
}

/// Per-decision doubly robust off-policy evaluation of each global policy.
pub struct OpeDoublyRobust<'m> {
    pub p: f64,
    pub model: &'m dyn ActionValueModel,
}

impl SessionStatistic for OpeDoublyRobust<'_> {
    fn name(&self) -> &str {
        "ope_dr"
    }
    fn session_value(&self, log: &SessionLog, diag: &mut SessionDiagnostics) -> f64 {
        // arm a: sum_t rho_{0:t} (r_t - qhat(s_t, a)) + rho_{0:t-1} qhat(s_t, a)
        let (mut lw1, mut lw0) = (0.0f64, 0.0f64);
        let mut total = 0.0;
        for s in &log.steps {
            let (prev1, prev0) = (lw1.exp(), lw0.exp());
            arm_log_weights(s.action, self.p, &mut lw1, &mut lw0);
            let (w1, w0) = (lw1.exp(), lw0.exp());
            diag.max_weight = diag.max_weight.max(w1.max(w0));
            let q1 = self.model.predict(s, 1);
            let q0 = self.model.predict(s, 0);
            total += w1 * (s.reward - q1) + prev1 * q1;
            total -= w0 * (s.reward - q0) + prev0 * q0;
        }
        total
    }
    fn flags(&self) -> Vec<&'static str> {
        vec!["reconstructed_variant"]
    }
}

/// Estimators the harness can run by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    NaiveDr,
    Ope,
    OpeDr,
    Dq,
    DqDr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Naive,
        EstimatorKind::NaiveDr,
        EstimatorKind::Ope,
        EstimatorKind::OpeDr,
        EstimatorKind::Dq,
        EstimatorKind::DqDr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::NaiveDr => "naive_dr",
            EstimatorKind::Ope => "ope",
            EstimatorKind::OpeDr => "ope_dr",
            EstimatorKind::Dq => "dq",
            EstimatorKind::DqDr => "dq_dr",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| invalid("estimator", format!("unknown estimator {name}")))
    }

    pub fn needs_q_model(&self) -> bool {
        matches!(self, EstimatorKind::DqDr | EstimatorKind::OpeDr)
    }

    pub fn needs_reward_model(&self) -> bool {
        matches!(self, EstimatorKind::NaiveDr)
    }
}

/// Fitted models shared by the doubly robust estimators.
#[derive(Clone, Debug)]
pub struct FittedModels {
    pub q: QRegressionModel,
    pub reward: QRegressionModel,
}

impl FittedModels {
    pub fn fit(holdout: &[SessionLog]) -> Result<Self> {
        Ok(FittedModels {
            q: fit_q_regression(holdout)?,
            reward: fit_reward_regression(holdout)?,
        })
    }
}

/// Instantiates an estimator. `models` is required for the doubly robust ones.
pub fn build<'m>(
    kind: EstimatorKind,
    p: f64,
    models: Option<&'m FittedModels>,
) -> Result<Box<dyn SessionStatistic + 'm>> {
    check_p(p)?;
    let need = |m: Option<&'m FittedModels>| m.ok_or_else(|| invalid("estimator", format!("{} needs fitted models", kind.name())));
    Ok(match kind {
        EstimatorKind::Naive => Box::new(Naive { p }),
        EstimatorKind::Dq => Box::new(DqMonteCarlo { p }),
        EstimatorKind::Ope => Box::new(OpeStepwise { p }),
        EstimatorKind::DqDr => Box::new(DqDoublyRobust { p, model: &need(models)?.q }),
        EstimatorKind::OpeDr => Box::new(OpeDoublyRobust { p, model: &need(models)?.q }),
        EstimatorKind::NaiveDr => Box::new(NaiveDoublyRobust {
            p,
            model: &need(models)?.reward,
        }),
    })
}

/// Naive estimate with the dataset's nominal probability.
pub fn naive(ds: &ExperimentDataset) -> Result<EstimateReport> {
    check_p(ds.p_nominal)?;
    evaluate(&Naive { p: ds.p_nominal }, &ds.sessions, false)
}

/// Monte-Carlo DQ estimate with the dataset's nominal probability.
pub fn dq_mc(ds: &ExperimentDataset) -> Result<EstimateReport> {
    check_p(ds.p_nominal)?;
    evaluate(&DqMonteCarlo { p: ds.p_nominal }, &ds.sessions, false)
}

/// Stepwise IS-OPE estimate with the dataset's nominal probability.
pub fn ope_stepwise(ds: &ExperimentDataset) -> Result<EstimateReport> {
    check_p(ds.p_nominal)?;
    evaluate(&OpeStepwise { p: ds.p_nominal }, &ds.sessions, false)
}

pub fn dq_dr(ds: &ExperimentDataset, model: &dyn ActionValueModel, p_used: f64) -> Result<EstimateReport> {
    check_p(p_used)?;
    evaluate(&DqDoublyRobust { p: p_used, model }, &ds.sessions, false)
}

pub fn naive_dr(ds: &ExperimentDataset, model: &dyn ActionValueModel, p_used: f64) -> Result<EstimateReport> {
    check_p(p_used)?;
    evaluate(&NaiveDoublyRobust { p: p_used, model }, &ds.sessions, false)
}

pub fn ope_dr(ds: &ExperimentDataset, model: &dyn ActionValueModel, p_used: f64) -> Result<EstimateReport> {
    check_p(p_used)?;
    evaluate(&OpeDoublyRobust { p: p_used, model }, &ds.sessions, false)
}
