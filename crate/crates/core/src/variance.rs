//! Variance of DQ-type statistics under the sharp null, and tests built on it.
//!
//! Under the sharp null outcomes do not depend on assignments, so a statistic is a
//! polynomial in the creator assignment bits and its randomization variance is exact.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{ExperimentDataset, SessionLog};
use crate::error::{invalid, Error, Result};
use crate::estimators::{check_p, ActionValueModel};
use crate::sim::{stream, Purpose};
use crate::stats::pairwise_sum;

/// Share of total absolute suffix mass above which the O(M) approximation is flagged.
pub const CONCENTRATION_WARN: f64 = 0.5;

/// Per-creator sums over every encounter, scaled by `1/N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamerAggregate {
    pub creator: u32,
    /// `sum` over encounters of the reward-to-go from that encounter.
    pub suffix_mass: f64,
    /// Reward at later encounters of the same creator, credited to each earlier encounter.
    pub repeat_mass: f64,
    /// Within-viewer proxy of `sum_{l != j} R_jl^2`: squares of per-session cross masses.
    pub cross_square_proxy: f64,
    /// `R_jl` for `l != j`: reward at `l`'s steps following an encounter of `j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_masses: Option<BTreeMap<u32, f64>>,
}

/// One pass over sessions building per-creator masses; only creators that were shown appear.
pub fn aggregate_streamers(sessions: &[SessionLog], with_pairs: bool) -> Result<Vec<StreamerAggregate>> {
    if sessions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / sessions.len() as f64;
    let mut map: BTreeMap<u32, StreamerAggregate> = BTreeMap::new();
    let mut pairs: Vec<((u32, u32), f64)> = Vec::new();
    for log in sessions {
        let g = log.suffix_sums();
        pairs.clear();
        for (t, st) in log.steps.iter().enumerate() {
            let e = map.entry(st.creator).or_insert_with(|| StreamerAggregate {
                creator: st.creator,
                suffix_mass: 0.0,
                repeat_mass: 0.0,
                cross_square_proxy: 0.0,
                pair_masses: with_pairs.then(BTreeMap::new),
            });
            e.suffix_mass += g[t] * scale;
            for earlier in &log.steps[..t] {
                pairs.push(((earlier.creator, st.creator), st.reward));
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut i = 0;
        while i < pairs.len() {
            let key = pairs[i].0;
            let mut r = 0.0;
            while i < pairs.len() && pairs[i].0 == key {
                r += pairs[i].1;
                i += 1;
            }
            let r = r * scale;
            let e = map.get_mut(&key.0).expect("creator seen earlier in session");
            if key.0 == key.1 {
                e.repeat_mass += r;
            } else {
                e.cross_square_proxy += r * r;
                if let Some(pm) = e.pair_masses.as_mut() {
                    *pm.entry(key.1).or_insert(0.0) += r;
                }
            }
        }
    }
    Ok(map.into_values().collect())
}

pub fn aggregate_dataset(ds: &ExperimentDataset, with_pairs: bool) -> Result<Vec<StreamerAggregate>> {
    aggregate_streamers(&ds.sessions, with_pairs)
}

/// Monte-Carlo DQ rebuilt from creator masses: `sum_j (a_j/p - (1-a_j)/(1-p)) S_j`.
pub fn dq_from_aggregates(aggs: &[StreamerAggregate], assignments: &[u8], p: f64) -> f64 {
    let terms: Vec<f64> = aggs
        .iter()
        .map(|a| {
            let w = if assignments[a.creator as usize] == 1 {
                1.0 / p
            } else {
                -1.0 / (1.0 - p)
            };
            w * a.suffix_mass
        })
        .collect();
    pairwise_sum(&terms)
}

/// `sum_j p(1-p)(1/p + 1/(1-p))^2 S_j^2`.
pub fn null_variance_closed_form(aggs: &[StreamerAggregate], p: f64) -> f64 {
    let q = 1.0 - p;
    let k = p * q * (1.0 / p + 1.0 / q).powi(2);
    let terms: Vec<f64> = aggs.iter().map(|a| k * a.suffix_mass * a.suffix_mass).collect();
    pairwise_sum(&terms)
}

/// Largest share of total absolute suffix mass held by one creator.
pub fn mass_concentration(aggs: &[StreamerAggregate]) -> f64 {
    let total: f64 = aggs.iter().map(|a| a.suffix_mass.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    aggs.iter().map(|a| a.suffix_mass.abs()).fold(0.0, f64::max) / total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralMode {
    /// All pair terms, O(M^2) in the worst case; needs pair masses.
    ExactM2,
    /// Own second moments only, O(M).
    ApproxM,
}

/// Null variance of the first-order DQ statistic for treatment probability `p`.
///
/// With `z_j = a_j - p`, `v = p(1-p)` and `c = 1/p^2 - 1/(1-p)^2` the statistic is
/// `const + sum_j u_j z_j + sum_{j<l} W_jl z_j z_l` where
/// `u_j = (1/p + 1/(1-p)) S_j + (1-2p) c R_jj` and `W_jl = c (R_jl + R_lj)`,
/// so its variance is `v sum u_j^2 + v^2 sum_{j<l} W_jl^2`.
pub fn null_variance_general_p(aggs: &[StreamerAggregate], p: f64, mode: GeneralMode) -> Result<f64> {
    check_p(p)?;
    let q = 1.0 - p;
    let v = p * q;
    let c = 1.0 / (p * p) - 1.0 / (q * q);
    let linear: Vec<f64> = aggs
        .iter()
        .map(|a| {
            let u = (1.0 / p + 1.0 / q) * a.suffix_mass + (1.0 - 2.0 * p) * c * a.repeat_mass;
            v * u * u
        })
        .collect();
    let linear = pairwise_sum(&linear);
    if c == 0.0 {
        return Ok(linear);
    }
    let quad = match mode {
        GeneralMode::ApproxM => {
            let conc = mass_concentration(aggs);
            if conc > CONCENTRATION_WARN {
                log::warn!("approximation quality degraded: one creator holds {:.0}% of suffix mass", 100.0 * conc);
            }
            let own: Vec<f64> = aggs
                .iter()
                .map(|a| match &a.pair_masses {
                    Some(pm) => pm.values().map(|r| r * r).sum(),
                    None => a.cross_square_proxy,
                })
                .collect();
            pairwise_sum(&own)
        }
        GeneralMode::ExactM2 => {
            let mut index: BTreeMap<u32, &BTreeMap<u32, f64>> = BTreeMap::new();
            for a in aggs {
                let pm = a
                    .pair_masses
                    .as_ref()
                    .ok_or_else(|| invalid("aggregates", "exact_m2 needs pair masses"))?;
                index.insert(a.creator, pm);
            }
            let mut terms = Vec::new();
            for (&j, pm) in &index {
                for (&l, &r_jl) in pm.iter() {
                    let r_lj = index.get(&l).and_then(|m| m.get(&j)).copied().unwrap_or(0.0);
                    if j < l || r_lj == 0.0 {
                        // each unordered pair once; one-directional pairs are visited only from j
                        terms.push((r_jl + r_lj).powi(2));
                    }
                }
            }
            pairwise_sum(&terms)
        }
    };
    Ok(linear + v * v * c * c * quad)
}

/// A statistic affine in the assignment bits: `constant + sum_j coefficient_j a_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub constant: f64,
    pub creators: Vec<u32>,
    pub coefficients: Vec<f64>,
}

impl LinearForm {
    fn from_map(constant: f64, map: BTreeMap<u32, f64>) -> Self {
        let (creators, coefficients) = map.into_iter().unzip();
        LinearForm {
            constant,
            creators,
            coefficients,
        }
    }

    pub fn evaluate(&self, assignments: &[u8]) -> f64 {
        let terms: Vec<f64> = self
            .creators
            .iter()
            .zip(&self.coefficients)
            .map(|(&j, &b)| f64::from(assignments[j as usize]) * b)
            .collect();
        self.constant + pairwise_sum(&terms)
    }

    /// `p(1-p) sum_j b_j^2`.
    pub fn null_variance(&self, p: f64) -> f64 {
        let terms: Vec<f64> = self.coefficients.iter().map(|b| b * b).collect();
        p * (1.0 - p) * pairwise_sum(&terms)
    }

    /// Share of `sum b_j^2` held by the largest coefficient.
    pub fn concentration(&self) -> f64 {
        let total: f64 = self.coefficients.iter().map(|b| b * b).sum();
        if total == 0.0 {
            return 0.0;
        }
        self.coefficients.iter().map(|b| b * b).fold(0.0, f64::max) / total
    }

    /// Statistic under `n_draws` fresh Bernoulli(`p`) assignments, one RNG stream per draw.
    pub fn redraw(&self, p: f64, n_draws: usize, seed: u64) -> Vec<f64> {
        (0..n_draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = stream(seed, Purpose::Rerandomize, d as u64);
                let terms: Vec<f64> = self
                    .coefficients
                    .iter()
                    .map(|&b| if rng.random::<f64>() < p { b } else { 0.0 })
                    .collect();
                self.constant + pairwise_sum(&terms)
            })
            .collect()
    }
}

/// Monte-Carlo DQ as a linear form: `b_j = (1/p + 1/(1-p)) S_j`, constant `-sum S_j/(1-p)`.
pub fn dq_linear_form(aggs: &[StreamerAggregate], p: f64) -> LinearForm {
    let q = 1.0 - p;
    let map = aggs.iter().map(|a| (a.creator, (1.0 / p + 1.0 / q) * a.suffix_mass)).collect();
    let constant = -pairwise_sum(&aggs.iter().map(|a| a.suffix_mass).collect::<Vec<_>>()) / q;
    LinearForm::from_map(constant, map)
}

/// Accumulates the doubly robust DQ linear form one session at a time, model frozen.
pub struct DrFormBuilder<'m> {
    p: f64,
    model: &'m dyn ActionValueModel,
    constant: Vec<f64>,
    coefficients: Vec<f64>,
    touched: Vec<bool>,
    n_sessions: usize,
}

impl<'m> DrFormBuilder<'m> {
    pub fn new(p: f64, model: &'m dyn ActionValueModel, n_creators: usize) -> Self {
        DrFormBuilder {
            p,
            model,
            constant: Vec::new(),
            coefficients: vec![0.0; n_creators],
            touched: vec![false; n_creators],
            n_sessions: 0,
        }
    }

    /// Unscaled per-step contributions; scaled by `1/N` in [`DrFormBuilder::finish`].
    pub fn add(&mut self, log: &SessionLog) {
        let q = 1.0 - self.p;
        let g = log.suffix_sums();
        let mut c = 0.0;
        for (st, g) in log.steps.iter().zip(&g) {
            let q1 = self.model.predict(st, 1);
            let q0 = self.model.predict(st, 0);
            c += (q1 - q0) - (g - q0) / q;
            let j = st.creator as usize;
            self.coefficients[j] += (g - q1) / self.p + (g - q0) / q;
            self.touched[j] = true;
        }
        self.constant.push(c);
        self.n_sessions += 1;
    }

    pub fn finish(self) -> Result<LinearForm> {
        if self.n_sessions == 0 {
            return Err(Error::EmptyDataset);
        }
        let scale = 1.0 / self.n_sessions as f64;
        let map = self
            .coefficients
            .iter()
            .enumerate()
            .filter(|(j, _)| self.touched[*j])
            .map(|(j, b)| (j as u32, b * scale))
            .collect();
        Ok(LinearForm::from_map(pairwise_sum(&self.constant) * scale, map))
    }
}

/// Doubly robust DQ as a linear form in the assignments, with the Q model held fixed.
pub fn dr_linear_form(sessions: &[SessionLog], model: &dyn ActionValueModel, p: f64, n_creators: usize) -> Result<LinearForm> {
    let mut b = DrFormBuilder::new(p, model, n_creators);
    for s in sessions {
        b.add(s);
    }
    b.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerandomizedStatistic {
    #[serde(alias = "dq")]
    DqMc,
    DqDr,
}

/// Null distribution by redrawing creator assignments with outcomes (and the Q model) frozen.
pub fn rerandomize(
    ds: &ExperimentDataset,
    n_draws: usize,
    statistic: RerandomizedStatistic,
    model: Option<&dyn ActionValueModel>,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_draws == 0 {
        return Err(invalid("rerandomize", "n_draws must be at least 1"));
    }
    let p = ds.p_nominal;
    check_p(p)?;
    let form = match statistic {
        RerandomizedStatistic::DqMc => dq_linear_form(&aggregate_dataset(ds, false)?, p),
        RerandomizedStatistic::DqDr => {
            let m = model.ok_or_else(|| invalid("rerandomize", "dq_dr needs a Q model"))?;
            dr_linear_form(&ds.sessions, m, p, ds.n_creators())?
        }
    };
    Ok(form.redraw(p, n_draws, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    ClosedForm,
    ExactM2,
    ApproxM,
    Rerandomization,
}

impl VarianceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceMethod::ClosedForm => "closed_form",
            VarianceMethod::ExactM2 => "exact_m2",
            VarianceMethod::ApproxM => "approx_m",
            VarianceMethod::Rerandomization => "rerandomization",
        }
    }
}

/// Outcome of a sharp-null test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: VarianceMethod,
    pub statistic: f64,
    pub variance: f64,
    pub z: f64,
    pub p_value_normal: f64,
    pub p_value_chebyshev: f64,
    /// Confidence level; rejection when a p-value is at most `1 - level`.
    pub level: f64,
    pub reject_normal: bool,
    pub reject_chebyshev: bool,
    /// Zero variance.
    pub degenerate: bool,
    #[serde(default)]
    pub n_rerandomizations: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TestReport {
    pub const CSV_HEADER: [&'static str; 7] = ["method", "statistic", "variance", "z", "p_normal", "p_chebyshev", "reject_90"];

    /// CSV row; `reject_90` is the normal-test decision at the report's level.
    pub fn csv_record(&self) -> [String; 7] {
        [
            self.method.name().to_string(),
            self.statistic.to_string(),
            self.variance.to_string(),
            self.z.to_string(),
            self.p_value_normal.to_string(),
            self.p_value_chebyshev.to_string(),
            self.reject_normal.to_string(),
        ]
    }
}

/// Two-sided normal and Chebyshev tests of `statistic` against a zero-mean null.
pub fn hypothesis_test(statistic: f64, variance: f64, level: f64, method: VarianceMethod) -> Result<TestReport> {
    if !(variance >= 0.0) {
        return Err(invalid("test", format!("variance {variance} is negative")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("test", format!("level {level} outside (0,1)")));
    }
    let degenerate = variance == 0.0;
    let (z, p_normal, p_cheb) = if degenerate {
        if statistic == 0.0 {
            (0.0, 1.0, 1.0)
        } else {
            (statistic.signum() * f64::INFINITY, 0.0, 0.0)
        }
    } else {
        let z = statistic / variance.sqrt();
        let pn = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
        let pc = if z == 0.0 { 1.0 } else { (1.0 / (z * z)).min(1.0) };
        (z, pn, pc)
    };
    let alpha = 1.0 - level;
    Ok(TestReport {
        method,
        statistic,
        variance,
        z,
        p_value_normal: p_normal,
        p_value_chebyshev: p_cheb,
        level,
        reject_normal: p_normal <= alpha,
        reject_chebyshev: p_cheb <= alpha,
        degenerate,
        n_rerandomizations: None,
        warnings: Vec::new(),
    })
}

/// Options for [`run_test`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestOptions {
    pub method: VarianceMethod,
    pub statistic: RerandomizedStatistic,
    pub level: f64,
    /// Treatment probability used by the statistic; the dataset's nominal one when absent.
    pub p: Option<f64>,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            method: VarianceMethod::ClosedForm,
            statistic: RerandomizedStatistic::DqMc,
            level: 0.9,
            p: None,
            n_draws: 10_000,
            seed: 0,
        }
    }
}

/// Sharp-null test of the dataset's DQ statistic.
///
/// `closed_form` and `rerandomization` test the Monte-Carlo or doubly robust DQ; the
/// general-p modes test the first-order DQ contrast, which equals Monte-Carlo DQ at `p = 1/2`.
pub fn run_test(ds: &ExperimentDataset, opts: &TestOptions) -> Result<TestReport> {
    let p = opts.p.unwrap_or(ds.p_nominal);
    check_p(p)?;
    let model = match opts.statistic {
        RerandomizedStatistic::DqDr => Some(crate::estimators::fit_q_regression(&ds.holdout_sessions)?),
        RerandomizedStatistic::DqMc => None,
    };
    let form = || -> Result<LinearForm> {
        match &model {
            Some(m) => dr_linear_form(&ds.sessions, m, p, ds.n_creators()),
            None => Ok(dq_linear_form(&aggregate_dataset(ds, false)?, p)),
        }
    };
    let mut warnings = Vec::new();
    let (statistic, variance, draws) = match opts.method {
        VarianceMethod::ClosedForm => {
            let f = form()?;
            (f.evaluate(&ds.assignments), f.null_variance(p), None)
        }
        VarianceMethod::Rerandomization => {
            let f = form()?;
            let sample = f.redraw(p, opts.n_draws.max(1), opts.seed);
            let s = crate::stats::Summary::of(&sample);
            let var = if sample.len() > 1 { s.sd * s.sd } else { 0.0 };
            (f.evaluate(&ds.assignments), var, Some(sample.len()))
        }
        VarianceMethod::ExactM2 | VarianceMethod::ApproxM => {
            if opts.statistic == RerandomizedStatistic::DqDr {
                return Err(invalid("test", "general-p variance modes apply to the Monte-Carlo statistic"));
            }
            let exact = opts.method == VarianceMethod::ExactM2;
            let aggs = aggregate_dataset(ds, exact)?;
            let mode = if exact { GeneralMode::ExactM2 } else { GeneralMode::ApproxM };
            if !exact && mass_concentration(&aggs) > CONCENTRATION_WARN {
                warnings.push("approximation quality degraded".to_string());
            }
            let stat = crate::estimators::DqGeneral::contrast(
                &crate::mdp::PolicySpec::bernoulli(p),
                &crate::mdp::PolicySpec::GlobalTreatment,
                &crate::mdp::PolicySpec::GlobalControl,
                None,
                2,
                None,
            )?;
            let (values, _) = crate::estimators::session_values(&stat, &ds.sessions);
            (
                crate::stats::mean(&values),
                null_variance_general_p(&aggs, p, mode)?,
                None,
            )
        }
    };
    let mut r = hypothesis_test(statistic, variance, opts.level, opts.method)?;
    r.n_rerandomizations = draws;
    r.warnings = warnings;
    Ok(r)
}
