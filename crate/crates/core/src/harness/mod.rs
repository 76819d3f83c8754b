//! Replicated simulation studies: estimator sweeps, power curves, misspecification,
//! and the tabular theory sweep.

mod output;
mod studies;
mod theory;

use std::path::PathBuf;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::SessionLog;
use crate::error::{invalid, Result};
use crate::estimators::{build, check_p, session_values, ActionValueModel, EstimatorKind, FittedModels};
use crate::sim::{draw_population, simulate_range, stream, Mode, Purpose, SimConfig};
use crate::stats::pairwise_sum;
use crate::variance::{hypothesis_test, TestReport, VarianceMethod};

pub use output::{write_csv, PlotPoint};
pub use studies::{
    run_misspecification_study, run_power_study, run_sweep, CellRow, EstimateRow, MisspecResults, MisspecRow,
    OracleRow, PowerResults, PowerRow, SweepResults, TestRow,
};
pub use theory::{verify_theory, TheoryConfig, TheoryRow};

/// Nominal and realized treatment probabilities for a misspecified run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Misspecification {
    pub p_nominal: f64,
    pub p_actual: f64,
}

/// A grid of replicated experiments. Field names double as the JSON config schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: SimConfig,
    pub effect_sizes: Vec<f64>,
    pub n_viewers_grid: Vec<usize>,
    pub n_seeds: usize,
    pub estimators: Vec<EstimatorKind>,
    pub misspecification: Option<Misspecification>,
    pub confidence_level: f64,
    pub output_dir: PathBuf,
    /// Paired sessions behind each oracle ATE.
    pub oracle_sessions: usize,
    /// Viewers simulated per parallel block.
    pub chunk_viewers: usize,
    pub emit_plot_data: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base: SimConfig::default(),
            effect_sizes: vec![0.0, 0.01, 0.02],
            n_viewers_grid: vec![10_000, 100_000, 1_000_000],
            n_seeds: 50,
            estimators: EstimatorKind::ALL.to_vec(),
            misspecification: None,
            confidence_level: 0.9,
            output_dir: PathBuf::from("out"),
            oracle_sessions: 1_000_000,
            chunk_viewers: 1 << 16,
            emit_plot_data: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_seeds == 0 {
            return Err(invalid("sweep", "n_seeds must be at least 1"));
        }
        if self.effect_sizes.is_empty() || self.n_viewers_grid.is_empty() || self.estimators.is_empty() {
            return Err(invalid("sweep", "effect_sizes, n_viewers_grid and estimators must be non-empty"));
        }
        if self.n_viewers_grid.contains(&0) {
            return Err(invalid("sweep", "n_viewers_grid entries must be positive"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(invalid("sweep", "confidence_level outside (0,1)"));
        }
        if self.chunk_viewers == 0 {
            return Err(invalid("sweep", "chunk_viewers must be positive"));
        }
        if let Some(m) = self.misspecification {
            check_p(m.p_nominal)?;
            if !(0.0..=1.0).contains(&m.p_actual) {
                return Err(invalid("sweep", "misspecified p_actual outside [0,1]"));
            }
        }
        Ok(())
    }

    /// Sorted, de-duplicated viewer counts.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut g = self.n_viewers_grid.clone();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Simulation seed of replicate `index`.
    pub fn replicate_seed(&self, index: usize) -> u64 {
        stream(self.base.seed, Purpose::Replicate, index as u64).next_u64()
    }
}

/// Which sharp-null tests to run alongside the estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullTest {
    /// Monte-Carlo DQ with its closed-form variance.
    Dq,
    /// Doubly robust DQ with the exact variance of its linear form, model frozen.
    DqDr,
}

impl NullTest {
    pub fn name(&self) -> &'static str {
        match self {
            NullTest::Dq => "dq",
            NullTest::DqDr => "dq_dr",
        }
    }
}

/// Estimates (and tests) of one replicate at each viewer count.
#[derive(Clone, Debug)]
pub struct ReplicateOutcome {
    pub checkpoints: Vec<usize>,
    /// `estimates[c][e]`: estimator `e` on the first `checkpoints[c]` main viewers.
    pub estimates: Vec<Vec<std::result::Result<f64, String>>>,
    /// `tests[c]`: one report per requested test.
    pub tests: Vec<Vec<(NullTest, TestReport)>>,
    pub truncated_sessions: usize,
}

/// Runs one simulated experiment up to the largest checkpoint, streaming viewers in blocks.
///
/// Viewer streams are keyed by id, so the first `n` viewers of a larger run are exactly
/// the viewers of a run with `n_viewers = n`; every checkpoint is read off one simulation.
pub fn run_replicate(
    sim: &SimConfig,
    checkpoints: &[usize],
    estimators: &[EstimatorKind],
    p_used: f64,
    tests: &[NullTest],
    level: f64,
    chunk: usize,
) -> Result<ReplicateOutcome> {
    let n_max = *checkpoints.last().ok_or_else(|| invalid("replicate", "no checkpoints"))?;
    let pop = draw_population(sim)?;
    let h = sim.holdout_viewers as u64;
    let needs_models = estimators.iter().any(|k| k.needs_q_model() || k.needs_reward_model()) || tests.contains(&NullTest::DqDr);
    let models = if needs_models {
        let holdout = simulate_range(sim, &pop, 0..h, Mode::Experiment)?;
        match FittedModels::fit(&holdout) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("model fit failed: {e}");
                None
            }
        }
    } else {
        None
    };
    let stats: Vec<std::result::Result<_, String>> = estimators
        .iter()
        .map(|&k| build(k, p_used, models.as_ref()).map_err(|e| e.to_string()))
        .collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(n_max); estimators.len()];
    let mut masses = tests
        .iter()
        .map(|&t| match (t, models.as_ref()) {
            (NullTest::Dq, _) => Ok(CreatorMasses::new(t, sim.n_creators, None)),
            (NullTest::DqDr, Some(m)) => Ok(CreatorMasses::new(t, sim.n_creators, Some(&m.q as &dyn ActionValueModel))),
            (NullTest::DqDr, None) => Err("dq_dr test needs a fitted model".to_string()),
        })
        .collect::<Vec<_>>();

    let mut outcome = ReplicateOutcome {
        checkpoints: checkpoints.to_vec(),
        estimates: Vec::new(),
        tests: Vec::new(),
        truncated_sessions: 0,
    };
    let mut pos = 0usize;
    for &cp in checkpoints {
        while pos < cp {
            let next = (pos + chunk).min(cp);
            let sessions = simulate_range(sim, &pop, h + pos as u64..h + next as u64, Mode::Experiment)?;
            outcome.truncated_sessions += sessions.iter().filter(|s| !s.terminated).count();
            for (stat, vals) in stats.iter().zip(values.iter_mut()) {
                if let Ok(stat) = stat {
                    vals.extend(session_values(stat.as_ref(), &sessions).0);
                }
            }
            for m in masses.iter_mut().flatten() {
                m.add(&sessions, p_used);
            }
            pos = next;
        }
        let row = stats
            .iter()
            .zip(&values)
            .map(|(stat, vals)| match stat {
                Ok(_) => Ok(pairwise_sum(&vals[..cp]) / cp as f64),
                Err(e) => Err(e.clone()),
            })
            .collect::<Vec<_>>();
        let mut reports = Vec::new();
        for m in masses.iter().flatten() {
            reports.push((m.test, m.test_report(cp, p_used, level)?));
        }
        outcome.estimates.push(row);
        outcome.tests.push(reports);
    }
    Ok(outcome)
}

/// Running per-creator sums of a statistic that is affine in the assignments.
struct CreatorMasses<'m> {
    test: NullTest,
    model: Option<&'m dyn ActionValueModel>,
    coefficients: Vec<f64>,
    /// Per-session values of the statistic at the realized assignments.
    values: Vec<f64>,
}

impl<'m> CreatorMasses<'m> {
    fn new(test: NullTest, n_creators: usize, model: Option<&'m dyn ActionValueModel>) -> Self {
        CreatorMasses {
            test,
            model,
            coefficients: vec![0.0; n_creators],
            values: Vec::new(),
        }
    }

    fn add(&mut self, sessions: &[SessionLog], p: f64) {
        let q = 1.0 - p;
        for log in sessions {
            let g = log.suffix_sums();
            let mut v = 0.0;
            for (st, g) in log.steps.iter().zip(&g) {
                let j = st.creator as usize;
                let treated = st.action == 1;
                match self.model {
                    None => {
                        self.coefficients[j] += (1.0 / p + 1.0 / q) * g;
                        v += if treated { g / p } else { -g / q };
                    }
                    Some(m) => {
                        let q1 = m.predict(st, 1);
                        let q0 = m.predict(st, 0);
                        self.coefficients[j] += (g - q1) / p + (g - q0) / q;
                        v += (q1 - q0) + if treated { (g - q1) / p } else { -(g - q0) / q };
                    }
                }
            }
            self.values.push(v);
        }
    }

    fn test_report(&self, n: usize, p: f64, level: f64) -> Result<TestReport> {
        // coefficients are accumulated in viewer order, so the prefix state is the current one
        debug_assert_eq!(self.values.len(), n);
        let scale = 1.0 / n as f64;
        let sq: Vec<f64> = self.coefficients.iter().map(|b| (b * scale).powi(2)).collect();
        let variance = p * (1.0 - p) * pairwise_sum(&sq);
        let statistic = pairwise_sum(&self.values) * scale;
        hypothesis_test(statistic, variance, level, VarianceMethod::ClosedForm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_sorted_and_unique() {
        let cfg = SweepConfig {
            n_viewers_grid: vec![300, 100, 300],
            ..SweepConfig::default()
        };
        assert_eq!(cfg.checkpoints(), vec![100, 300]);
    }

    #[test]
    fn replicate_seeds_differ_and_repeat() {
        let cfg = SweepConfig::default();
        assert_ne!(cfg.replicate_seed(0), cfg.replicate_seed(1));
        assert_eq!(cfg.replicate_seed(3), cfg.replicate_seed(3));
    }

    #[test]
    fn rejects_empty_grids() {
        let cfg = SweepConfig {
            effect_sizes: Vec::new(),
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SweepConfig::default().validate().is_ok());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: SweepConfig = serde_json::from_str(r#"{"n_seeds": 3}"#).unwrap();
        assert_eq!(cfg.n_seeds, 3);
        assert_eq!(cfg.confidence_level, 0.9);
    }
}
