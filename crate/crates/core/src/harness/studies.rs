use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{write_csv, PlotPoint};
use super::{run_replicate, NullTest, SweepConfig};
use crate::error::{invalid, Result};
use crate::sim::{ground_truth_ate, OracleEstimate, SimConfig};

/// Oracle standard error must stay below this share of the smallest nonzero swept ATE.
pub const ORACLE_SE_SHARE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub tau_star: f64,
    pub label: String,
    pub ate: f64,
    pub standard_error: f64,
    pub j_control: f64,
    pub relative_effect: f64,
    pub n_sessions: usize,
    pub oracle_limited: bool,
}

/// One estimator on one replicate at one viewer count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub tau_star: f64,
    pub n_viewers: usize,
    pub replicate: usize,
    pub seed: u64,
    pub estimator: String,
    pub point: Option<f64>,
    pub error: Option<String>,
}

/// Summary over replicates of one (effect, N, estimator) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub tau_star: f64,
    pub label: String,
    pub n_viewers: usize,
    pub estimator: String,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub sd: f64,
    pub rmse: f64,
    pub rmse_se: f64,
    /// `rmse / |ATE|`; absent when the oracle ATE is zero.
    pub relative_rmse: Option<f64>,
    pub relative_rmse_se: Option<f64>,
    /// `relative` or `absolute` (zero-effect rows).
    pub metric: String,
    pub oracle_limited: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub oracles: Vec<OracleRow>,
    pub estimates: Vec<EstimateRow>,
    pub cells: Vec<CellRow>,
}

impl SweepResults {
    pub fn cell(&self, tau_star: f64, n_viewers: usize, estimator: &str) -> Option<&CellRow> {
        self.cells
            .iter()
            .find(|c| c.tau_star == tau_star && c.n_viewers == n_viewers && c.estimator == estimator)
    }

    pub fn points(&self, tau_star: f64, n_viewers: usize, estimator: &str) -> Vec<f64> {
        self.estimates
            .iter()
            .filter(|e| e.tau_star == tau_star && e.n_viewers == n_viewers && e.estimator == estimator)
            .filter_map(|e| e.point)
            .collect()
    }

    pub fn oracle(&self, tau_star: f64) -> Option<&OracleRow> {
        self.oracles.iter().find(|o| o.tau_star == tau_star)
    }

    pub fn plot_points(&self) -> Vec<PlotPoint> {
        self.cells
            .iter()
            .map(|c| PlotPoint {
                figure: format!("{}_rmse_vs_n", c.metric),
                series: format!("{}|{}", c.label, c.estimator),
                x: c.n_viewers as f64,
                y: c.relative_rmse.unwrap_or(c.rmse),
                y_se: Some(c.relative_rmse_se.unwrap_or(c.rmse_se)),
            })
            .collect()
    }

    /// `oracle.csv`, `estimates.csv`, `cells.csv` and optionally `plot_data.csv`.
    pub fn write(&self, dir: &Path, plot: bool) -> Result<()> {
        write_csv(&dir.join("oracle.csv"), &self.oracles)?;
        write_csv(&dir.join("estimates.csv"), &self.estimates)?;
        write_csv(&dir.join("cells.csv"), &self.cells)?;
        if plot {
            write_csv(&dir.join("plot_data.csv"), &self.plot_points())?;
        }
        Ok(())
    }
}

fn oracles(cfg: &SweepConfig) -> Result<Vec<OracleRow>> {
    let raw: Vec<(f64, OracleEstimate)> = cfg
        .effect_sizes
        .iter()
        .map(|&tau| {
            let sim = SimConfig {
                tau_star: tau,
                ..cfg.base.clone()
            };
            log::info!("oracle for tau_star {tau}");
            ground_truth_ate(&sim, cfg.oracle_sessions).map(|o| (tau, o))
        })
        .collect::<Result<_>>()?;
    let smallest = raw
        .iter()
        .filter(|(tau, _)| *tau != 0.0)
        .map(|(_, o)| o.ate.abs())
        .fold(f64::INFINITY, f64::min);
    Ok(raw
        .into_iter()
        .map(|(tau, o)| OracleRow {
            tau_star: tau,
            label: o.label(),
            ate: o.ate,
            standard_error: o.standard_error,
            j_control: o.j_control,
            relative_effect: o.relative_effect(),
            n_sessions: o.n_sessions,
            oracle_limited: smallest.is_finite() && !(o.standard_error < ORACLE_SE_SHARE * smallest),
        })
        .collect())
}

fn replicate_config(cfg: &SweepConfig, tau: f64, rep: usize, p_actual: Option<f64>, p_nominal: f64) -> SimConfig {
    SimConfig {
        tau_star: tau,
        seed: cfg.replicate_seed(rep),
        p_treat: p_nominal,
        p_actual,
        ..cfg.base.clone()
    }
}

fn summarize(oracle: &OracleRow, n_viewers: usize, estimator: &str, points: &[f64], n_failed: usize) -> CellRow {
    let t = points.len();
    let tf = t as f64;
    let ate = oracle.ate;
    let mean = if t > 0 { points.iter().sum::<f64>() / tf } else { f64::NAN };
    let sd = if t > 1 {
        (points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (tf - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let sq: Vec<f64> = points.iter().map(|x| (x - ate).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / tf;
    let rmse = mse.sqrt();
    let mse_sd = if t > 1 {
        (sq.iter().map(|x| (x - mse).powi(2)).sum::<f64>() / (tf - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    // delta method on sqrt
    let rmse_se = if rmse > 0.0 { mse_sd / tf.sqrt() / (2.0 * rmse) } else { 0.0 };
    let relative = ate != 0.0;
    CellRow {
        tau_star: oracle.tau_star,
        label: oracle.label.clone(),
        n_viewers,
        estimator: estimator.to_string(),
        n_seeds: t,
        n_failed,
        mean,
        bias: mean - ate,
        bias_se: sd / tf.sqrt(),
        sd,
        rmse,
        rmse_se,
        relative_rmse: relative.then(|| rmse / ate.abs()),
        relative_rmse_se: relative.then(|| rmse_se / ate.abs()),
        metric: if relative { "relative" } else { "absolute" }.to_string(),
        oracle_limited: oracle.oracle_limited,
    }
}

/// Estimator accuracy over effects, viewer counts and replicates.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResults> {
    cfg.validate()?;
    let oracles = oracles(cfg)?;
    let checkpoints = cfg.checkpoints();
    let p = cfg.base.p_treat;
    let (p_nominal, p_actual) = match cfg.misspecification {
        Some(m) => (m.p_nominal, Some(m.p_actual)),
        None => (p, cfg.base.p_actual),
    };
    let mut estimates = Vec::new();
    for oracle in &oracles {
        for rep in 0..cfg.n_seeds {
            let sim = replicate_config(cfg, oracle.tau_star, rep, p_actual, p_nominal);
            log::info!("sweep tau_star {} replicate {rep}", oracle.tau_star);
            let out = run_replicate(&sim, &checkpoints, &cfg.estimators, p_nominal, &[], cfg.confidence_level, cfg.chunk_viewers);
            for (c, &n) in checkpoints.iter().enumerate() {
                for (e, kind) in cfg.estimators.iter().enumerate() {
                    let (point, error) = match &out {
                        Ok(o) => match &o.estimates[c][e] {
                            Ok(v) => (Some(*v), None),
                            Err(msg) => (None, Some(msg.clone())),
                        },
                        Err(err) => (None, Some(err.to_string())),
                    };
                    estimates.push(EstimateRow {
                        tau_star: oracle.tau_star,
                        n_viewers: n,
                        replicate: rep,
                        seed: sim.seed,
                        estimator: kind.name().to_string(),
                        point,
                        error,
                    });
                }
            }
        }
    }
    let mut cells = Vec::new();
    for oracle in &oracles {
        for &n in &checkpoints {
            for kind in &cfg.estimators {
                let rows: Vec<&EstimateRow> = estimates
                    .iter()
                    .filter(|r| r.tau_star == oracle.tau_star && r.n_viewers == n && r.estimator == kind.name())
                    .collect();
                let points: Vec<f64> = rows.iter().filter_map(|r| r.point).collect();
                cells.push(summarize(oracle, n, kind.name(), &points, rows.len() - points.len()));
            }
        }
    }
    Ok(SweepResults {
        oracles,
        estimates,
        cells,
    })
}

/// One test on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub tau_star: f64,
    pub n_viewers: usize,
    pub replicate: usize,
    pub test: String,
    pub statistic: f64,
    pub variance: f64,
    pub z: f64,
    pub p_normal: f64,
    pub p_chebyshev: f64,
    pub reject_normal: bool,
    pub reject_chebyshev: bool,
}

/// Rejection frequency of one test in one (effect, N) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub tau_star: f64,
    pub label: String,
    pub n_viewers: usize,
    pub test: String,
    pub n_seeds: usize,
    pub rejections: usize,
    pub rate: f64,
    pub rate_se: f64,
    pub chebyshev_rate: f64,
    pub oracle_limited: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerResults {
    pub level: f64,
    pub oracles: Vec<OracleRow>,
    pub tests: Vec<TestRow>,
    pub rows: Vec<PowerRow>,
}

impl PowerResults {
    pub fn row(&self, tau_star: f64, n_viewers: usize, test: &str) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.tau_star == tau_star && r.n_viewers == n_viewers && r.test == test)
    }

    pub fn plot_points(&self) -> Vec<PlotPoint> {
        self.rows
            .iter()
            .map(|r| PlotPoint {
                figure: "power_vs_n".to_string(),
                series: format!("{}|{}", r.label, r.test),
                x: r.n_viewers as f64,
                y: r.rate,
                y_se: Some(r.rate_se),
            })
            .collect()
    }

    /// `oracle.csv`, `tests.csv`, `power.csv` and optionally `plot_data.csv`.
    pub fn write(&self, dir: &Path, plot: bool) -> Result<()> {
        write_csv(&dir.join("oracle.csv"), &self.oracles)?;
        write_csv(&dir.join("tests.csv"), &self.tests)?;
        write_csv(&dir.join("power.csv"), &self.rows)?;
        if plot {
            write_csv(&dir.join("plot_data.csv"), &self.plot_points())?;
        }
        Ok(())
    }
}

/// Rejection rates of the sharp-null tests; the zero-effect rows are false-positive rates.
///
/// Runs the Monte-Carlo DQ test (closed-form variance) and the doubly robust DQ test.
pub fn run_power_study(cfg: &SweepConfig) -> Result<PowerResults> {
    cfg.validate()?;
    if !cfg.effect_sizes.contains(&0.0) {
        return Err(invalid("power", "effect_sizes must include 0 for the false-positive row"));
    }
    let oracles = oracles(cfg)?;
    let checkpoints = cfg.checkpoints();
    let p = cfg.base.p_treat;
    let null_tests = [NullTest::Dq, NullTest::DqDr];
    let mut tests = Vec::new();
    for oracle in &oracles {
        for rep in 0..cfg.n_seeds {
            let sim = replicate_config(cfg, oracle.tau_star, rep, cfg.base.p_actual, p);
            log::info!("power tau_star {} replicate {rep}", oracle.tau_star);
            let out = run_replicate(&sim, &checkpoints, &[], p, &null_tests, cfg.confidence_level, cfg.chunk_viewers)?;
            for (c, &n) in checkpoints.iter().enumerate() {
                for (t, r) in &out.tests[c] {
                    tests.push(TestRow {
                        tau_star: oracle.tau_star,
                        n_viewers: n,
                        replicate: rep,
                        test: t.name().to_string(),
                        statistic: r.statistic,
                        variance: r.variance,
                        z: r.z,
                        p_normal: r.p_value_normal,
                        p_chebyshev: r.p_value_chebyshev,
                        reject_normal: r.reject_normal,
                        reject_chebyshev: r.reject_chebyshev,
                    });
                }
            }
        }
    }
    let mut rows = Vec::new();
    for oracle in &oracles {
        for &n in &checkpoints {
            for t in null_tests {
                let sel: Vec<&TestRow> = tests
                    .iter()
                    .filter(|r| r.tau_star == oracle.tau_star && r.n_viewers == n && r.test == t.name())
                    .collect();
                let k = sel.len();
                let rej = sel.iter().filter(|r| r.reject_normal).count();
                let cheb = sel.iter().filter(|r| r.reject_chebyshev).count();
                let rate = rej as f64 / k as f64;
                rows.push(PowerRow {
                    tau_star: oracle.tau_star,
                    label: oracle.label.clone(),
                    n_viewers: n,
                    test: t.name().to_string(),
                    n_seeds: k,
                    rejections: rej,
                    rate,
                    rate_se: (rate * (1.0 - rate) / k as f64).sqrt(),
                    chebyshev_rate: cheb as f64 / k as f64,
                    oracle_limited: oracle.oracle_limited,
                });
            }
        }
    }
    Ok(PowerResults {
        level: cfg.confidence_level,
        oracles,
        tests,
        rows,
    })
}

/// Bias of one estimator under one assignment scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecRow {
    pub tau_star: f64,
    pub label: String,
    /// `correct` or `misspecified`.
    pub scenario: String,
    pub p_nominal: f64,
    pub p_actual: f64,
    pub n_viewers: usize,
    pub estimator: String,
    pub n_seeds: usize,
    pub mean: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MisspecResults {
    pub oracles: Vec<OracleRow>,
    pub rows: Vec<MisspecRow>,
}

impl MisspecResults {
    pub fn row(&self, tau_star: f64, scenario: &str, estimator: &str) -> Option<&MisspecRow> {
        self.rows
            .iter()
            .find(|r| r.tau_star == tau_star && r.scenario == scenario && r.estimator == estimator)
    }

    /// Misspecified Monte-Carlo DQ mean has the opposite sign to the ATE.
    pub fn dq_sign_flipped(&self, tau_star: f64) -> Option<bool> {
        let o = self.oracles.iter().find(|o| o.tau_star == tau_star)?;
        let r = self.row(tau_star, "misspecified", "dq")?;
        Some(r.mean * o.ate < 0.0)
    }

    /// `|bias(dq_dr)| / |bias(dq)|` under misspecification.
    pub fn dr_to_dq_bias_ratio(&self, tau_star: f64) -> Option<f64> {
        let dr = self.row(tau_star, "misspecified", "dq_dr")?;
        let dq = self.row(tau_star, "misspecified", "dq")?;
        Some(dr.bias.abs() / dq.bias.abs())
    }

    pub fn plot_points(&self) -> Vec<PlotPoint> {
        self.rows
            .iter()
            .map(|r| PlotPoint {
                figure: "bias_vs_p_actual".to_string(),
                series: format!("{}|{}", r.label, r.estimator),
                x: r.p_actual,
                y: r.bias,
                y_se: Some(r.bias_se),
            })
            .collect()
    }

    /// `oracle.csv`, `misspec.csv` and optionally `plot_data.csv`.
    pub fn write(&self, dir: &Path, plot: bool) -> Result<()> {
        write_csv(&dir.join("oracle.csv"), &self.oracles)?;
        write_csv(&dir.join("misspec.csv"), &self.rows)?;
        if plot {
            write_csv(&dir.join("plot_data.csv"), &self.plot_points())?;
        }
        Ok(())
    }
}

/// Bias with the estimators told `p_nominal` while assignments use `p_actual`, next to
/// the correctly specified baseline on the same replicate seeds. Uses the largest N.
pub fn run_misspecification_study(cfg: &SweepConfig) -> Result<MisspecResults> {
    cfg.validate()?;
    let m = cfg
        .misspecification
        .ok_or_else(|| invalid("misspec", "misspecification must be set"))?;
    let oracles = oracles(cfg)?;
    let n = *cfg.checkpoints().last().expect("validated non-empty");
    let scenarios = [("correct", m.p_nominal), ("misspecified", m.p_actual)];
    let mut rows = Vec::new();
    for oracle in &oracles {
        for (name, p_actual) in scenarios {
            let mut points: Vec<Vec<f64>> = vec![Vec::new(); cfg.estimators.len()];
            for rep in 0..cfg.n_seeds {
                let sim = replicate_config(cfg, oracle.tau_star, rep, Some(p_actual), m.p_nominal);
                log::info!("misspec {name} tau_star {} replicate {rep}", oracle.tau_star);
                let out = run_replicate(&sim, &[n], &cfg.estimators, m.p_nominal, &[], cfg.confidence_level, cfg.chunk_viewers)?;
                for (e, v) in out.estimates[0].iter().enumerate() {
                    if let Ok(v) = v {
                        points[e].push(*v);
                    }
                }
            }
            for (kind, pts) in cfg.estimators.iter().zip(&points) {
                let c = summarize(oracle, n, kind.name(), pts, cfg.n_seeds - pts.len());
                rows.push(MisspecRow {
                    tau_star: oracle.tau_star,
                    label: oracle.label.clone(),
                    scenario: name.to_string(),
                    p_nominal: m.p_nominal,
                    p_actual,
                    n_viewers: n,
                    estimator: kind.name().to_string(),
                    n_seeds: c.n_seeds,
                    mean: c.mean,
                    bias: c.bias,
                    bias_se: c.bias_se,
                    sd: c.sd,
                });
            }
        }
    }
    Ok(MisspecResults { oracles, rows })
}

