//! Small versions of the replicated studies: accuracy sweep, power curve and
//! misspecified treatment probability. Writes CSVs under the temp directory.

use dqlab::estimators::EstimatorKind;
use dqlab::harness::{run_misspecification_study, run_power_study, run_sweep, Misspecification, SweepConfig};
use dqlab::sim::SimConfig;

fn main() -> dqlab::Result<()> {
    let out = std::env::temp_dir().join("dqlab_studies");
    let cfg = SweepConfig {
        base: SimConfig {
            n_creators: 100_000,
            ..SimConfig::default()
        },
        effect_sizes: vec![0.0, 0.04],
        n_viewers_grid: vec![5_000, 20_000],
        n_seeds: 10,
        estimators: vec![EstimatorKind::Naive, EstimatorKind::Dq, EstimatorKind::DqDr],
        oracle_sessions: 100_000,
        output_dir: out.clone(),
        ..SweepConfig::default()
    };
    let sweep = run_sweep(&cfg)?;
    for c in &sweep.cells {
        println!(
            "{:>15} N={:>6} {:>6}: bias {:+.4} sd {:.4} {} rmse {:.3}",
            c.label,
            c.n_viewers,
            c.estimator,
            c.bias,
            c.sd,
            c.metric,
            c.relative_rmse.unwrap_or(c.rmse)
        );
    }
    sweep.write(&out.join("sweep"), true)?;

    let power = run_power_study(&cfg)?;
    for r in &power.rows {
        println!("{:>15} N={:>6} {:>6}: reject {:.2}", r.label, r.n_viewers, r.test, r.rate);
    }
    power.write(&out.join("power"), true)?;

    let mis = run_misspecification_study(&SweepConfig {
        effect_sizes: vec![0.04],
        estimators: vec![EstimatorKind::Dq, EstimatorKind::DqDr],
        misspecification: Some(Misspecification {
            p_nominal: 0.5,
            p_actual: 0.51,
        }),
        ..cfg.clone()
    })?;
    for r in &mis.rows {
        println!("{:>13} {:>6}: bias {:+.4} (se {:.4})", r.scenario, r.estimator, r.bias, r.bias_se);
    }
    mis.write(&out.join("misspec"), true)?;
    println!("CSV files under {}", out.display());
    Ok(())
}
