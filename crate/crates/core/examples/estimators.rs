//! Runs every estimator on one simulated experiment and compares with the oracle ATE.

use dqlab::estimators::{build, evaluate, EstimatorKind, FittedModels};
use dqlab::sim::{generate_dataset, ground_truth_ate, SimConfig};

fn main() -> dqlab::Result<()> {
    let cfg = SimConfig {
        n_viewers: 200_000,
        seed: 5,
        ..SimConfig::default()
    };
    let oracle = ground_truth_ate(&cfg, 200_000)?;
    println!("oracle ATE {:+.4} (se {:.4}), {}", oracle.ate, oracle.standard_error, oracle.label());
    let ds = generate_dataset(&cfg)?;
    let models = FittedModels::fit(&ds.holdout_sessions)?;
    for kind in EstimatorKind::ALL {
        let stat = build(kind, ds.p_nominal, Some(&models))?;
        let r = evaluate(stat.as_ref(), &ds.sessions, false)?;
        println!("{:>9} {:+.4}  (viewer-level se {:.4})", r.estimator, r.point, r.variance.sqrt());
    }
    Ok(())
}
