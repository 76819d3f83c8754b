//! Sharp-null tests of the DQ statistic: closed-form variance against rerandomization,
//! and the general-p variance modes.

use dqlab::sim::{generate_dataset, SimConfig};
use dqlab::variance::{run_test, RerandomizedStatistic, TestOptions, VarianceMethod};

fn main() -> dqlab::Result<()> {
    for (label, tau, p) in [("no effect", 0.0, 0.5), ("tau 0.05", 0.05, 0.5), ("no effect, p 0.3", 0.0, 0.3)] {
        let cfg = SimConfig {
            n_viewers: 20_000,
            n_creators: 50_000,
            tau_star: tau,
            p_treat: p,
            seed: 3,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&cfg)?;
        println!("{label}");
        for (method, statistic) in [
            (VarianceMethod::ClosedForm, RerandomizedStatistic::DqMc),
            (VarianceMethod::Rerandomization, RerandomizedStatistic::DqMc),
            (VarianceMethod::ClosedForm, RerandomizedStatistic::DqDr),
            (VarianceMethod::ExactM2, RerandomizedStatistic::DqMc),
            (VarianceMethod::ApproxM, RerandomizedStatistic::DqMc),
        ] {
            let opts = TestOptions {
                method,
                statistic,
                n_draws: 2_000,
                ..TestOptions::default()
            };
            let r = run_test(&ds, &opts)?;
            println!(
                "  {:>15} {:?}: stat {:+.4} sd {:.4} z {:+.2} p {:.3} (chebyshev {:.3})",
                method.name(),
                statistic,
                r.statistic,
                r.variance.sqrt(),
                r.z,
                r.p_value_normal,
                r.p_value_chebyshev
            );
        }
    }
    Ok(())
}
