//! First-order DQ from data collected under an arbitrary policy: three target arms
//! estimated from one logging policy on a tabular MDP, against the exact expansion.

use dqlab::estimators::{evaluate, DqGeneral};
use dqlab::mdp::random::{random_mdp, RandomMdpSpec};
use dqlab::mdp::rollout::sample_session;
use dqlab::mdp::{PolicySpec, SettingSpec};
use dqlab::sim::{stream, Purpose};
use dqlab::taylor::expand;

fn main() -> dqlab::Result<()> {
    let mut rng = stream(2, Purpose::Theory, 0);
    let spec = RandomMdpSpec {
        n_states: 4,
        epsilon: 0.2,
        absorbing: true,
        ..RandomMdpSpec::default()
    };
    let mdp = random_mdp(&mut rng, &spec);
    let data_policy = PolicySpec::bernoulli(0.3);
    let n = 200_000;
    let sessions = (0..n)
        .map(|i| sample_session(&mdp, &data_policy, i, 0, 10_000, &mut rng))
        .collect::<dqlab::Result<Vec<_>>>()?;
    for arm in [PolicySpec::GlobalControl, PolicySpec::bernoulli(0.6), PolicySpec::GlobalTreatment] {
        let stat = DqGeneral::value(&data_policy, &arm, Some(mdp.n_states()), 2, None)?;
        let est = evaluate(&stat, &sessions, false)?;
        let exact = expand(&mdp, &data_policy, &arm, &SettingSpec::absorbing(), 1)?;
        println!(
            "{arm:?}: estimate {:.4} +- {:.4}, first-order value {:.4}, true value {:.4}",
            est.point,
            est.variance.sqrt(),
            exact.approximation(),
            exact.exact_value
        );
    }
    Ok(())
}
