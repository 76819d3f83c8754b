//! Expands the value of a target policy around a data policy on a random MDP, in every
//! setting, and compares the truncated series with the exact value.

use dqlab::mdp::random::{random_mdp, random_policy, RandomMdpSpec};
use dqlab::mdp::SettingSpec;
use dqlab::sim::{stream, Purpose};
use dqlab::taylor::expand;

fn main() -> dqlab::Result<()> {
    let mut rng = stream(7, Purpose::Theory, 0);
    for (setting, absorbing) in [
        (SettingSpec::discounted(0.9), false),
        (SettingSpec::finite(5), false),
        (SettingSpec::absorbing(), true),
        (SettingSpec::average(), false),
    ] {
        let spec = RandomMdpSpec {
            n_states: 5,
            epsilon: 0.1,
            absorbing,
            ..RandomMdpSpec::default()
        };
        let mdp = random_mdp(&mut rng, &spec);
        let pi = random_policy(&mut rng, mdp.n_states(), 2);
        let target = random_policy(&mut rng, mdp.n_states(), 2);
        println!("{} (exact value computed directly)", setting.name());
        for k in 0..4 {
            let r = expand(&mdp, &pi, &target, &setting, k)?;
            println!(
                "  K={k}  approx {:>10.6}  remainder {:>10.3e}  bound {:>9.3e}  exact {:>10.6}  identity residual {:.1e}",
                r.approximation(),
                r.remainder,
                r.bound_slack * r.bound,
                r.exact_value,
                r.identity_residual()
            );
        }
    }
    Ok(())
}
