//! Exact bias of Naive and DQ on the two hand-built session MDPs and on random
//! absorbing MDPs, next to the theoretical envelopes.

use dqlab::mdp::instances::{attention_budget_wall, fixed_session_length};
use dqlab::mdp::random::{random_mdp, RandomMdpSpec};
use dqlab::mdp::SettingSpec;
use dqlab::sim::{stream, Purpose};
use dqlab::taylor::verify_bias_bounds;

fn main() -> dqlab::Result<()> {
    let abs = SettingSpec::absorbing();
    for (name, mdp) in [("budget wall", attention_budget_wall()), ("fixed length", fixed_session_length())] {
        let r = verify_bias_bounds(&mdp, &abs)?;
        println!(
            "{name:>12}: ATE {:>5}  E[naive] {:>5}  E[DQ] {:>5}",
            r.ate, r.naive_expect, r.dq_expect
        );
    }
    let mut rng = stream(1, Purpose::Theory, 0);
    println!("\n   delta   naive gap  naive bound     dq gap    dq bound");
    for eps in [0.3, 0.1, 0.03, 0.01] {
        let spec = RandomMdpSpec {
            n_states: 6,
            epsilon: eps,
            absorbing: true,
            ..RandomMdpSpec::default()
        };
        let r = verify_bias_bounds(&random_mdp(&mut rng, &spec), &abs)?;
        println!(
            "{:8.4} {:11.3e} {:12.3e} {:10.3e} {:11.3e}",
            r.delta, r.naive_gap, r.naive_bound, r.dq_gap, r.dq_bound
        );
    }
    Ok(())
}
