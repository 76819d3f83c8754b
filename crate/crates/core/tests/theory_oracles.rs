//! Tabular values and expansion terms against routes that avoid the library's linear solves:
//! truncated power series, forward distribution propagation, power iteration and rollouts.

mod common;

use dqlab::linalg::{Matrix, Vector};
use dqlab::mdp::random::{random_mdp, random_policy, RandomMdpSpec};
use dqlab::mdp::rollout::sample_session;
use dqlab::mdp::{exact_ate, q_function, value, PolicySpec, SettingSpec, TabularMdp};
use dqlab::sim::{stream, Purpose};
use dqlab::taylor::{dq_term, expand};
use proptest::prelude::*;
use rand::Rng;

fn induced(mdp: &TabularMdp, pol: &PolicySpec) -> (Matrix, Vector) {
    let n = mdp.n_states();
    let pi = pol.matrix(n, mdp.n_actions()).unwrap();
    let mut k = Matrix::zeros(n, n);
    let mut r = Vector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            r[s] += pi[(s, a)] * mdp.reward(s, a);
            for u in 0..n {
                k[(s, u)] += pi[(s, a)] * mdp.transition(a)[(s, u)];
            }
        }
    }
    (k, r)
}

/// `sum_t gamma^t P^t x`, truncated once the tail is negligible.
fn discounted_series(p: &Matrix, x: &Vector, gamma: f64) -> Vector {
    let mut term = x.clone();
    let mut acc = x.clone();
    for _ in 0..2000 {
        term = p * term * gamma;
        acc += &term;
        if term.amax() < 1e-16 {
            break;
        }
    }
    acc
}

fn instance(seed: u64, absorbing: bool) -> (TabularMdp, PolicySpec, PolicySpec) {
    let mut rng = stream(seed, Purpose::Theory, 7);
    let spec = RandomMdpSpec {
        n_states: rng.random_range(3..=7),
        epsilon: rng.random_range(0.01..0.3),
        absorbing,
        ..RandomMdpSpec::default()
    };
    let mdp = random_mdp(&mut rng, &spec);
    let a = random_policy(&mut rng, mdp.n_states(), 2);
    let b = random_policy(&mut rng, mdp.n_states(), 2);
    (mdp, a, b)
}

#[test]
fn discounted_terms_match_neumann_series() {
    let gamma = 0.9;
    for seed in 0..20 {
        let (mdp, pi, pi2) = instance(seed, false);
        let (p, _) = induced(&mdp, &pi);
        let (p2, r2) = induced(&mdp, &pi2);
        let rho = mdp.rho_init();
        let rep = expand(&mdp, &pi, &pi2, &SettingSpec::discounted(gamma), 3).unwrap();
        // term_k = rho' R [gamma (P' - P) R]^k r', with R x evaluated as a power series
        let mut x = discounted_series(&p, &r2, gamma);
        for (k, &t) in rep.terms.iter().enumerate() {
            assert!((rho.dot(&x) - t).abs() < 1e-9 * t.abs().max(1.0), "seed {seed} term {k}");
            x = discounted_series(&p, &((&p2 - &p) * x * gamma), gamma);
        }
        let exact = rho.dot(&discounted_series(&p2, &r2, gamma));
        assert!((exact - rep.exact_value).abs() < 1e-9 * exact.abs().max(1.0));
    }
}

#[test]
fn finite_horizon_value_by_forward_propagation() {
    let h = 6;
    for seed in 0..20 {
        let (mdp, pi, _) = instance(seed, false);
        let (p, r) = induced(&mdp, &pi);
        let mut dist = mdp.rho_init().transpose();
        let mut total = 0.0;
        for _ in 0..h {
            total += (&dist * &r)[0];
            dist = &dist * &p;
        }
        let v = value(&mdp, &pi, &SettingSpec::finite(h)).unwrap();
        assert!((v - total).abs() < 1e-10 * total.abs().max(1.0));
    }
}

#[test]
fn average_value_by_power_iteration() {
    for seed in 0..20 {
        let (mdp, pi, _) = instance(seed, false);
        let (p, r) = induced(&mdp, &pi);
        let lazy = (&p + Matrix::identity(p.nrows(), p.nrows())) * 0.5;
        let mut d = Vector::from_element(p.nrows(), 1.0 / p.nrows() as f64).transpose();
        for _ in 0..20_000 {
            d = &d * &lazy;
        }
        let gain = (&d * &r)[0];
        let v = value(&mdp, &pi, &SettingSpec::average()).unwrap();
        assert!((v - gain).abs() < 1e-9 * gain.abs().max(1.0), "seed {seed}: {v} vs {gain}");
    }
}

#[test]
fn absorbing_value_and_q_by_rollout() {
    let (mdp, pi, _) = instance(3, true);
    let setting = SettingSpec::absorbing();
    let v = value(&mdp, &pi, &setting).unwrap();
    let mut rng = stream(11, Purpose::Theory, 0);
    let n = 40_000;
    let totals: Vec<f64> = (0..n)
        .map(|i| sample_session(&mdp, &pi, i, 0, 100_000, &mut rng).unwrap().total_reward())
        .collect();
    let mean = totals.iter().sum::<f64>() / n as f64;
    let sd = (totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - v).abs() < 4.0 * sd / (n as f64).sqrt(), "rollout {mean} vs {v}");

    // Q(s, a) = r(s, a) + sum_u P_a(s, u) V(u), V by fixed-point iteration
    let (p, r) = induced(&mdp, &pi);
    let mut vv = Vector::zeros(mdp.n_states());
    for _ in 0..100_000 {
        vv = &r + &p * &vv;
    }
    let q = q_function(&mdp, &pi, &setting, None).unwrap();
    for s in mdp.transient_states() {
        for a in 0..2 {
            let want = mdp.reward(s, a) + (mdp.transition(a).row(s) * &vv)[0];
            assert!((q.get(s, a) - want).abs() < 1e-8 * want.abs().max(1.0));
        }
    }
}

#[test]
fn absorbing_terms_match_transient_series() {
    for seed in 0..10 {
        let (mdp, pi, pi2) = instance(seed, true);
        let rep = expand(&mdp, &pi, &pi2, &SettingSpec::absorbing(), 2).unwrap();
        let (p, _) = induced(&mdp, &pi);
        let (p2, r2) = induced(&mdp, &pi2);
        let rho = mdp.rho_init();
        // absorbing states carry zero reward, so the undiscounted series over the full chain converges
        let mut x = discounted_series(&p, &r2, 1.0);
        for &t in &rep.terms {
            assert!((rho.dot(&x) - t).abs() < 1e-8 * t.abs().max(1.0));
            x = discounted_series(&p, &((&p2 - &p) * x), 1.0);
        }
    }
}

#[test]
fn dq_term_zero_is_target_reward() {
    let (mdp, pi, pi2) = instance(5, false);
    let x = dq_term(&mdp, &pi, &pi2, &SettingSpec::discounted(0.8), 0).unwrap();
    let (_, r2) = induced(&mdp, &pi2);
    assert!((x - r2).amax() < 1e-12);
}

#[test]
fn global_policies_have_zero_ate_when_actions_coincide() {
    let (mdp, _, _) = instance(2, true);
    let same = TabularMdp::from_parts(
        vec![mdp.transition(0).clone(), mdp.transition(0).clone()],
        Matrix::from_fn(mdp.n_states(), 2, |s, _| mdp.reward(s, 0)),
        mdp.rho_init().clone(),
        mdp.absorbing_set().map(|a| a.to_vec()),
    )
    .unwrap();
    assert!(exact_ate(&same, &SettingSpec::absorbing()).unwrap().abs() < 1e-12);
}

fn any_setting() -> impl Strategy<Value = SettingSpec> {
    prop_oneof![
        (0.5..0.97f64).prop_map(SettingSpec::discounted),
        (1usize..10).prop_map(SettingSpec::finite),
        Just(SettingSpec::absorbing()),
        Just(SettingSpec::average()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_identity_holds(seed in 0u64..1_000_000, setting in any_setting(), order in 0usize..6) {
        let absorbing = matches!(setting, SettingSpec::Absorbing { .. });
        let (mdp, pi, pi2) = instance(seed, absorbing);
        let rep = expand(&mdp, &pi, &pi2, &setting, order).unwrap();
        prop_assert!(rep.identity_holds(), "residual {}", rep.identity_residual());
        prop_assert_eq!(rep.terms.len(), order + 1);
    }

    #[test]
    fn expansion_around_itself_is_exact_at_order_zero(seed in 0u64..1_000_000) {
        let (mdp, pi, _) = instance(seed, false);
        let rep = expand(&mdp, &pi, &pi, &SettingSpec::discounted(0.9), 0).unwrap();
        prop_assert!(rep.remainder.abs() < 1e-10);
        prop_assert!((rep.terms[0] - rep.exact_value).abs() < 1e-9 * rep.exact_value.abs().max(1.0));
    }
}
