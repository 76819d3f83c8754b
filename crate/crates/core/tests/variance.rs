//! Null variances against exhaustive enumeration of creator assignments.

mod common;

use dqlab::data::{ExperimentDataset, SessionLog};
use dqlab::estimators::{DqDoublyRobust, DqGeneral, DqMonteCarlo, SessionDiagnostics, SessionStatistic, ZeroModel};
use dqlab::mdp::PolicySpec;
use dqlab::sim::{generate_dataset, SimConfig};
use dqlab::variance::{
    aggregate_streamers, dq_from_aggregates, dq_linear_form, dr_linear_form, hypothesis_test, null_variance_closed_form,
    null_variance_general_p, run_test, GeneralMode, TestOptions, VarianceMethod,
};
use proptest::prelude::*;

use common::session;

/// Same sessions with actions relabelled by `assignments` (sharp null: outcomes unchanged).
fn relabel(sessions: &[SessionLog], assignments: &[u8]) -> Vec<SessionLog> {
    sessions
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for st in &mut s.steps {
                st.action = assignments[st.creator as usize];
            }
            s
        })
        .collect()
}

fn mean_stat(stat: &dyn SessionStatistic, sessions: &[SessionLog]) -> f64 {
    let mut d = SessionDiagnostics::default();
    sessions.iter().map(|s| stat.session_value(s, &mut d)).sum::<f64>() / sessions.len() as f64
}

/// Mean and variance of the statistic over all `2^M` assignment vectors.
fn enumerate(sessions: &[SessionLog], m: usize, p: f64, stat: &dyn SessionStatistic) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for bits in 0..1u32 << m {
        let a: Vec<u8> = (0..m).map(|j| ((bits >> j) & 1) as u8).collect();
        let prob: f64 = a.iter().map(|&x| if x == 1 { p } else { 1.0 - p }).product();
        let x = mean_stat(stat, &relabel(sessions, &a));
        m1 += prob * x;
        m2 += prob * x * x;
    }
    (m1, m2 - m1 * m1)
}

fn arb_sessions(m: u32) -> impl Strategy<Value = Vec<SessionLog>> {
    prop::collection::vec(
        (1usize..7).prop_flat_map(move |len| {
            (prop::collection::vec(0..m, len), prop::collection::vec(0.0..5.0f64, len))
        }),
        1..5,
    )
    .prop_map(move |v| {
        let zeros = vec![0u8; m as usize];
        v.iter()
            .enumerate()
            .map(|(i, (c, r))| session(i as u64, c, r, &zeros))
            .collect()
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregates_rebuild_the_statistic(sessions in arb_sessions(5), bits in 0u8..32, p in 0.1..0.9f64) {
        let a: Vec<u8> = (0..5).map(|j| (bits >> j) & 1).collect();
        let s = relabel(&sessions, &a);
        let aggs = aggregate_streamers(&s, false).unwrap();
        let x = dq_from_aggregates(&aggs, &a, p);
        let y = mean_stat(&DqMonteCarlo { p }, &s);
        prop_assert!(close(x, y, 1e-10), "{} vs {}", x, y);
        let form = dq_linear_form(&aggs, p);
        prop_assert!(close(form.evaluate(&a), y, 1e-10));
    }

    #[test]
    fn closed_form_is_exact_at_half(sessions in arb_sessions(5)) {
        let aggs = aggregate_streamers(&sessions, true).unwrap();
        let (mean, var) = enumerate(&sessions, 5, 0.5, &DqMonteCarlo { p: 0.5 });
        prop_assert!(mean.abs() < 1e-9 * var.sqrt().max(1.0));
        prop_assert!(close(null_variance_closed_form(&aggs, 0.5), var, 1e-9));
        prop_assert!(close(null_variance_general_p(&aggs, 0.5, GeneralMode::ExactM2).unwrap(), var, 1e-9));
    }

    #[test]
    fn exact_pair_form_matches_enumeration(sessions in arb_sessions(5), p in 0.1..0.9f64) {
        let stat = DqGeneral::contrast(
            &PolicySpec::bernoulli(p), &PolicySpec::GlobalTreatment, &PolicySpec::GlobalControl, None, 2, None,
        ).unwrap();
        let aggs = aggregate_streamers(&sessions, true).unwrap();
        let (_, var) = enumerate(&sessions, 5, p, &stat);
        let got = null_variance_general_p(&aggs, p, GeneralMode::ExactM2).unwrap();
        prop_assert!(close(got, var, 1e-9), "{} vs {}", got, var);
    }

    #[test]
    fn linear_form_variance_matches_enumeration(sessions in arb_sessions(4), p in 0.1..0.9f64) {
        let aggs = aggregate_streamers(&sessions, false).unwrap();
        let (_, var) = enumerate(&sessions, 4, p, &DqMonteCarlo { p });
        prop_assert!(close(dq_linear_form(&aggs, p).null_variance(p), var, 1e-9));
        let dr = dr_linear_form(&sessions, &ZeroModel, p, 4).unwrap();
        let (_, var_dr) = enumerate(&sessions, 4, p, &DqDoublyRobust { p, model: &ZeroModel });
        prop_assert!(close(dr.null_variance(p), var_dr, 1e-9));
    }

    #[test]
    fn chebyshev_is_never_less_conservative(stat in -10.0..10.0f64, var in 1e-6..10.0f64) {
        let r = hypothesis_test(stat, var, 0.9, VarianceMethod::ClosedForm).unwrap();
        prop_assert!(r.p_value_chebyshev >= r.p_value_normal);
        prop_assert!(!r.reject_chebyshev || r.reject_normal);
    }
}

#[test]
fn approximate_mode_close_in_homogeneous_regime() {
    let cfg = SimConfig {
        n_viewers: 4000,
        n_creators: 200_000,
        holdout_viewers: 0,
        p_treat: 0.3,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let pairs = aggregate_streamers(&ds.sessions, true).unwrap();
    let plain = aggregate_streamers(&ds.sessions, false).unwrap();
    let exact = null_variance_general_p(&pairs, 0.3, GeneralMode::ExactM2).unwrap();
    let approx = null_variance_general_p(&plain, 0.3, GeneralMode::ApproxM).unwrap();
    assert!(close(exact, approx, 0.01), "exact {exact} approx {approx}");
}

#[test]
fn rerandomization_agrees_with_closed_form_on_small_dataset() {
    let cfg = SimConfig {
        n_viewers: 3000,
        n_creators: 50_000,
        holdout_viewers: 300,
        ..SimConfig::default()
    };
    let ds: ExperimentDataset = generate_dataset(&cfg).unwrap();
    let cf = run_test(&ds, &TestOptions::default()).unwrap();
    let rr = run_test(
        &ds,
        &TestOptions {
            method: VarianceMethod::Rerandomization,
            n_draws: 20_000,
            ..TestOptions::default()
        },
    )
    .unwrap();
    assert_eq!(cf.statistic, rr.statistic);
    // sd of a sample variance from 20k normal draws is about 1%
    assert!(close(cf.variance, rr.variance, 0.05), "{} vs {}", cf.variance, rr.variance);
    assert_eq!(rr.n_rerandomizations, Some(20_000));
}

#[test]
fn dq_dr_null_variance_is_far_smaller() {
    let cfg = SimConfig {
        n_viewers: 5000,
        n_creators: 100_000,
        holdout_viewers: 1000,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let dq = run_test(&ds, &TestOptions::default()).unwrap();
    let dr = run_test(
        &ds,
        &TestOptions {
            statistic: dqlab::variance::RerandomizedStatistic::DqDr,
            ..TestOptions::default()
        },
    )
    .unwrap();
    assert!(dr.variance < 0.1 * dq.variance, "{} vs {}", dr.variance, dq.variance);
}

#[test]
fn general_modes_reject_dr_statistic() {
    let ds = generate_dataset(&SimConfig {
        n_viewers: 200,
        n_creators: 1000,
        holdout_viewers: 50,
        ..SimConfig::default()
    })
    .unwrap();
    let opts = TestOptions {
        method: VarianceMethod::ApproxM,
        statistic: dqlab::variance::RerandomizedStatistic::DqDr,
        ..TestOptions::default()
    };
    assert!(run_test(&ds, &opts).is_err());
}
