use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::random::{random_mdp, random_policy, RandomMdpSpec};
use crate::mdp::SettingSpec;
use crate::sim::{stream, Purpose};
use crate::taylor::expand;

/// Random tabular instances for checking the expansion identity and remainder bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    /// Instances per setting.
    pub n_instances: usize,
    pub orders: Vec<usize>,
    /// Inclusive range of non-absorbing state counts.
    pub n_states: (usize, usize),
    /// Inclusive range of the gap between the two action kernels.
    pub epsilon: (f64, f64),
    pub gamma: f64,
    pub horizon: usize,
    pub settings: Vec<String>,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            n_instances: 125,
            orders: vec![0, 1, 2, 3],
            n_states: (3, 10),
            epsilon: (0.01, 0.3),
            gamma: 0.9,
            horizon: 6,
            settings: ["discounted", "finite_horizon", "absorbing", "average"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

/// One (instance, order) expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub instance_id: usize,
    pub setting: String,
    pub order: usize,
    pub delta: f64,
    pub h_eff: f64,
    pub exact_value: f64,
    pub terms: Vec<f64>,
    pub remainder: f64,
    pub bound: f64,
    pub bound_slack: f64,
    pub constants_estimated: bool,
    pub identity_residual: f64,
    pub identity_ok: bool,
    pub bound_ok: bool,
}

impl TheoryRow {
    pub fn pass(&self) -> bool {
        self.identity_ok && self.bound_ok
    }

    /// Header with `term_0..term_{max_order}` columns.
    pub fn csv_header(max_order: usize) -> Vec<String> {
        let mut h: Vec<String> = ["instance_id", "setting", "K", "delta", "h_eff", "exact_value"]
            .map(String::from)
            .to_vec();
        h.extend((0..=max_order).map(|k| format!("term_{k}")));
        h.extend(["remainder", "bound", "pass", "constants_estimated"].map(String::from));
        h
    }

    /// Terms above this row's order are left empty.
    pub fn csv_record(&self, max_order: usize) -> Vec<String> {
        let mut r = vec![
            self.instance_id.to_string(),
            self.setting.clone(),
            self.order.to_string(),
            self.delta.to_string(),
            self.h_eff.to_string(),
            self.exact_value.to_string(),
        ];
        r.extend((0..=max_order).map(|k| self.terms.get(k).map(|t| t.to_string()).unwrap_or_default()));
        r.extend([
            self.remainder.to_string(),
            self.bound.to_string(),
            self.pass().to_string(),
            self.constants_estimated.to_string(),
        ]);
        r
    }
}

fn setting_for(name: &str, cfg: &TheoryConfig) -> Result<(SettingSpec, bool)> {
    Ok(match name {
        "discounted" => (SettingSpec::discounted(cfg.gamma), false),
        "finite_horizon" => (SettingSpec::finite(cfg.horizon), false),
        "absorbing" => (SettingSpec::absorbing(), true),
        "average" => (SettingSpec::average(), false),
        other => return Err(invalid("theory", format!("unknown setting {other}"))),
    })
}

/// Expands random policy pairs on random MDPs; instance `i` uses its own random stream.
pub fn verify_theory(cfg: &TheoryConfig) -> Result<Vec<TheoryRow>> {
    if cfg.n_states.0 == 0 || cfg.n_states.0 > cfg.n_states.1 {
        return Err(invalid("theory", "bad n_states range"));
    }
    let jobs: Vec<(usize, String)> = cfg
        .settings
        .iter()
        .enumerate()
        .flat_map(|(k, s)| (0..cfg.n_instances).map(move |i| (k * cfg.n_instances + i, s.clone())))
        .collect();
    let rows: Vec<Vec<TheoryRow>> = jobs
        .par_iter()
        .map(|(id, name)| {
            let (setting, absorbing) = setting_for(name, cfg)?;
            let mut rng = stream(cfg.seed, Purpose::Theory, *id as u64);
            let spec = RandomMdpSpec {
                n_states: rng.random_range(cfg.n_states.0..=cfg.n_states.1),
                epsilon: rng.random_range(cfg.epsilon.0..=cfg.epsilon.1),
                absorbing,
                ..RandomMdpSpec::default()
            };
            let mdp = random_mdp(&mut rng, &spec);
            let pi = random_policy(&mut rng, mdp.n_states(), 2);
            let pi_prime = random_policy(&mut rng, mdp.n_states(), 2);
            cfg.orders
                .iter()
                .map(|&k| {
                    let r = expand(&mdp, &pi, &pi_prime, &setting, k)?;
                    Ok(TheoryRow {
                        instance_id: *id,
                        setting: name.clone(),
                        order: k,
                        delta: r.delta,
                        h_eff: r.h_eff,
                        exact_value: r.exact_value,
                        identity_residual: r.identity_residual(),
                        identity_ok: r.identity_holds(),
                        bound_ok: r.bound_holds(),
                        terms: r.terms,
                        remainder: r.remainder,
                        bound: r.bound,
                        bound_slack: r.bound_slack,
                        constants_estimated: r.constants_estimated,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}
