//! Synthetic content-platform experiments with creator-level randomization.

mod rng;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExperimentDataset, SessionLog, SessionStep};
use crate::error::{invalid, Error, Result};
use crate::stats::pairwise_sum;

pub use rng::{stream, Purpose};

/// Simulation parameters. Every field has a default, so configs may list only overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Main-experiment viewers N.
    pub n_viewers: usize,
    /// Creators M.
    pub n_creators: usize,
    /// Latent dimension d.
    pub latent_dim: usize,
    /// Multiplicative treatment effect on watch time.
    pub tau_star: f64,
    /// Watch-time scale k: mean watch is `k u.v`.
    pub k_scale: f64,
    /// Leave-rule offset: leave probability after a video is `e^s / (alpha + e^s)`.
    pub alpha: f64,
    /// Attention drained by a treated video is `w (1 + drain_ratio * tau_star)`.
    /// 1 makes attention equal cumulative reward.
    pub drain_ratio: f64,
    /// Deterministic attention wall: the session stops exactly when cumulative
    /// reward reaches this value (last video cut short). Replaces the leave rule.
    pub budget_wall: Option<f64>,
    /// Nominal treatment probability p.
    pub p_treat: f64,
    /// Probability actually used to draw assignments; defaults to `p_treat`.
    pub p_actual: Option<f64>,
    pub max_steps: usize,
    /// Viewers `0..holdout_viewers` form the regression holdout; main viewers follow.
    pub holdout_viewers: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_viewers: 100_000,
            n_creators: 1_000_000,
            latent_dim: 5,
            tau_star: 0.02,
            k_scale: 0.3,
            alpha: 1000.0,
            drain_ratio: 2.0,
            budget_wall: None,
            p_treat: 0.5,
            p_actual: None,
            max_steps: 10_000,
            holdout_viewers: 1000,
            seed: 0,
        }
    }
}

/// Which policy drives the actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Experiment,
    GlobalTreatment,
    GlobalControl,
}

/// Latents are i.i.d. uniform on this interval.
pub const LATENT_RANGE: (f64, f64) = (0.1, 1.1);
const AFFINITY_RETRIES: usize = 100;

impl SimConfig {
    pub fn p_actual(&self) -> f64 {
        self.p_actual.unwrap_or(self.p_treat)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(invalid("config", format!("p_treat {} outside (0,1)", self.p_treat)));
        }
        let pa = self.p_actual();
        if !(0.0..=1.0).contains(&pa) {
            return Err(invalid("config", format!("p_actual {pa} outside [0,1]")));
        }
        if self.latent_dim == 0 || self.n_creators == 0 || self.max_steps == 0 {
            return Err(invalid("config", "latent_dim, n_creators and max_steps must be positive"));
        }
        if self.n_creators > u32::MAX as usize {
            return Err(invalid("config", "too many creators"));
        }
        if !(self.k_scale > 0.0) || !(self.alpha >= 0.0) {
            return Err(invalid("config", "k_scale must be positive and alpha non-negative"));
        }
        if 1.0 + self.tau_star < 0.0 || 1.0 + self.drain_ratio * self.tau_star < 0.0 {
            return Err(invalid("config", "treatment makes watch time or attention drain negative"));
        }
        if let Some(b) = self.budget_wall {
            if !(b > 0.0) {
                return Err(invalid("config", "budget_wall must be positive"));
            }
        }
        Ok(())
    }
}

/// Creator latents and the assignment table.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub latent_dim: usize,
    /// Row-major `n_creators x latent_dim`.
    pub creators: Vec<f64>,
    pub assignments: Vec<u8>,
}

impl Population {
    pub fn n_creators(&self) -> usize {
        self.assignments.len()
    }

    pub fn creator(&self, j: usize) -> &[f64] {
        &self.creators[j * self.latent_dim..(j + 1) * self.latent_dim]
    }
}

fn draw_latents<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| rng.random_range(LATENT_RANGE.0..LATENT_RANGE.1))
        .collect()
}

fn draw_creators(cfg: &SimConfig, purpose: Purpose, index: u64) -> Vec<f64> {
    let mut rng = stream(cfg.seed, purpose, index);
    draw_latents(&mut rng, cfg.n_creators * cfg.latent_dim)
}

/// Draws creator latents and Bernoulli(`p_actual`) assignments.
///
/// Viewer latents are drawn per viewer from that viewer's own stream, see [`viewer_latent`].
pub fn draw_population(cfg: &SimConfig) -> Result<Population> {
    cfg.validate()?;
    let creators = draw_creators(cfg, Purpose::Creators, 0);
    let p = cfg.p_actual();
    let mut rng = stream(cfg.seed, Purpose::Assignments, 0);
    let assignments = (0..cfg.n_creators)
        .map(|_| u8::from(rng.random::<f64>() < p))
        .collect();
    Ok(Population {
        latent_dim: cfg.latent_dim,
        creators,
        assignments,
    })
}

/// Latent preference vector of `viewer_id`.
pub fn viewer_latent(cfg: &SimConfig, viewer_id: u64) -> Vec<f64> {
    let mut rng = stream(cfg.seed, Purpose::Session, viewer_id);
    draw_latents(&mut rng, cfg.latent_dim)
}

/// Leave probability after reaching attention level `s`.
pub fn leave_probability(alpha: f64, s: f64) -> f64 {
    1.0 / (1.0 + alpha * (-s).exp())
}

/// Simulates one session from the viewer's own stream (latent first, then the steps).
pub fn simulate_viewer(cfg: &SimConfig, pop: &Population, viewer_id: u64, mode: Mode) -> Result<SessionLog> {
    simulate_viewer_in(cfg, pop, viewer_id, mode, Purpose::Session)
}

fn simulate_viewer_in(
    cfg: &SimConfig,
    pop: &Population,
    viewer_id: u64,
    mode: Mode,
    purpose: Purpose,
) -> Result<SessionLog> {
    let mut rng = stream(cfg.seed, purpose, viewer_id);
    let u = draw_latents(&mut rng, cfg.latent_dim);
    simulate_session(&u, pop, cfg, mode, viewer_id, &mut rng)
}

/// Runs one session for latent `u`, drawing per step: creator, watch time, leave coin.
pub fn simulate_session<R: Rng>(
    u: &[f64],
    pop: &Population,
    cfg: &SimConfig,
    mode: Mode,
    viewer_id: u64,
    rng: &mut R,
) -> Result<SessionLog> {
    let m = pop.n_creators();
    let mut steps = Vec::with_capacity(16);
    let mut attention = 0.0f64;
    let mut watched = 0.0f64;
    for _ in 0..cfg.max_steps {
        let mut retries = 0;
        let (j, affinity) = loop {
            let j = rng.random_range(0..m);
            let aff: f64 = u.iter().zip(pop.creator(j)).map(|(a, b)| a * b).sum();
            if aff > 0.0 {
                break (j, aff);
            }
            retries += 1;
            if retries >= AFFINITY_RETRIES {
                return Err(Error::NonPositiveAffinity {
                    viewer: viewer_id,
                    retries,
                });
            }
        };
        let e: f64 = Exp1.sample(rng);
        let w = cfg.k_scale * affinity * e;
        let action = match mode {
            Mode::Experiment => pop.assignments[j],
            Mode::GlobalTreatment => 1,
            Mode::GlobalControl => 0,
        };
        let treated = f64::from(action);
        let mut reward = w * (1.0 + cfg.tau_star * treated);
        let leave_coin: f64 = rng.random();
        let leave = if let Some(wall) = cfg.budget_wall {
            if watched + reward >= wall {
                reward = wall_remainder(watched, wall);
                true
            } else {
                false
            }
        } else {
            attention += w * (1.0 + cfg.drain_ratio * cfg.tau_star * treated);
            leave_coin < leave_probability(cfg.alpha, attention)
        };
        steps.push(SessionStep {
            creator: j as u32,
            action,
            reward,
            cumulative_watch: watched,
            state: None,
        });
        watched += reward;
        if leave {
            return Ok(SessionLog {
                viewer_id,
                steps,
                terminated: true,
            });
        }
    }
    Ok(SessionLog {
        viewer_id,
        steps,
        terminated: false,
    })
}

/// Last-video reward that makes the running sum land exactly on `wall`.
fn wall_remainder(watched: f64, wall: f64) -> f64 {
    let mut r = wall - watched;
    for _ in 0..8 {
        let total = watched + r;
        if total == wall {
            break;
        }
        r = if total > wall { r.next_down() } else { r.next_up() };
    }
    r.max(0.0)
}

/// Sessions for a contiguous block of viewer ids, in id order.
pub fn simulate_range(cfg: &SimConfig, pop: &Population, ids: Range<u64>, mode: Mode) -> Result<Vec<SessionLog>> {
    ids.into_par_iter()
        .map(|id| simulate_viewer(cfg, pop, id, mode))
        .collect()
}

/// Holdout viewers `0..holdout_viewers` and main viewers after them, all in experiment mode.
pub fn generate_dataset(cfg: &SimConfig) -> Result<ExperimentDataset> {
    let pop = draw_population(cfg)?;
    let h = cfg.holdout_viewers as u64;
    let holdout_sessions = simulate_range(cfg, &pop, 0..h, Mode::Experiment)?;
    let sessions = simulate_range(cfg, &pop, h..h + cfg.n_viewers as u64, Mode::Experiment)?;
    Ok(ExperimentDataset {
        sessions,
        assignments: pop.assignments,
        p_nominal: cfg.p_treat,
        p_actual: cfg.p_actual(),
        holdout_sessions,
    })
}

/// Monte-Carlo ground truth from paired global-treatment / global-control sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub ate: f64,
    /// Batch-means standard error (creator populations differ across batches).
    pub standard_error: f64,
    pub j_control: f64,
    pub j_treatment: f64,
    pub n_sessions: usize,
    pub n_batches: usize,
}

impl OracleEstimate {
    /// ATE as a fraction of the control value.
    pub fn relative_effect(&self) -> f64 {
        self.ate / self.j_control
    }

    /// Label such as `effect -0.50%`.
    pub fn label(&self) -> String {
        format!("effect {:+.2}%", 100.0 * self.relative_effect())
    }
}

pub const ORACLE_BATCHES: usize = 20;

/// Paired oracle: every viewer is simulated under both global policies with the same
/// random numbers. Viewers are split into batches, each with a fresh creator population.
pub fn ground_truth_ate(cfg: &SimConfig, n_oracle_sessions: usize) -> Result<OracleEstimate> {
    cfg.validate()?;
    let batches = ORACLE_BATCHES.min(n_oracle_sessions.max(1));
    let per = n_oracle_sessions.div_ceil(batches);
    let mut diffs = Vec::with_capacity(batches);
    let mut controls = Vec::with_capacity(batches);
    let mut treats = Vec::with_capacity(batches);
    let mut total = 0usize;
    for b in 0..batches {
        let lo = b * per;
        let hi = ((b + 1) * per).min(n_oracle_sessions);
        if lo >= hi {
            break;
        }
        let pop = Population {
            latent_dim: cfg.latent_dim,
            creators: draw_creators(cfg, Purpose::OracleCreators, b as u64),
            assignments: vec![0; cfg.n_creators],
        };
        let pairs: Vec<(f64, f64)> = (lo as u64..hi as u64)
            .into_par_iter()
            .map(|id| {
                let t = simulate_viewer_in(cfg, &pop, id, Mode::GlobalTreatment, Purpose::Oracle)?;
                let c = simulate_viewer_in(cfg, &pop, id, Mode::GlobalControl, Purpose::Oracle)?;
                Ok((t.total_reward(), c.total_reward()))
            })
            .collect::<Result<_>>()?;
        let n = pairs.len() as f64;
        let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let c: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let d: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
        treats.push(pairwise_sum(&t) / n);
        controls.push(pairwise_sum(&c) / n);
        diffs.push(pairwise_sum(&d) / n);
        total += pairs.len();
    }
    let mean = |v: &[f64]| pairwise_sum(v) / v.len() as f64;
    let ate = mean(&diffs);
    let standard_error = if diffs.len() > 1 {
        let var = diffs.iter().map(|d| (d - ate).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        (var / diffs.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(OracleEstimate {
        ate,
        standard_error,
        j_control: mean(&controls),
        j_treatment: mean(&treats),
        n_sessions: total,
        n_batches: diffs.len(),
    })
}
