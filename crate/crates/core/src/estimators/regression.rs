use serde::{Deserialize, Serialize};

use crate::data::{SessionLog, SessionStep};
use crate::error::{Error, Result};
use crate::mdp::QTable;

/// Predicts an action value at a logged step, for any action.
pub trait ActionValueModel: Sync {
    fn predict(&self, step: &SessionStep, action: usize) -> f64;
}

/// Predicts 0 everywhere; turns every doubly robust estimator into its plain form.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroModel;

impl ActionValueModel for ZeroModel {
    fn predict(&self, _: &SessionStep, _: usize) -> f64 {
        0.0
    }
}

/// Tabular values looked up by the step's recorded state.
#[derive(Clone, Debug)]
pub struct TabularModel {
    pub q: QTable,
}

impl ActionValueModel for TabularModel {
    fn predict(&self, step: &SessionStep, action: usize) -> f64 {
        let s = step.state.expect("tabular model needs logged states") as usize;
        self.q.get(s, action)
    }
}

/// Least-squares line `intercept + slope * w` for one action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub n: usize,
    pub residual_variance: f64,
    pub target_variance: f64,
    /// Set when the regressor was constant (or absent) and only a mean was fitted.
    pub intercept_only: bool,
}

/// Per-action regression of a target on cumulative watch `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRegressionModel {
    pub fits: Vec<LinearFit>,
}

impl QRegressionModel {
    pub fn beta0(&self, action: usize) -> f64 {
        self.fits[action].intercept
    }
    pub fn beta(&self, action: usize) -> f64 {
        self.fits[action].slope
    }
}

impl ActionValueModel for QRegressionModel {
    fn predict(&self, step: &SessionStep, action: usize) -> f64 {
        self.fits
            .get(action)
            .map_or(0.0, |f| f.intercept + f.slope * step.cumulative_watch)
    }
}

fn fit_line(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len();
    if n == 0 {
        return LinearFit {
            intercept: 0.0,
            slope: 0.0,
            n: 0,
            residual_variance: 0.0,
            target_variance: 0.0,
            intercept_only: true,
        };
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let constant_x = sxx <= 1e-12 * nf * (1.0 + mx * mx);
    let slope = if constant_x { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let residual = points
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / nf;
    LinearFit {
        intercept,
        slope,
        n,
        residual_variance: residual,
        target_variance: syy / nf,
        intercept_only: constant_x,
    }
}

fn fit_per_action(holdout: &[SessionLog], use_suffix: bool) -> Result<QRegressionModel> {
    if holdout.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let n_actions = holdout
        .iter()
        .flat_map(|s| s.steps.iter().map(|st| st.action as usize + 1))
        .max()
        .unwrap_or(0)
        .max(2);
    let mut points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_actions];
    for log in holdout {
        let g = log.suffix_sums();
        for (t, st) in log.steps.iter().enumerate() {
            let y = if use_suffix { g[t] } else { st.reward };
            points[st.action as usize].push((st.cumulative_watch, y));
        }
    }
    let fits = points.iter().map(|p| fit_line(p)).collect::<Vec<_>>();
    for (a, f) in fits.iter().enumerate() {
        if f.intercept_only {
            log::warn!("regression for action {a}: regressor constant or absent, intercept-only fit");
        }
    }
    Ok(QRegressionModel { fits })
}

/// Per-action least squares of the suffix sum `G_t` on cumulative watch.
pub fn fit_q_regression(holdout: &[SessionLog]) -> Result<QRegressionModel> {
    fit_per_action(holdout, true)
}

/// Per-action least squares of the immediate reward on cumulative watch.
pub fn fit_reward_regression(holdout: &[SessionLog]) -> Result<QRegressionModel> {
    fit_per_action(holdout, false)
}
