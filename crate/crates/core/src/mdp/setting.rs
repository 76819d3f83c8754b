use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Geometric mixing envelope `max_s TV(P^k(s,.), rho) <= C beta^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    pub c: f64,
    pub beta: f64,
}

impl MixingConstants {
    /// `(2 ln C + 1) / (1 - beta)`.
    pub fn effective_horizon(&self) -> f64 {
        (2.0 * self.c.ln() + 1.0) / (1.0 - self.beta)
    }
}

/// Reward formulation together with its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SettingSpec {
    Discounted {
        gamma: f64,
    },
    Average {
        #[serde(default)]
        mixing: Option<MixingConstants>,
    },
    FiniteHorizon {
        horizon: usize,
    },
    Absorbing {
        #[serde(default)]
        t_abs: Option<f64>,
    },
}

impl SettingSpec {
    pub fn discounted(gamma: f64) -> Self {
        SettingSpec::Discounted { gamma }
    }
    pub fn finite(horizon: usize) -> Self {
        SettingSpec::FiniteHorizon { horizon }
    }
    pub fn absorbing() -> Self {
        SettingSpec::Absorbing { t_abs: None }
    }
    pub fn average() -> Self {
        SettingSpec::Average { mixing: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SettingSpec::Discounted { .. } => "discounted",
            SettingSpec::Average { .. } => "average",
            SettingSpec::FiniteHorizon { .. } => "finite_horizon",
            SettingSpec::Absorbing { .. } => "absorbing",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SettingSpec::Discounted { gamma } => {
                if !(0.0..1.0).contains(gamma) {
                    return Err(invalid("setting", format!("gamma {gamma} outside [0,1)")));
                }
            }
            SettingSpec::FiniteHorizon { horizon } => {
                if *horizon == 0 {
                    return Err(invalid("setting", "horizon must be at least 1"));
                }
            }
            SettingSpec::Absorbing { t_abs } => {
                if let Some(t) = t_abs {
                    if !(*t > 0.0) {
                        return Err(invalid("setting", format!("t_abs {t} must be positive")));
                    }
                }
            }
            SettingSpec::Average { mixing } => {
                if let Some(m) = mixing {
                    if !(m.c >= 1.0) || !(m.beta > 0.0 && m.beta < 1.0) {
                        return Err(invalid("setting", "mixing constants need C >= 1 and beta in (0,1)"));
                    }
                }
            }
        }
        Ok(())
    }
}
