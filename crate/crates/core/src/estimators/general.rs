use crate::data::SessionLog;
use crate::error::{invalid, Error, Result};
use crate::mdp::PolicySpec;

use super::{ActionValueModel, SessionDiagnostics, SessionStatistic};

/// Action probabilities, one row per state or a single shared row.
#[derive(Clone, Debug)]
struct ProbTable {
    rows: Vec<Vec<f64>>,
}

impl ProbTable {
    fn new(policy: &PolicySpec, n_states: Option<usize>, n_actions: usize) -> Result<Self> {
        let rows = if policy.is_state_free() {
            vec![policy.distribution(None, n_actions)?]
        } else {
            let n = n_states.ok_or_else(|| invalid("policy", "state-dependent policy needs n_states"))?;
            (0..n)
                .map(|s| policy.distribution(Some(s), n_actions))
                .collect::<Result<_>>()?
        };
        Ok(ProbTable { rows })
    }

    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    fn row(&self, state: Option<u32>) -> &[f64] {
        if self.rows.len() == 1 {
            &self.rows[0]
        } else {
            &self.rows[state.expect("state-dependent policy needs logged states") as usize]
        }
    }
}

/// First-order DQ value of target policies from data collected under any policy.
///
/// Per step, with `rho_t = pi_new(a_t|s_t) / pi_data(a_t|s_t)` and
/// `B_t = sum_{t' > t} rho_{t'} r_{t'}`, the session value is
/// `sum_t rho_t r_t + (rho_t - 1) B_t`, plus an optional control variate `m(s, a)`.
/// With two targets the statistic is the difference of their values.
pub struct DqGeneral<'m> {
    name: String,
    data: ProbTable,
    targets: Vec<(ProbTable, f64)>,
    model: Option<&'m dyn ActionValueModel>,
}

impl<'m> DqGeneral<'m> {
    /// First-order value of `pi_new`.
    pub fn value(
        pi_data: &PolicySpec,
        pi_new: &PolicySpec,
        n_states: Option<usize>,
        n_actions: usize,
        model: Option<&'m dyn ActionValueModel>,
    ) -> Result<Self> {
        Self::build("dq_general", pi_data, &[(pi_new, 1.0)], n_states, n_actions, model)
    }

    /// First-order value of `target_a` minus that of `target_b`.
    pub fn contrast(
        pi_data: &PolicySpec,
        target_a: &PolicySpec,
        target_b: &PolicySpec,
        n_states: Option<usize>,
        n_actions: usize,
        model: Option<&'m dyn ActionValueModel>,
    ) -> Result<Self> {
        Self::build(
            "dq_general",
            pi_data,
            &[(target_a, 1.0), (target_b, -1.0)],
            n_states,
            n_actions,
            model,
        )
    }

    fn build(
        name: &str,
        pi_data: &PolicySpec,
        targets: &[(&PolicySpec, f64)],
        n_states: Option<usize>,
        n_actions: usize,
        model: Option<&'m dyn ActionValueModel>,
    ) -> Result<Self> {
        let data = ProbTable::new(pi_data, n_states, n_actions)?;
        let mut tables = Vec::new();
        for (t, sign) in targets {
            let table = ProbTable::new(t, n_states, n_actions)?;
            let rows = data.n_rows().max(table.n_rows());
            for s in 0..rows {
                let st = (rows > 1).then_some(s as u32);
                let (d, n) = (data.row(st), table.row(st));
                if let Some(a) = (0..n_actions).find(|&a| n[a] > 0.0 && d[a] == 0.0) {
                    return Err(Error::SupportViolation {
                        action: a,
                        state: (rows > 1).then_some(s),
                    });
                }
            }
            tables.push((table, *sign));
        }
        Ok(DqGeneral {
            name: name.to_string(),
            data,
            targets: tables,
            model,
        })
    }

    fn target_value(&self, log: &SessionLog, target: &ProbTable, diag: &mut SessionDiagnostics) -> f64 {
        let n = log.steps.len();
        let mut rho = vec![0.0; n];
        for (t, s) in log.steps.iter().enumerate() {
            let a = s.action as usize;
            rho[t] = target.row(s.state)[a] / self.data.row(s.state)[a];
            diag.max_weight = diag.max_weight.max(rho[t]);
        }
        let mut later = 0.0;
        let mut total = 0.0;
        for t in (0..n).rev() {
            let s = &log.steps[t];
            let mut term = rho[t] * s.reward;
            match self.model {
                None => term += (rho[t] - 1.0) * later,
                Some(m) => {
                    let (pn, pd) = (target.row(s.state), self.data.row(s.state));
                    let shift: f64 = (0..pn.len()).map(|a| (pn[a] - pd[a]) * m.predict(s, a)).sum();
                    term += shift + (rho[t] - 1.0) * (later - m.predict(s, s.action as usize));
                }
            }
            total += term;
            later += rho[t] * s.reward;
        }
        total
    }
}

impl SessionStatistic for DqGeneral<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn session_value(&self, log: &SessionLog, diag: &mut SessionDiagnostics) -> f64 {
        self.targets
            .iter()
            .map(|(t, sign)| sign * self.target_value(log, t, diag))
            .sum()
    }
}
