//! Side-by-side runs of the distributed variants and the centralized baseline.

use serde::Serialize;

use crate::error::Result;
use crate::model::Scenario;
use crate::oracle::dual_oracle_solve;
use crate::protocol::{run_until_converged, RunConfig, RunOutcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub converged: bool,
    pub rounds: usize,
    /// Rounds until the stopping rule fired; `None` if it never did.
    pub rounds_to_eps: Option<usize>,
    pub objective: f64,
    pub total_updates: usize,
    pub final_prices: Vec<f64>,
}

impl From<&RunOutcome> for RunSummary {
    fn from(o: &RunOutcome) -> Self {
        Self {
            converged: o.converged,
            rounds: o.rounds_used,
            rounds_to_eps: o.converged.then_some(o.rounds_used),
            objective: o.objective,
            total_updates: o.total_updates(),
            final_prices: o.final_prices.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralSummary {
    pub dual_value: f64,
    pub primal_value: f64,
    pub iterations: usize,
    pub iterations_to_tol: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub num_users: usize,
    pub num_tones: usize,
    pub reduced: RunSummary,
    pub full: RunSummary,
    pub central: CentralSummary,
}

impl CompareRow {
    /// Relative gap of the reduced run's objective below the central dual bound.
    pub fn reduced_gap(&self) -> f64 {
        (self.central.dual_value - self.reduced.objective) / self.central.dual_value.abs().max(1e-12)
    }
}

/// Runs reduced and full distributed variants with `config` (its `reduced`
/// flag is overridden) plus the central baseline.
pub fn compare(
    label: impl Into<String>,
    scenario: &Scenario,
    config: &RunConfig,
    oracle_iters: usize,
    oracle_tol: f64,
) -> Result<CompareRow> {
    let reduced = run_until_converged(scenario, &RunConfig { reduced: true, ..config.clone() })?;
    let full = run_until_converged(scenario, &RunConfig { reduced: false, ..config.clone() })?;
    let oracle = dual_oracle_solve(scenario, oracle_iters, oracle_tol)?;
    Ok(CompareRow {
        label: label.into(),
        num_users: scenario.num_users(),
        num_tones: scenario.num_tones(),
        reduced: (&reduced).into(),
        full: (&full).into(),
        central: CentralSummary {
            dual_value: oracle.dual_value,
            primal_value: oracle.primal_value,
            iterations: oracle.iterations,
            iterations_to_tol: oracle.iterations_to_tol,
        },
    })
}

pub const TABLE_HEADER: &str = "scenario,K,N,rounds_to_eps_reduced,rounds_to_eps_full,rounds_to_eps_central,updates_reduced,updates_full,objective_reduced,objective_full,central_dual,central_primal,rel_gap_reduced";

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// CSV report, one row per scenario. `-` marks a run that never met its
/// stopping rule.
pub fn format_table(rows: &[CompareRow]) -> String {
    let mut out = String::from(
        "# central = full-information relaxed-dual subgradient (self-contained stand-in baseline)\n",
    );
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.3e}\n",
            r.label,
            r.num_users,
            r.num_tones,
            opt(r.reduced.rounds_to_eps),
            opt(r.full.rounds_to_eps),
            opt(r.central.iterations_to_tol),
            r.reduced.total_updates,
            r.full.total_updates,
            r.reduced.objective,
            r.full.objective,
            r.central.dual_value,
            r.central.primal_value,
            r.reduced_gap(),
        ));
    }
    out
}
