//! Centralized reference solvers.
//!
//! `dual_oracle_solve` runs the tone-price subgradient with full information
//! on the time-sharing relaxation: users at a budget jump contribute the
//! fractional share that exactly exhausts their budget instead of a demand
//! bit. The dual function
//!
//! ```text
//! g(mu) = sum_k min_lambda [ lambda P_k + sum_n max(0, v_kn(lambda, mu)) ] + sum_n mu_n
//! ```
//!
//! upper-bounds every feasible allocation, so `dual_value - primal_value` is
//! a certificate of suboptimality. This is a self-contained stand-in for a
//! centralized optimal solver, not a general-purpose convex solver.
//!
//! `exhaustive_grid_solve` enumerates every exclusive assignment and grids
//! each user's budget split; it is independent of the pricing machinery and
//! only meant for tiny instances.

use serde::Serialize;

use crate::bs_agent::{recover_allocation, Allocation, PriceState, StepSchedule};
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::user_agent::solve_budget;

/// Default iteration budget: ten times the distributed default.
pub const DEFAULT_ORACLE_ITERS: usize = 50_000;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-4;
const RECOVER_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    /// Best (lowest) dual value seen.
    pub dual_value: f64,
    /// Prices attaining `dual_value`.
    pub prices: Vec<f64>,
    /// Best recovered primal allocation seen.
    pub allocation: Allocation,
    pub primal_value: f64,
    pub iterations: usize,
    /// First iteration at which the relative gap fell to `tol`, if it did.
    pub iterations_to_tol: Option<usize>,
}

impl OracleSolution {
    pub fn gap(&self) -> f64 {
        self.dual_value - self.primal_value
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.dual_value.abs().max(1e-12)
    }
}

/// Dual value at `prices` and the relaxed per-tone demand (sum of
/// time-sharing fractions).
pub fn relaxed_dual(scenario: &Scenario, prices: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut value: f64 = prices.iter().sum();
    let mut demand = vec![0.0; scenario.num_tones()];
    for k in 0..scenario.num_users() {
        let profile = scenario.user_profile(k);
        let solve = solve_budget(&profile, prices, None)?;
        value += solve.local_dual(profile.budget);
        for (d, s) in demand.iter_mut().zip(solve.relaxed_shares(profile.budget)) {
            *d += s;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite dual value".into()));
    }
    Ok((value, demand))
}

/// Central subgradient on the relaxed dual with best-value tracking. Stops
/// early once `dual - primal <= tol * max(1, |dual|)`.
pub fn dual_oracle_solve(scenario: &Scenario, iters: usize, tol: f64) -> Result<OracleSolution> {
    if iters == 0 || !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::Config("oracle needs iters >= 1 and tol >= 0".into()));
    }
    let n_count = scenario.num_tones();
    let mut state = PriceState::new(n_count, StepSchedule::default());
    let mut best_dual = f64::INFINITY;
    let mut best_prices = state.prices.clone();
    let mut best_alloc = Allocation::empty(scenario.num_users(), n_count);
    let mut best_primal = 0.0;
    let mut iterations_to_tol = None;
    let mut iterations = 0;

    for t in 0..iters {
        iterations = t + 1;
        let (dual, demand) = relaxed_dual(scenario, &state.prices)?;
        if dual < best_dual {
            best_dual = dual;
            best_prices.clone_from(&state.prices);
        }
        if t % RECOVER_EVERY == 0 {
            let alloc = recover_allocation(scenario, &state.prices, 0.0)?;
            let value = alloc.objective(scenario);
            if value > best_primal {
                best_primal = value;
                best_alloc = alloc;
            }
        }
        if best_dual - best_primal <= tol * best_dual.abs().max(1.0) {
            iterations_to_tol = Some(iterations);
            break;
        }
        state.relaxed_update(&demand);
        if state.prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("non-finite price at iteration {t}")));
        }
    }

    let alloc = recover_allocation(scenario, &best_prices, 0.0)?;
    let value = alloc.objective(scenario);
    if value > best_primal {
        best_primal = value;
        best_alloc = alloc;
    }
    Ok(OracleSolution {
        dual_value: best_dual,
        prices: best_prices,
        allocation: best_alloc,
        primal_value: best_primal,
        iterations,
        iterations_to_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub best_value: f64,
    pub allocation: Allocation,
    /// Bound on `true optimum - best_value`.
    pub error_bound: f64,
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative ints.
fn compositions(total: usize, parts: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(rest: usize, slots: &mut Vec<usize>, parts: usize, f: &mut impl FnMut(&[usize])) {
        if slots.len() + 1 == parts {
            slots.push(rest);
            f(slots);
            slots.pop();
            return;
        }
        for c in 0..=rest {
            slots.push(c);
            rec(rest - c, slots, parts, f);
            slots.pop();
        }
    }
    if parts == 0 {
        f(&[]);
    } else {
        rec(total, &mut Vec::with_capacity(parts), parts, f);
    }
}

/// Brute force over exclusive assignments and gridded budget splits.
/// Requires `K <= 3`, `N <= 3`, `(K+1)^N <= 64`, `grid_points >= 11`.
pub fn exhaustive_grid_solve(scenario: &Scenario, grid_points: usize) -> Result<GridSolution> {
    let (k_count, n_count) = (scenario.num_users(), scenario.num_tones());
    let assignments = (k_count + 1).checked_pow(n_count as u32).unwrap_or(usize::MAX);
    if k_count > 3 || n_count > 3 || assignments > 64 {
        return Err(Error::TooLarge(format!(
            "K = {k_count}, N = {n_count} ({assignments} assignments)"
        )));
    }
    if grid_points < 11 {
        return Err(Error::Config(format!("grid_points must be >= 11, got {grid_points}")));
    }
    let steps = grid_points - 1;

    // best split for every (user, tone subset)
    let subsets = 1usize << n_count;
    let mut best_split: Vec<Vec<(f64, Vec<f64>)>> = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let budget = scenario.power_budget()[k];
        let w = scenario.weight()[k];
        let mut row = Vec::with_capacity(subsets);
        for mask in 0..subsets {
            let tones: Vec<usize> = (0..n_count).filter(|n| mask >> n & 1 == 1).collect();
            let mut best = (0.0, vec![0.0; n_count]);
            if !tones.is_empty() {
                best.0 = f64::NEG_INFINITY;
                compositions(steps, tones.len(), &mut |parts| {
                    let value: f64 = tones
                        .iter()
                        .zip(parts)
                        .map(|(&n, &c)| {
                            let q = budget * c as f64 / steps as f64;
                            w * scenario.link(k, n).rate_unchecked(q)
                        })
                        .sum();
                    if value > best.0 {
                        best.0 = value;
                        best.1 = vec![0.0; n_count];
                        for (&n, &c) in tones.iter().zip(parts) {
                            best.1[n] = budget * c as f64 / steps as f64;
                        }
                    }
                });
            }
            row.push(best);
        }
        best_split.push(row);
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_owner = vec![None; n_count];
    for code in 0..assignments {
        let owner: Vec<Option<usize>> = (0..n_count)
            .map(|n| {
                let digit = code / (k_count + 1).pow(n as u32) % (k_count + 1);
                (digit < k_count).then_some(digit)
            })
            .collect();
        let value: f64 = (0..k_count)
            .map(|k| {
                let mask = owner
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| **o == Some(k))
                    .fold(0usize, |m, (n, _)| m | 1 << n);
                best_split[k][mask].0
            })
            .sum();
        if value > best_value {
            best_value = value;
            best_owner = owner;
        }
    }

    let mut allocation = Allocation::empty(k_count, n_count);
    allocation.owner = best_owner;
    for k in 0..k_count {
        let mask = allocation
            .owner
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(k))
            .fold(0usize, |m, (n, _)| m | 1 << n);
        allocation.power[k] = best_split[k][mask].1.clone();
    }

    let error_bound = (0..k_count)
        .map(|k| {
            let slope = (0..n_count)
                .map(|n| scenario.link(k, n).slope_at_zero())
                .fold(0.0, f64::max);
            scenario.weight()[k] * slope * scenario.power_budget()[k] * n_count as f64 / steps as f64
        })
        .sum();

    Ok(GridSolution {
        best_value,
        allocation,
        error_bound,
    })
}
