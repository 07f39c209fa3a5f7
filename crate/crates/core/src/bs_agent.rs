//! Base-station side: tone prices, the reduced update set, KKT residual,
//! stopping rule, and primal recovery.
//!
//! Tone prices are the multipliers of the exclusivity constraint
//! `sum_k x[k][n] <= 1`. Each round the base station moves them along the
//! projected subgradient `mu <- [mu + alpha_t (demand - 1)]+`. A tone whose
//! demand is exactly one, or whose demand is zero while its price is already
//! zero, is left alone by that step anyway; the reduced variant skips those
//! tones outright and only touches tones that violate feasibility or
//! complementary slackness.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::user_agent::{perceived_prices, power_price_bisection, solve_budget};

pub const DEFAULT_ALPHA0: f64 = 0.1;
pub const DEFAULT_TAU: f64 = 50.0;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 5;

/// Step-size rule for the price subgradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `alpha0 / (1 + t / tau)`.
    Diminishing { alpha0: f64, tau: f64 },
    Constant { alpha: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Diminishing {
            alpha0: DEFAULT_ALPHA0,
            tau: DEFAULT_TAU,
        }
    }
}

impl StepSchedule {
    pub fn step(&self, iter: u64) -> f64 {
        match *self {
            StepSchedule::Diminishing { alpha0, tau } => alpha0 / (1.0 + iter as f64 / tau),
            StepSchedule::Constant { alpha } => alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Diminishing { alpha0, tau } => {
                alpha0.is_finite() && alpha0 > 0.0 && tau.is_finite() && tau > 0.0
            }
            StepSchedule::Constant { alpha } => alpha.is_finite() && alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("step sizes must be positive and finite: {self:?}")))
        }
    }
}

/// Dual state held by the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceState {
    pub prices: Vec<f64>,
    pub iter: u64,
    pub schedule: StepSchedule,
}

impl PriceState {
    pub fn new(num_tones: usize, schedule: StepSchedule) -> Self {
        Self::with_prices(vec![0.0; num_tones], schedule)
    }

    pub fn with_prices(prices: Vec<f64>, schedule: StepSchedule) -> Self {
        Self {
            prices,
            iter: 0,
            schedule,
        }
    }

    /// Current step size `alpha_t`.
    pub fn step(&self) -> f64 {
        self.schedule.step(self.iter)
    }

    /// One projected subgradient step. Returns the number of tone prices
    /// updated this round.
    pub fn price_update(&mut self, demand: &[usize], reduced: bool) -> usize {
        let targets: Vec<usize> = if reduced {
            reduced_update_set(&self.prices, demand)
        } else {
            (0..self.prices.len()).collect()
        };
        let alpha = self.step();
        for &n in &targets {
            let g = demand[n] as f64 - 1.0;
            self.prices[n] = (self.prices[n] + alpha * g).max(0.0);
        }
        self.iter += 1;
        targets.len()
    }

    /// Generalized step with fractional demand (relaxed shares), always on
    /// every tone. Used by the centralized solver.
    pub fn relaxed_update(&mut self, demand: &[f64]) {
        let alpha = self.step();
        for (mu, &d) in self.prices.iter_mut().zip(demand) {
            *mu = (*mu + alpha * (d - 1.0)).max(0.0);
        }
        self.iter += 1;
    }
}

/// Tones that are over-demanded, or under-demanded while still priced.
pub fn reduced_update_set(prices: &[f64], demand: &[usize]) -> Vec<usize> {
    prices
        .iter()
        .zip(demand)
        .enumerate()
        .filter(|(_, (&mu, &d))| d > 1 || (d < 1 && mu > 0.0))
        .map(|(n, _)| n)
        .collect()
}

/// `max_n max(d_n - 1, mu_n (1 - d_n), 0)`.
pub fn kkt_residual(prices: &[f64], demand: &[usize]) -> f64 {
    prices
        .iter()
        .zip(demand)
        .map(|(&mu, &d)| {
            let d = d as f64;
            (d - 1.0).max(mu * (1.0 - d)).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// True iff the last `window` residuals are all below `epsilon`.
pub fn check_converged(history: &[f64], epsilon: f64, window: usize) -> bool {
    window >= 1
        && history.len() >= window
        && history[history.len() - window..].iter().all(|&r| r < epsilon)
}

/// Per-tone count of users bidding for the tone.
pub fn aggregate_demand<'a>(bids: impl IntoIterator<Item = &'a [bool]>, num_tones: usize) -> Vec<usize> {
    let mut demand = vec![0usize; num_tones];
    for bid in bids {
        for (d, &b) in demand.iter_mut().zip(bid) {
            *d += b as usize;
        }
    }
    demand
}

/// Exclusive tone assignment with per-user powers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    /// Owner of each tone, if any.
    pub owner: Vec<Option<usize>>,
    /// `power[k][n]`, zero wherever user `k` does not own tone `n`.
    pub power: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn empty(num_users: usize, num_tones: usize) -> Self {
        Self {
            owner: vec![None; num_tones],
            power: vec![vec![0.0; num_tones]; num_users],
        }
    }

    pub fn assigned(&self, user: usize, tone: usize) -> bool {
        self.owner[tone] == Some(user)
    }

    /// `K x N` boolean view of the assignment.
    pub fn assignment_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.power.len())
            .map(|k| (0..self.owner.len()).map(|n| self.assigned(k, n)).collect())
            .collect()
    }

    /// Weighted sum rate `sum_k w_k sum_n r_kn(p_kn)` in nats.
    pub fn objective(&self, scenario: &Scenario) -> f64 {
        let mut total = 0.0;
        for (k, row) in self.power.iter().enumerate() {
            let w = scenario.weight()[k];
            for (n, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    total += w * scenario.link(k, n).rate_unchecked(p);
                }
            }
        }
        total
    }

    /// Checks exclusivity, sign, and budget rows (budget up to a relative
    /// `1e-9` bisection tolerance).
    pub fn check_feasible(&self, scenario: &Scenario) -> std::result::Result<(), String> {
        let (k_count, n_count) = (scenario.num_users(), scenario.num_tones());
        if self.owner.len() != n_count || self.power.len() != k_count {
            return Err("allocation dimensions do not match the scenario".into());
        }
        for (n, owner) in self.owner.iter().enumerate() {
            if let Some(k) = owner {
                if *k >= k_count {
                    return Err(format!("tone {n} owned by unknown user {k}"));
                }
            }
        }
        for (k, row) in self.power.iter().enumerate() {
            if row.len() != n_count {
                return Err(format!("power row {k} has wrong length"));
            }
            for (n, &p) in row.iter().enumerate() {
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(format!("power[{k}][{n}] = {p} is not a finite nonnegative value"));
                }
                if p > 0.0 && !self.assigned(k, n) {
                    return Err(format!("user {k} transmits on tone {n} it does not own"));
                }
            }
            let total: f64 = row.iter().sum();
            let budget = scenario.power_budget()[k];
            if total > budget * (1.0 + 1e-9) {
                return Err(format!("user {k} spends {total} over budget {budget}"));
            }
        }
        Ok(())
    }
}

/// Turns final tone prices into a feasible exclusive allocation.
///
/// Each tone goes to the user with the largest positive net benefit at
/// `prices` (lowest index on ties); each user then spreads its whole budget
/// over the tones it won. Users value tones at their perceived prices (see
/// `perceived_prices`), as during the run.
pub fn recover_allocation(scenario: &Scenario, prices: &[f64], tie_margin: f64) -> Result<Allocation> {
    let (k_count, n_count) = (scenario.num_users(), scenario.num_tones());
    let mut best: Vec<Option<(usize, f64)>> = vec![None; n_count];
    for k in 0..k_count {
        let seen = perceived_prices(k, k_count, prices, tie_margin);
        let (_, responses) = power_price_bisection(k, &scenario.user_profile(k), &seen)?;
        for (n, r) in responses.iter().enumerate() {
            if r.value > 0.0 && best[n].is_none_or(|(_, v)| r.value > v) {
                best[n] = Some((k, r.value));
            }
        }
    }
    let mut alloc = Allocation::empty(k_count, n_count);
    alloc.owner = best.iter().map(|b| b.map(|(k, _)| k)).collect();
    power_allocation(scenario, &mut alloc)?;
    Ok(alloc)
}

/// Fills `alloc.power` by giving each user its best budget split over the
/// tones it owns.
pub fn power_allocation(scenario: &Scenario, alloc: &mut Allocation) -> Result<()> {
    let n_count = scenario.num_tones();
    let free = vec![0.0; n_count];
    for k in 0..scenario.num_users() {
        let won: Vec<bool> = (0..n_count).map(|n| alloc.assigned(k, n)).collect();
        alloc.power[k] = vec![0.0; n_count];
        if !won.iter().any(|&w| w) {
            continue;
        }
        let solve = solve_budget(&scenario.user_profile(k), &free, Some(&won))?;
        for (n, r) in solve.responses.iter().enumerate() {
            if won[n] && r.demand {
                alloc.power[k][n] = r.power;
            }
        }
    }
    Ok(())
}
