//! User-side best responses.
//!
//! Given a tone price `mu` and its own power price `lambda`, a user solves
//! `max_q w r(q) - lambda q` on each tone independently. Below the SNR cap the
//! stationarity condition, written in the normalized SNR `x = h q / sigma2`,
//! is the quadratic
//!
//! ```text
//! beta (1 + beta) x^2 + (2 beta + 1) x + 1 - w h / (lambda sigma2) = 0
//! ```
//!
//! whose positive root reduces to classic water-filling when `beta = 0`. The
//! power price is then found by bisection so that the power spent on the
//! tones the user actually wants fits its budget.

use crate::error::{Error, Result};
use crate::model::{Link, UserProfile};
use crate::protocol::Bid;

/// Bisection iteration cap for the power price.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Relative tolerance on the power budget when the budget binds.
pub const BUDGET_TOL: f64 = 1e-9;

/// Relative bracket width at which a budget jump is accepted as located.
const JUMP_WIDTH: f64 = 1e-12;

/// A user's answer on one tone at the current prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    /// Optimal transmit power on the tone.
    pub power: f64,
    /// Net benefit `w r(q*) - lambda q* - mu`.
    pub value: f64,
    /// True iff `value > 0`. The tie `value == 0` abstains.
    pub demand: bool,
}

impl BestResponse {
    pub const IDLE: BestResponse = BestResponse {
        power: 0.0,
        value: 0.0,
        demand: false,
    };
}

fn check_price(name: &str, p: f64) -> Result<()> {
    if !p.is_finite() || p < 0.0 {
        return Err(Error::Domain(format!("{name} must be finite and >= 0, got {p}")));
    }
    Ok(())
}

/// Argmax over `q >= 0` of `w r(q) - lambda q`, then net of the tone price.
pub fn per_tone_best_response(
    weight: f64,
    power_price: f64,
    tone_price: f64,
    link: &Link,
) -> Result<BestResponse> {
    check_price("power price", power_price)?;
    check_price("tone price", tone_price)?;
    let power = optimal_power(weight, power_price, link)?;
    let value = weight * link.rate_unchecked(power) - power_price * power - tone_price;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite net benefit at q = {power}")));
    }
    Ok(BestResponse {
        power,
        value,
        demand: value > 0.0,
    })
}

fn optimal_power(weight: f64, power_price: f64, link: &Link) -> Result<f64> {
    let cap = link.cap_power();
    if power_price == 0.0 {
        return cap.ok_or(Error::Unbounded);
    }
    let c = 1.0 - weight * link.slope_at_zero() / power_price;
    if c >= 0.0 {
        // price at or above the marginal utility at zero power
        return Ok(0.0);
    }
    let beta = link.self_noise;
    let a = beta * (1.0 + beta);
    let b = 2.0 * beta + 1.0;
    let x = if a < 1e-14 * (b + c.abs()) {
        -c / b
    } else {
        // positive root without cancellation: c < 0 so the discriminant >= b^2
        -2.0 * c / (b + (b * b - 4.0 * a * c).sqrt())
    };
    let q = x * link.noise / link.gain;
    Ok(match cap {
        Some(q_cap) => q.min(q_cap),
        None => q,
    })
}

/// Outcome of the power-price search for one user at fixed tone prices.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSolve {
    /// Smallest power price at which the demanded power fits the budget.
    pub power_price: f64,
    /// Responses at `power_price`.
    pub responses: Vec<BestResponse>,
    /// Responses just below `power_price`, present only when the demanded
    /// power jumps over the budget there (some tone stops being profitable
    /// exactly at `power_price`).
    pub below: Option<Vec<BestResponse>>,
    pub iterations: usize,
}

impl BudgetSolve {
    /// Power spent on demanded tones at `power_price`.
    pub fn demanded_power(&self) -> f64 {
        demanded_power(&self.responses)
    }

    /// Tones demanded just below the power price but not at it.
    pub fn marginal_tones(&self) -> Vec<usize> {
        match &self.below {
            Some(below) => (0..self.responses.len())
                .filter(|&n| below[n].demand && !self.responses[n].demand)
                .collect(),
            None => Vec::new(),
        }
    }

    /// User's Lagrangian value `lambda P + sum_n max(0, v_n)`.
    pub fn local_dual(&self, budget: f64) -> f64 {
        self.power_price * budget
            + self
                .responses
                .iter()
                .map(|r| r.value.max(0.0))
                .sum::<f64>()
    }

    /// Time-sharing fraction of each tone in the relaxed per-user optimum:
    /// 1 on demanded tones, a common fraction on marginal tones that exactly
    /// exhausts the budget, 0 elsewhere.
    pub fn relaxed_shares(&self, budget: f64) -> Vec<f64> {
        let mut shares: Vec<f64> = self
            .responses
            .iter()
            .map(|r| if r.demand { 1.0 } else { 0.0 })
            .collect();
        let marginal = self.marginal_tones();
        if let (Some(below), false) = (&self.below, marginal.is_empty()) {
            let committed: f64 = self
                .responses
                .iter()
                .zip(below)
                .filter(|(r, _)| r.demand)
                .map(|(_, b)| b.power)
                .sum();
            let wanted: f64 = marginal.iter().map(|&n| below[n].power).sum();
            let frac = if wanted > 0.0 {
                ((budget - committed) / wanted).clamp(0.0, 1.0)
            } else {
                0.0
            };
            for n in marginal {
                shares[n] = frac;
            }
        }
        shares
    }
}

fn demanded_power(responses: &[BestResponse]) -> f64 {
    responses.iter().filter(|r| r.demand).map(|r| r.power).sum()
}

/// `sup_q r(q)`: `ln(1 + min(1/beta, s_max))`, infinite without self-noise or cap.
fn rate_supremum(link: &Link) -> f64 {
    let s = if link.self_noise > 0.0 {
        (1.0 / link.self_noise).min(link.snr_cap)
    } else {
        link.snr_cap
    };
    s.ln_1p()
}

/// Responses on all tones at one power price; `None` when some active tone
/// is unbounded (zero power price and unreachable cap).
fn responses_at(
    profile: &UserProfile,
    prices: &[f64],
    active: Option<&[bool]>,
    power_price: f64,
) -> Result<Option<Vec<BestResponse>>> {
    let mut out = Vec::with_capacity(prices.len());
    for (n, (link, &mu)) in profile.links.iter().zip(prices).enumerate() {
        if active.is_some_and(|a| !a[n]) {
            out.push(BestResponse::IDLE);
            continue;
        }
        match per_tone_best_response(profile.weight, power_price, mu, link) {
            Ok(r) => out.push(r),
            // No maximizer, but a tone priced above the supremum of its
            // utility is never worth taking.
            Err(Error::Unbounded) if profile.weight * rate_supremum(link) <= mu => out.push(BestResponse {
                power: 0.0,
                value: -mu,
                demand: false,
            }),
            Err(Error::Unbounded) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(out))
}

/// Power price at which a tone priced at `tone_price` stops being
/// profitable, or `None` if there is no such jump (free tone, or a tone never
/// worth its price).
///
/// The net benefit `v(lambda)` is convex and decreasing with derivative
/// `-q*(lambda)`, so Newton steps from the left approach the root from below.
fn exit_price(weight: f64, link: &Link, tone_price: f64) -> Option<f64> {
    if tone_price <= 0.0 {
        return None;
    }
    let upper = weight * link.slope_at_zero();
    let net = |lambda: f64| -> Option<(f64, f64)> {
        let q = optimal_power(weight, lambda, link).ok()?;
        Some((weight * link.rate_unchecked(q) - lambda * q - tone_price, q))
    };
    let mut lambda = 0.0;
    let (mut v, mut q) = match net(0.0) {
        Some(vq) => vq,
        None => {
            if weight * rate_supremum(link) <= tone_price {
                return None;
            }
            // unbounded at zero: walk down until the tone is profitable
            lambda = upper;
            loop {
                lambda *= 0.5;
                let vq = net(lambda)?;
                if vq.0 > 0.0 {
                    break vq;
                }
                if lambda < f64::MIN_POSITIVE {
                    return None;
                }
            }
        }
    };
    if v <= 0.0 {
        return None;
    }
    for _ in 0..MAX_BISECTION_ITERS {
        if q <= 0.0 {
            break;
        }
        let next = lambda + v / q;
        if !(next < upper) || next - lambda <= 1e-15 * next {
            lambda = next.min(upper);
            break;
        }
        lambda = next;
        (v, q) = net(lambda)?;
        if v <= 0.0 {
            break;
        }
    }
    (lambda > 0.0 && lambda < upper).then_some(lambda)
}

fn same_demand(a: &[BestResponse], b: &[BestResponse]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.demand == y.demand)
}

/// Bracket on the power price: `D(lo) > P` (or `lo = 0`), `D(hi) <= P`.
struct Bracket {
    lo: f64,
    lo_resp: Option<Vec<BestResponse>>,
    hi: f64,
    hi_resp: Vec<BestResponse>,
}

impl Bracket {
    /// Narrows the bracket with the responses at `lambda`; returns whether the
    /// budget fits there.
    fn absorb(&mut self, lambda: f64, resp: Option<Vec<BestResponse>>, budget: f64) -> bool {
        match resp {
            Some(r) if demanded_power(&r) <= budget => {
                self.hi = lambda;
                self.hi_resp = r;
                true
            }
            r => {
                self.lo = lambda;
                self.lo_resp = r;
                false
            }
        }
    }
}

/// Finds the smallest power price at which the demanded power fits the
/// budget. `active` restricts the user to a subset of tones (others answer
/// `BestResponse::IDLE`).
///
/// Demanded power `D(lambda)` is nonincreasing but jumps down at each tone's
/// exit price. Those prices are located first, a binary search over them
/// isolates one continuous piece, and a bracketed false-position search
/// (Illinois variant) finishes inside it. When the budget falls inside a
/// jump the bracket collapses onto it and `below` records the responses on
/// the other side.
pub fn solve_budget(
    profile: &UserProfile,
    prices: &[f64],
    active: Option<&[bool]>,
) -> Result<BudgetSolve> {
    if prices.len() != profile.links.len() {
        return Err(Error::Dimension {
            field: "prices",
            expected: profile.links.len(),
            found: prices.len(),
        });
    }
    for &p in prices {
        check_price("tone price", p)?;
    }
    let budget = profile.budget;
    let tol = BUDGET_TOL * budget;
    let is_active = |n: usize| active.is_none_or(|a| a[n]);

    let at_zero = responses_at(profile, prices, active, 0.0)?;
    if let Some(responses) = &at_zero {
        if demanded_power(responses) <= budget {
            return Ok(BudgetSolve {
                power_price: 0.0,
                responses: at_zero.unwrap(),
                below: None,
                iterations: 0,
            });
        }
    }

    // above max_n w h / sigma2 every optimal power is zero
    let top = profile
        .links
        .iter()
        .enumerate()
        .filter(|(n, _)| is_active(*n))
        .map(|(_, l)| profile.weight * l.slope_at_zero())
        .fold(0.0, f64::max);
    let hi_resp = responses_at(profile, prices, active, top)?
        .ok_or_else(|| Error::Numerical("unbounded response at the upper bracket".into()))?;
    let mut br = Bracket {
        lo: 0.0,
        lo_resp: at_zero,
        hi: top,
        hi_resp,
    };
    let mut evals = 1;

    let mut cuts: Vec<f64> = (0..prices.len())
        .filter(|&n| is_active(n))
        .filter_map(|n| exit_price(profile.weight, &profile.links[n], prices[n]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (mut a, mut b) = (0, cuts.len());
    while a < b {
        let m = a + (b - a) / 2;
        let lambda = cuts[m];
        if lambda <= br.lo {
            a = m + 1;
            continue;
        }
        if lambda >= br.hi {
            b = m;
            continue;
        }
        evals += 1;
        if br.absorb(lambda, responses_at(profile, prices, active, lambda)?, budget) {
            b = m;
        } else {
            a = m + 1;
        }
    }
    // the budget may sit in the jump at the upper end
    let probe = br.hi * (1.0 - 0.25 * JUMP_WIDTH);
    if a < cuts.len() && br.hi == cuts[a] && probe > br.lo {
        evals += 1;
        br.absorb(probe, responses_at(profile, prices, active, probe)?, budget);
    }

    // Illinois weights on the retained ends
    let (mut w_lo, mut w_hi) = (1.0, 1.0);
    let mut last_side = 0i8;
    for it in evals..=MAX_BISECTION_ITERS + evals {
        let f_hi = demanded_power(&br.hi_resp) - budget;
        if f_hi >= -tol {
            return Ok(BudgetSolve {
                power_price: br.hi,
                responses: br.hi_resp,
                below: None,
                iterations: it,
            });
        }
        let (lo, hi) = (br.lo, br.hi);
        let mid = lo + 0.5 * (hi - lo);
        let continuous = br.lo_resp.as_ref().is_some_and(|l| same_demand(l, &br.hi_resp));
        // A narrow bracket whose ends demand different tone sets sits on a jump.
        let on_jump = hi - lo <= JUMP_WIDTH * hi && br.lo_resp.is_some() && !continuous;
        if on_jump || mid <= lo || mid >= hi {
            return Ok(BudgetSolve {
                power_price: br.hi,
                responses: br.hi_resp,
                below: br.lo_resp,
                iterations: it,
            });
        }
        let trial = match &br.lo_resp {
            Some(l) if continuous => {
                let f_lo = (demanded_power(l) - budget) * w_lo;
                let f_hi = f_hi * w_hi;
                let t = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
                if t > lo && t < hi {
                    t
                } else {
                    mid
                }
            }
            _ => mid,
        };
        let fits = br.absorb(trial, responses_at(profile, prices, active, trial)?, budget);
        let side = if fits { 1 } else { -1 };
        if side == last_side {
            if fits {
                w_lo *= 0.5;
            } else {
                w_hi *= 0.5;
            }
        } else {
            (w_lo, w_hi) = (1.0, 1.0);
        }
        last_side = side;
    }
    Err(Error::NoConvergence {
        iterations: MAX_BISECTION_ITERS,
        lo: br.lo,
        hi: br.hi,
    })
}

/// Best use of the full budget on a fixed tone set, ignoring tone prices
/// in the power split: returns the power price, the powers and the value
/// `sum_n (w r(q_n) - mu_n)` over the set.
fn restricted_value(profile: &UserProfile, prices: &[f64], set: &[bool]) -> Result<(f64, Vec<f64>, f64)> {
    let n = prices.len();
    if !set.iter().any(|&b| b) {
        return Ok((0.0, vec![0.0; n], 0.0));
    }
    let solve = solve_budget(profile, &vec![0.0; n], Some(set))?;
    let powers: Vec<f64> = solve.responses.iter().map(|r| r.power).collect();
    let mut value = 0.0;
    for k in 0..n {
        if set[k] {
            value += profile.weight * profile.links[k].rate_unchecked(powers[k]) - prices[k];
        }
    }
    Ok((solve.power_price, powers, value))
}

/// Largest number of candidate tones searched exhaustively at a jump.
const EXACT_TONES: usize = 12;

/// Integer completion of a budget jump.
///
/// At a jump the price-based answer is ambiguous: the tones demanded at the
/// power price leave budget unused, and adding the marginal tones overshoots
/// it. The user then looks for the tone set with the best exact value,
/// re-splitting its full budget over each candidate:
///
/// 1. the committed set plus `j` marginal tones for every `j`, taken in a
///    rotated order starting at `(user_id * j) mod |M|` so that identical
///    users facing identical prices split tied tones between them;
/// 2. every subset of the tones worth their price on the full budget, when
///    there are at most `EXACT_TONES` of them, skipping subsets whose
///    Lagrangian bound `lambda P + sum v_n(lambda)` cannot beat the best so
///    far;
/// 3. single-tone additions and removals until no tone's marginal
///    contribution has the wrong sign.
///
/// Ties keep the earlier candidate. Each tone's reported value is its
/// marginal contribution to the chosen set.
fn complete_marginal(
    user_id: usize,
    profile: &UserProfile,
    prices: &[f64],
    solve: &BudgetSolve,
) -> Result<(f64, Vec<BestResponse>)> {
    let marginal = solve.marginal_tones();
    if marginal.is_empty() {
        return Ok((solve.power_price, solve.responses.clone()));
    }
    let n_count = prices.len();
    let committed: Vec<bool> = solve.responses.iter().map(|r| r.demand).collect();
    let value_of = |set: &[bool]| restricted_value(profile, prices, set).map(|v| v.2);
    let better = |a: f64, b: f64| a > b + 1e-12 * b.abs().max(1.0);

    let m = marginal.len();
    let mut best_set = committed.clone();
    let mut best = value_of(&best_set)?;
    for j in 1..=m {
        let mut set = committed.clone();
        let start = (user_id * j) % m;
        for i in 0..j {
            set[marginal[(start + i) % m]] = true;
        }
        let value = value_of(&set)?;
        if value > best {
            best = value;
            best_set = set;
        }
    }

    let relevant: Vec<usize> = (0..n_count)
        .filter(|&n| profile.weight * profile.links[n].rate_unchecked(profile.budget) > prices[n])
        .collect();
    if relevant.len() <= EXACT_TONES {
        let base = solve.power_price * profile.budget;
        for mask in 1u32..(1 << relevant.len()) {
            let bound = base
                + relevant
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &n)| solve.responses[n].value)
                    .sum::<f64>();
            if !better(bound, best) {
                continue;
            }
            let mut set = vec![false; n_count];
            for (i, &n) in relevant.iter().enumerate() {
                set[n] = mask & (1 << i) != 0;
            }
            let value = value_of(&set)?;
            if better(value, best) {
                best = value;
                best_set = set;
            }
        }
    }

    let mut contribution = vec![0.0; n_count];
    for _ in 0..=n_count {
        let mut changed = false;
        for n in 0..n_count {
            let mut other = best_set.clone();
            other[n] = !other[n];
            let v = value_of(&other)?;
            contribution[n] = if best_set[n] { best - v } else { v - best };
            let wrong = if best_set[n] {
                contribution[n] <= 0.0
            } else {
                better(v, best)
            };
            if wrong {
                best_set = other;
                best = v;
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }

    let (lambda, powers, _) = restricted_value(profile, prices, &best_set)?;
    let responses = (0..n_count)
        .map(|n| BestResponse {
            power: if best_set[n] { powers[n] } else { solve.responses[n].power },
            value: if best_set[n] { contribution[n] } else { contribution[n].min(0.0) },
            demand: best_set[n],
        })
        .collect();
    Ok((lambda, responses))
}

/// Power price and per-tone responses for one user at the announced tone
/// prices.
pub fn power_price_bisection(
    user_id: usize,
    profile: &UserProfile,
    prices: &[f64],
) -> Result<(f64, Vec<BestResponse>)> {
    let solve = solve_budget(profile, prices, None)?;
    complete_marginal(user_id, profile, prices, &solve)
}

/// Weight of the per-(user, tone) jitter inside the priority offset.
const PRIORITY_JITTER: f64 = 0.25;

/// Tone prices as seen by user `user_id` out of `num_users`: tone `n` is
/// raised by `tie_margin * (((user_id + n) mod num_users) + 0.25 u)`, with
/// `u` in `[0, 1)` a fixed hash of `(user_id, n)`.
///
/// Among users who value a tone equally, the one with the smallest offset
/// bids alone over a window of prices; on tone 0 that is user 0. The
/// rotating part makes identical users prefer different tones among
/// identical ones, and the hashed part keeps them from valuing two different
/// tone sets identically.
pub fn perceived_prices(user_id: usize, num_users: usize, prices: &[f64], tie_margin: f64) -> Vec<f64> {
    let m = num_users.max(1);
    prices
        .iter()
        .enumerate()
        .map(|(n, &p)| {
            let rank = ((user_id + n) % m) as f64 + PRIORITY_JITTER * jitter(user_id, n);
            p + rank * tie_margin
        })
        .collect()
}

/// SplitMix64 finalizer of `(user, tone)` mapped to `[0, 1)`; zero for
/// `(0, 0)`.
fn jitter(user: usize, tone: usize) -> f64 {
    if user == 0 && tone == 0 {
        return 0.0;
    }
    let mut z = (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tone as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// State owned by one user agent.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user_id: usize,
    /// Priority margin and user count, see [`perceived_prices`].
    pub tie_margin: f64,
    pub num_users: usize,
    pub power_price: f64,
    pub responses: Vec<BestResponse>,
}

impl UserState {
    pub fn new(user_id: usize, num_tones: usize) -> Self {
        Self {
            user_id,
            tie_margin: 0.0,
            num_users: 1,
            power_price: 0.0,
            responses: vec![BestResponse::IDLE; num_tones],
        }
    }

    pub fn with_tie_margin(mut self, tie_margin: f64, num_users: usize) -> Self {
        self.tie_margin = tie_margin;
        self.num_users = num_users;
        self
    }

    /// Recomputes the power price and responses for new tone prices.
    pub fn respond(&mut self, profile: &UserProfile, prices: &[f64]) -> Result<()> {
        let seen = perceived_prices(self.user_id, self.num_users, prices, self.tie_margin);
        let solve = solve_budget(profile, &seen, None)?;
        let (power_price, responses) = complete_marginal(self.user_id, profile, &seen, &solve)?;
        self.power_price = power_price;
        self.responses = responses;
        Ok(())
    }

    /// Demand bits only; powers, gains and utilities stay local.
    pub fn build_bid(&self) -> Bid {
        Bid {
            user_id: self.user_id,
            demand: self.responses.iter().map(|r| r.demand).collect(),
        }
    }
}
