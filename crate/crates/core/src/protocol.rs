//! Round-based message-passing simulation of the base station and users.
//!
//! Every round the base station announces tone prices, each user answers
//! with a bid of demand bits, and the base station updates prices from the
//! aggregated demand. Links can delay or drop messages; the base station then
//! holds the last bid it received from each user.

use std::collections::VecDeque;

use rand::rngs::Xoshiro256PlusPlus;
use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::bs_agent::{
    aggregate_demand, check_converged, kkt_residual, recover_allocation, Allocation, PriceState,
    StepSchedule, DEFAULT_EPSILON, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::model::{Scenario, UserProfile};
use crate::trace::TraceRecord;
use crate::user_agent::{solve_budget, UserState};

/// Name of the generator used for message drops, recorded in trace metadata.
pub const RNG_NAME: &str = "Xoshiro256PlusPlus";

pub const DEFAULT_MAX_ROUNDS: usize = 5000;

/// Default per-index price margin; see [`RunConfig::tie_margin`].
pub const DEFAULT_TIE_MARGIN: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceAnnounce {
    pub iter: u64,
    pub prices: Vec<f64>,
}

/// A user's demand bits. Nothing else about the user leaves the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bid {
    pub user_id: usize,
    pub demand: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Message {
    PriceAnnounce(PriceAnnounce),
    Bid(Bid),
}

/// Link impairments shared by every link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkModel {
    pub delay_rounds: u32,
    pub drop_probability: f64,
    pub rng_seed: u64,
}

impl NetworkModel {
    pub fn new(delay_rounds: u32, drop_probability: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_probability) {
            return Err(Error::Config(format!(
                "drop probability must lie in [0, 1), got {drop_probability}"
            )));
        }
        Ok(Self {
            delay_rounds,
            drop_probability,
            rng_seed,
        })
    }

    /// Zero delay, no drops.
    pub fn ideal() -> Self {
        Self {
            delay_rounds: 0,
            drop_probability: 0.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    due: u64,
    message: Message,
}

/// Record of a dropped message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropEvent {
    pub round: u64,
    pub link: usize,
}

/// Simulated links. Link `k` carries base station -> user `k`; link `K + k`
/// carries user `k` -> base station.
#[derive(Debug, Clone)]
pub struct Network {
    model: NetworkModel,
    rng: Xoshiro256PlusPlus,
    links: Vec<VecDeque<InFlight>>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: Vec<DropEvent>,
}

impl Network {
    pub fn new(model: NetworkModel, num_links: usize) -> Self {
        Self {
            model,
            rng: Xoshiro256PlusPlus::seed_from_u64(model.rng_seed),
            links: vec![VecDeque::new(); num_links],
            sent: 0,
            delivered: 0,
            dropped: Vec::new(),
        }
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    /// Queues `message` on `link`; returns false if it was dropped.
    pub fn send(&mut self, now: u64, link: usize, message: Message) -> bool {
        self.sent += 1;
        if self.model.drop_probability > 0.0 && self.rng.random::<f64>() < self.model.drop_probability {
            self.dropped.push(DropEvent { round: now, link });
            return false;
        }
        self.links[link].push_back(InFlight {
            due: now + self.model.delay_rounds as u64,
            message,
        });
        true
    }

    /// Pops every message due by `now` on the given links, FIFO per link,
    /// links in ascending id.
    pub fn deliver(&mut self, now: u64, links: std::ops::Range<usize>) -> Vec<(usize, Message)> {
        let mut out = Vec::new();
        for id in links {
            let queue = &mut self.links[id];
            while queue.front().is_some_and(|m| m.due <= now) {
                let m = queue.pop_front().expect("front checked");
                out.push((id, m.message));
            }
        }
        self.delivered += out.len() as u64;
        out
    }

    pub fn in_flight(&self) -> u64 {
        self.links.iter().map(|q| q.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub max_rounds: usize,
    pub epsilon: f64,
    pub window: usize,
    /// Use the reduced update set instead of updating every tone.
    pub reduced: bool,
    pub schedule: StepSchedule,
    /// Ideal links, ignoring `network`.
    pub synchronous: bool,
    pub network: NetworkModel,
    /// Starting value of every tone price.
    pub initial_price: f64,
    /// Rotating per-user priority margin on tone prices; see
    /// [`crate::user_agent::perceived_prices`].
    pub tie_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            epsilon: DEFAULT_EPSILON,
            window: DEFAULT_WINDOW,
            reduced: true,
            schedule: StepSchedule::default(),
            synchronous: true,
            network: NetworkModel::ideal(),
            initial_price: 0.0,
            tie_margin: DEFAULT_TIE_MARGIN,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if !(self.tie_margin.is_finite() && self.tie_margin >= 0.0) {
            return Err(Error::Config("tie margin must be finite and >= 0".into()));
        }
        if !(self.initial_price.is_finite() && self.initial_price >= 0.0) {
            return Err(Error::Config("initial price must be finite and >= 0".into()));
        }
        NetworkModel::new(
            self.network.delay_rounds,
            self.network.drop_probability,
            self.network.rng_seed,
        )?;
        self.schedule.validate()
    }
}

/// Base-station agent state.
#[derive(Debug, Clone)]
pub struct BaseStation {
    pub prices: PriceState,
    /// Last bid received from each user (hold-last semantics).
    pub last_bids: Vec<Option<Vec<bool>>>,
    pub residuals: Vec<f64>,
}

/// Whole simulated system: scenario, agents, and links.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    profiles: Vec<UserProfile>,
    config: RunConfig,
    pub users: Vec<UserState>,
    pub base_station: BaseStation,
    pub network: Network,
    pub round: u64,
    pub announces_delivered: u64,
    pub bids_delivered: u64,
}

impl World {
    pub fn new(scenario: Scenario, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (k, n) = (scenario.num_users(), scenario.num_tones());
        let model = if config.synchronous {
            NetworkModel::ideal()
        } else {
            config.network
        };
        Ok(Self {
            profiles: (0..k).map(|u| scenario.user_profile(u)).collect(),
            users: (0..k)
                .map(|u| UserState::new(u, n).with_tie_margin(config.tie_margin, k))
                .collect(),
            base_station: BaseStation {
                prices: PriceState::with_prices(vec![config.initial_price; n], config.schedule),
                last_bids: vec![None; k],
                residuals: Vec::new(),
            },
            network: Network::new(model, 2 * k),
            round: 0,
            announces_delivered: 0,
            bids_delivered: 0,
            scenario,
            config,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn prices(&self) -> &[f64] {
        &self.base_station.prices.prices
    }

    /// One round: announce, respond, bid, aggregate, update.
    pub fn schedule_round(&mut self) -> Result<TraceRecord> {
        let k_count = self.users.len();
        let now = self.round;
        let dropped_before = self.network.dropped.len();
        let iter = self.base_station.prices.iter;
        let prices = self.base_station.prices.prices.clone();

        for k in 0..k_count {
            let msg = Message::PriceAnnounce(PriceAnnounce {
                iter,
                prices: prices.clone(),
            });
            self.network.send(now, k, msg);
        }

        let mut latest: Vec<Option<PriceAnnounce>> = vec![None; k_count];
        for (link, msg) in self.network.deliver(now, 0..k_count) {
            if let Message::PriceAnnounce(a) = msg {
                self.announces_delivered += 1;
                if latest[link].as_ref().is_none_or(|prev| a.iter >= prev.iter) {
                    latest[link] = Some(a);
                }
            }
        }

        for (k, announce) in latest.into_iter().enumerate() {
            let Some(announce) = announce else { continue };
            self.users[k].respond(&self.profiles[k], &announce.prices)?;
            let bid = self.users[k].build_bid();
            self.network.send(now, k_count + k, Message::Bid(bid));
        }

        for (_, msg) in self.network.deliver(now, k_count..2 * k_count) {
            if let Message::Bid(bid) = msg {
                self.bids_delivered += 1;
                let slot = bid.user_id;
                self.base_station.last_bids[slot] = Some(bid.demand);
            }
        }

        let n_count = prices.len();
        let demand = aggregate_demand(
            self.base_station.last_bids.iter().flatten().map(|b| b.as_slice()),
            n_count,
        );
        let residual = kkt_residual(&prices, &demand);
        let dual_value = self.observed_dual(&prices)?;
        let updates_performed = self
            .base_station
            .prices
            .price_update(&demand, self.config.reduced);
        if self.base_station.prices.prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("non-finite tone price at round {now}")));
        }
        if self.base_station.last_bids.iter().all(Option::is_some) {
            self.base_station.residuals.push(residual);
        }
        self.round += 1;
        Ok(TraceRecord {
            round: now,
            residual,
            dual_value,
            prices,
            demand,
            updates_performed,
            messages_dropped: self.network.dropped.len() - dropped_before,
        })
    }

    /// Dual function value at the announced `prices`, evaluated as an
    /// outside observer with full information. Users never report it.
    fn observed_dual(&self, prices: &[f64]) -> Result<f64> {
        let mut total: f64 = prices.iter().sum();
        for profile in &self.profiles {
            total += solve_budget(profile, prices, None)?.local_dual(profile.budget);
        }
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite dual value".into()));
        }
        Ok(total)
    }

    pub fn converged(&self) -> bool {
        check_converged(
            &self.base_station.residuals,
            self.config.epsilon,
            self.config.window,
        )
    }
}

/// Result of a distributed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub allocation: Allocation,
    pub objective: f64,
    pub trace: Vec<TraceRecord>,
    pub rounds_used: usize,
    pub converged: bool,
    pub final_prices: Vec<f64>,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
}

impl RunOutcome {
    pub fn total_updates(&self) -> usize {
        self.trace.iter().map(|r| r.updates_performed).sum()
    }
}

/// Runs rounds until the stopping rule fires or `max_rounds` is reached,
/// then recovers a feasible allocation at the final prices.
pub fn run_until_converged(scenario: &Scenario, config: &RunConfig) -> Result<RunOutcome> {
    let mut world = World::new(scenario.clone(), config.clone())?;
    let mut trace = Vec::new();
    while world.round < config.max_rounds as u64 {
        trace.push(world.schedule_round()?);
        if world.converged() {
            break;
        }
    }
    let final_prices = world.prices().to_vec();
    let allocation = recover_allocation(scenario, &final_prices, config.tie_margin)?;
    if let Err(e) = allocation.check_feasible(scenario) {
        return Err(Error::Numerical(format!("recovered allocation infeasible: {e}")));
    }
    Ok(RunOutcome {
        objective: allocation.objective(scenario),
        allocation,
        rounds_used: trace.len(),
        converged: world.converged(),
        final_prices,
        messages_sent: world.network.sent,
        messages_delivered: world.network.delivered,
        messages_dropped: world.network.dropped.len() as u64,
        trace,
    })
}
