//! WebAssembly bindings for the static page in `www/`.
//!
//! Every export returns a JSON string; the page parses it and draws on a
//! canvas. The `*_json` functions hold the logic so they can be tested
//! natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ofdm_dual::scenario_io::{generate_random_scenario, ScenarioRanges};
use ofdm_dual::user_agent::per_tone_best_response;
use ofdm_dual::{run_until_converged, Link, RunConfig, Scenario};

/// Largest number of samples or rounds the page may ask for.
const MAX_POINTS: usize = 10_000;

#[derive(Serialize)]
struct RateCurve {
    q: Vec<f64>,
    rate: Vec<f64>,
    q_cap: Option<f64>,
}

#[derive(Serialize)]
struct ResponseCurve {
    lambda: Vec<f64>,
    power: Vec<f64>,
    value: Vec<f64>,
}

#[derive(Serialize)]
struct Simulation {
    num_users: usize,
    num_tones: usize,
    rounds: usize,
    converged: bool,
    objective: f64,
    total_updates: usize,
    prices: Vec<Vec<f64>>,
    residual: Vec<f64>,
    dual_value: Vec<f64>,
    owner: Vec<Option<usize>>,
    power: Vec<Vec<f64>>,
}

fn checked_link(gain: f64, noise: f64, self_noise: f64, snr_cap: f64) -> Result<Link, String> {
    if !(gain > 0.0 && gain.is_finite() && noise > 0.0 && noise.is_finite()) {
        return Err("gain and noise must be positive".into());
    }
    if !(self_noise >= 0.0 && self_noise.is_finite()) {
        return Err("self-noise must be >= 0".into());
    }
    // the page sends 0 for "no cap"
    let cap = if snr_cap > 0.0 { snr_cap } else { f64::INFINITY };
    Ok(Link::new(gain, noise, self_noise, cap))
}

fn samples(max: f64, points: usize) -> Result<impl Iterator<Item = f64>, String> {
    if !(max > 0.0 && max.is_finite()) || !(2..=MAX_POINTS).contains(&points) {
        return Err(format!("need a positive range and 2..={MAX_POINTS} points"));
    }
    Ok((0..points).map(move |i| max * i as f64 / (points - 1) as f64))
}

pub fn rate_curve_json(
    gain: f64,
    noise: f64,
    self_noise: f64,
    snr_cap: f64,
    q_max: f64,
    points: usize,
) -> Result<String, String> {
    let link = checked_link(gain, noise, self_noise, snr_cap)?;
    let q: Vec<f64> = samples(q_max, points)?.collect();
    let rate = q
        .iter()
        .map(|&x| link.capped_rate(x).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let curve = RateCurve {
        q,
        rate,
        q_cap: link.cap_power(),
    };
    Ok(serde_json::to_string(&curve).expect("curve serializes"))
}

/// `q*(lambda)` and the net benefit at zero tone price, for `lambda` in
/// `(0, lambda_max]`.
pub fn best_response_json(
    weight: f64,
    gain: f64,
    noise: f64,
    self_noise: f64,
    snr_cap: f64,
    lambda_max: f64,
    points: usize,
) -> Result<String, String> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err("weight must be positive".into());
    }
    let link = checked_link(gain, noise, self_noise, snr_cap)?;
    let mut curve = ResponseCurve {
        lambda: Vec::with_capacity(points),
        power: Vec::with_capacity(points),
        value: Vec::with_capacity(points),
    };
    for lambda in samples(lambda_max, points + 1)?.skip(1) {
        let r = per_tone_best_response(weight, lambda, 0.0, &link).map_err(|e| e.to_string())?;
        curve.lambda.push(lambda);
        curve.power.push(r.power);
        curve.value.push(r.value);
    }
    Ok(serde_json::to_string(&curve).expect("curve serializes"))
}

pub fn simulate_json(seed: u64, users: usize, tones: usize, reduced: bool, max_rounds: usize) -> Result<String, String> {
    if !(1..=8).contains(&users) || !(1..=16).contains(&tones) {
        return Err("the demo supports 1-8 users and 1-16 tones".into());
    }
    if !(1..=MAX_POINTS).contains(&max_rounds) {
        return Err(format!("max rounds must be in 1..={MAX_POINTS}"));
    }
    let scenario: Scenario =
        generate_random_scenario(seed, users, tones, &ScenarioRanges::default()).map_err(|e| e.to_string())?;
    let config = RunConfig {
        reduced,
        max_rounds,
        ..RunConfig::default()
    };
    let out = run_until_converged(&scenario, &config).map_err(|e| e.to_string())?;
    let sim = Simulation {
        num_users: users,
        num_tones: tones,
        rounds: out.rounds_used,
        converged: out.converged,
        objective: out.objective,
        total_updates: out.total_updates(),
        prices: out.trace.iter().map(|r| r.prices.clone()).collect(),
        residual: out.trace.iter().map(|r| r.residual).collect(),
        dual_value: out.trace.iter().map(|r| r.dual_value).collect(),
        owner: out.allocation.owner,
        power: out.allocation.power,
    };
    Ok(serde_json::to_string(&sim).expect("simulation serializes"))
}

#[wasm_bindgen]
pub fn rate_curve(
    gain: f64,
    noise: f64,
    self_noise: f64,
    snr_cap: f64,
    q_max: f64,
    points: usize,
) -> Result<String, JsError> {
    rate_curve_json(gain, noise, self_noise, snr_cap, q_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn best_response(
    weight: f64,
    gain: f64,
    noise: f64,
    self_noise: f64,
    snr_cap: f64,
    lambda_max: f64,
    points: usize,
) -> Result<String, JsError> {
    best_response_json(weight, gain, noise, self_noise, snr_cap, lambda_max, points).map_err(|e| JsError::new(&e))
}

/// Seeds are passed as `u32` to stay clear of `BigInt` on the JS side.
#[wasm_bindgen]
pub fn simulate(seed: u32, users: usize, tones: usize, reduced: bool, max_rounds: usize) -> Result<String, JsError> {
    simulate_json(seed as u64, users, tones, reduced, max_rounds).map_err(|e| JsError::new(&e))
}
