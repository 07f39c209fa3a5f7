//! Scenario documents (JSON) and seeded random scenario generation.

use std::path::Path;

use rand::rngs::Xoshiro256PlusPlus;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{RawScenario, Scenario};

const FIELDS: [&str; 8] = [
    "num_users",
    "num_tones",
    "gain",
    "noise",
    "self_noise",
    "snr_cap",
    "power_budget",
    "weight",
];

/// An SNR cap entry: a number, or the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CapValue {
    Finite(f64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioDoc {
    num_users: usize,
    num_tones: usize,
    gain: Vec<f64>,
    noise: Vec<f64>,
    self_noise: Vec<f64>,
    snr_cap: Vec<CapValue>,
    power_budget: Vec<f64>,
    weight: Vec<f64>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("scenario document must be a JSON object".into()))?;
    for field in FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::InvalidField {
                field,
                reason: "missing".into(),
            });
        }
    }
    let doc: ScenarioDoc = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.num_users == 0 {
        return Err(Error::InvalidField {
            field: "num_users",
            reason: "must be > 0".into(),
        });
    }
    let snr_cap = doc
        .snr_cap
        .iter()
        .enumerate()
        .map(|(i, c)| match c {
            CapValue::Finite(x) => Ok(*x),
            CapValue::Text(s) if s == "inf" => Ok(f64::INFINITY),
            CapValue::Text(s) => Err(Error::validation("snr_cap", i, format!("must be a number or \"inf\", got {s:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(RawScenario {
        num_users: doc.num_users,
        num_tones: doc.num_tones,
        gain: doc.gain,
        noise: doc.noise,
        self_noise: doc.self_noise,
        snr_cap,
        power_budget: doc.power_budget,
        weight: doc.weight,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    let raw = scenario.raw();
    let doc = ScenarioDoc {
        num_users: raw.num_users,
        num_tones: raw.num_tones,
        gain: raw.gain.clone(),
        noise: raw.noise.clone(),
        self_noise: raw.self_noise.clone(),
        snr_cap: raw
            .snr_cap
            .iter()
            .map(|&c| {
                if c.is_infinite() {
                    CapValue::Text("inf".into())
                } else {
                    CapValue::Finite(c)
                }
            })
            .collect(),
        power_budget: raw.power_budget.clone(),
        weight: raw.weight.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("scenario document serializes")
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_json(scenario) + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Sampling ranges for random scenarios. Gains are log-uniform, the rest
/// uniform; each user's SNR cap is drawn uniformly from `snr_caps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRanges {
    pub gain: (f64, f64),
    pub noise: f64,
    pub self_noise: (f64, f64),
    pub snr_caps: Vec<f64>,
    pub power_budget: (f64, f64),
    pub weight: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            gain: (0.1, 10.0),
            noise: 1.0,
            self_noise: (0.0, 0.2),
            snr_caps: vec![10.0, f64::INFINITY],
            power_budget: (1.0, 5.0),
            weight: (0.5, 2.0),
        }
    }
}

impl ScenarioRanges {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})")))
            }
        };
        positive("gain", self.gain)?;
        positive("power_budget", self.power_budget)?;
        positive("weight", self.weight)?;
        let (b0, b1) = self.self_noise;
        if !(b0.is_finite() && b1.is_finite() && b0 >= 0.0 && b0 <= b1) {
            return Err(Error::Config(format!("self_noise range must satisfy 0 <= lo <= hi, got ({b0}, {b1})")));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::Config("noise must be positive".into()));
        }
        if self.snr_caps.is_empty() || self.snr_caps.iter().any(|c| c.is_nan() || *c <= 0.0) {
            return Err(Error::Config("snr_caps must be a nonempty list of positive values".into()));
        }
        Ok(())
    }
}

struct Sampler {
    rng: Xoshiro256PlusPlus,
}

impl Sampler {
    fn uniform(&mut self, (lo, hi): (f64, f64)) -> f64 {
        self.rng.random_range(lo..=hi)
    }

    fn log_uniform(&mut self, (lo, hi): (f64, f64)) -> f64 {
        self.uniform((lo.ln(), hi.ln())).exp().clamp(lo, hi)
    }

    fn pick(&mut self, choices: &[f64]) -> f64 {
        choices[self.rng.random_range(0..choices.len())]
    }
}

fn check_dims(num_users: usize, num_tones: usize) -> Result<()> {
    if num_users == 0 || num_tones == 0 {
        return Err(Error::Config("random scenarios need K >= 1 and N >= 1".into()));
    }
    Ok(())
}

/// Independent users, deterministic in `(seed, K, N, ranges)`.
pub fn generate_random_scenario(
    seed: u64,
    num_users: usize,
    num_tones: usize,
    ranges: &ScenarioRanges,
) -> Result<Scenario> {
    check_dims(num_users, num_tones)?;
    ranges.validate()?;
    let mut s = Sampler {
        rng: Xoshiro256PlusPlus::seed_from_u64(seed),
    };
    let gain = (0..num_users * num_tones).map(|_| s.log_uniform(ranges.gain)).collect();
    let self_noise = (0..num_users).map(|_| s.uniform(ranges.self_noise)).collect();
    let snr_cap = (0..num_users).map(|_| s.pick(&ranges.snr_caps)).collect();
    let power_budget = (0..num_users).map(|_| s.uniform(ranges.power_budget)).collect();
    let weight = (0..num_users).map(|_| s.uniform(ranges.weight)).collect();
    Scenario::new(RawScenario {
        num_users,
        num_tones,
        gain,
        noise: vec![ranges.noise; num_tones],
        self_noise,
        snr_cap,
        power_budget,
        weight,
    })
}

/// `(K, N)` of instance `i` in the mixed-size benchmark suite: `K` cycles
/// through 2, 3, 4 and `N` alternates 4, 8 every three instances.
pub fn suite_shape(i: usize) -> (usize, usize) {
    ([2, 3, 4][i % 3], [4, 8][(i / 3) % 2])
}

/// `count` random instances shaped by [`suite_shape`], seeded
/// `base_seed + i`.
pub fn benchmark_suite(base_seed: u64, count: usize, ranges: &ScenarioRanges) -> Result<Vec<Scenario>> {
    (0..count)
        .map(|i| {
            let (k, n) = suite_shape(i);
            generate_random_scenario(base_seed + i as u64, k, n, ranges)
        })
        .collect()
}

/// Every user shares one parameter draw and every link one gain, so any
/// optimal allocation stays optimal when users or tones are permuted.
pub fn generate_symmetric_scenario(
    seed: u64,
    num_users: usize,
    num_tones: usize,
    ranges: &ScenarioRanges,
) -> Result<Scenario> {
    check_dims(num_users, num_tones)?;
    ranges.validate()?;
    let mut s = Sampler {
        rng: Xoshiro256PlusPlus::seed_from_u64(seed),
    };
    let gain = s.log_uniform(ranges.gain);
    let self_noise = s.uniform(ranges.self_noise);
    let snr_cap = s.pick(&ranges.snr_caps);
    let power_budget = s.uniform(ranges.power_budget);
    let weight = s.uniform(ranges.weight);
    Scenario::new(RawScenario {
        num_users,
        num_tones,
        gain: vec![gain; num_users * num_tones],
        noise: vec![ranges.noise; num_tones],
        self_noise: vec![self_noise; num_users],
        snr_cap: vec![snr_cap; num_users],
        power_budget: vec![power_budget; num_users],
        weight: vec![weight; num_users],
    })
}
