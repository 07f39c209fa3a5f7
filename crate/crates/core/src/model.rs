//! Link-level rate model and the static problem instance.
//!
//! A user transmitting power `q` on a tone with linear gain `h` and receiver
//! noise `sigma2` sees the effective SINR
//!
//! ```text
//! s(q) = h q / (sigma2 + beta h q)
//! ```
//!
//! where `beta` is the user's self-noise coefficient; `s` saturates at
//! `1/beta`. The usable SINR is further capped at `s_max` and the rate in nats
//! is `r(q) = ln(1 + min(s(q), s_max))`. When `beta * s_max < 1` the cap is
//! reached at the finite power
//!
//! ```text
//! q_cap = sigma2 s_max / (h (1 - beta s_max))
//! ```
//!
//! and the rate is flat beyond it.

use crate::error::{Error, Result};

/// Per-(user, tone) channel and transceiver parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub gain: f64,
    pub noise: f64,
    pub self_noise: f64,
    /// `f64::INFINITY` when the user has no SNR cap.
    pub snr_cap: f64,
}

fn check_power(q: f64) -> Result<()> {
    if !q.is_finite() {
        return Err(Error::Domain(format!("power must be finite, got {q}")));
    }
    if q < 0.0 {
        return Err(Error::Domain(format!("power must be nonnegative, got {q}")));
    }
    Ok(())
}

impl Link {
    pub fn new(gain: f64, noise: f64, self_noise: f64, snr_cap: f64) -> Self {
        Self {
            gain,
            noise,
            self_noise,
            snr_cap,
        }
    }

    /// Effective SINR with self-noise, before the cap.
    pub fn effective_sinr(&self, q: f64) -> Result<f64> {
        check_power(q)?;
        Ok(self.sinr_unchecked(q))
    }

    /// Rate in nats, `ln(1 + min(s(q), s_max))`.
    pub fn capped_rate(&self, q: f64) -> Result<f64> {
        check_power(q)?;
        Ok(self.rate_unchecked(q))
    }

    /// `dr/dq`; zero above the cap, left limit at exactly `q_cap`.
    pub fn rate_derivative(&self, q: f64) -> Result<f64> {
        check_power(q)?;
        if let Some(q_cap) = self.cap_power() {
            if q > q_cap {
                return Ok(0.0);
            }
        }
        let hq = self.gain * q;
        let s2 = self.noise;
        Ok(self.gain * s2 / ((s2 + self.self_noise * hq) * (s2 + (1.0 + self.self_noise) * hq)))
    }

    /// True when the SNR cap is attained at finite power (`beta * s_max < 1`).
    pub fn cap_reachable(&self) -> bool {
        self.snr_cap.is_finite() && self.self_noise * self.snr_cap < 1.0
    }

    /// Smallest power at which the cap binds, if it is reachable.
    pub fn cap_power(&self) -> Option<f64> {
        if self.cap_reachable() {
            Some(self.noise * self.snr_cap / (self.gain * (1.0 - self.self_noise * self.snr_cap)))
        } else {
            None
        }
    }

    /// Marginal rate at zero power, `h / sigma2`.
    pub fn slope_at_zero(&self) -> f64 {
        self.gain / self.noise
    }

    #[inline]
    pub(crate) fn sinr_unchecked(&self, q: f64) -> f64 {
        let hq = self.gain * q;
        hq / (self.noise + self.self_noise * hq)
    }

    #[inline]
    pub(crate) fn rate_unchecked(&self, q: f64) -> f64 {
        self.sinr_unchecked(q).min(self.snr_cap).ln_1p()
    }
}

/// Raw scenario fields, unvalidated. `gain` is row-major `K x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScenario {
    pub num_users: usize,
    pub num_tones: usize,
    pub gain: Vec<f64>,
    pub noise: Vec<f64>,
    pub self_noise: Vec<f64>,
    pub snr_cap: Vec<f64>,
    pub power_budget: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Validated, immutable problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    raw: RawScenario,
}

/// One user's view of the scenario: its weight, budget, and per-tone links.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub weight: f64,
    pub budget: f64,
    pub links: Vec<Link>,
}

fn check_len(field: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            field,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

fn check_positive(field: &'static str, v: &[f64]) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::validation(field, i, "must be finite"));
        }
        if x <= 0.0 {
            return Err(Error::validation(field, i, "must be > 0"));
        }
    }
    Ok(())
}

impl Scenario {
    /// Validates dimensions and signs. An instance with zero users is
    /// accepted (every tone stays idle); at least one tone is required.
    pub fn new(raw: RawScenario) -> Result<Self> {
        let (k, n) = (raw.num_users, raw.num_tones);
        if n == 0 {
            return Err(Error::InvalidField {
                field: "num_tones",
                reason: "must be > 0".into(),
            });
        }
        check_len("gain", &raw.gain, k * n)?;
        check_len("noise", &raw.noise, n)?;
        check_len("self_noise", &raw.self_noise, k)?;
        check_len("snr_cap", &raw.snr_cap, k)?;
        check_len("power_budget", &raw.power_budget, k)?;
        check_len("weight", &raw.weight, k)?;

        check_positive("gain", &raw.gain)?;
        check_positive("noise", &raw.noise)?;
        check_positive("power_budget", &raw.power_budget)?;
        check_positive("weight", &raw.weight)?;
        for (i, &b) in raw.self_noise.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::validation("self_noise", i, "must be finite"));
            }
            if b < 0.0 {
                return Err(Error::validation("self_noise", i, "must be >= 0"));
            }
        }
        for (i, &c) in raw.snr_cap.iter().enumerate() {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::validation("snr_cap", i, "must be > 0 or inf"));
            }
        }
        Ok(Self { raw })
    }

    pub fn num_users(&self) -> usize {
        self.raw.num_users
    }

    pub fn num_tones(&self) -> usize {
        self.raw.num_tones
    }

    pub fn gain(&self, user: usize, tone: usize) -> f64 {
        self.raw.gain[user * self.raw.num_tones + tone]
    }

    pub fn noise(&self) -> &[f64] {
        &self.raw.noise
    }

    pub fn self_noise(&self) -> &[f64] {
        &self.raw.self_noise
    }

    pub fn snr_cap(&self) -> &[f64] {
        &self.raw.snr_cap
    }

    pub fn power_budget(&self) -> &[f64] {
        &self.raw.power_budget
    }

    pub fn weight(&self) -> &[f64] {
        &self.raw.weight
    }

    pub fn link(&self, user: usize, tone: usize) -> Link {
        Link::new(
            self.gain(user, tone),
            self.raw.noise[tone],
            self.raw.self_noise[user],
            self.raw.snr_cap[user],
        )
    }

    pub fn user_profile(&self, user: usize) -> UserProfile {
        UserProfile {
            weight: self.raw.weight[user],
            budget: self.raw.power_budget[user],
            links: (0..self.num_tones()).map(|n| self.link(user, n)).collect(),
        }
    }

    pub fn raw(&self) -> &RawScenario {
        &self.raw
    }

    pub fn into_raw(self) -> RawScenario {
        self.raw
    }
}
