//! Event-ready link: attempt clock, heralding and post-herald dead time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::emission::{EmissionProfile, EmissionTimeModel};
use super::window::{herald_weights, WindowConfig};
use crate::error::{Error, Result};

/// Link timing and efficiency parameters.
///
/// `herald_efficiency` is quoted for `efficiency_reference` (the reference
/// acceptance window by default); other windows scale it by their relative
/// two-photon acceptance. `None` means the efficiency refers to the
/// unfiltered window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub attempt_rate_hz: f64,
    pub duty_cycle: f64,
    pub herald_efficiency: f64,
    pub efficiency_reference: Option<WindowConfig>,
    pub two_way_latency_us: f64,
    pub readout_delay_us_a: f64,
    pub readout_delay_us_b: f64,
    pub per_arm_detection_prob_a: Option<f64>,
    pub per_arm_detection_prob_b: Option<f64>,
    /// Attempts without a herald before a run gives up.
    pub max_attempts_per_herald: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            attempt_rate_hz: 52_000.0,
            duty_cycle: 0.5,
            herald_efficiency: 0.49e-6,
            efficiency_reference: Some(WindowConfig::default()),
            two_way_latency_us: 7.0,
            readout_delay_us_a: 25.55,
            readout_delay_us_b: 16.7,
            per_arm_detection_prob_a: Some(5.98e-3),
            per_arm_detection_prob_b: Some(1.44e-3),
            max_attempts_per_herald: 1_000_000_000_000,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} = {v} is not a probability")))
            }
        };
        if !(self.attempt_rate_hz > 0.0 && self.attempt_rate_hz.is_finite()) {
            return Err(Error::domain("attempt_rate_hz must be positive"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(Error::domain(format!(
                "duty_cycle {} outside (0, 1]",
                self.duty_cycle
            )));
        }
        prob("herald_efficiency", self.herald_efficiency)?;
        for (name, v) in [
            ("two_way_latency_us", self.two_way_latency_us),
            ("readout_delay_us_a", self.readout_delay_us_a),
            ("readout_delay_us_b", self.readout_delay_us_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be non-negative")));
            }
        }
        if let Some(p) = self.per_arm_detection_prob_a {
            prob("per_arm_detection_prob_a", p)?;
        }
        if let Some(p) = self.per_arm_detection_prob_b {
            prob("per_arm_detection_prob_b", p)?;
        }
        if self.max_attempts_per_herald == 0 {
            return Err(Error::domain("max_attempts_per_herald must be positive"));
        }
        Ok(())
    }

    /// Seconds between consecutive attempts while the experiment is live.
    pub fn attempt_period_s(&self) -> f64 {
        1.0 / (self.attempt_rate_hz * self.duty_cycle)
    }

    /// Seconds after a herald before the next attempt: communication plus the
    /// slower of the two readouts.
    pub fn dead_time_s(&self) -> f64 {
        (self.two_way_latency_us + self.readout_delay_us_a.max(self.readout_delay_us_b)) * 1e-6
    }
}

/// Heralds per second, `attempt_rate · duty_cycle · efficiency`.
pub fn expected_event_rate(p: &LinkParams) -> f64 {
    p.attempt_rate_hz * p.duty_cycle * p.herald_efficiency
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldEvent {
    pub attempt_index: u64,
    pub herald_time_s: f64,
    /// Whether the herald carried a contaminating photon (diagnostics only).
    pub contaminated: bool,
}

impl HeraldEvent {
    pub fn herald_time_ns(&self) -> u64 {
        (self.herald_time_s * 1e9).round() as u64
    }
}

/// Per-attempt herald probability and contamination fraction for a window.
pub fn herald_probability(
    p: &LinkParams,
    m: &EmissionTimeModel,
    w: WindowConfig,
) -> Result<(f64, f64)> {
    let profile = EmissionProfile::new(m)?;
    let (g, b) = herald_weights(&profile, w);
    let reference = match p.efficiency_reference {
        Some(r) => r,
        None => WindowConfig::full(m, w.t_e_ns())?,
    };
    let (gr, br) = herald_weights(&profile, reference);
    if gr + br <= 0.0 {
        return Err(Error::UndefinedWindow {
            t_s_ns: reference.t_s_ns(),
            t_e_ns: reference.t_e_ns(),
        });
    }
    let prob = (p.herald_efficiency * (g + b) / (gr + br)).min(1.0);
    let contaminated = if g + b > 0.0 { b / (g + b) } else { 0.0 };
    Ok((prob, contaminated))
}

/// Simulates the herald stream until `n_heralds` entanglement events.
///
/// Failed attempts are skipped in bulk by drawing their geometric count, which
/// is equivalent to ticking every attempt.
pub fn run_link(
    p: &LinkParams,
    m: &EmissionTimeModel,
    w: WindowConfig,
    n_heralds: usize,
    seed: u64,
) -> Result<Vec<HeraldEvent>> {
    p.validate()?;
    if n_heralds == 0 {
        return Err(Error::domain("n_heralds must be at least 1"));
    }
    let (prob, contaminated_frac) = herald_probability(p, m, w)?;
    if prob <= 0.0 {
        return Err(Error::ProgressTimeout {
            attempts: p.max_attempts_per_herald,
        });
    }
    let period = p.attempt_period_s();
    let dead = p.dead_time_s();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failures = Geometric::new(prob).map_err(|e| Error::Numeric(e.to_string()))?;

    let mut events = Vec::with_capacity(n_heralds);
    let mut next_attempt = 0u64;
    let mut next_time = 0.0f64;
    while events.len() < n_heralds {
        let skipped = failures.sample(&mut rng);
        if skipped >= p.max_attempts_per_herald {
            return Err(Error::ProgressTimeout {
                attempts: p.max_attempts_per_herald,
            });
        }
        let attempt_index = next_attempt + skipped;
        let herald_time_s = next_time + skipped as f64 * period;
        let contaminated = rng.random::<f64>() < contaminated_frac;
        events.push(HeraldEvent {
            attempt_index,
            herald_time_s,
            contaminated,
        });
        next_attempt = attempt_index + 1;
        next_time = herald_time_s + period + dead;
    }
    Ok(events)
}
