//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Command-line flags are applied on top of the file through the
//! same [`RunConfig::set`] entry point.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::keyrate::{DEFAULT_EC_EFFICIENCY, DEFAULT_FINITE_KEY_PENALTY};
use crate::link::{ContaminantShape, EmissionTimeModel, LinkParams, WindowConfig};
use crate::protocol::SettingsMap;
use crate::quantum::MeasurementConvention;
use crate::stats::WinCountMethod;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub link: LinkParams,
    pub model: EmissionTimeModel,
    pub window_start_ns: f64,
    pub window_end_ns: f64,
    pub settings: SettingsMap,
    pub convention: MeasurementConvention,
    pub seed: Option<u64>,
    pub rounds: usize,
    pub output: Option<PathBuf>,
    pub tail: f64,
    pub win_count: WinCountMethod,
    pub eps_di: f64,
    pub f_ec: f64,
    pub finite_key_penalty: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        Self {
            link: LinkParams::default(),
            model: EmissionTimeModel::default(),
            window_start_ns: w.t_s_ns(),
            window_end_ns: w.t_e_ns(),
            settings: SettingsMap::default(),
            convention: MeasurementConvention::default(),
            seed: None,
            rounds: 1000,
            output: None,
            tail: 0.03,
            win_count: WinCountMethod::AggregateFloor,
            eps_di: 1e-5,
            f_ec: DEFAULT_EC_EFFICIENCY,
            finite_key_penalty: DEFAULT_FINITE_KEY_PENALTY,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::domain(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

fn list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|v: Vec<f64>| {
        Error::domain(format!(
            "config key `{key}` needs {N} values, got {}",
            v.len()
        ))
    })
}

fn optional_prob(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 30] = [
        "seed",
        "rounds",
        "output",
        "attempt_rate_hz",
        "duty_cycle",
        "herald_efficiency",
        "efficiency_reference",
        "two_way_latency_us",
        "readout_delay_us_a",
        "readout_delay_us_b",
        "per_arm_detection_prob_a",
        "per_arm_detection_prob_b",
        "pulse_fwhm_ns",
        "pulse_center_ns",
        "decay_tau_ns",
        "double_emission_fraction",
        "v_max",
        "q_floor",
        "contaminant",
        "window_start_ns",
        "window_end_ns",
        "alpha_deg",
        "beta_deg",
        "bob_angle_sign",
        "bob_angle_offset_deg",
        "tail",
        "win_count",
        "eps_di",
        "f_ec",
        "finite_key_penalty",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = Some(num(key, value)?),
            "rounds" => self.rounds = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "attempt_rate_hz" => self.link.attempt_rate_hz = num(key, value)?,
            "duty_cycle" => self.link.duty_cycle = num(key, value)?,
            "herald_efficiency" => self.link.herald_efficiency = num(key, value)?,
            "efficiency_reference" => {
                self.link.efficiency_reference = match value {
                    "full" => None,
                    "window" => Some(WindowConfig::default()),
                    other => {
                        let [s, e] = list::<2>(key, other)?;
                        Some(WindowConfig::new(s, e)?)
                    }
                }
            }
            "two_way_latency_us" => self.link.two_way_latency_us = num(key, value)?,
            "readout_delay_us_a" => self.link.readout_delay_us_a = num(key, value)?,
            "readout_delay_us_b" => self.link.readout_delay_us_b = num(key, value)?,
            "per_arm_detection_prob_a" => {
                self.link.per_arm_detection_prob_a = optional_prob(key, value)?
            }
            "per_arm_detection_prob_b" => {
                self.link.per_arm_detection_prob_b = optional_prob(key, value)?
            }
            "pulse_fwhm_ns" => self.model.pulse_fwhm_ns = num(key, value)?,
            "pulse_center_ns" => self.model.pulse_center_ns = num(key, value)?,
            "decay_tau_ns" => self.model.decay_tau_ns = num(key, value)?,
            "double_emission_fraction" => self.model.double_emission_fraction = num(key, value)?,
            "v_max" => self.model.v_max = num(key, value)?,
            "q_floor" => self.model.q_floor = num(key, value)?,
            "contaminant" => {
                self.model.contaminant = match value {
                    "perpetuated" => ContaminantShape::Perpetuated,
                    "double_second" => ContaminantShape::DoubleSecond,
                    other => {
                        return Err(Error::domain(format!(
                            "unknown contaminant shape `{other}`"
                        )))
                    }
                }
            }
            "window_start_ns" => self.window_start_ns = num(key, value)?,
            "window_end_ns" => self.window_end_ns = num(key, value)?,
            "alpha_deg" => self.settings.alpha_deg = list::<4>(key, value)?,
            "beta_deg" => self.settings.beta_deg = list::<2>(key, value)?,
            "bob_angle_sign" => {
                self.convention = MeasurementConvention::new(
                    num(key, value)?,
                    self.convention.bob_angle_offset_deg(),
                )?
            }
            "bob_angle_offset_deg" => {
                self.convention =
                    MeasurementConvention::new(self.convention.bob_angle_sign(), num(key, value)?)?
            }
            "tail" => self.tail = num(key, value)?,
            "win_count" => {
                self.win_count = match value {
                    "paper_floor" => WinCountMethod::AggregateFloor,
                    "direct" => WinCountMethod::Direct,
                    other => {
                        return Err(Error::domain(format!("unknown win-count method `{other}`")))
                    }
                }
            }
            "eps_di" => self.eps_di = num(key, value)?,
            "f_ec" => self.f_ec = num(key, value)?,
            "finite_key_penalty" => self.finite_key_penalty = num(key, value)?,
            other => return Err(Error::domain(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides<'a, I: IntoIterator<Item = &'a str>>(
        &mut self,
        overrides: I,
    ) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::domain(format!("override `{o}` is not key=value")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn window(&self) -> Result<WindowConfig> {
        WindowConfig::new(self.window_start_ns, self.window_end_ns)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.model.validate()?;
        self.window()?;
        if !(self.tail > 0.0 && self.tail < 0.5) {
            return Err(Error::domain(format!(
                "tail {} outside (0, 0.5)",
                self.tail
            )));
        }
        Ok(())
    }

    /// Seed for simulation commands, which never fall back to a default.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::domain("a seed is required (use --seed or `seed = ...`)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# run\nseed = 7\nrounds=50\n\nalpha_deg = 1, 2, 3, 4\ncontaminant = double_second\n",
        )
        .unwrap();
        c.apply_overrides(["rounds=60", "window_start_ns=760"])
            .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.rounds, 60);
        assert_eq!(c.settings.alpha_deg, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.model.contaminant, ContaminantShape::DoubleSecond);
        assert_eq!(c.window().unwrap().t_s_ns(), 760.0);
        c.validate().unwrap();
    }

    #[test]
    fn bad_lines_report_position() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.apply_text("seed = 1\nnonsense\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            c.apply_text("\nbogus_key = 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(c.apply_overrides(["beta_deg=1"]).is_err());
        assert!(RunConfig::default().require_seed().is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("seed", "1"),
            ("rounds", "5"),
            ("output", "x.csv"),
            ("efficiency_reference", "full"),
            ("per_arm_detection_prob_a", "none"),
            ("per_arm_detection_prob_b", "0.1"),
            ("contaminant", "perpetuated"),
            ("alpha_deg", "0,0,0,0"),
            ("beta_deg", "0,0"),
            ("bob_angle_sign", "1"),
            ("win_count", "direct"),
        ];
        for key in RunConfig::KEYS {
            let value = samples
                .iter()
                .find(|(k, _)| *k == key)
                .map_or("0.5", |(_, v)| v);
            RunConfig::default()
                .set(key, value)
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
