//! Photon emission-time densities (times in nanoseconds).
//!
//! A regular photon is emitted after a Gaussian excitation pulse followed by
//! an exponential decay, so its density is the Gaussian convolved with
//! `Exp(τ)`. Two contaminating shapes are provided:
//!
//! * `DoubleSecond`: the detected photon follows a first, undetected decay
//!   and a re-excitation, i.e. the single density convolved once more with
//!   `Exp(τ)`.
//! * `Perpetuated`: the detected photon was emitted while the excitation
//!   pulse was still on, so the atom could be excited again and the
//!   atom-photon state overwritten. Its density is the single density
//!   weighted by the remaining pulse fraction `1 − Φ((t − t₀)/σ)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, erfcx_nonneg, normal_cdf, normal_sf};

/// Gaussian FWHM / σ.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
const PERPETUATED_QUAD_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionKind {
    Single,
    DoubleSecond,
    Perpetuated,
}

/// Which density the late-arriving photon of a contaminated herald follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContaminantShape {
    #[default]
    Perpetuated,
    DoubleSecond,
}

impl ContaminantShape {
    pub fn kind(self) -> EmissionKind {
        match self {
            ContaminantShape::Perpetuated => EmissionKind::Perpetuated,
            ContaminantShape::DoubleSecond => EmissionKind::DoubleSecond,
        }
    }
}

/// Phenomenological emission-time model of the excitation/decay process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionTimeModel {
    pub pulse_fwhm_ns: f64,
    pub pulse_center_ns: f64,
    pub decay_tau_ns: f64,
    /// Fraction of heralds (before windowing) carrying a contaminating photon.
    pub double_emission_fraction: f64,
    /// Visibility of uncontaminated events.
    pub v_max: f64,
    /// Setting-independent residual error added to the QBER.
    pub q_floor: f64,
    pub contaminant: ContaminantShape,
}

impl Default for EmissionTimeModel {
    /// Calibrated against the reference window `[755, 850]` ns; see
    /// [`crate::link::calibrate`].
    fn default() -> Self {
        Self {
            pulse_fwhm_ns: 22.0,
            pulse_center_ns: super::calibrate::DEFAULT_PULSE_CENTER_NS,
            decay_tau_ns: 26.2,
            double_emission_fraction: super::calibrate::DEFAULT_DOUBLE_EMISSION_FRACTION,
            v_max: super::calibrate::DEFAULT_V_MAX,
            q_floor: super::calibrate::DEFAULT_Q_FLOOR,
            contaminant: ContaminantShape::Perpetuated,
        }
    }
}

impl EmissionTimeModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive, got {v}")))
            }
        };
        positive("pulse_fwhm_ns", self.pulse_fwhm_ns)?;
        positive("decay_tau_ns", self.decay_tau_ns)?;
        if !self.pulse_center_ns.is_finite() {
            return Err(Error::domain("pulse_center_ns must be finite"));
        }
        if !(0.0..1.0).contains(&self.double_emission_fraction) {
            return Err(Error::domain(format!(
                "double_emission_fraction {} outside [0, 1)",
                self.double_emission_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.v_max) {
            return Err(Error::domain(format!(
                "v_max {} outside [0, 1]",
                self.v_max
            )));
        }
        if !(0.0..0.5).contains(&self.q_floor) {
            return Err(Error::domain(format!(
                "q_floor {} outside [0, 0.5)",
                self.q_floor
            )));
        }
        Ok(())
    }

    pub fn pulse_sigma_ns(&self) -> f64 {
        self.pulse_fwhm_ns / FWHM_PER_SIGMA
    }

    /// Lower edge of the numerical support, five pulse widths before the center.
    pub fn support_start_ns(&self) -> f64 {
        self.pulse_center_ns - 5.0 * self.pulse_fwhm_ns
    }
}

/// Emission densities of one model with the perpetuated-photon normalization
/// precomputed.
#[derive(Debug, Clone, Copy)]
pub struct EmissionProfile {
    model: EmissionTimeModel,
    sigma: f64,
    perpetuated_norm: f64,
}

impl EmissionProfile {
    pub fn new(model: &EmissionTimeModel) -> Result<Self> {
        model.validate()?;
        let sigma = model.pulse_sigma_ns();
        let mut profile = Self {
            model: *model,
            sigma,
            perpetuated_norm: 1.0,
        };
        let mu = model.pulse_center_ns;
        // The remaining-pulse weight is negligible beyond twelve sigma.
        let z = adaptive_simpson(
            |t| profile.single(t) * normal_sf((t - mu) / sigma),
            model.support_start_ns(),
            mu + 12.0 * sigma,
            PERPETUATED_QUAD_TOL,
        );
        profile.perpetuated_norm = z;
        Ok(profile)
    }

    pub fn model(&self) -> &EmissionTimeModel {
        &self.model
    }

    pub fn density(&self, kind: EmissionKind, t: f64) -> f64 {
        match kind {
            EmissionKind::Single => self.single(t),
            EmissionKind::DoubleSecond => self.double_second(t),
            EmissionKind::Perpetuated => self.perpetuated(t),
        }
    }

    /// Probability mass of `kind` inside `[t_s, t_e]`.
    pub fn mass(&self, kind: EmissionKind, t_s: f64, t_e: f64) -> f64 {
        if t_e <= t_s {
            return 0.0;
        }
        match kind {
            EmissionKind::Single => (self.single_cdf(t_e) - self.single_cdf(t_s)).clamp(0.0, 1.0),
            EmissionKind::DoubleSecond => {
                (self.double_cdf(t_e) - self.double_cdf(t_s)).clamp(0.0, 1.0)
            }
            EmissionKind::Perpetuated => {
                let lo = t_s.max(self.model.support_start_ns());
                let hi = t_e.min(self.model.pulse_center_ns + 12.0 * self.sigma);
                let m = adaptive_simpson(|t| self.perpetuated(t), lo, hi, PERPETUATED_QUAD_TOL);
                m.clamp(0.0, 1.0)
            }
        }
    }

    fn z_u(&self, t: f64) -> (f64, f64) {
        let tau = self.model.decay_tau_ns;
        let z = t - self.model.pulse_center_ns;
        let m = z - self.sigma * self.sigma / tau;
        (z, m)
    }

    /// Exponentially modified Gaussian density.
    fn single(&self, t: f64) -> f64 {
        let tau = self.model.decay_tau_ns;
        let s = self.sigma;
        let (z, m) = self.z_u(t);
        let u = -m / (s * std::f64::consts::SQRT_2);
        if u >= 0.0 {
            0.5 / tau * (-z * z / (2.0 * s * s)).exp() * erfcx_nonneg(u)
        } else {
            (-z / tau + s * s / (2.0 * tau * tau)).exp() * normal_cdf(m / s) / tau
        }
    }

    /// Gaussian convolved with `Exp(τ) ⊛ Exp(τ)`.
    fn double_second(&self, t: f64) -> f64 {
        let tau = self.model.decay_tau_ns;
        let s = self.sigma;
        let (z, m) = self.z_u(t);
        let u = -m / (s * std::f64::consts::SQRT_2);
        let gauss_tail = s / (2.0 * PI).sqrt() * (-z * z / (2.0 * s * s)).exp();
        let v = if u >= 0.0 {
            m * 0.5 * (-z * z / (2.0 * s * s)).exp() * erfcx_nonneg(u) + gauss_tail
        } else {
            (-z / tau + s * s / (2.0 * tau * tau)).exp() * m * normal_cdf(m / s) + gauss_tail
        };
        (v / (tau * tau)).max(0.0)
    }

    fn perpetuated(&self, t: f64) -> f64 {
        let mu = self.model.pulse_center_ns;
        self.single(t) * normal_sf((t - mu) / self.sigma) / self.perpetuated_norm
    }

    // For g = h ⊛ Exp(τ): τ g' = h − g, so CDF_g = CDF_h − τ g.
    fn single_cdf(&self, t: f64) -> f64 {
        let z = t - self.model.pulse_center_ns;
        normal_cdf(z / self.sigma) - self.model.decay_tau_ns * self.single(t)
    }

    fn double_cdf(&self, t: f64) -> f64 {
        self.single_cdf(t) - self.model.decay_tau_ns * self.double_second(t)
    }
}

/// Density of `kind` at time `t` (1/ns).
pub fn emission_density(model: &EmissionTimeModel, kind: EmissionKind, t: f64) -> Result<f64> {
    Ok(EmissionProfile::new(model)?.density(kind, t))
}
