//! Calibration of the emission-time model against the operating point of the
//! reference window.
//!
//! Free parameters are the pulse center, the contamination fraction, the
//! clean-event visibility and the QBER floor. They are fitted so that the
//! reference window `[755, 850]` ns accepts 27 % of two-photon events and
//! yields S = 2.578, Q = 0.0779, while the unfiltered window sits at
//! S = 2.3. The last target only fixes how strongly filtering helps; the
//! other three are measured values. The fitted constants are shipped as the
//! model defaults and `diqkd calibrate` reruns the fit.

use std::f64::consts::SQRT_2;

use super::emission::{EmissionProfile, EmissionTimeModel};
use super::window::{herald_weights, WindowConfig};
use crate::error::{Error, Result};

pub const REFERENCE_WINDOW_START_NS: f64 = 755.0;
pub const REFERENCE_WINDOW_END_NS: f64 = 850.0;

pub const DEFAULT_PULSE_CENTER_NS: f64 = 738.6772;
pub const DEFAULT_DOUBLE_EMISSION_FRACTION: f64 = 0.110011;
pub const DEFAULT_V_MAX: f64 = 0.915242;
pub const DEFAULT_Q_FLOOR: f64 = 0.033630;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub window: WindowConfig,
    pub two_photon_acceptance: f64,
    pub s_value: f64,
    pub qber: f64,
    pub s_full_window: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            two_photon_acceptance: 0.27,
            s_value: 2.578,
            qber: 0.0779,
            s_full_window: 2.3,
        }
    }
}

/// Bisection for a root of an increasing function on `[lo, hi]`.
fn bisect_increasing<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::Numeric(format!(
            "calibration target not bracketed on [{lo}, {hi}] ({flo}, {fhi})"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn weights(model: &EmissionTimeModel, w: WindowConfig) -> Result<(f64, f64)> {
    Ok(herald_weights(&EmissionProfile::new(model)?, w))
}

/// Fits pulse center, contamination fraction, `v_max` and `q_floor`,
/// starting from `start` for the remaining (fixed) parameters.
pub fn calibrate(
    start: &EmissionTimeModel,
    targets: &CalibrationTargets,
) -> Result<EmissionTimeModel> {
    let w = targets.window;
    let v_target = targets.s_value / (2.0 * SQRT_2);
    let v_full_target = targets.s_full_window / (2.0 * SQRT_2);
    if !(v_full_target > 0.0 && v_full_target < v_target && v_target <= 1.0) {
        return Err(Error::domain(
            "calibration targets need 0 < S_full < S <= 2√2",
        ));
    }
    let mut m = EmissionTimeModel {
        v_max: 1.0,
        q_floor: 0.0,
        ..*start
    };
    for _ in 0..30 {
        let prev = m;
        m.pulse_center_ns = bisect_increasing(
            |mu| {
                let (g, b) = weights(
                    &EmissionTimeModel {
                        pulse_center_ns: mu,
                        ..m
                    },
                    w,
                )?;
                Ok(g + b - targets.two_photon_acceptance)
            },
            w.t_s_ns() - 60.0,
            w.t_s_ns(),
            1e-9,
        )?;
        let full = WindowConfig::full(&m, w.t_e_ns())?;
        m.double_emission_fraction = bisect_increasing(
            |eps| {
                let trial = EmissionTimeModel {
                    double_emission_fraction: eps,
                    ..m
                };
                let (g, b) = weights(&trial, w)?;
                let (gf, bf) = weights(&trial, full)?;
                Ok((g / (g + b)) / (gf / (gf + bf)) - v_target / v_full_target)
            },
            0.0,
            0.99,
            1e-12,
        )?;
        if (m.pulse_center_ns - prev.pulse_center_ns).abs() < 1e-7
            && (m.double_emission_fraction - prev.double_emission_fraction).abs() < 1e-10
        {
            break;
        }
    }
    let (g, b) = weights(&m, w)?;
    m.v_max = v_target * (g + b) / g;
    if m.v_max > 1.0 {
        return Err(Error::Numeric(format!(
            "fitted v_max {} exceeds 1",
            m.v_max
        )));
    }
    m.q_floor = targets.qber - (1.0 - v_target) / 2.0;
    m.validate()?;
    Ok(m)
}
