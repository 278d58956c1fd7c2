//! Acceptance-window model: how the start of the two-photon window trades
//! herald rate against state quality.

use std::f64::consts::SQRT_2;

use super::emission::{EmissionKind, EmissionProfile, EmissionTimeModel};
use crate::error::{Error, Result};
use crate::numeric::golden_section_max;

/// Coarse optimizer grid step (ns).
const COARSE_STEP_NS: f64 = 1.0;
/// Golden-section bracket width at termination (ns).
const REFINE_TOL_NS: f64 = 0.01;
/// Relative margin a candidate must beat the incumbent by; ties go to the
/// earlier window start.
const TIE_TOL: f64 = 1e-12;

/// Two-photon acceptance window `[t_s, t_e]` in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    t_s_ns: f64,
    t_e_ns: f64,
}

impl WindowConfig {
    pub fn new(t_s_ns: f64, t_e_ns: f64) -> Result<Self> {
        if !(t_s_ns.is_finite() && t_e_ns.is_finite()) || t_s_ns >= t_e_ns {
            return Err(Error::domain(format!(
                "window start {t_s_ns} must precede end {t_e_ns}"
            )));
        }
        Ok(Self { t_s_ns, t_e_ns })
    }

    pub fn t_s_ns(&self) -> f64 {
        self.t_s_ns
    }

    pub fn t_e_ns(&self) -> f64 {
        self.t_e_ns
    }

    /// Window opening at the start of the model's support and closing at `t_e`.
    pub fn full(model: &EmissionTimeModel, t_e_ns: f64) -> Result<Self> {
        Self::new(model.support_start_ns().min(t_e_ns - 1.0), t_e_ns)
    }
}

impl Default for WindowConfig {
    /// The 95 ns reference window ending at 850 ns.
    fn default() -> Self {
        Self {
            t_s_ns: super::calibrate::REFERENCE_WINDOW_START_NS,
            t_e_ns: super::calibrate::REFERENCE_WINDOW_END_NS,
        }
    }
}

/// Fraction of clean (`accept_good`) and contaminated (`accept_bad`) heralds
/// whose two photons both fall inside the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowAcceptance {
    pub accept_good: f64,
    pub accept_bad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowCurvePoint {
    pub t_s_ns: f64,
    pub s_value: f64,
    pub qber: f64,
    pub relative_rate: f64,
    pub key_per_time: f64,
}

pub(crate) fn acceptance_with(profile: &EmissionProfile, w: WindowConfig) -> WindowAcceptance {
    let contaminant = profile.model().contaminant.kind();
    let single = profile.mass(EmissionKind::Single, w.t_s_ns, w.t_e_ns);
    let other = profile.mass(contaminant, w.t_s_ns, w.t_e_ns);
    WindowAcceptance {
        accept_good: single * single,
        accept_bad: single * other,
    }
}

/// Mixture weights `(g, b)` of accepted clean and contaminated heralds.
pub(crate) fn herald_weights(profile: &EmissionProfile, w: WindowConfig) -> (f64, f64) {
    let eps = profile.model().double_emission_fraction;
    let acc = acceptance_with(profile, w);
    ((1.0 - eps) * acc.accept_good, eps * acc.accept_bad)
}

pub fn window_acceptance(model: &EmissionTimeModel, w: WindowConfig) -> Result<WindowAcceptance> {
    Ok(acceptance_with(&EmissionProfile::new(model)?, w))
}

fn visibility_from_weights(v_max: f64, g: f64, b: f64, w: WindowConfig) -> Result<f64> {
    if g + b <= 0.0 {
        return Err(Error::UndefinedWindow {
            t_s_ns: w.t_s_ns,
            t_e_ns: w.t_e_ns,
        });
    }
    Ok(v_max * g / (g + b))
}

/// Visibility of accepted heralds; contaminated ones contribute white noise.
pub fn effective_visibility(model: &EmissionTimeModel, w: WindowConfig) -> Result<f64> {
    let profile = EmissionProfile::new(model)?;
    let (g, b) = herald_weights(&profile, w);
    visibility_from_weights(model.v_max, g, b, w)
}

/// Total accepted fraction `g + b` of two-photon events.
pub fn two_photon_acceptance(model: &EmissionTimeModel, w: WindowConfig) -> Result<f64> {
    let (g, b) = herald_weights(&EmissionProfile::new(model)?, w);
    Ok(g + b)
}

/// Depolarizing-line CHSH value and QBER for an effective visibility.
pub fn chsh_and_qber(model: &EmissionTimeModel, v_eff: f64) -> (f64, f64) {
    (2.0 * SQRT_2 * v_eff, (1.0 - v_eff) / 2.0 + model.q_floor)
}

struct Evaluator<'a, F> {
    profile: EmissionProfile,
    t_e: f64,
    full_rate: f64,
    rate_fn: &'a F,
}

impl<'a, F: Fn(f64, f64) -> f64> Evaluator<'a, F> {
    fn new(model: &EmissionTimeModel, t_e: f64, rate_fn: &'a F) -> Result<Self> {
        let profile = EmissionProfile::new(model)?;
        let full = WindowConfig::full(model, t_e)?;
        let (g, b) = herald_weights(&profile, full);
        if g + b <= 0.0 {
            return Err(Error::UndefinedWindow {
                t_s_ns: full.t_s_ns,
                t_e_ns: t_e,
            });
        }
        Ok(Self {
            profile,
            t_e,
            full_rate: g + b,
            rate_fn,
        })
    }

    fn point(&self, t_s: f64) -> Result<WindowCurvePoint> {
        let w = WindowConfig::new(t_s, self.t_e)?;
        let (g, b) = herald_weights(&self.profile, w);
        let model = self.profile.model();
        let v_eff = visibility_from_weights(model.v_max, g, b, w)?;
        let (s, q) = chsh_and_qber(model, v_eff);
        let relative_rate = ((g + b) / self.full_rate).min(1.0);
        Ok(WindowCurvePoint {
            t_s_ns: t_s,
            s_value: s,
            qber: q,
            relative_rate,
            key_per_time: relative_rate * (self.rate_fn)(s, q).max(0.0),
        })
    }

    /// Key per unit time, zero where the window accepts nothing.
    fn objective(&self, t_s: f64) -> f64 {
        self.point(t_s).map(|p| p.key_per_time).unwrap_or(0.0)
    }
}

/// Evaluates the window trade-off at each start time of an ascending grid.
pub fn window_scan<F: Fn(f64, f64) -> f64>(
    model: &EmissionTimeModel,
    t_s_grid: &[f64],
    t_e_ns: f64,
    rate_fn: &F,
) -> Result<Vec<WindowCurvePoint>> {
    if t_s_grid.is_empty() {
        return Err(Error::domain("empty t_s grid"));
    }
    if t_s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("t_s grid must be strictly ascending"));
    }
    let eval = Evaluator::new(model, t_e_ns, rate_fn)?;
    t_s_grid.iter().map(|&t| eval.point(t)).collect()
}

fn better(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + TIE_TOL * incumbent.abs().max(1e-300)
}

/// Window start maximizing key per unit time within `bounds`.
pub fn optimize_window<F: Fn(f64, f64) -> f64>(
    model: &EmissionTimeModel,
    t_e_ns: f64,
    rate_fn: &F,
    bounds: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = bounds;
    if !(lo < hi && hi < t_e_ns) {
        return Err(Error::domain(format!(
            "search bounds ({lo}, {hi}) must be ordered and below t_e = {t_e_ns}"
        )));
    }
    let eval = Evaluator::new(model, t_e_ns, rate_fn)?;

    let steps = ((hi - lo) / COARSE_STEP_NS).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|i| lo + i as f64 * COARSE_STEP_NS)
        .collect();
    if *grid.last().unwrap() < hi {
        grid.push(hi);
    }
    let mut best_t = grid[0];
    let mut best_v = eval.objective(best_t);
    for &t in &grid[1..] {
        let v = eval.objective(t);
        if better(v, best_v) {
            best_t = t;
            best_v = v;
        }
    }
    if best_v <= 0.0 {
        return Err(Error::NoPositiveKey(format!(
            "key rate is non-positive for every window start in [{lo}, {hi}]"
        )));
    }

    let a = (best_t - COARSE_STEP_NS).max(lo);
    let b = (best_t + COARSE_STEP_NS).min(hi);
    let (t_ref, v_ref) = golden_section_max(|t| eval.objective(t), a, b, REFINE_TOL_NS);
    if better(v_ref, best_v) {
        Ok(t_ref)
    } else {
        Ok(best_t)
    }
}
