//! Asymptotic key rates from CHSH/QBER estimates, the depolarizing-channel
//! threshold relation, anchor checks against the reported operating point and
//! a heuristic finite-size block-length estimate.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

/// Penalty constant of the finite-size heuristic, fitted once so that the
/// reported operating point needs about 1.75e5 rounds at `eps = 1e-5`.
pub const DEFAULT_FINITE_KEY_PENALTY: f64 = 11.83;
pub const DEFAULT_EC_EFFICIENCY: f64 = 1.15;

const SUPRA_QUANTUM_SLACK: f64 = 1e-9;

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "binary entropy argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateResult {
    /// Reported rate; zero when `clamped`.
    pub rate: f64,
    pub h_q: f64,
    pub chi_s: f64,
    pub clamped: bool,
}

impl KeyRateResult {
    /// `1 − h_q − chi_s`, negative values kept.
    pub fn raw_rate(&self) -> f64 {
        1.0 - self.h_q - self.chi_s
    }
}

/// One-way Devetak–Winter rate for the CHSH protocol with a single key basis.
pub fn dw_chsh_rate(s_value: f64, qber: f64) -> Result<KeyRateResult> {
    if !s_value.is_finite() || s_value <= 2.0 {
        return Err(Error::NoViolation(s_value));
    }
    if s_value > 2.0 * SQRT_2 + SUPRA_QUANTUM_SLACK {
        return Err(Error::SupraQuantum(s_value));
    }
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::domain(format!("QBER {qber} outside [0, 0.5]")));
    }
    let root = ((s_value / 2.0).powi(2) - 1.0).max(0.0).sqrt();
    let chi_s = binary_entropy(((1.0 + root) / 2.0).min(1.0))?;
    let h_q = binary_entropy(qber)?;
    let raw = 1.0 - h_q - chi_s;
    Ok(KeyRateResult {
        rate: raw.max(0.0),
        h_q,
        chi_s,
        clamped: raw < 0.0,
    })
}

/// `(S, Q)` produced by a depolarizing channel of visibility `v`.
pub fn depolarizing_relation(v: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("visibility {v} outside [0, 1]")));
    }
    Ok((2.0 * SQRT_2 * v, (1.0 - v) / 2.0))
}

pub const ANCHOR_LABEL: &str = "paper-anchored model, not a security bound";

const Q_ANCHORS: [(f64, f64); 3] = [(0.0, 1.0), (0.0779, 0.07), (0.082, 0.0)];
const S_ANCHORS: [(f64, f64); 3] = [(2.362, 0.0), (2.578, 0.07), (2.0 * SQRT_2, 1.0)];
/// Critical QBER of the single-basis protocol.
pub const ORIGINAL_PROTOCOL_CRITICAL_QBER: f64 = 0.071;
/// Critical QBER of the two-key-setting protocol.
pub const ROBUST_PROTOCOL_CRITICAL_QBER: f64 = 0.082;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorReport {
    pub modeled_rate: f64,
    pub positive: bool,
    pub original_protocol_positive: bool,
    pub label: &'static str,
}

/// Linear interpolation through `anchors`, extrapolating the end segments.
fn interpolate(anchors: &[(f64, f64)], x: f64) -> f64 {
    let seg = anchors
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(anchors.len() - 2);
    let ((x0, y0), (x1, y1)) = (anchors[seg], anchors[seg + 1]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Rate per heralded event read off the anchor table: the smaller of the
/// piecewise-linear rates in `Q` and in `S`.
pub fn robust_anchor_check(s_value: f64, qber: f64) -> AnchorReport {
    let modeled_rate = interpolate(&Q_ANCHORS, qber).min(interpolate(&S_ANCHORS, s_value));
    AnchorReport {
        modeled_rate,
        positive: modeled_rate > 0.0,
        original_protocol_positive: qber < ORIGINAL_PROTOCOL_CRITICAL_QBER && s_value > 2.0,
        label: ANCHOR_LABEL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKeyQuery {
    pub s_value: f64,
    pub q_avg: f64,
    pub eps_di: f64,
    pub f_ec: f64,
    pub penalty: f64,
}

impl FiniteKeyQuery {
    pub fn new(s_value: f64, q_avg: f64, eps_di: f64) -> Self {
        Self {
            s_value,
            q_avg,
            eps_di,
            f_ec: DEFAULT_EC_EFFICIENCY,
            penalty: DEFAULT_FINITE_KEY_PENALTY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_di > 0.0 && self.eps_di < 1.0) {
            return Err(Error::domain(format!(
                "eps_di {} outside (0, 1)",
                self.eps_di
            )));
        }
        if self.f_ec.is_nan() || self.f_ec < 1.0 {
            return Err(Error::domain(format!("f_ec {} below 1", self.f_ec)));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::domain(format!(
                "penalty {} must be finite and non-negative",
                self.penalty
            )));
        }
        Ok(())
    }
}

/// Smallest block length `n` with
/// `n · [r − (f_ec − 1) h(Q) − c √(ln(2/ε)/n)] ≥ 1`, where `r = rate_fn(S, Q)`.
/// Heuristic only.
pub fn heuristic_min_block_length<F>(q: &FiniteKeyQuery, rate_fn: F) -> Result<u64>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    q.validate()?;
    let r = rate_fn(q.s_value, q.q_avg)?;
    if r <= 0.0 {
        return Err(Error::NoPositiveKey(format!(
            "asymptotic rate {r} at S={}, Q={}",
            q.s_value, q.q_avg
        )));
    }
    let net = r - (q.f_ec - 1.0) * binary_entropy(q.q_avg)?;
    if net <= 0.0 {
        return Err(Error::NoPositiveKey(format!(
            "error-correction leakage exceeds the asymptotic rate {r}"
        )));
    }
    let k = q.penalty * (2.0 / q.eps_di).ln().sqrt();
    let enough = |n: u64| {
        let nf = n as f64;
        nf * net - k * nf.sqrt() >= 1.0
    };
    let mut hi = 1u64;
    while !enough(hi) {
        hi = hi
            .checked_mul(2)
            .filter(|&h| h < 1 << 62)
            .ok_or_else(|| Error::Numeric("block length search overflowed".into()))?;
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Ok(hi);
    }
    // invariant: !enough(lo), enough(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if enough(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Default rate function for the finite-size heuristic.
pub fn dw_rate_fn(s_value: f64, qber: f64) -> Result<f64> {
    dw_chsh_rate(s_value, qber).map(|r| r.raw_rate())
}
