//! Bayesian worst-case estimates for the CHSH winning probability and the
//! QBERs, the incomplete-beta numerics behind them, and the sinusoidal
//! visibility fit.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::protocol::{estimate_bell, CorrelationTable, CHSH_CELLS, KEY_CELLS};

const CF_TOL: f64 = 1e-15;
const CF_MAX_ITER: usize = 10_000;
const CF_TINY: f64 = 1e-300;
const INV_TOL: f64 = 1e-13;
const INV_MAX_ITER: usize = 300;

/// Stirling remainder `ln Γ(z) − [(z − ½) ln z − z + ½ ln 2π]`.
fn stirling_delta(z: f64) -> f64 {
    if z < 10.0 {
        return libm::lgamma(z) - ((z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln());
    }
    let r = 1.0 / z;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0
                - r2 * (1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * 691.0 / 360360.0)))))
}

/// `a ln(x/x0)` with `x0 = a/(a+b)`, kept accurate when `x ≈ x0`.
fn scaled_log_ratio(a: f64, x: f64, x0: f64) -> f64 {
    let d = (x - x0) / x0;
    if d.abs() < 0.5 {
        a * d.ln_1p()
    } else {
        a * (x / x0).ln()
    }
}

/// `ln[x^a (1−x)^b / B(a, b)]`, arranged to avoid cancellation between large
/// log-gamma values.
fn ln_front(a: f64, b: f64, x: f64) -> f64 {
    let s = a + b;
    scaled_log_ratio(a, x, a / s) + scaled_log_ratio(b, 1.0 - x, b / s) + 0.5 * (a * b / s).ln()
        - 0.5 * (2.0 * PI).ln()
        - (stirling_delta(a) + stirling_delta(b) - stirling_delta(s))
}

/// Continued fraction for `I_x(a, b)` (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOL {
            return Ok(h);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}"
    )))
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::domain(format!(
            "beta shapes must be positive, got ({a}, {b})"
        )));
    }
    Ok(())
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x = {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front = ln_front(a, b, x).exp();
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x)? / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x)? / b
    };
    Ok(v.clamp(0.0, 1.0))
}

fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    ln_front(a, b, x).exp() / (x * (1.0 - x))
}

/// Quantile of `Beta(a, b)`: Newton steps kept inside a shrinking bisection
/// bracket.
pub fn beta_inv_cdf(a: f64, b: f64, p: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = (a / (a + b)).clamp(1e-12, 1.0 - 1e-12);
    for _ in 0..INV_MAX_ITER {
        let f = reg_inc_beta(a, b, x)? - p;
        if f.abs() < INV_TOL {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < f64::EPSILON * x.max(1e-300) {
            return Ok(x);
        }
        let pdf = beta_pdf(a, b, x);
        let newton = x - f / pdf;
        x = if pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numeric(format!(
        "beta quantile did not converge for a={a}, b={b}, p={p}"
    )))
}

/// `Beta(a, b)` shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPosterior {
    pub a: f64,
    pub b: f64,
}

impl BetaPosterior {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        beta_inv_cdf(self.a, self.b, p)
    }
}

/// Uniform prior updated with `successes` out of `total` Bernoulli trials.
pub fn posterior_from_counts(successes: u64, total: u64) -> Result<BetaPosterior> {
    if successes > total {
        return Err(Error::domain(format!(
            "{successes} successes out of {total} trials"
        )));
    }
    Ok(BetaPosterior {
        a: successes as f64 + 1.0,
        b: (total - successes) as f64 + 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WinCountMethod {
    /// `⌊N · (S + 4)/8⌋` from the aggregate CHSH value.
    #[default]
    AggregateFloor,
    /// Rounds that actually won the CHSH game.
    Direct,
}

/// Number of CHSH rounds counted as wins, with the total it refers to.
pub fn chsh_win_count(t: &CorrelationTable, method: WinCountMethod) -> Result<(u64, u64)> {
    t.validate()?;
    t.require(&CHSH_CELLS)?;
    let n_chsh: u64 = CHSH_CELLS.iter().map(|&(x, y)| t.n[x][y]).sum();
    let wins = match method {
        WinCountMethod::AggregateFloor => {
            // Only the CHSH cells enter S; key cells may be empty here.
            let s = chsh_only_s(t);
            (n_chsh as f64 * (s + 4.0) / 8.0).floor() as u64
        }
        // (2,1) wins on equal outputs, the other three cells on different ones.
        WinCountMethod::Direct => t.n_same[2][1] + t.n_diff(2, 0) + t.n_diff(3, 0) + t.n_diff(3, 1),
    };
    Ok((wins, n_chsh))
}

fn chsh_only_s(t: &CorrelationTable) -> f64 {
    if KEY_CELLS.iter().all(|&(x, y)| t.n[x][y] > 0) {
        if let Ok(est) = estimate_bell(t) {
            return est.s_value;
        }
    }
    let e = |x: usize, y: usize| crate::protocol::cell_correlator(t, x, y);
    e(2, 1) - e(2, 0) - e(3, 0) - e(3, 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCaseBounds {
    pub s_min: f64,
    pub q0_max: f64,
    pub q1_max: f64,
    pub tail: f64,
    pub win: BetaPosterior,
    pub q0: BetaPosterior,
    pub q1: BetaPosterior,
}

/// Critical values exceeded (for S) or undercut (for the QBERs) with
/// posterior probability `1 − tail`.
pub fn worst_case_bounds(
    t: &CorrelationTable,
    tail: f64,
    method: WinCountMethod,
) -> Result<WorstCaseBounds> {
    if !(tail > 0.0 && tail < 0.5) {
        return Err(Error::domain(format!("tail {tail} outside (0, 0.5)")));
    }
    t.require(&KEY_CELLS)?;
    let (wins, n_chsh) = chsh_win_count(t, method)?;
    let win = posterior_from_counts(wins, n_chsh)?;
    let q0 = posterior_from_counts(t.n_same[0][0], t.n[0][0])?;
    let q1 = posterior_from_counts(t.n_same[1][1], t.n[1][1])?;
    Ok(WorstCaseBounds {
        s_min: 8.0 * win.quantile(tail)? - 4.0,
        q0_max: q0.quantile(1.0 - tail)?,
        q1_max: q1.quantile(1.0 - tail)?,
        tail,
        win,
        q0,
        q1,
    })
}

/// Least-squares amplitude `V` of `E ≈ −V cos 2Δ`.
pub fn fit_visibility(e_values: &[f64], delta_deg: &[f64]) -> Result<f64> {
    if e_values.len() != delta_deg.len() || e_values.len() < 2 {
        return Err(Error::domain(
            "need at least two (E, Δ) pairs of equal length",
        ));
    }
    let (num, den) = e_values
        .iter()
        .zip(delta_deg)
        .fold((0.0, 0.0), |(num, den), (&e, &d)| {
            let c = (2.0 * d).to_radians().cos();
            (num + e * c, den + c * c)
        });
    if den < 1e-24 {
        return Err(Error::domain(
            "degenerate fit: cos 2Δ vanishes at every point",
        ));
    }
    Ok(-num / den)
}

/// Visibility fits for the Y = 0 and Y = 1 rows of a table, using all four
/// Alice settings of each row.
pub fn fit_row_visibilities(
    t: &CorrelationTable,
    settings: &crate::protocol::SettingsMap,
) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (y, v) in out.iter_mut().enumerate() {
        let cells: Vec<usize> = (0..4).filter(|&x| t.n[x][y] > 0).collect();
        let e: Vec<f64> = cells
            .iter()
            .map(|&x| crate::protocol::cell_correlator(t, x, y))
            .collect();
        let d: Vec<f64> = cells
            .iter()
            .map(|&x| settings.alpha_deg[x] - settings.beta_deg[y])
            .collect();
        *v = fit_visibility(&e, &d)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, Distribution};

    fn reference_table() -> CorrelationTable {
        CorrelationTable {
            n: [[448, 408], [425, 412], [389, 403], [434, 423]],
            n_same: [[35, 198], [205, 32], [78, 326], [73, 64]],
        }
    }

    /// ln Γ(n) for integer n by direct summation.
    fn ln_gamma_int(n: u64) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for k in 1..n {
            let y = (k as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// `I_x(a, b) = Σ_{j=a}^{a+b−1} C(a+b−1, j) x^j (1−x)^{a+b−1−j}` for
    /// integer shapes: the binomial tail identity, summed in log space.
    fn binomial_tail_oracle(a: u64, b: u64, x: f64) -> f64 {
        let n = a + b - 1;
        let term = |j: u64| {
            let ln_c = ln_gamma_int(n + 1) - ln_gamma_int(j + 1) - ln_gamma_int(n - j + 1);
            (ln_c + j as f64 * x.ln() + (n - j) as f64 * (-x).ln_1p()).exp()
        };
        let upper: f64 = (a..=n).map(term).sum();
        if upper < 0.5 {
            upper
        } else {
            1.0 - (0..a).map(term).sum::<f64>()
        }
    }

    #[test]
    fn incomplete_beta_trivial_cases() {
        for x in [0.0, 0.1, 0.37, 0.9, 1.0] {
            assert!((reg_inc_beta(1.0, 1.0, x).unwrap() - x).abs() < 1e-15);
        }
        assert_eq!(reg_inc_beta(3.5, 2.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(3.5, 2.0, 1.0).unwrap(), 1.0);
        for x in [0.01f64, 0.2, 0.5, 0.93] {
            let arcsine = 2.0 / PI * x.sqrt().asin();
            assert!((reg_inc_beta(0.5, 0.5, x).unwrap() - arcsine).abs() < 1e-13);
        }
        // 40-digit reference
        assert!(
            (reg_inc_beta(1356.0, 295.0, 0.82).unwrap() - 0.438_994_382_447_197_5).abs() < 2e-13
        );
        assert!(reg_inc_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_inc_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn incomplete_beta_matches_binomial_oracle() {
        let frozen = binomial_tail_oracle(36, 414, 0.08);
        assert!((frozen - 0.519418432868889).abs() < 1e-12, "{frozen}");
        for (a, b) in [(36u64, 414u64), (33, 381), (1356, 295), (2, 3), (10, 10)] {
            for x in [0.01, 0.05, 0.08, 0.1, 0.3, 0.5, 0.8, 0.82, 0.95] {
                let got = reg_inc_beta(a as f64, b as f64, x).unwrap();
                let want = binomial_tail_oracle(a, b, x);
                assert!((got - want).abs() < 1e-12, "({a},{b},{x}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn inverse_examples() {
        assert!((beta_inv_cdf(1.0, 1.0, 0.3).unwrap() - 0.3).abs() < 1e-12);
        let x = beta_inv_cdf(1356.0, 295.0, 0.03).unwrap();
        assert!((x - 0.80320).abs() < 5e-4, "{x}");
        assert!((8.0 * x - 4.0 - 2.4256).abs() < 3e-3);
        let q = beta_inv_cdf(36.0, 414.0, 0.97).unwrap();
        assert!((q - 0.105547540750967).abs() < 1e-9, "{q}");
        assert!(beta_inv_cdf(1.0, 1.0, 0.0).is_err());
        assert!(beta_inv_cdf(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_round_trip_grid() {
        for (a, b) in [(1.0, 1.0), (36.0, 414.0), (1356.0, 295.0)] {
            let mut prev = 0.0;
            for i in 1..=99 {
                let p = i as f64 / 100.0;
                let x = beta_inv_cdf(a, b, p).unwrap();
                assert!((reg_inc_beta(a, b, x).unwrap() - p).abs() < 1e-9);
                assert!(x > prev, "quantile not increasing at p={p}");
                prev = x;
            }
        }
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(
            posterior_from_counts(0, 0).unwrap(),
            BetaPosterior { a: 1.0, b: 1.0 }
        );
        assert_eq!(
            posterior_from_counts(1355, 1649).unwrap(),
            BetaPosterior {
                a: 1356.0,
                b: 295.0
            }
        );
        assert_eq!(
            posterior_from_counts(35, 448).unwrap(),
            BetaPosterior { a: 36.0, b: 414.0 }
        );
        assert!(posterior_from_counts(5, 4).is_err());
    }

    #[test]
    fn posterior_mean_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (s, n) in [(0u64, 3u64), (2, 5), (7, 10)] {
            let post = posterior_from_counts(s, n).unwrap();
            assert!((post.mean() - (s + 1) as f64 / (n + 2) as f64).abs() < 1e-15);
            let dist = Beta::new(post.a, post.b).unwrap();
            let draws = 200_000;
            let mc: f64 = (0..draws).map(|_| dist.sample(&mut rng)).sum::<f64>() / draws as f64;
            // standard error of the MC mean is below 1e-3 for these shapes
            assert!((mc - post.mean()).abs() < 5e-3, "({s},{n}): {mc}");
        }
    }

    #[test]
    fn win_counts() {
        let t = reference_table();
        assert_eq!(
            chsh_win_count(&t, WinCountMethod::AggregateFloor).unwrap(),
            (1355, 1649)
        );
        assert_eq!(
            chsh_win_count(&t, WinCountMethod::Direct).unwrap(),
            (1357, 1649)
        );
        let sym = CorrelationTable {
            n: [[10; 2]; 4],
            n_same: [[0; 2]; 4],
        };
        assert_eq!(
            chsh_win_count(&sym, WinCountMethod::AggregateFloor).unwrap(),
            chsh_win_count(&sym, WinCountMethod::Direct).unwrap()
        );
    }

    #[test]
    fn reference_table_worst_case() {
        let w =
            worst_case_bounds(&reference_table(), 0.03, WinCountMethod::AggregateFloor).unwrap();
        assert!((w.s_min - 2.4256).abs() < 3e-3, "{}", w.s_min);
        assert!((w.q0_max - 0.105547540750967).abs() < 1e-9);
        assert!((w.q1_max - 0.106367197517266).abs() < 1e-9);
        assert_eq!(
            w.win,
            BetaPosterior {
                a: 1356.0,
                b: 295.0
            }
        );
        assert_eq!(w.q1, BetaPosterior { a: 33.0, b: 381.0 });
    }

    #[test]
    fn worst_case_limits_and_scaling() {
        let t = reference_table();
        let est = estimate_bell(&t).unwrap();
        let near_median = worst_case_bounds(&t, 0.4999, WinCountMethod::AggregateFloor).unwrap();
        assert!((near_median.s_min - est.s_value).abs() < 0.01);
        let base = worst_case_bounds(&t, 0.03, WinCountMethod::AggregateFloor).unwrap();
        let doubled =
            worst_case_bounds(&t.scaled(2), 0.03, WinCountMethod::AggregateFloor).unwrap();
        assert!(doubled.s_min > base.s_min);
        assert!(worst_case_bounds(&t, 0.5, WinCountMethod::AggregateFloor).is_err());
    }

    #[test]
    fn s_min_nondecreasing_in_wins() {
        let mut prev = f64::NEG_INFINITY;
        for wins in (1200..=1600).step_by(25) {
            let post = posterior_from_counts(wins, 1649).unwrap();
            let s = 8.0 * post.quantile(0.03).unwrap() - 4.0;
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn visibility_fits() {
        let v0 =
            fit_visibility(&[-0.599, -0.844, -0.664, -0.035], &[-22.5, 0.0, 22.5, 45.0]).unwrap();
        assert!((v0 - 0.869).abs() < 1e-3, "{v0}");
        let v1 = fit_visibility(
            &[0.618, -0.029, -0.697, -0.845],
            &[-67.5, -45.0, -22.5, 0.0],
        )
        .unwrap();
        assert!((v1 - 0.888).abs() < 1e-3, "{v1}");
        let d = [-30.0, 0.0, 10.0, 50.0];
        let e: Vec<f64> = d
            .iter()
            .map(|x: &f64| -(2.0 * x).to_radians().cos())
            .collect();
        assert!((fit_visibility(&e, &d).unwrap() - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = e.iter().map(|v| 0.4 * v).collect();
        assert!((fit_visibility(&scaled, &d).unwrap() - 0.4).abs() < 1e-12);
        assert!(fit_visibility(&[0.1, 0.2], &[45.0, -45.0]).is_err());
        assert!(fit_visibility(&[0.1], &[0.0]).is_err());

        let rows =
            fit_row_visibilities(&reference_table(), &crate::protocol::SettingsMap::default())
                .unwrap();
        assert!(
            (rows[0] - 0.869).abs() < 2e-3 && (rows[1] - 0.888).abs() < 2e-3,
            "{rows:?}"
        );
    }
}
