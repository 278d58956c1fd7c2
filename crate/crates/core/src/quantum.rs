//! Two-qubit state and readout model.
//!
//! States live in the z basis ordered (↑↑, ↑↓, ↓↑, ↓↓). A readout with
//! polarization angle γ and phase φ leaves the atom in the trap iff it is
//! projected onto `e^{iφ} cos γ |↑⟩_x − sin γ |↓⟩_x`; that outcome is
//! reported as `1`, ionization as `0`.

use nalgebra::{Complex, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const MATRIX_TOL: f64 = 1e-12;
const POSITIVITY_TOL: f64 = 1e-10;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Readout polarization: γ in degrees, φ in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutSetting {
    gamma_deg: f64,
    phi_rad: f64,
}

impl ReadoutSetting {
    pub fn new(gamma_deg: f64, phi_rad: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&gamma_deg) {
            return Err(Error::domain(format!(
                "gamma {gamma_deg}° outside [-90, 90]"
            )));
        }
        if !(0.0..2.0 * PI).contains(&phi_rad) {
            return Err(Error::domain(format!("phi {phi_rad} outside [0, 2π)")));
        }
        Ok(Self { gamma_deg, phi_rad })
    }

    /// Setting with φ = 0.
    pub fn angle(gamma_deg: f64) -> Result<Self> {
        Self::new(gamma_deg, 0.0)
    }

    pub fn gamma_deg(&self) -> f64 {
        self.gamma_deg
    }

    pub fn phi_rad(&self) -> f64 {
        self.phi_rad
    }
}

/// How Bob's nominal readout angle maps onto the projector that is applied.
///
/// The effective angle is `bob_angle_sign · β + bob_angle_offset_deg`. The
/// default (−1, 90°) reproduces the measured correlation structure
/// `E(α, β) = −V cos 2(α − β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConvention {
    bob_angle_sign: f64,
    bob_angle_offset_deg: f64,
}

impl MeasurementConvention {
    pub fn new(bob_angle_sign: i8, bob_angle_offset_deg: f64) -> Result<Self> {
        if bob_angle_sign != 1 && bob_angle_sign != -1 {
            return Err(Error::domain("bob_angle_sign must be +1 or -1"));
        }
        Ok(Self {
            bob_angle_sign: f64::from(bob_angle_sign),
            bob_angle_offset_deg,
        })
    }

    pub fn bob_angle_sign(&self) -> i8 {
        self.bob_angle_sign as i8
    }

    pub fn bob_angle_offset_deg(&self) -> f64 {
        self.bob_angle_offset_deg
    }

    fn bob_gamma_deg(&self, beta_deg: f64) -> f64 {
        self.bob_angle_sign * beta_deg + self.bob_angle_offset_deg
    }
}

impl Default for MeasurementConvention {
    fn default() -> Self {
        Self {
            bob_angle_sign: -1.0,
            bob_angle_offset_deg: 90.0,
        }
    }
}

/// Validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<C64>,
    visibility_tag: Option<f64>,
}

impl TwoQubitState {
    /// Wraps `rho` after checking Hermiticity, unit trace and positivity.
    pub fn from_density_matrix(rho: Matrix4<C64>) -> Result<Self> {
        let herm_err = (rho - rho.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm_err > MATRIX_TOL {
            return Err(Error::domain(format!(
                "density matrix not Hermitian (residual {herm_err:e})"
            )));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > MATRIX_TOL || tr.im.abs() > MATRIX_TOL {
            return Err(Error::domain(format!("density matrix trace {tr} != 1")));
        }
        let min_eig = SymmetricEigen::new(rho).eigenvalues.min();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::domain(format!(
                "density matrix has eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self {
            rho,
            visibility_tag: None,
        })
    }

    pub fn rho(&self) -> &Matrix4<C64> {
        &self.rho
    }

    pub fn visibility_tag(&self) -> Option<f64> {
        self.visibility_tag
    }

    /// ⟨Ψ⁺|ρ|Ψ⁺⟩.
    pub fn fidelity_psi_plus(&self) -> f64 {
        let v = psi_plus_vector();
        (v.adjoint() * self.rho * v)[(0, 0)].re
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let ev = SymmetricEigen::new(self.rho).eigenvalues;
        [ev[0], ev[1], ev[2], ev[3]]
    }
}

fn psi_plus_vector() -> Vector4<C64> {
    Vector4::new(c(0.0), c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2), c(0.0))
}

/// `(|↑↓⟩ + |↓↑⟩)/√2` as a density matrix.
pub fn psi_plus() -> TwoQubitState {
    let v = psi_plus_vector();
    TwoQubitState {
        rho: v * v.adjoint(),
        visibility_tag: Some(1.0),
    }
}

/// `V |Ψ⁺⟩⟨Ψ⁺| + (1 − V) I/4`.
pub fn werner(visibility: f64) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::domain(format!(
            "visibility {visibility} outside [0, 1]"
        )));
    }
    let pure = psi_plus().rho;
    let rho = pure * c(visibility) + Matrix4::identity() * c((1.0 - visibility) / 4.0);
    Ok(TwoQubitState {
        rho,
        visibility_tag: Some(visibility),
    })
}

fn dark_state(gamma_deg: f64, phi_rad: f64) -> Vector2<C64> {
    let g = gamma_deg.to_radians();
    let up_x = Vector2::new(c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2));
    let down_x = Vector2::new(c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2));
    up_x * (C64::from_polar(1.0, phi_rad) * g.cos()) - down_x * c(g.sin())
}

fn projector_raw(gamma_deg: f64, phi_rad: f64) -> Matrix2<C64> {
    let d = dark_state(gamma_deg, phi_rad);
    d * d.adjoint()
}

/// Projector onto the state that survives the readout (outcome 1).
pub fn readout_projector(setting: ReadoutSetting) -> Matrix2<C64> {
    projector_raw(setting.gamma_deg, setting.phi_rad)
}

/// Joint distribution `p[a][b]` of the two readout outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeDistribution {
    pub p: [[f64; 2]; 2],
}

impl OutcomeDistribution {
    pub fn uniform() -> Self {
        Self { p: [[0.25; 2]; 2] }
    }

    /// Maps a uniform variate in [0, 1) onto an outcome pair.
    pub fn sample(&self, u: f64) -> (u8, u8) {
        let mut acc = 0.0;
        for (a, row) in self.p.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return (a as u8, b as u8);
                }
            }
        }
        // u within rounding of 1: last cell with non-zero weight
        let mut last = (1, 1);
        for (a, row) in self.p.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    last = (a as u8, b as u8);
                }
            }
        }
        last
    }
}

/// Born-rule distribution `Tr[(Π_a ⊗ Π_b) ρ]`.
pub fn joint_outcome_probs(
    state: &TwoQubitState,
    alice: ReadoutSetting,
    bob: ReadoutSetting,
    conv: MeasurementConvention,
) -> Result<OutcomeDistribution> {
    let tr = state.rho.trace();
    if (tr.re - 1.0).abs() > MATRIX_TOL {
        return Err(Error::domain(format!("state not normalized (trace {tr})")));
    }
    let pa1 = readout_projector(alice);
    let pb1 = projector_raw(conv.bob_gamma_deg(bob.gamma_deg), bob.phi_rad);
    let id = Matrix2::<C64>::identity();
    let pa = [id - pa1, pa1];
    let pb = [id - pb1, pb1];
    let mut p = [[0.0; 2]; 2];
    for (a, proj_a) in pa.iter().enumerate() {
        for (b, proj_b) in pb.iter().enumerate() {
            let op = proj_a.kronecker(proj_b);
            p[a][b] = (op * state.rho).trace().re.max(0.0);
        }
    }
    let total: f64 = p.iter().flatten().sum();
    for v in p.iter_mut().flatten() {
        *v /= total;
    }
    Ok(OutcomeDistribution { p })
}

/// `E = p₁₁ + p₀₀ − p₀₁ − p₁₀`.
pub fn correlator(d: &OutcomeDistribution) -> f64 {
    d.p[1][1] + d.p[0][0] - d.p[0][1] - d.p[1][0]
}

/// Lower bound on the atom-photon fidelity from the mean fitted visibility,
/// accounting for the third ground-state level: `1/6 + 5/6 · mean(Vis)`.
pub fn fidelity_lower_bound(visibilities: &[f64]) -> Result<f64> {
    if visibilities.is_empty() {
        return Err(Error::domain("no visibilities given"));
    }
    if let Some(v) = visibilities.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("visibility {v} outside [0, 1]")));
    }
    let mean = visibilities.iter().sum::<f64>() / visibilities.len() as f64;
    Ok(1.0 / 6.0 + 5.0 / 6.0 * mean)
}
