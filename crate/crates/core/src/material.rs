//! Pointwise constitutive layer: compressible neo-Hookean strain energy with
//! analytic stress and tangent, the void regularization energy on the
//! displacement Hessian, smooth Heaviside projection, and the SIMP stiffness
//! interpolation.
//!
//! The 2D problems are plane-strain embedded: the deformation gradient is a
//! 3x3 tensor with F33 = 1 and no out-of-plane shear, which keeps the
//! three-dimensional invariants of the energy exact.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;

/// Bulk material constants and interpolation parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Bulk modulus (MPa).
    pub k_bulk: f64,
    /// Shear modulus (MPa).
    pub g_shear: f64,
    /// Stiffness floor of the interpolation.
    pub gamma0: f64,
    /// Penalization exponent.
    pub p_simp: f64,
    /// Dimensionless regularization weight.
    pub kr_bar: f64,
    /// Characteristic structural length (mm).
    pub l_char: f64,
}

impl MaterialParams {
    /// Regularization scale k_r = kr_bar * L^2 * K (units of N).
    pub fn k_r(&self) -> f64 {
        self.kr_bar * self.l_char * self.l_char * self.k_bulk
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k_bulk <= 0.0 || self.g_shear <= 0.0 {
            return Err("moduli must be positive".into());
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return Err("gamma0 must lie in (0, 1)".into());
        }
        if self.p_simp < 1.0 {
            return Err("penalization exponent must be >= 1".into());
        }
        if self.kr_bar < 0.0 {
            return Err("regularization weight must be >= 0".into());
        }
        Ok(())
    }
}

/// Heaviside projection parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub beta: f64,
    pub eta_e: f64,
    pub eta_d: f64,
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.beta <= 0.0 {
            return Err("projection sharpness must be positive".into());
        }
        if !(0.0 < self.eta_d && self.eta_d < self.eta_e && self.eta_e < 1.0) {
            return Err("thresholds must satisfy 0 < eta_d < eta_e < 1".into());
        }
        Ok(())
    }
}

/// Kinematic state at one material point of the plane-strain problem.
#[derive(Debug, Clone, Copy)]
pub struct DeformationPointState {
    /// Full deformation gradient, F33 = 1, no out-of-plane shear.
    pub f: Matrix3<f64>,
    /// In-plane displacement Hessian u_{i,jk}: per component [xx, xy, yy].
    pub hu: [[f64; 3]; 2],
}

impl DeformationPointState {
    /// Embeds an in-plane gradient block and Hessian into the 3x3 state.
    pub fn plane_strain(f2: [f64; 4], hu: [[f64; 3]; 2]) -> Self {
        let mut f = Matrix3::identity();
        f[(0, 0)] = f2[0];
        f[(0, 1)] = f2[1];
        f[(1, 0)] = f2[2];
        f[(1, 1)] = f2[3];
        Self { f, hu }
    }

    pub fn in_plane(&self) -> [f64; 4] {
        [
            self.f[(0, 0)],
            self.f[(0, 1)],
            self.f[(1, 0)],
            self.f[(1, 1)],
        ]
    }
}

/// In-plane fourth-order tangent block A_ijkl = d P_ij / d F_kl.
pub type PlaneTangent = [[[[f64; 2]; 2]; 2]; 2];

/// Stress and tangent of the strain energy at a point.
#[derive(Debug, Clone)]
pub struct StressTangent {
    /// First Piola-Kirchhoff stress (full 3x3).
    pub p: Matrix3<f64>,
    /// In-plane tangent block.
    pub a: PlaneTangent,
}

/// Neo-Hookean strain energy density (MPa) for a full 3x3 deformation
/// gradient.
pub fn neo_hookean_energy(f: &Matrix3<f64>, k: f64, g: f64) -> Result<f64, SolveError> {
    let det = f.determinant();
    if det <= 0.0 {
        return Err(SolveError::ElementInverted { element: usize::MAX });
    }
    let norm2 = f.iter().map(|v| v * v).sum::<f64>();
    Ok(0.5 * k * det.ln().powi(2) + 0.5 * g * (det.powf(-2.0 / 3.0) * norm2 - 3.0))
}

/// First Piola stress and in-plane tangent of the neo-Hookean energy for a
/// plane-strain deformation gradient.
pub fn neo_hookean_stress_tangent(
    f: &Matrix3<f64>,
    k: f64,
    g: f64,
) -> Result<StressTangent, SolveError> {
    let f2 = [f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]];
    let det = ps_det(&f2);
    if det <= 0.0 {
        return Err(SolveError::ElementInverted { element: usize::MAX });
    }
    let (p2, a) = ps_stress_tangent(&f2, k, g);
    let mut p = Matrix3::zeros();
    p[(0, 0)] = p2[0];
    p[(0, 1)] = p2[1];
    p[(1, 0)] = p2[2];
    p[(1, 1)] = p2[3];
    // Out-of-plane normal stress of the plane-strain embedding.
    let jln = det.ln();
    let norm2 = ps_norm2(&f2);
    p[(2, 2)] = k * jln + g * det.powf(-2.0 / 3.0) * (1.0 - norm2 / 3.0);
    Ok(StressTangent { p, a })
}

/// Void regularization energy density: k_r/2 * (Hu : Hu), with the mixed
/// derivative counted twice by symmetry.
pub fn regularization_energy(hu: &[[f64; 3]; 2], k_r: f64) -> f64 {
    let mut s = 0.0;
    for h in hu {
        s += h[0] * h[0] + 2.0 * h[1] * h[1] + h[2] * h[2];
    }
    0.5 * k_r * s
}

/// Smooth Heaviside projection and its derivative with respect to the
/// filtered density. Inputs outside [0,1] are clamped (tolerance 1e-12).
pub fn heaviside_project(rho_tilde: f64, beta: f64, eta: f64) -> (f64, f64) {
    let r = rho_tilde.clamp(0.0, 1.0);
    debug_assert!(
        rho_tilde > -1e-9 && rho_tilde < 1.0 + 1e-9,
        "projection input far outside [0,1]: {rho_tilde}"
    );
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (r - eta)).tanh();
    let value = ((beta * eta).tanh() + t) / denom;
    let deriv = beta * (1.0 - t * t) / denom;
    (value, deriv)
}

/// SIMP stiffness interpolation gamma(rho_bar) and its derivative.
pub fn simp_gamma(rho_bar: f64, gamma0: f64, p: f64) -> (f64, f64) {
    let r = rho_bar.clamp(0.0, 1.0);
    let value = gamma0 + (1.0 - gamma0) * r.powf(p);
    let deriv = if p == 1.0 {
        1.0 - gamma0
    } else {
        (1.0 - gamma0) * p * r.powf(p - 1.0)
    };
    (value, deriv)
}

// --- plane-strain fast path -------------------------------------------------
//
// In-plane blocks stored row-major: [f11, f12, f21, f22].

#[inline]
pub(crate) fn ps_det(f: &[f64; 4]) -> f64 {
    f[0] * f[3] - f[1] * f[2]
}

#[inline]
pub(crate) fn ps_norm2(f: &[f64; 4]) -> f64 {
    f[0] * f[0] + f[1] * f[1] + f[2] * f[2] + f[3] * f[3] + 1.0
}

/// In-plane block of F^{-T}.
#[inline]
pub(crate) fn ps_inv_t(f: &[f64; 4], det: f64) -> [f64; 4] {
    let inv = 1.0 / det;
    [f[3] * inv, -f[2] * inv, -f[1] * inv, f[0] * inv]
}

#[inline]
pub(crate) fn ps_energy(f: &[f64; 4], k: f64, g: f64) -> f64 {
    let det = ps_det(f);
    let jln = det.ln();
    0.5 * k * jln * jln + 0.5 * g * (det.powf(-2.0 / 3.0) * ps_norm2(f) - 3.0)
}

/// First Piola stress, in-plane block.
#[inline]
pub(crate) fn ps_stress(f: &[f64; 4], k: f64, g: f64) -> [f64; 4] {
    let det = ps_det(f);
    let b = ps_inv_t(f, det);
    let jln = det.ln();
    let jm23 = det.powf(-2.0 / 3.0);
    let n2 = ps_norm2(f);
    let mut p = [0.0; 4];
    for i in 0..4 {
        p[i] = k * jln * b[i] + g * jm23 * (f[i] - n2 / 3.0 * b[i]);
    }
    p
}

/// Stress and tangent, in-plane blocks. The tangent has major symmetry
/// A_ijkl = A_klij by construction.
pub(crate) fn ps_stress_tangent(f: &[f64; 4], k: f64, g: f64) -> ([f64; 4], PlaneTangent) {
    let det = ps_det(f);
    let b = ps_inv_t(f, det);
    let jln = det.ln();
    let jm23 = det.powf(-2.0 / 3.0);
    let n2 = ps_norm2(f);
    let p = ps_stress(f, k, g);

    let idx = |i: usize, j: usize| 2 * i + j;
    let mut a: PlaneTangent = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for kk in 0..2 {
                for l in 0..2 {
                    let bij = b[idx(i, j)];
                    let bkl = b[idx(kk, l)];
                    let bkj = b[idx(kk, j)];
                    let bil = b[idx(i, l)];
                    let fij = f[idx(i, j)];
                    let fkl = f[idx(kk, l)];
                    let delta = if i == kk && j == l { 1.0 } else { 0.0 };
                    let bulk = k * (bij * bkl - jln * bkj * bil);
                    let dev = g * jm23
                        * (delta - 2.0 / 3.0 * (bkl * fij + fkl * bij)
                            + 2.0 / 9.0 * n2 * bkl * bij
                            + n2 / 3.0 * bkj * bil);
                    a[i][j][kk][l] = bulk + dev;
                }
            }
        }
    }
    (p, a)
}
