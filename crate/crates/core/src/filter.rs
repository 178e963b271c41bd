//! Helmholtz PDE density filtering with prefactorized operators.
//!
//! The smoothed field solves (M + r^2 K) rho_tilde = M rho with natural
//! boundary conditions, assembled on the Q1 space (periodic when the mesh is).
//! The operator is factorized once, outside the optimization loop; the
//! transpose action needed by the sensitivities reuses the same factorization
//! since both assembled matrices are symmetric.

use crate::error::SolveError;
use crate::mesh::{
    assemble_q1_matrix, q1_mass_kernel, q1_stiffness_kernel, Q1QuadData, Q1Space, StructuredMesh,
};
use crate::sparse::{CscMatrix, SparseLu};

pub struct FilterOperator {
    /// Filter radius (mm).
    pub r: f64,
    /// Coupling matrix applied to the raw field (Q1 mass matrix).
    pub m0: CscMatrix,
    /// System matrix M + r^2 K for the smoothed field.
    pub m1: CscMatrix,
    lu: SparseLu,
    pub ndofs: usize,
}

/// Assembles and factorizes the filter operators for radius `r >= 0`.
pub fn build_filter(
    mesh: &StructuredMesh,
    space: &Q1Space,
    r: f64,
) -> Result<FilterOperator, SolveError> {
    assert!(r >= 0.0, "filter radius must be nonnegative");
    let qd = Q1QuadData::new(mesh);
    let mass = q1_mass_kernel(&qd);
    let stiff = q1_stiffness_kernel(&qd);
    let m0 = assemble_q1_matrix(mesh, space, &qd, |_, _| mass);
    let r2 = r * r;
    let m1 = assemble_q1_matrix(mesh, space, &qd, |_, _| {
        let mut k = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                k[a][b] = mass[a][b] + r2 * stiff[a][b];
            }
        }
        k
    });
    let mut lu = SparseLu::analyze(&m1.pattern)?;
    lu.factorize(&m1)?;
    Ok(FilterOperator {
        r,
        m0,
        m1,
        lu,
        ndofs: space.ndofs,
    })
}

impl FilterOperator {
    /// rho_tilde = M1^{-1} M0 rho.
    pub fn apply(&self, rho: &[f64]) -> Result<Vec<f64>, SolveError> {
        if rho.len() != self.ndofs {
            return Err(SolveError::DimensionMismatch {
                expected: self.ndofs,
                got: rho.len(),
            });
        }
        let mut rhs = vec![0.0; self.ndofs];
        self.m0.matvec(rho, &mut rhs);
        self.lu.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    /// Transpose chain: sensitivity_wrt_rho = M0^T M1^{-T} sensitivity_wrt_rho_tilde.
    pub fn adjoint(&self, sens_rho_tilde: &[f64]) -> Result<Vec<f64>, SolveError> {
        if sens_rho_tilde.len() != self.ndofs {
            return Err(SolveError::DimensionMismatch {
                expected: self.ndofs,
                got: sens_rho_tilde.len(),
            });
        }
        let w = self.lu.solve(sens_rho_tilde);
        let mut out = vec![0.0; self.ndofs];
        self.m0.matvec_transpose(&w, &mut out);
        Ok(out)
    }
}
