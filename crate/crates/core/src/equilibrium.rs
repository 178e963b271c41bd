//! Large-deformation mechanical equilibrium with material interpolation,
//! void regularization, and Lagrange-multiplier enforcement of prescribed
//! boundary displacements.
//!
//! The discrete unknowns are z = (u, q): the Q2 displacement field and the
//! boundary traction multiplier on the tagged boundary. The residual is the
//! gradient of
//!
//!   Pi(u, q) = int gamma(x) psi(F) + k_r/2 Hu:Hu dOmega + q . (B^T u - g)
//!
//! and the tangent is the symmetric saddle-point matrix [[K_uu, B], [B^T, 0]].
//! Sparsity, the regularization block, and the boundary coupling are
//! assembled once per problem; Newton steps only rewrite the material values.

use std::sync::Arc;

use crate::error::SolveError;
use crate::material::{self, MaterialParams};
use crate::mesh::{
    gauss_1d_3, shape_eval, NodeConstraint, Q2VectorSpace, QuadratureRule, SpaceKind,
    StructuredMesh, TraceSpace, FIXED_DOF,
};
use crate::sparse::{CscMatrix, SparseLu, SparsityPattern};

const NQP: usize = 9;
const NLOC: usize = 18; // 9 nodes x 2 components
const SKIP: u32 = u32::MAX;

/// Stiffness interpolation values at every quadrature point.
#[derive(Debug, Clone)]
pub struct GammaField {
    /// gamma at quadrature point `e * 9 + qp`.
    pub values: Vec<f64>,
}

impl GammaField {
    pub fn uniform(elem_count: usize, gamma: f64) -> Self {
        Self {
            values: vec![gamma; elem_count * NQP],
        }
    }
}

/// A fully specified prescribed-displacement state of the tagged boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryTarget {
    /// Rigid translation of the boundary.
    Translate { v: [f64; 2] },
    /// Annular bending map of the whole domain boundary.
    Bend { alpha: f64, l: f64, h: f64 },
}

impl BoundaryTarget {
    pub fn zero(&self) -> Self {
        match *self {
            BoundaryTarget::Translate { .. } => BoundaryTarget::Translate { v: [0.0, 0.0] },
            BoundaryTarget::Bend { l, h, .. } => BoundaryTarget::Bend { alpha: 0.0, l, h },
        }
    }

    /// Linear interpolation between two targets of the same kind.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        match (*self, *other) {
            (BoundaryTarget::Translate { v: a }, BoundaryTarget::Translate { v: b }) => {
                BoundaryTarget::Translate {
                    v: [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                }
            }
            (BoundaryTarget::Bend { alpha: a, l, h }, BoundaryTarget::Bend { alpha: b, .. }) => {
                BoundaryTarget::Bend {
                    alpha: a + t * (b - a),
                    l,
                    h,
                }
            }
            _ => panic!("cannot interpolate between different target kinds"),
        }
    }

    /// Path length between two targets, used to size load increments.
    pub fn distance(&self, other: &Self) -> f64 {
        match (*self, *other) {
            (BoundaryTarget::Translate { v: a }, BoundaryTarget::Translate { v: b }) => {
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            }
            (BoundaryTarget::Bend { alpha: a, .. }, BoundaryTarget::Bend { alpha: b, .. }) => {
                (b - a).abs()
            }
            _ => panic!("cannot compare different target kinds"),
        }
    }

    /// Prescribed displacement of boundary point (x, y).
    pub fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            BoundaryTarget::Translate { v } => v,
            BoundaryTarget::Bend { alpha, l, h } => bend_map_unchecked(x, y, alpha, l, h),
        }
    }

    /// Control value for curve export: displacement magnitude in mm, or the
    /// bend angle in degrees.
    pub fn control_value(&self) -> f64 {
        match *self {
            BoundaryTarget::Translate { v } => (v[0] * v[0] + v[1] * v[1]).sqrt(),
            BoundaryTarget::Bend { alpha, .. } => alpha.to_degrees(),
        }
    }

    pub fn control_name(&self) -> &'static str {
        match self {
            BoundaryTarget::Translate { .. } => "u_D_mm",
            BoundaryTarget::Bend { .. } => "alpha_deg",
        }
    }

    /// Rotation angle of the top boundary for this target (bend maps only).
    pub fn bend_angle(&self) -> f64 {
        match *self {
            BoundaryTarget::Bend { alpha, .. } => alpha,
            _ => 0.0,
        }
    }
}

/// Maps a boundary point of the L x H rectangle onto the annular section of
/// opening angle `alpha` (radians) whose centerline arc keeps length H, and
/// returns the displacement. The bottom edge stays fixed and the top edge
/// rotates rigidly by `alpha`.
pub fn bend_boundary_map(x: f64, y: f64, alpha: f64, l: f64, h: f64) -> Result<[f64; 2], SolveError> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(SolveError::NonFinite {
            context: "bend angle",
        });
    }
    Ok(bend_map_unchecked(x, y, alpha, l, h))
}

fn bend_map_unchecked(x: f64, y: f64, alpha: f64, l: f64, h: f64) -> [f64; 2] {
    if alpha == 0.0 {
        return [0.0, 0.0];
    }
    let theta = alpha * y / h;
    let xr = x - 0.5 * l;
    // cos(theta) - 1 without cancellation
    let cm1 = -2.0 * (0.5 * theta).sin().powi(2);
    let s = theta.sin();
    // R (cos(theta) - 1) with R = h / alpha
    let rcm1 = (h / alpha) * cm1;
    // R sin(theta) - y = (h/alpha)(sin(theta) - theta); series for small angles
    let sin_minus_theta = if theta.abs() < 1e-4 {
        -theta.powi(3) / 6.0 * (1.0 - theta * theta / 20.0)
    } else {
        s - theta
    };
    let rs_minus_y = (h / alpha) * sin_minus_theta;
    [xr * cm1 + rcm1, xr * s + rs_minus_y]
}

/// One prescribed-displacement load case of an optimization problem.
#[derive(Debug, Clone)]
pub struct LoadCase {
    pub label: String,
    pub target: BoundaryTarget,
    /// Case whose converged state this one continues from, if any.
    pub parent: Option<usize>,
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

/// Incremental loading controls.
#[derive(Debug, Clone, Copy)]
pub struct PathOptions {
    pub n_increments: usize,
    pub max_halvings: usize,
    pub newton: NewtonOptions,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Displacement/multiplier pair for one load case.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    /// Boundary target the state is converged at (`None` = undeformed).
    pub reached: Option<BoundaryTarget>,
    pub converged: bool,
}

impl EquilibriumState {
    pub fn zero(prob: &ElasticProblem) -> Self {
        Self {
            u: vec![0.0; prob.n_u],
            q: vec![0.0; prob.n_q],
            reached: None,
            converged: false,
        }
    }

    pub fn reset(&mut self) {
        self.u.fill(0.0);
        self.q.fill(0.0);
        self.reached = None;
        self.converged = false;
    }
}

/// Assembled problem structure shared by all load cases of one mesh.
pub struct ElasticProblem {
    pub mesh: Arc<StructuredMesh>,
    pub uspace: Q2VectorSpace,
    pub qspace: TraceSpace,
    pub material: MaterialParams,
    pub k_r: f64,
    pub n_u: usize,
    pub n_q: usize,

    // reference element tables (identical for every element)
    qp_w: [f64; NQP],
    q1_vals: [[f64; 4]; NQP],
    grads: [[[f64; 2]; 9]; NQP],
    d2: [[[f64; 3]; 9]; NQP],

    elem_udofs: Vec<[u32; NLOC]>,
    pattern: Arc<SparsityPattern>,
    /// Per-element map (local 18x18) -> CSC value index.
    scatter: Vec<u32>,
    /// Regularization + boundary coupling values (state independent).
    base_vals: Vec<f64>,
    /// Boundary coupling B (n_u x n_q): B[u_dof, q_dof] = int N_a N_b dGamma.
    pub coupling: CscMatrix,
    /// Per-boundary-edge quadrature: (q2 nodes, [xi, w*jac] x3).
    bedges: Vec<BEdgeQuad>,
}

struct BEdgeQuad {
    nodes: [usize; 3],
    /// Physical coordinates of the three quadrature points.
    coords: [(f64, f64); 3],
    /// Shape values at the quadrature points.
    shapes: [[f64; 3]; 3],
    /// Quadrature weight times edge Jacobian.
    w: [f64; 3],
}

impl ElasticProblem {
    /// Builds the problem structure. `gamma_d_segments` name the boundary
    /// parts where displacements are prescribed through multipliers.
    pub fn new(
        mesh: Arc<StructuredMesh>,
        constraints: &[NodeConstraint],
        gamma_d_segments: &[&str],
        material: MaterialParams,
    ) -> Result<Self, crate::error::MeshError> {
        let uspace = Q2VectorSpace::new(&mesh, constraints);
        let qspace = TraceSpace::new(&mesh, gamma_d_segments)?;
        let n_u = uspace.ndofs;
        let n_q = qspace.ndofs;
        let k_r = material.k_r();

        // reference tables, physical scaling
        let rule = QuadratureRule::gauss_3x3();
        let jac = 0.25 * mesh.hx() * mesh.hy();
        let sx = 2.0 / mesh.hx();
        let sy = 2.0 / mesh.hy();
        let mut qp_w = [0.0; NQP];
        let mut q1_vals = [[0.0; 4]; NQP];
        let mut grads = [[[0.0; 2]; 9]; NQP];
        let mut d2 = [[[0.0; 3]; 9]; NQP];
        for (qp, &(xi, eta, w)) in rule.points.iter().enumerate() {
            qp_w[qp] = w * jac;
            let q1 = shape_eval(SpaceKind::ScalarQ1, (xi, eta));
            for a in 0..4 {
                q1_vals[qp][a] = q1.values[a];
            }
            let q2 = shape_eval(SpaceKind::VectorQ2, (xi, eta));
            for a in 0..9 {
                grads[qp][a] = [q2.gradients[a][0] * sx, q2.gradients[a][1] * sy];
                d2[qp][a] = [
                    q2.second[a][0] * sx * sx,
                    q2.second[a][1] * sx * sy,
                    q2.second[a][2] * sy * sy,
                ];
            }
        }

        // local regularization matrix (per displacement component)
        let mut reg_local = [[0.0; 9]; 9];
        for qp in 0..NQP {
            let w = qp_w[qp];
            for a in 0..9 {
                for b in 0..9 {
                    reg_local[a][b] += w
                        * (d2[qp][a][0] * d2[qp][b][0]
                            + 2.0 * d2[qp][a][1] * d2[qp][b][1]
                            + d2[qp][a][2] * d2[qp][b][2]);
                }
            }
        }

        // element dof lists
        let ne = mesh.elem_count();
        let mut elem_udofs = Vec::with_capacity(ne);
        for e in 0..ne {
            let nodes = mesh.elem_q2_nodes(e);
            let mut dofs = [SKIP; NLOC];
            for (a, &node) in nodes.iter().enumerate() {
                for comp in 0..2 {
                    dofs[2 * a + comp] = uspace.dof(node, comp);
                }
            }
            elem_udofs.push(dofs);
        }

        // boundary quadrature and coupling triplets
        let g1 = gauss_1d_3();
        let mut bedges = Vec::new();
        for be in &qspace.edges {
            let mut coords = [(0.0, 0.0); 3];
            let mut shapes = [[0.0; 3]; 3];
            let mut w = [0.0; 3];
            let (x0, y0) = mesh.q2_node_coords(be.q2_nodes[0]);
            let (x2, y2) = mesh.q2_node_coords(be.q2_nodes[2]);
            for (k, &(xi, wq)) in g1.iter().enumerate() {
                let t = 0.5 * (xi + 1.0);
                coords[k] = (x0 + t * (x2 - x0), y0 + t * (y2 - y0));
                let se = shape_eval(SpaceKind::BoundaryTraceQ2, (xi, 0.0));
                for a in 0..3 {
                    shapes[k][a] = se.values[a];
                }
                w[k] = wq * 0.5 * be.length;
            }
            bedges.push(BEdgeQuad {
                nodes: be.q2_nodes,
                coords,
                shapes,
                w,
            });
        }

        // coupling matrix B
        let mut bpairs = Vec::new();
        for bq in &bedges {
            for &na in &bq.nodes {
                for &nb in &bq.nodes {
                    for comp in 0..2 {
                        let ud = uspace.dof(na, comp);
                        let qd = qspace.dof(nb, comp);
                        if ud != FIXED_DOF && qd != FIXED_DOF {
                            bpairs.push((ud, qd));
                        }
                    }
                }
            }
        }
        let bpattern = SparsityPattern::from_pairs(n_u, n_q, &mut bpairs);
        let mut coupling = CscMatrix::zeros(bpattern);
        for bq in &bedges {
            for (ia, &na) in bq.nodes.iter().enumerate() {
                for (ib, &nb) in bq.nodes.iter().enumerate() {
                    let m: f64 = (0..3).map(|k| bq.w[k] * bq.shapes[k][ia] * bq.shapes[k][ib]).sum();
                    for comp in 0..2 {
                        let ud = uspace.dof(na, comp);
                        let qd = qspace.dof(nb, comp);
                        if ud != FIXED_DOF && qd != FIXED_DOF {
                            coupling.add(ud as usize, qd as usize, m);
                        }
                    }
                }
            }
        }

        // global pattern: u-u element blocks, coupling blocks, q diagonal
        let n = n_u + n_q;
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(ne * NLOC * NLOC / 2);
        for dofs in &elem_udofs {
            for &da in dofs.iter() {
                if da == SKIP {
                    continue;
                }
                for &db in dofs.iter() {
                    if db == SKIP {
                        continue;
                    }
                    pairs.push((da, db));
                }
            }
        }
        let bp = &coupling.pattern;
        for col in 0..n_q {
            for k in bp_col_range(bp, col) {
                let row = bp_row(bp, k);
                pairs.push((row as u32, (n_u + col) as u32));
                pairs.push(((n_u + col) as u32, row as u32));
            }
        }
        for qd in 0..n_q {
            pairs.push(((n_u + qd) as u32, (n_u + qd) as u32));
        }
        let pattern = SparsityPattern::from_pairs(n, n, &mut pairs);

        // per-element scatter map
        let mut scatter = vec![SKIP; ne * NLOC * NLOC];
        for (e, dofs) in elem_udofs.iter().enumerate() {
            for (i, &da) in dofs.iter().enumerate() {
                if da == SKIP {
                    continue;
                }
                for (j, &db) in dofs.iter().enumerate() {
                    if db == SKIP {
                        continue;
                    }
                    let idx = pattern
                        .index_of(da as usize, db as usize)
                        .expect("element pair in pattern");
                    scatter[e * NLOC * NLOC + i * NLOC + j] = idx as u32;
                }
            }
        }

        // constant part of the tangent: regularization + coupling
        let mut base = vec![0.0; pattern.nnz()];
        for (e, dofs) in elem_udofs.iter().enumerate() {
            for a in 0..9 {
                for b in 0..9 {
                    let v = k_r * reg_local[a][b];
                    for comp in 0..2 {
                        let i = 2 * a + comp;
                        let j = 2 * b + comp;
                        if dofs[i] == SKIP || dofs[j] == SKIP {
                            continue;
                        }
                        let idx = scatter[e * NLOC * NLOC + i * NLOC + j];
                        base[idx as usize] += v;
                    }
                }
            }
        }
        for col in 0..n_q {
            for k in bp_col_range(bp, col) {
                let row = bp_row(bp, k);
                let v = coupling.values[k];
                let i1 = pattern.index_of(row, n_u + col).unwrap();
                let i2 = pattern.index_of(n_u + col, row).unwrap();
                base[i1] += v;
                base[i2] += v;
            }
        }

        Ok(Self {
            mesh,
            uspace,
            qspace,
            material,
            k_r,
            n_u,
            n_q,
            qp_w,
            q1_vals,
            grads,
            d2,
            elem_udofs,
            pattern,
            scatter,
            base_vals: base,
            coupling,
            bedges,
        })
    }

    pub fn ndofs(&self) -> usize {
        self.n_u + self.n_q
    }

    pub fn pattern(&self) -> Arc<SparsityPattern> {
        self.pattern.clone()
    }

    /// Q1 basis values at the volume quadrature points.
    pub fn q1_table(&self) -> &[[f64; 4]; NQP] {
        &self.q1_vals
    }

    pub fn qp_weights(&self) -> &[f64; NQP] {
        &self.qp_w
    }

    /// Scale-aware absolute Newton tolerance.
    pub fn newton_tol(&self) -> f64 {
        1e-8 * self.material.k_bulk * self.mesh.elem_area()
    }

    #[inline]
    fn gather(&self, e: usize, u: &[f64]) -> [f64; NLOC] {
        let mut ue = [0.0; NLOC];
        for (i, &d) in self.elem_udofs[e].iter().enumerate() {
            if d != SKIP {
                ue[i] = u[d as usize];
            }
        }
        ue
    }

    /// Deformation gradient (in-plane block) and displacement Hessian at a
    /// quadrature point.
    #[inline]
    fn kinematics(&self, qp: usize, ue: &[f64; NLOC]) -> ([f64; 4], [[f64; 3]; 2]) {
        let mut f = [1.0, 0.0, 0.0, 1.0];
        let mut hu = [[0.0; 3]; 2];
        let g = &self.grads[qp];
        let d2 = &self.d2[qp];
        for a in 0..9 {
            let ux = ue[2 * a];
            let uy = ue[2 * a + 1];
            f[0] += ux * g[a][0];
            f[1] += ux * g[a][1];
            f[2] += uy * g[a][0];
            f[3] += uy * g[a][1];
            for k in 0..3 {
                hu[0][k] += ux * d2[a][k];
                hu[1][k] += uy * d2[a][k];
            }
        }
        (f, hu)
    }

    /// Boundary load vector g with g[b,i] = int u_D,i N_b dGamma.
    pub fn boundary_g(&self, target: &BoundaryTarget) -> Vec<f64> {
        let mut g = vec![0.0; self.n_q];
        for bq in &self.bedges {
            for k in 0..3 {
                let (x, y) = bq.coords[k];
                let ud = target.displacement(x, y);
                for (ia, &node) in bq.nodes.iter().enumerate() {
                    for comp in 0..2 {
                        let qd = self.qspace.dof(node, comp);
                        if qd != FIXED_DOF {
                            g[qd as usize] += bq.w[k] * bq.shapes[k][ia] * ud[comp];
                        }
                    }
                }
            }
        }
        g
    }

    /// Residual of the augmented equilibrium at (u, q) under boundary data g.
    pub fn assemble_residual(
        &self,
        gamma: &GammaField,
        u: &[f64],
        q: &[f64],
        g: &[f64],
    ) -> Result<Vec<f64>, SolveError> {
        let (k, gm) = (self.material.k_bulk, self.material.g_shear);
        let mut r = vec![0.0; self.ndofs()];
        for e in 0..self.mesh.elem_count() {
            let ue = self.gather(e, u);
            let mut re = [0.0; NLOC];
            for qp in 0..NQP {
                let (f, hu) = self.kinematics(qp, &ue);
                if material::ps_det(&f) <= 0.0 {
                    return Err(SolveError::ElementInverted { element: e });
                }
                let w = self.qp_w[qp];
                let ga = gamma.values[e * NQP + qp];
                let p = material::ps_stress(&f, k, gm);
                let gr = &self.grads[qp];
                let d2 = &self.d2[qp];
                for a in 0..9 {
                    let gx = gr[a][0];
                    let gy = gr[a][1];
                    re[2 * a] += w * ga * (p[0] * gx + p[1] * gy);
                    re[2 * a + 1] += w * ga * (p[2] * gx + p[3] * gy);
                    if self.k_r != 0.0 {
                        let wkr = w * self.k_r;
                        re[2 * a] += wkr
                            * (hu[0][0] * d2[a][0] + 2.0 * hu[0][1] * d2[a][1] + hu[0][2] * d2[a][2]);
                        re[2 * a + 1] += wkr
                            * (hu[1][0] * d2[a][0] + 2.0 * hu[1][1] * d2[a][1] + hu[1][2] * d2[a][2]);
                    }
                }
            }
            for (i, &d) in self.elem_udofs[e].iter().enumerate() {
                if d != SKIP {
                    r[d as usize] += re[i];
                }
            }
        }
        // multiplier coupling: r_u += B q, r_q = B^T u - g
        let mut bu = vec![0.0; self.n_u];
        self.coupling.matvec(q, &mut bu);
        for i in 0..self.n_u {
            r[i] += bu[i];
        }
        let mut btu = vec![0.0; self.n_q];
        self.coupling.matvec_transpose(u, &mut btu);
        for j in 0..self.n_q {
            r[self.n_u + j] = btu[j] - g[j];
        }
        Ok(r)
    }

    /// Newton tangent at u. Values are written into `kmat`, which must share
    /// this problem's pattern.
    pub fn assemble_tangent(
        &self,
        gamma: &GammaField,
        u: &[f64],
        kmat: &mut CscMatrix,
    ) -> Result<(), SolveError> {
        assert!(Arc::ptr_eq(&kmat.pattern, &self.pattern));
        kmat.values.copy_from_slice(&self.base_vals);
        let (k, gm) = (self.material.k_bulk, self.material.g_shear);
        for e in 0..self.mesh.elem_count() {
            let ue = self.gather(e, u);
            let mut ke = [[0.0; NLOC]; NLOC];
            for qp in 0..NQP {
                let (f, _) = self.kinematics(qp, &ue);
                if material::ps_det(&f) <= 0.0 {
                    return Err(SolveError::ElementInverted { element: e });
                }
                let wg = self.qp_w[qp] * gamma.values[e * NQP + qp];
                let (_, a4) = material::ps_stress_tangent(&f, k, gm);
                let gr = &self.grads[qp];
                // w[b][j][i][m] = sum_n A[i][m][j][n] grad_b[n]
                let mut wt = [[[[0.0; 2]; 2]; 2]; 9];
                for b in 0..9 {
                    for j in 0..2 {
                        for i in 0..2 {
                            for m in 0..2 {
                                wt[b][j][i][m] = a4[i][m][j][0] * gr[b][0] + a4[i][m][j][1] * gr[b][1];
                            }
                        }
                    }
                }
                for a in 0..9 {
                    let gax = gr[a][0];
                    let gay = gr[a][1];
                    for b in 0..9 {
                        for i in 0..2 {
                            for j in 0..2 {
                                ke[2 * a + i][2 * b + j] +=
                                    wg * (gax * wt[b][j][i][0] + gay * wt[b][j][i][1]);
                            }
                        }
                    }
                }
            }
            let sc = &self.scatter[e * NLOC * NLOC..(e + 1) * NLOC * NLOC];
            for i in 0..NLOC {
                for j in 0..NLOC {
                    let idx = sc[i * NLOC + j];
                    if idx != SKIP {
                        kmat.values[idx as usize] += ke[i][j];
                    }
                }
            }
        }
        Ok(())
    }

    /// Total augmented potential; its gradient is the assembled residual.
    pub fn total_potential(
        &self,
        gamma: &GammaField,
        u: &[f64],
        q: &[f64],
        g: &[f64],
    ) -> Result<f64, SolveError> {
        let (k, gm) = (self.material.k_bulk, self.material.g_shear);
        let mut pi = 0.0;
        for e in 0..self.mesh.elem_count() {
            let ue = self.gather(e, u);
            for qp in 0..NQP {
                let (f, hu) = self.kinematics(qp, &ue);
                if material::ps_det(&f) <= 0.0 {
                    return Err(SolveError::ElementInverted { element: e });
                }
                let w = self.qp_w[qp];
                let ga = gamma.values[e * NQP + qp];
                pi += w
                    * (ga * material::ps_energy(&f, k, gm)
                        + material::regularization_energy(&hu, self.k_r));
            }
        }
        let mut btu = vec![0.0; self.n_q];
        self.coupling.matvec_transpose(u, &mut btu);
        for j in 0..self.n_q {
            pi += q[j] * (btu[j] - g[j]);
        }
        Ok(pi)
    }

    /// Elastic strain energy of the current state (no multiplier terms).
    pub fn strain_energy(&self, gamma: &GammaField, u: &[f64]) -> Result<f64, SolveError> {
        self.total_potential(gamma, u, &vec![0.0; self.n_q], &vec![0.0; self.n_q])
    }
}

fn bp_col_range(p: &SparsityPattern, col: usize) -> std::ops::Range<usize> {
    // small helper around the pattern internals for coupling iteration
    let f = p.faer();
    f.col_range(col)
}

fn bp_row(p: &SparsityPattern, k: usize) -> usize {
    p.faer().row_idx()[k]
}

/// Reusable factorization workspace shared by all solves on one problem.
pub struct EquilibriumSolver {
    lu: SparseLu,
    pub kmat: CscMatrix,
}

impl EquilibriumSolver {
    pub fn new(prob: &ElasticProblem) -> Result<Self, SolveError> {
        let pattern = prob.pattern();
        let lu = SparseLu::analyze(&pattern)?;
        Ok(Self {
            lu,
            kmat: CscMatrix::zeros(pattern),
        })
    }

    /// Factorizes the tangent at the given displacement state.
    pub fn factorize_at(
        &mut self,
        prob: &ElasticProblem,
        gamma: &GammaField,
        u: &[f64],
    ) -> Result<(), SolveError> {
        prob.assemble_tangent(gamma, u, &mut self.kmat)?;
        self.lu.factorize(&self.kmat)
    }

    /// Solves the last factorized tangent (symmetric, so also its transpose).
    pub fn solve_linear(&self, rhs: &mut [f64]) {
        self.lu.solve_in_place(rhs);
    }

    /// Full Newton solve of R(u, q) = 0 under boundary data g.
    pub fn newton(
        &mut self,
        prob: &ElasticProblem,
        gamma: &GammaField,
        g: &[f64],
        u: &mut Vec<f64>,
        q: &mut Vec<f64>,
        opts: NewtonOptions,
    ) -> Result<NewtonReport, SolveError> {
        for it in 0..=opts.max_iter {
            let r = prob.assemble_residual(gamma, u, q, g)?;
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !rn.is_finite() {
                return Err(SolveError::NonFinite {
                    context: "residual norm",
                });
            }
            if rn <= opts.tol {
                return Ok(NewtonReport {
                    iterations: it,
                    residual: rn,
                });
            }
            if it == opts.max_iter {
                return Err(SolveError::NewtonDiverged {
                    max_iter: opts.max_iter,
                    residual: rn,
                    tol: opts.tol,
                });
            }
            self.factorize_at(prob, gamma, u)?;
            let mut dz: Vec<f64> = r.iter().map(|v| -v).collect();
            self.lu.solve_in_place(&mut dz);
            if dz.iter().any(|v| !v.is_finite()) {
                return Err(SolveError::NonFinite {
                    context: "newton update",
                });
            }
            for i in 0..prob.n_u {
                u[i] += dz[i];
            }
            for j in 0..prob.n_q {
                q[j] += dz[prob.n_u + j];
            }
        }
        unreachable!()
    }

    /// Drives the state from its current target to `to` through load
    /// increments, halving the step on Newton failure. `on_sample` receives
    /// every accepted increment.
    pub fn load_path<F>(
        &mut self,
        prob: &ElasticProblem,
        gamma: &GammaField,
        state: &mut EquilibriumState,
        to: &BoundaryTarget,
        opts: PathOptions,
        mut on_sample: F,
    ) -> Result<(), SolveError>
    where
        F: FnMut(&ElasticProblem, &BoundaryTarget, &EquilibriumState),
    {
        let from = state.reached.unwrap_or_else(|| to.zero());
        let dist = from.distance(to);
        if dist == 0.0 {
            let g = prob.boundary_g(to);
            self.newton(prob, gamma, &g, &mut state.u, &mut state.q, opts.newton)?;
            state.reached = Some(*to);
            state.converged = true;
            on_sample(prob, to, state);
            return Ok(());
        }
        let dt0 = 1.0 / opts.n_increments.max(1) as f64;
        let mut t = 0.0;
        let mut dt = dt0;
        let mut backup_u = state.u.clone();
        let mut backup_q = state.q.clone();
        while t < 1.0 - 1e-12 {
            let mut halvings = 0usize;
            loop {
                let t_next = (t + dt).min(1.0);
                let target = from.lerp(to, t_next);
                let g = prob.boundary_g(&target);
                match self.newton(prob, gamma, &g, &mut state.u, &mut state.q, opts.newton) {
                    Ok(_) => {
                        t = t_next;
                        state.reached = Some(target);
                        state.converged = true;
                        on_sample(prob, &target, state);
                        backup_u.copy_from_slice(&state.u);
                        backup_q.copy_from_slice(&state.q);
                        // recover the nominal step after a successful solve
                        dt = (dt * 1.5).min(dt0);
                        break;
                    }
                    Err(err) => {
                        state.u.copy_from_slice(&backup_u);
                        state.q.copy_from_slice(&backup_q);
                        state.converged = false;
                        halvings += 1;
                        if halvings > opts.max_halvings {
                            return Err(SolveError::StepFailed {
                                halvings: opts.max_halvings,
                                source: Box::new(err),
                            });
                        }
                        dt *= 0.5;
                    }
                }
            }
        }
        Ok(())
    }
}
