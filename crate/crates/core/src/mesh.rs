//! Structured quadrilateral meshes, finite-element spaces, quadrature, and
//! generic assembly scaffolding.
//!
//! Displacements live in a 9-node biquadratic (Q2) vector space, densities in
//! a bilinear (Q1) scalar space on the element corners, and boundary
//! tractions in the trace of the Q2 space on a tagged boundary. All elements
//! are axis-aligned rectangles of identical size, so the reference-to-physical
//! map is affine with a constant diagonal Jacobian.

use std::sync::Arc;

use crate::error::MeshError;
use crate::sparse::{CscMatrix, SparsityPattern};

pub const Q2_NODES: usize = 9;
pub const Q1_NODES: usize = 4;

/// One of the four straight boundaries of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

/// A named part of the domain boundary: a coordinate range along one edge.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub name: String,
    pub edge: Edge,
    /// Along-edge coordinate range (x for bottom/top, y for left/right).
    /// `None` selects the whole edge.
    pub range: Option<(f64, f64)>,
}

impl SegmentSpec {
    pub fn whole(name: &str, edge: Edge) -> Self {
        Self {
            name: name.to_string(),
            edge,
            range: None,
        }
    }

    pub fn part(name: &str, edge: Edge, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            edge,
            range: Some((lo, hi)),
        }
    }
}

/// Boundary naming and pairing options used when building a mesh.
#[derive(Debug, Clone, Default)]
pub struct BoundarySpec {
    pub segments: Vec<SegmentSpec>,
    /// Pair the left and right boundaries (x-periodicity).
    pub periodic_x: bool,
}

/// One element edge on the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub element: usize,
    pub edge: Edge,
    /// Q2 nodes along the edge in increasing along-edge coordinate.
    pub q2_nodes: [usize; 3],
    pub length: f64,
}

/// A resolved named boundary segment.
#[derive(Debug, Clone)]
pub struct NamedSegment {
    pub name: String,
    pub edge: Edge,
    pub edges: Vec<BoundaryEdge>,
}

/// Uniform rectangular mesh of `nx` x `ny` elements on a `lx` x `ly` domain.
#[derive(Debug)]
pub struct StructuredMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub periodic_x: bool,
    segments: Vec<NamedSegment>,
}

impl StructuredMesh {
    pub fn build(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        spec: &BoundarySpec,
    ) -> Result<Arc<Self>, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::EmptyMesh { nx, ny });
        }
        if lx <= 0.0 || ly <= 0.0 {
            return Err(MeshError::NonPositiveSize { lx, ly });
        }
        let mut mesh = Self {
            nx,
            ny,
            lx,
            ly,
            periodic_x: spec.periodic_x,
            segments: Vec::new(),
        };
        for seg in &spec.segments {
            let along_len = match seg.edge {
                Edge::Bottom | Edge::Top => lx,
                Edge::Left | Edge::Right => ly,
            };
            let (lo, hi) = seg.range.unwrap_or((0.0, along_len));
            let tol = 1e-9 * along_len;
            if lo < -tol || hi > along_len + tol || lo >= hi {
                return Err(MeshError::SegmentOutsideDomain {
                    name: seg.name.clone(),
                });
            }
            let edges: Vec<BoundaryEdge> = mesh
                .edge_iter(seg.edge)
                .filter(|be| {
                    let mid = mesh.edge_midpoint_along(be);
                    mid > lo - tol && mid < hi + tol
                })
                .collect();
            if edges.is_empty() {
                return Err(MeshError::EmptySegment {
                    name: seg.name.clone(),
                });
            }
            mesh.segments.push(NamedSegment {
                name: seg.name.clone(),
                edge: seg.edge,
                edges,
            });
        }
        Ok(Arc::new(mesh))
    }

    pub fn elem_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn elem_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Element index from its (column, row) position.
    pub fn elem_id(&self, ex: usize, ey: usize) -> usize {
        ey * self.nx + ex
    }

    pub fn elem_pos(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    /// Lower-left corner of an element.
    pub fn elem_origin(&self, e: usize) -> (f64, f64) {
        let (ex, ey) = self.elem_pos(e);
        (ex as f64 * self.hx(), ey as f64 * self.hy())
    }

    pub fn elem_center(&self, e: usize) -> (f64, f64) {
        let (x0, y0) = self.elem_origin(e);
        (x0 + 0.5 * self.hx(), y0 + 0.5 * self.hy())
    }

    // --- Q2 node grid -------------------------------------------------

    pub fn q2_dims(&self) -> (usize, usize) {
        (2 * self.nx + 1, 2 * self.ny + 1)
    }

    pub fn q2_node_count(&self) -> usize {
        let (gx, gy) = self.q2_dims();
        gx * gy
    }

    pub fn q2_node(&self, gx: usize, gy: usize) -> usize {
        gy * (2 * self.nx + 1) + gx
    }

    pub fn q2_node_grid_pos(&self, n: usize) -> (usize, usize) {
        let w = 2 * self.nx + 1;
        (n % w, n / w)
    }

    pub fn q2_node_coords(&self, n: usize) -> (f64, f64) {
        let (gx, gy) = self.q2_node_grid_pos(n);
        (
            gx as f64 * 0.5 * self.hx(),
            gy as f64 * 0.5 * self.hy(),
        )
    }

    /// Representative node under periodic pairing (right column maps to left).
    pub fn q2_master(&self, n: usize) -> usize {
        if !self.periodic_x {
            return n;
        }
        let (gx, gy) = self.q2_node_grid_pos(n);
        if gx == 2 * self.nx {
            self.q2_node(0, gy)
        } else {
            n
        }
    }

    /// Q2 connectivity in tensor order: local k = 3*iy + ix, ix/iy in {0,1,2}.
    pub fn elem_q2_nodes(&self, e: usize) -> [usize; Q2_NODES] {
        let (ex, ey) = self.elem_pos(e);
        let mut out = [0usize; Q2_NODES];
        for iy in 0..3 {
            for ix in 0..3 {
                out[3 * iy + ix] = self.q2_node(2 * ex + ix, 2 * ey + iy);
            }
        }
        out
    }

    // --- Q1 corner grid -----------------------------------------------

    pub fn q1_dims(&self) -> (usize, usize) {
        (self.nx + 1, self.ny + 1)
    }

    pub fn q1_node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn q1_node(&self, cx: usize, cy: usize) -> usize {
        cy * (self.nx + 1) + cx
    }

    pub fn q1_node_grid_pos(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn q1_node_coords(&self, n: usize) -> (f64, f64) {
        let (cx, cy) = self.q1_node_grid_pos(n);
        (cx as f64 * self.hx(), cy as f64 * self.hy())
    }

    pub fn q1_master(&self, n: usize) -> usize {
        if !self.periodic_x {
            return n;
        }
        let (cx, cy) = self.q1_node_grid_pos(n);
        if cx == self.nx {
            self.q1_node(0, cy)
        } else {
            n
        }
    }

    /// Q1 connectivity in tensor order: local k = 2*iy + ix.
    pub fn elem_q1_nodes(&self, e: usize) -> [usize; Q1_NODES] {
        let (ex, ey) = self.elem_pos(e);
        [
            self.q1_node(ex, ey),
            self.q1_node(ex + 1, ey),
            self.q1_node(ex, ey + 1),
            self.q1_node(ex + 1, ey + 1),
        ]
    }

    // --- boundary -----------------------------------------------------

    fn edge_iter(&self, edge: Edge) -> impl Iterator<Item = BoundaryEdge> + '_ {
        let count = match edge {
            Edge::Bottom | Edge::Top => self.nx,
            Edge::Left | Edge::Right => self.ny,
        };
        (0..count).map(move |i| self.boundary_edge(edge, i))
    }

    fn boundary_edge(&self, edge: Edge, i: usize) -> BoundaryEdge {
        let (element, q2_nodes, length) = match edge {
            Edge::Bottom => {
                let e = self.elem_id(i, 0);
                let n = self.elem_q2_nodes(e);
                (e, [n[0], n[1], n[2]], self.hx())
            }
            Edge::Top => {
                let e = self.elem_id(i, self.ny - 1);
                let n = self.elem_q2_nodes(e);
                (e, [n[6], n[7], n[8]], self.hx())
            }
            Edge::Left => {
                let e = self.elem_id(0, i);
                let n = self.elem_q2_nodes(e);
                (e, [n[0], n[3], n[6]], self.hy())
            }
            Edge::Right => {
                let e = self.elem_id(self.nx - 1, i);
                let n = self.elem_q2_nodes(e);
                (e, [n[2], n[5], n[8]], self.hy())
            }
        };
        BoundaryEdge {
            element,
            edge,
            q2_nodes,
            length,
        }
    }

    fn edge_midpoint_along(&self, be: &BoundaryEdge) -> f64 {
        let (x, y) = self.q2_node_coords(be.q2_nodes[1]);
        match be.edge {
            Edge::Bottom | Edge::Top => x,
            Edge::Left | Edge::Right => y,
        }
    }

    pub fn segment(&self, name: &str) -> Result<&NamedSegment, MeshError> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| MeshError::UnknownSegment {
                name: name.to_string(),
            })
    }

    pub fn segments(&self) -> &[NamedSegment] {
        &self.segments
    }

    /// All boundary edges of one domain edge (unnamed access).
    pub fn boundary_edges(&self, edge: Edge) -> Vec<BoundaryEdge> {
        self.edge_iter(edge).collect()
    }
}

// --- shape functions ----------------------------------------------------

/// Function space kinds supported by `shape_eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    ScalarQ1,
    VectorQ2,
    BoundaryTraceQ2,
}

/// Basis values and reference-coordinate derivatives at one point.
#[derive(Debug, Clone)]
pub struct ShapeEval {
    pub values: Vec<f64>,
    /// d/dxi, d/deta per basis function.
    pub gradients: Vec<[f64; 2]>,
    /// d2/dxi2, d2/dxideta, d2/deta2 per basis function.
    pub second: Vec<[f64; 3]>,
}

fn lagrange3(t: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let v = [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)];
    let d = [t - 0.5, -2.0 * t, t + 0.5];
    let dd = [1.0, -2.0, 1.0];
    (v, d, dd)
}

fn lagrange2(t: f64) -> ([f64; 2], [f64; 2]) {
    ([0.5 * (1.0 - t), 0.5 * (1.0 + t)], [-0.5, 0.5])
}

/// Evaluates basis values, gradients, and second derivatives on the reference
/// square [-1,1]^2 (or reference interval for the boundary trace).
pub fn shape_eval(kind: SpaceKind, point: (f64, f64)) -> ShapeEval {
    let (xi, eta) = point;
    match kind {
        SpaceKind::ScalarQ1 => {
            let (vx, dx) = lagrange2(xi);
            let (vy, dy) = lagrange2(eta);
            let mut values = Vec::with_capacity(4);
            let mut gradients = Vec::with_capacity(4);
            let mut second = Vec::with_capacity(4);
            for iy in 0..2 {
                for ix in 0..2 {
                    values.push(vx[ix] * vy[iy]);
                    gradients.push([dx[ix] * vy[iy], vx[ix] * dy[iy]]);
                    second.push([0.0, dx[ix] * dy[iy], 0.0]);
                }
            }
            ShapeEval {
                values,
                gradients,
                second,
            }
        }
        SpaceKind::VectorQ2 => {
            let (vx, dx, ddx) = lagrange3(xi);
            let (vy, dy, ddy) = lagrange3(eta);
            let mut values = Vec::with_capacity(9);
            let mut gradients = Vec::with_capacity(9);
            let mut second = Vec::with_capacity(9);
            for iy in 0..3 {
                for ix in 0..3 {
                    values.push(vx[ix] * vy[iy]);
                    gradients.push([dx[ix] * vy[iy], vx[ix] * dy[iy]]);
                    second.push([
                        ddx[ix] * vy[iy],
                        dx[ix] * dy[iy],
                        vx[ix] * ddy[iy],
                    ]);
                }
            }
            ShapeEval {
                values,
                gradients,
                second,
            }
        }
        SpaceKind::BoundaryTraceQ2 => {
            let (v, d, dd) = lagrange3(xi);
            ShapeEval {
                values: v.to_vec(),
                gradients: d.iter().map(|&g| [g, 0.0]).collect(),
                second: dd.iter().map(|&s| [s, 0.0, 0.0]).collect(),
            }
        }
    }
}

// --- quadrature -----------------------------------------------------------

/// Tensor-product Gauss rule on the reference square.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// (xi, eta, weight) triples.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn gauss_1d_3() -> [(f64, f64); 3] {
    let a = (3.0f64 / 5.0).sqrt();
    [(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
}

impl QuadratureRule {
    /// The 3x3 Gauss rule; exact for biquartic polynomials.
    pub fn gauss_3x3() -> Self {
        let g = gauss_1d_3();
        let mut points = Vec::with_capacity(9);
        for &(eta, wy) in &g {
            for &(xi, wx) in &g {
                points.push((xi, eta, wx * wy));
            }
        }
        Self { points }
    }
}

// --- dof spaces -------------------------------------------------------------

/// Scalar Q1 space on the corner nodes, with optional periodic pairing.
#[derive(Debug, Clone)]
pub struct Q1Space {
    dof_of_node: Vec<usize>,
    /// One representative node per dof.
    node_of_dof: Vec<usize>,
    pub ndofs: usize,
}

impl Q1Space {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let n = mesh.q1_node_count();
        let mut dof_of_node = vec![usize::MAX; n];
        let mut node_of_dof = Vec::new();
        let mut next = 0usize;
        for node in 0..n {
            let m = mesh.q1_master(node);
            if m == node {
                dof_of_node[node] = next;
                node_of_dof.push(node);
                next += 1;
            }
        }
        for node in 0..n {
            let m = mesh.q1_master(node);
            if m != node {
                dof_of_node[node] = dof_of_node[m];
            }
        }
        Self {
            dof_of_node,
            node_of_dof,
            ndofs: next,
        }
    }

    pub fn dof(&self, node: usize) -> usize {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    /// Nodal values of a dof vector on the full (unpaired) node grid.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.dof_of_node.iter().map(|&d| x[d]).collect()
    }
}

/// Per-node constraint for the displacement space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeConstraint {
    #[default]
    Free,
    Fixed,
    /// Zero x-displacement, free y (vertical roller line).
    RollerX,
    /// Zero y-displacement, free x.
    RollerY,
}

/// Vector Q2 space with eliminated fixed dofs and periodic pairing.
///
/// Dof ordering is node-major with the x-component before y.
#[derive(Debug, Clone)]
pub struct Q2VectorSpace {
    /// 2*node + comp -> dof id, u32::MAX if constrained to zero.
    dof_of: Vec<u32>,
    pub ndofs: usize,
}

pub const FIXED_DOF: u32 = u32::MAX;

impl Q2VectorSpace {
    pub fn new(mesh: &StructuredMesh, constraint: &[NodeConstraint]) -> Self {
        let n = mesh.q2_node_count();
        assert_eq!(constraint.len(), n);
        let mut dof_of = vec![FIXED_DOF; 2 * n];
        let mut next = 0u32;
        for node in 0..n {
            let m = mesh.q2_master(node);
            if m != node {
                continue;
            }
            for comp in 0..2 {
                let fixed = match constraint[node] {
                    NodeConstraint::Free => false,
                    NodeConstraint::Fixed => true,
                    NodeConstraint::RollerX => comp == 0,
                    NodeConstraint::RollerY => comp == 1,
                };
                if !fixed {
                    dof_of[2 * node + comp] = next;
                    next += 1;
                }
            }
        }
        for node in 0..n {
            let m = mesh.q2_master(node);
            if m != node {
                dof_of[2 * node] = dof_of[2 * m];
                dof_of[2 * node + 1] = dof_of[2 * m + 1];
            }
        }
        Self {
            dof_of,
            ndofs: next as usize,
        }
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> u32 {
        self.dof_of[2 * node + comp]
    }
}

/// Trace of the Q2 vector space on a union of named boundary segments.
#[derive(Debug, Clone)]
pub struct TraceSpace {
    /// Unique representative Q2 node ids carrying trace dofs, ascending.
    pub nodes: Vec<usize>,
    /// 2*node + comp -> trace dof id (dense over the q2 grid, FIXED_DOF elsewhere).
    dof_of: Vec<u32>,
    /// All boundary edges of the traced segments.
    pub edges: Vec<BoundaryEdge>,
    /// Segment name per edge (index into `segment_names`).
    pub edge_segment: Vec<usize>,
    pub segment_names: Vec<String>,
    pub ndofs: usize,
}

impl TraceSpace {
    pub fn new(mesh: &StructuredMesh, segment_names: &[&str]) -> Result<Self, MeshError> {
        let mut edges = Vec::new();
        let mut edge_segment = Vec::new();
        let mut names = Vec::new();
        for (si, name) in segment_names.iter().enumerate() {
            let seg = mesh.segment(name)?;
            for be in &seg.edges {
                edges.push(*be);
                edge_segment.push(si);
            }
            names.push(name.to_string());
        }
        let mut node_set: Vec<usize> = edges
            .iter()
            .flat_map(|be| be.q2_nodes.iter().map(|&n| mesh.q2_master(n)))
            .collect();
        node_set.sort_unstable();
        node_set.dedup();
        let mut dof_of = vec![FIXED_DOF; 2 * mesh.q2_node_count()];
        for (i, &node) in node_set.iter().enumerate() {
            dof_of[2 * node] = (2 * i) as u32;
            dof_of[2 * node + 1] = (2 * i + 1) as u32;
        }
        // Periodic slaves share the master's trace dof.
        for node in 0..mesh.q2_node_count() {
            let m = mesh.q2_master(node);
            if m != node {
                dof_of[2 * node] = dof_of[2 * m];
                dof_of[2 * node + 1] = dof_of[2 * m + 1];
            }
        }
        let ndofs = 2 * node_set.len();
        Ok(Self {
            nodes: node_set,
            dof_of,
            edges,
            edge_segment,
            segment_names: names,
            ndofs,
        })
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> u32 {
        self.dof_of[2 * node + comp]
    }
}

// --- generic Q1 assembly -----------------------------------------------------

/// Per-quadrature-point data handed to Q1 element kernels.
pub struct Q1QuadData {
    /// Physical integration weight (reference weight times |J|).
    pub w: Vec<f64>,
    /// Basis values per qp.
    pub values: Vec<[f64; Q1_NODES]>,
    /// Physical gradients per qp.
    pub grads: Vec<[[f64; 2]; Q1_NODES]>,
    /// Reference coordinates per qp.
    pub ref_coords: Vec<(f64, f64)>,
}

impl Q1QuadData {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let rule = QuadratureRule::gauss_3x3();
        let jac = 0.25 * mesh.hx() * mesh.hy();
        let sx = 2.0 / mesh.hx();
        let sy = 2.0 / mesh.hy();
        let mut w = Vec::new();
        let mut values = Vec::new();
        let mut grads = Vec::new();
        let mut ref_coords = Vec::new();
        for &(xi, eta, wq) in &rule.points {
            let se = shape_eval(SpaceKind::ScalarQ1, (xi, eta));
            let mut v = [0.0; Q1_NODES];
            let mut g = [[0.0; 2]; Q1_NODES];
            for a in 0..Q1_NODES {
                v[a] = se.values[a];
                g[a] = [se.gradients[a][0] * sx, se.gradients[a][1] * sy];
            }
            w.push(wq * jac);
            values.push(v);
            grads.push(g);
            ref_coords.push((xi, eta));
        }
        Self {
            w,
            values,
            grads,
            ref_coords,
        }
    }
}

/// Sparsity pattern of a Q1 bilinear form.
pub fn q1_pattern(mesh: &StructuredMesh, space: &Q1Space) -> Arc<SparsityPattern> {
    let mut pairs = Vec::with_capacity(mesh.elem_count() * 16);
    for e in 0..mesh.elem_count() {
        let nodes = mesh.elem_q1_nodes(e);
        for &a in &nodes {
            for &b in &nodes {
                pairs.push((space.dof(a) as u32, space.dof(b) as u32));
            }
        }
    }
    SparsityPattern::from_pairs(space.ndofs, space.ndofs, &mut pairs)
}

/// Assembles a Q1 bilinear form from a pure per-element kernel.
///
/// The kernel returns the local matrix in the element's tensor-ordered local
/// basis; contributions are summed into the global matrix with periodic dofs
/// merged by the space.
pub fn assemble_q1_matrix<F>(
    mesh: &StructuredMesh,
    space: &Q1Space,
    qd: &Q1QuadData,
    mut kernel: F,
) -> CscMatrix
where
    F: FnMut(usize, &Q1QuadData) -> [[f64; Q1_NODES]; Q1_NODES],
{
    let pattern = q1_pattern(mesh, space);
    let mut mat = CscMatrix::zeros(pattern);
    for e in 0..mesh.elem_count() {
        let local = kernel(e, qd);
        let nodes = mesh.elem_q1_nodes(e);
        for (i, &a) in nodes.iter().enumerate() {
            for (j, &b) in nodes.iter().enumerate() {
                mat.add(space.dof(a), space.dof(b), local[i][j]);
            }
        }
    }
    mat
}

/// Assembles a Q1 linear form from a pure per-element kernel.
pub fn assemble_q1_vector<F>(
    mesh: &StructuredMesh,
    space: &Q1Space,
    qd: &Q1QuadData,
    mut kernel: F,
) -> Vec<f64>
where
    F: FnMut(usize, &Q1QuadData) -> [f64; Q1_NODES],
{
    let mut out = vec![0.0; space.ndofs];
    for e in 0..mesh.elem_count() {
        let local = kernel(e, qd);
        let nodes = mesh.elem_q1_nodes(e);
        for (i, &a) in nodes.iter().enumerate() {
            out[space.dof(a)] += local[i];
        }
    }
    out
}

/// Q1 mass kernel (identical for every element of a uniform mesh).
pub fn q1_mass_kernel(qd: &Q1QuadData) -> [[f64; Q1_NODES]; Q1_NODES] {
    let mut m = [[0.0; Q1_NODES]; Q1_NODES];
    for (qp, &w) in qd.w.iter().enumerate() {
        let v = &qd.values[qp];
        for a in 0..Q1_NODES {
            for b in 0..Q1_NODES {
                m[a][b] += w * v[a] * v[b];
            }
        }
    }
    m
}

/// Q1 diffusion (Laplace) kernel.
pub fn q1_stiffness_kernel(qd: &Q1QuadData) -> [[f64; Q1_NODES]; Q1_NODES] {
    let mut k = [[0.0; Q1_NODES]; Q1_NODES];
    for (qp, &w) in qd.w.iter().enumerate() {
        let g = &qd.grads[qp];
        for a in 0..Q1_NODES {
            for b in 0..Q1_NODES {
                k[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn build_mesh_smallest() {
        let mesh = StructuredMesh::build(1, 1, 1.0, 1.0, &BoundarySpec::default()).unwrap();
        assert_eq!(mesh.elem_count(), 1);
        assert_eq!(mesh.q1_node_count(), 4);
        assert_eq!(mesh.q2_node_count(), 9);
        assert_eq!(mesh.elem_area(), 1.0);
    }

    #[test]
    fn build_mesh_push_lift_tags() {
        let spec = BoundarySpec {
            segments: vec![SegmentSpec::whole("gamma_d", Edge::Top)],
            periodic_x: true,
        };
        let mesh = StructuredMesh::build(100, 100, 1.0, 1.0, &spec).unwrap();
        assert_eq!(mesh.elem_count(), 10_000);
        let seg = mesh.segment("gamma_d").unwrap();
        assert_eq!(seg.edges.len(), 100);
        for be in &seg.edges {
            let (_, y) = mesh.q2_node_coords(be.q2_nodes[0]);
            assert_relative_eq!(y, 1.0);
        }
    }

    #[test]
    fn build_mesh_hook_element_size() {
        let mesh =
            StructuredMesh::build(240, 120, 56.0, 32.0, &BoundarySpec::default()).unwrap();
        assert_relative_eq!(mesh.hx(), 56.0 / 240.0, max_relative = 1e-14);
        assert_relative_eq!(mesh.hy(), 32.0 / 120.0, max_relative = 1e-14);
    }

    #[test]
    fn build_mesh_rejects_bad_input() {
        assert!(StructuredMesh::build(0, 1, 1.0, 1.0, &BoundarySpec::default()).is_err());
        assert!(StructuredMesh::build(1, 1, -1.0, 1.0, &BoundarySpec::default()).is_err());
        let spec = BoundarySpec {
            segments: vec![SegmentSpec::part("bad", Edge::Top, 0.5, 2.0)],
            periodic_x: false,
        };
        assert!(StructuredMesh::build(4, 4, 1.0, 1.0, &spec).is_err());
    }

    #[test]
    fn q1_center_values() {
        let se = shape_eval(SpaceKind::ScalarQ1, (0.0, 0.0));
        for v in se.values {
            assert_relative_eq!(v, 0.25);
        }
    }

    #[test]
    fn q2_nodal_kronecker() {
        let coords = [-1.0, 0.0, 1.0];
        for iy in 0..3 {
            for ix in 0..3 {
                let se = shape_eval(SpaceKind::VectorQ2, (coords[ix], coords[iy]));
                for k in 0..9 {
                    let expect = if k == 3 * iy + ix { 1.0 } else { 0.0 };
                    assert_relative_eq!(se.values[k], expect, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_derivative_sums() {
        for &kind in &[SpaceKind::ScalarQ1, SpaceKind::VectorQ2] {
            for &(xi, eta) in &[(0.3, -0.7), (-0.9, 0.2), (0.0, 0.0)] {
                let se = shape_eval(kind, (xi, eta));
                let sv: f64 = se.values.iter().sum();
                assert_relative_eq!(sv, 1.0, epsilon = 1e-14);
                for d in 0..2 {
                    let sg: f64 = se.gradients.iter().map(|g| g[d]).sum();
                    assert_relative_eq!(sg, 0.0, epsilon = 1e-14);
                }
                for d in 0..3 {
                    let ss: f64 = se.second.iter().map(|s| s[d]).sum();
                    assert_relative_eq!(ss, 0.0, epsilon = 1e-14);
                }
            }
        }
    }

    /// Q2 interpolates quadratics exactly, so the interpolant of u(x) = x^2
    /// must have physical second derivative exactly 2 on any element.
    #[test]
    fn q2_second_derivative_of_quadratic() {
        let mesh = StructuredMesh::build(3, 2, 0.9, 0.5, &BoundarySpec::default()).unwrap();
        let sx = 2.0 / mesh.hx();
        for e in 0..mesh.elem_count() {
            let nodes = mesh.elem_q2_nodes(e);
            let vals: Vec<f64> = nodes
                .iter()
                .map(|&n| {
                    let (x, _) = mesh.q2_node_coords(n);
                    x * x
                })
                .collect();
            for &(xi, eta) in &[(0.17, -0.53), (-0.8, 0.8)] {
                let se = shape_eval(SpaceKind::VectorQ2, (xi, eta));
                let dxx: f64 = (0..9).map(|a| vals[a] * se.second[a][0]).sum::<f64>() * sx * sx;
                assert_relative_eq!(dxx, 2.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gauss_3x3_integrates_biquartic() {
        let rule = QuadratureRule::gauss_3x3();
        let wsum: f64 = rule.points.iter().map(|p| p.2).sum();
        assert_relative_eq!(wsum, 4.0, epsilon = 1e-14);
        // integral of xi^4 eta^4 over the reference square = (2/5)^2
        let int: f64 = rule
            .points
            .iter()
            .map(|&(x, y, w)| w * x.powi(4) * y.powi(4))
            .sum();
        assert_relative_eq!(int, 4.0 / 25.0, epsilon = 1e-14);
    }

    #[test]
    fn mass_kernel_row_sums() {
        let mesh = StructuredMesh::build(1, 1, 1.0, 1.0, &BoundarySpec::default()).unwrap();
        let space = Q1Space::new(&mesh);
        let qd = Q1QuadData::new(&mesh);
        let m = assemble_q1_matrix(&mesh, &space, &qd, |_, qd| q1_mass_kernel(qd));
        let dense = m.to_dense();
        // hand-integrated bilinear mass matrix on the unit square
        let expect = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0 / 9.0,
                1.0 / 18.0,
                1.0 / 18.0,
                1.0 / 36.0,
                1.0 / 18.0,
                1.0 / 9.0,
                1.0 / 36.0,
                1.0 / 18.0,
                1.0 / 18.0,
                1.0 / 36.0,
                1.0 / 9.0,
                1.0 / 18.0,
                1.0 / 36.0,
                1.0 / 18.0,
                1.0 / 18.0,
                1.0 / 9.0,
            ],
        );
        assert_relative_eq!(dense, expect, epsilon = 1e-14);
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| dense[(i, j)]).sum();
            assert_relative_eq!(row, 0.25, epsilon = 1e-14);
        }
        let total: f64 = dense.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_kernel_gives_zero_vector() {
        let mesh = StructuredMesh::build(3, 3, 1.0, 1.0, &BoundarySpec::default()).unwrap();
        let space = Q1Space::new(&mesh);
        let qd = Q1QuadData::new(&mesh);
        let v = assemble_q1_vector(&mesh, &space, &qd, |_, _| [0.0; 4]);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplace_kernel_nullspace_is_constants() {
        let mesh = StructuredMesh::build(2, 2, 1.0, 1.0, &BoundarySpec::default()).unwrap();
        let space = Q1Space::new(&mesh);
        let qd = Q1QuadData::new(&mesh);
        let k = assemble_q1_matrix(&mesh, &space, &qd, |_, qd| q1_stiffness_kernel(qd));
        let ones = vec![1.0; space.ndofs];
        let mut out = vec![0.0; space.ndofs];
        k.matvec(&ones, &mut out);
        for v in out {
            assert!(v.abs() < 1e-13);
        }
        let d = k.to_dense();
        assert_relative_eq!(&d, &d.transpose(), epsilon = 1e-14);
    }

    /// Total quadrature weight equals the physical domain area.
    #[test]
    fn quadrature_measures_domain_area() {
        for &(nx, ny, lx, ly) in &[(3usize, 5usize, 2.7, 0.9), (7, 2, 56.0, 32.0)] {
            let mesh = StructuredMesh::build(nx, ny, lx, ly, &BoundarySpec::default()).unwrap();
            let qd = Q1QuadData::new(&mesh);
            let per_elem: f64 = qd.w.iter().sum();
            let total = per_elem * mesh.elem_count() as f64;
            assert_relative_eq!(total, lx * ly, max_relative = 1e-12);
        }
    }

    /// A field constant along the pairing direction assembles to the same
    /// residual with and without periodic pairing.
    #[test]
    fn periodic_assembly_matches_for_x_constant_fields() {
        let spec_p = BoundarySpec {
            segments: vec![],
            periodic_x: true,
        };
        let mesh_p = StructuredMesh::build(4, 3, 1.0, 1.0, &spec_p).unwrap();
        let mesh_n = StructuredMesh::build(4, 3, 1.0, 1.0, &BoundarySpec::default()).unwrap();
        let sp_p = Q1Space::new(&mesh_p);
        let sp_n = Q1Space::new(&mesh_n);
        let qd = Q1QuadData::new(&mesh_n);
        let f = |_: usize, qd: &Q1QuadData| q1_stiffness_kernel(qd);
        let kp = assemble_q1_matrix(&mesh_p, &sp_p, &qd, f);
        let kn = assemble_q1_matrix(&mesh_n, &sp_n, &qd, f);
        // field varying only in y
        let xp: Vec<f64> = (0..sp_p.ndofs)
            .map(|d| {
                let (_, y) = mesh_p.q1_node_coords(sp_p.node_of_dof(d));
                y * y + 0.5
            })
            .collect();
        let xn: Vec<f64> = (0..sp_n.ndofs)
            .map(|d| {
                let (_, y) = mesh_n.q1_node_coords(sp_n.node_of_dof(d));
                y * y + 0.5
            })
            .collect();
        let mut rp = vec![0.0; sp_p.ndofs];
        let mut rn = vec![0.0; sp_n.ndofs];
        kp.matvec(&xp, &mut rp);
        kn.matvec(&xn, &mut rn);
        for node in 0..mesh_p.q1_node_count() {
            let (cx, _) = mesh_p.q1_node_grid_pos(node);
            let vp = rp[sp_p.dof(node)];
            let vn = rn[sp_n.dof(node)];
            if cx == 0 || cx == mesh_p.nx {
                // paired dof accumulates both boundary columns
                let other = if cx == 0 { mesh_p.nx } else { 0 };
                let (_, cy) = mesh_p.q1_node_grid_pos(node);
                let vn2 = rn[sp_n.dof(mesh_n.q1_node(other, cy))];
                assert_relative_eq!(vp, vn + vn2, epsilon = 1e-12);
            } else {
                assert_relative_eq!(vp, vn, epsilon = 1e-12);
            }
        }
    }

    /// Q2 nodal interpolation of a cubic converges with rate >= 2.9.
    #[test]
    fn q2_interpolation_rate_for_cubic() {
        let f = |x: f64, y: f64| x.powi(3) + y.powi(3) - x * x * y;
        let rule = QuadratureRule::gauss_3x3();
        let mut errs = Vec::new();
        for &n in &[4usize, 8, 16] {
            let mesh = StructuredMesh::build(n, n, 1.0, 1.0, &BoundarySpec::default()).unwrap();
            let jac = 0.25 * mesh.hx() * mesh.hy();
            let mut err2 = 0.0;
            for e in 0..mesh.elem_count() {
                let nodes = mesh.elem_q2_nodes(e);
                let vals: Vec<f64> = nodes
                    .iter()
                    .map(|&nd| {
                        let (x, y) = mesh.q2_node_coords(nd);
                        f(x, y)
                    })
                    .collect();
                let (x0, y0) = mesh.elem_origin(e);
                for &(xi, eta, w) in &rule.points {
                    let se = shape_eval(SpaceKind::VectorQ2, (xi, eta));
                    let uh: f64 = (0..9).map(|a| vals[a] * se.values[a]).sum();
                    let x = x0 + 0.5 * (xi + 1.0) * mesh.hx();
                    let y = y0 + 0.5 * (eta + 1.0) * mesh.hy();
                    err2 += w * jac * (uh - f(x, y)).powi(2);
                }
            }
            errs.push(err2.sqrt());
        }
        let rate1 = (errs[0] / errs[1]).log2();
        let rate2 = (errs[1] / errs[2]).log2();
        assert!(rate1 >= 2.9, "rate {rate1}");
        assert!(rate2 >= 2.9, "rate {rate2}");
    }
}
