//! Continuous Galerkin assembly with per-element order, global Helmholtz/mass
//! solves, and the discontinuous Galerkin trace (element interfaces).
//!
//! Global numbering puts Dirichlet degrees of freedom first (vertices, then
//! edge modes), followed by free vertices, free edge modes and element
//! interiors. A shared edge carries `min(P_left, P_right)` modes; higher local
//! edge modes of the richer element are pinned to zero.

use std::collections::{BTreeMap, BTreeSet};

use crate::basis::modified_a_degree;
use crate::error::{Error, Result};
use crate::explist::ExpList;
use crate::linalg::{dot, lu_solve, Matrix};
use crate::meshio::MeshGraph;
use crate::quadrature::{make_rule, PointsKey, PointsType};
use crate::stdregions::ShapeType;

/// A Dirichlet edge and the global ids of its edge modes (slot order).
#[derive(Debug, Clone)]
struct DirichletEdge {
    element: usize,
    local_edge: usize,
    forward: bool,
    order: usize,
    gids: Vec<usize>,
}

/// Local coefficient → signed global degree of freedom.
#[derive(Debug, Clone)]
pub struct AssemblyMap {
    local_to_global: Vec<Option<(usize, f64)>>,
    n_global: usize,
    n_dirichlet: usize,
    edge_orders: BTreeMap<u32, usize>,
    dirichlet_vertices: Vec<(usize, [f64; 2])>,
    dirichlet_edges: Vec<DirichletEdge>,
    hierarchical: bool,
}

fn parity(k: usize) -> f64 {
    if (k - 1).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

impl AssemblyMap {
    /// Builds the map; `dirichlet` lists segment ids carrying Dirichlet data.
    pub fn new(mesh: &MeshGraph, list: &ExpList, dirichlet: &BTreeSet<u32>) -> Result<Self> {
        let hierarchical = list.basis().is_hierarchical();
        if list.elements().iter().any(|e| e.std.shape() == ShapeType::Tri) && !hierarchical {
            return Err(Error::InvalidBasis("CG triangles require the modified basis".into()));
        }
        // per element: vertex ids, segment ids, orientations
        let mut topo = Vec::with_capacity(list.len());
        let mut seg_users: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, e) in list.elements().iter().enumerate() {
            let verts = mesh.element_vertices(e.id)?;
            let edges = mesh.element_edges(e.id)?;
            let orient = mesh.edge_orientations(e.id)?;
            for &s in &edges {
                seg_users.entry(s).or_default().push(i);
            }
            topo.push((verts, edges, orient));
        }
        let mut edge_orders = BTreeMap::new();
        for (&s, users) in &seg_users {
            if users.len() > 2 {
                return Err(Error::Mesh(format!(
                    "segment {s} is shared by {} elements (non-conformal mesh)",
                    users.len()
                )));
            }
            let orders: Vec<usize> = users.iter().map(|&u| list.element(u).order()).collect();
            if !hierarchical && orders.iter().any(|&p| p != orders[0]) {
                return Err(Error::InvalidBasis(
                    "variable order requires a hierarchical (modified) basis".into(),
                ));
            }
            edge_orders.insert(s, *orders.iter().min().unwrap());
        }
        let on_dirichlet_seg = |s: &u32| dirichlet.contains(s) && seg_users.contains_key(s);
        let mut dir_verts = BTreeSet::new();
        for s in dirichlet.iter().filter(|s| on_dirichlet_seg(s)) {
            dir_verts.extend(mesh.segments[s]);
        }
        let all_verts: BTreeSet<u32> = topo.iter().flat_map(|t| t.0.iter().copied()).collect();

        let mut next = 0usize;
        let mut vert_gid = BTreeMap::new();
        let mut edge_gid: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &v in &dir_verts {
            vert_gid.insert(v, next);
            next += 1;
        }
        for (&s, &p) in edge_orders.iter().filter(|(s, _)| on_dirichlet_seg(s)) {
            edge_gid.insert(s, (next..next + p - 1).collect());
            next += p - 1;
        }
        let n_dirichlet = next;
        for &v in all_verts.iter().filter(|v| !dir_verts.contains(v)) {
            vert_gid.insert(v, next);
            next += 1;
        }
        for (&s, &p) in edge_orders.iter().filter(|(s, _)| !on_dirichlet_seg(s)) {
            edge_gid.insert(s, (next..next + p - 1).collect());
            next += p - 1;
        }

        let mut l2g = vec![None; list.ncoeffs()];
        let mut dirichlet_vertices = Vec::new();
        let mut dirichlet_edges = Vec::new();
        let mut seen_dir_vert = BTreeSet::new();
        for (i, e) in list.elements().iter().enumerate() {
            let (verts, edges, orient) = &topo[i];
            let off = e.coeff_offset;
            for (lv, &m) in e.std.vertex_modes().iter().enumerate() {
                let g = vert_gid[&verts[lv]];
                l2g[off + m] = Some((g, 1.0));
                if g < n_dirichlet && seen_dir_vert.insert(verts[lv]) {
                    dirichlet_vertices.push((g, e.geom.vertices()[lv]));
                }
            }
            let p_el = e.order();
            for (le, &s) in edges.iter().enumerate() {
                let p_edge = edge_orders[&s];
                let gids = &edge_gid[&s];
                for m in e.std.edge_modes(le) {
                    let k = m.slot;
                    l2g[off + m.mode] = if k < p_edge {
                        if hierarchical {
                            let sign = if orient[le] { m.sign } else { m.sign * parity(k) };
                            Some((gids[k - 1], sign))
                        } else {
                            let slot = if orient[le] { k } else { p_el - k };
                            Some((gids[slot - 1], 1.0))
                        }
                    } else {
                        None
                    };
                }
                if on_dirichlet_seg(&s) && !dirichlet_edges.iter().any(|d: &DirichletEdge| d.gids == *gids) {
                    dirichlet_edges.push(DirichletEdge {
                        element: i,
                        local_edge: le,
                        forward: orient[le],
                        order: p_edge,
                        gids: gids.clone(),
                    });
                }
            }
            for m in e.std.interior_modes() {
                l2g[off + m] = Some((next, 1.0));
                next += 1;
            }
        }
        dirichlet_vertices.sort_by_key(|d| d.0);
        Ok(AssemblyMap {
            local_to_global: l2g,
            n_global: next,
            n_dirichlet,
            edge_orders,
            dirichlet_vertices,
            dirichlet_edges,
            hierarchical,
        })
    }

    pub fn num_global(&self) -> usize {
        self.n_global
    }

    pub fn num_dirichlet(&self) -> usize {
        self.n_dirichlet
    }

    pub fn num_local(&self) -> usize {
        self.local_to_global.len()
    }

    /// Signed global target of a local coefficient (`None` when pinned to zero).
    pub fn global_of(&self, local: usize) -> Option<(usize, f64)> {
        self.local_to_global[local]
    }

    /// Order used on each mesh segment.
    pub fn edge_orders(&self) -> &BTreeMap<u32, usize> {
        &self.edge_orders
    }

    /// Gather: `g[map(l)] += sign · l`.
    pub fn assemble(&self, local: &[f64]) -> Result<Vec<f64>> {
        if local.len() != self.num_local() {
            return Err(Error::SizeMismatch {
                context: "assemble local vector",
                expected: self.num_local(),
                actual: local.len(),
            });
        }
        let mut g = vec![0.0; self.n_global];
        for (l, t) in local.iter().zip(&self.local_to_global) {
            if let Some((gi, s)) = *t {
                g[gi] += s * l;
            }
        }
        Ok(g)
    }

    /// Scatter: `l = sign · g[map(l)]`, pinned modes set to zero.
    pub fn scatter(&self, global: &[f64]) -> Result<Vec<f64>> {
        if global.len() != self.n_global {
            return Err(Error::SizeMismatch {
                context: "scatter global vector",
                expected: self.n_global,
                actual: global.len(),
            });
        }
        Ok(self
            .local_to_global
            .iter()
            .map(|t| t.map_or(0.0, |(gi, s)| s * global[gi]))
            .collect())
    }

    /// Global coefficients of the Dirichlet data `g` (zero on free dofs).
    pub fn dirichlet_values(&self, list: &ExpList, g: &dyn Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_global];
        for &(gid, x) in &self.dirichlet_vertices {
            out[gid] = g(x[0], x[1]);
        }
        for d in &self.dirichlet_edges {
            let p = d.order;
            if p < 2 {
                continue;
            }
            let gll = make_rule(PointsKey::new(p + 1, PointsType::GaussLobattoLegendre)?);
            // parameters along the segment direction, mapped to the element's local edge
            let s_glob: Vec<f64> = gll.points.clone();
            let s_loc: Vec<f64> = s_glob
                .iter()
                .map(|&s| if d.forward { s } else { -s })
                .collect();
            let el = list.element(d.element);
            let pts = el.geom.edge_points(d.local_edge, &s_loc)?;
            let vals: Vec<f64> = pts.iter().map(|q| g(q.x[0], q.x[1])).collect();
            if self.hierarchical {
                let (g0, g1) = (vals[0], vals[p]);
                let interior = &s_glob[1..p];
                let a = Matrix::from_fn(p - 1, p - 1, |i, k| modified_a_degree(k + 2, interior[i]).0);
                let resid: Vec<f64> = (1..p)
                    .map(|i| {
                        let s = s_glob[i];
                        vals[i] - 0.5 * (1.0 - s) * g0 - 0.5 * (1.0 + s) * g1
                    })
                    .collect();
                let c = lu_solve(&a, &resid)?;
                for (k, &gid) in d.gids.iter().enumerate() {
                    out[gid] = c[k];
                }
            } else {
                for (k, &gid) in d.gids.iter().enumerate() {
                    out[gid] = vals[k + 1];
                }
            }
        }
        Ok(out)
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .binary_search(&c)
            .map_or(0.0, |k| self.vals[range.start + k])
    }
}

/// A symmetric linear operator for conjugate gradients.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let range = self.row_ptr[r]..self.row_ptr[r + 1];
            *yr = self.cols[range.clone()]
                .iter()
                .zip(&self.vals[range])
                .map(|(&c, v)| v * x[c])
                .sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self[(i, i)]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Diagonally preconditioned conjugate gradients.
pub fn solve_pcg(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PcgSolution> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::SizeMismatch {
            context: "pcg right-hand side",
            expected: n,
            actual: rhs.len(),
        });
    }
    let diag = op.diagonal();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0 || !d.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            pivot: i,
            value: diag[i],
        });
    }
    let bnorm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(PcgSolution {
            x,
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: it, value: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        history.push(res);
        if res <= tol {
            return Ok(PcgSolution {
                x,
                iterations: it,
                residual: res,
                history,
            });
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: *history.last().unwrap(),
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    Mass,
    /// `−∇² + λ`.
    Helmholtz(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Free-dof count above which the operator is applied element by element.
    pub matrix_free_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 10_000,
            matrix_free_threshold: 20_000,
        }
    }
}

/// Elemental operator matrices for `kind`.
pub fn elemental_matrices(list: &ExpList, kind: OperatorKind) -> Vec<Matrix> {
    list.elements()
        .iter()
        .map(|e| {
            let (mass_w, lambda) = match kind {
                OperatorKind::Mass => (1.0, 0.0),
                OperatorKind::Helmholtz(l) => (l, 1.0),
            };
            let scaled: Vec<f64> = e.gf.jw.iter().map(|w| w * mass_w).collect();
            let mut m = e.std.weighted_mass(&scaled);
            if lambda == 0.0 {
                return m;
            }
            let dense = e.std.dense();
            let (nc, np) = (e.ncoeffs(), e.npoints());
            let mut gx = Matrix::zeros(nc, np);
            let mut gy = Matrix::zeros(nc, np);
            for n in 0..nc {
                for k in 0..np {
                    let (d1, d2) = (dense.basis_deriv[0][(n, k)], dense.basis_deriv[1][(n, k)]);
                    let inv = e.gf.inv[k];
                    gx[(n, k)] = inv[0][0] * d1 + inv[1][0] * d2;
                    gy[(n, k)] = inv[0][1] * d1 + inv[1][1] * d2;
                }
            }
            let mut wrow = vec![0.0; np];
            for a in 0..nc {
                for b in a..nc {
                    for (k, w) in wrow.iter_mut().enumerate() {
                        *w = gx[(a, k)] * gx[(b, k)] + gy[(a, k)] * gy[(b, k)];
                    }
                    let v = dot(&wrow, &e.gf.jw);
                    m[(a, b)] += v;
                    if a != b {
                        m[(b, a)] += v;
                    }
                }
            }
            m
        })
        .collect()
}

enum Storage {
    Assembled(CsrMatrix),
    MatrixFree,
}

/// Global system restricted to the free (non-Dirichlet) degrees of freedom.
pub struct GlobalSystem<'a> {
    map: &'a AssemblyMap,
    list: &'a ExpList,
    elem: Vec<Matrix>,
    storage: Storage,
}

impl<'a> GlobalSystem<'a> {
    pub fn new(map: &'a AssemblyMap, list: &'a ExpList, kind: OperatorKind, opts: &SolverOptions) -> Self {
        let elem = elemental_matrices(list, kind);
        let nd = map.num_dirichlet();
        let nfree = map.num_global() - nd;
        let storage = if nfree > opts.matrix_free_threshold {
            Storage::MatrixFree
        } else {
            let mut t = Vec::new();
            for (e, m) in list.elements().iter().zip(&elem) {
                let off = e.coeff_offset;
                for a in 0..e.ncoeffs() {
                    let Some((ga, sa)) = map.global_of(off + a) else { continue };
                    if ga < nd {
                        continue;
                    }
                    for b in 0..e.ncoeffs() {
                        let Some((gb, sb)) = map.global_of(off + b) else { continue };
                        if gb < nd {
                            continue;
                        }
                        t.push((ga - nd, gb - nd, sa * sb * m[(a, b)]));
                    }
                }
            }
            Storage::Assembled(CsrMatrix::from_triplets(nfree, t))
        };
        GlobalSystem {
            map,
            list,
            elem,
            storage,
        }
    }

    pub fn is_matrix_free(&self) -> bool {
        matches!(self.storage, Storage::MatrixFree)
    }

    /// Full operator applied to a global vector (Dirichlet block included).
    pub fn apply_full(&self, x: &[f64]) -> Result<Vec<f64>> {
        let local = self.map.scatter(x)?;
        let mut out = vec![0.0; local.len()];
        for (e, m) in self.list.elements().iter().zip(&self.elem) {
            m.matvec_into(&local[e.coeff_range()], &mut out[e.coeff_range()]);
        }
        self.map.assemble(&out)
    }
}

impl LinearOperator for GlobalSystem<'_> {
    fn dim(&self) -> usize {
        self.map.num_global() - self.map.num_dirichlet()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.storage {
            Storage::Assembled(csr) => csr.apply(x, y),
            Storage::MatrixFree => {
                let nd = self.map.num_dirichlet();
                let mut full = vec![0.0; self.map.num_global()];
                full[nd..].copy_from_slice(x);
                let r = self.apply_full(&full).expect("consistent sizes");
                y.copy_from_slice(&r[nd..]);
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Assembled(csr) => csr.diagonal(),
            Storage::MatrixFree => {
                let nd = self.map.num_dirichlet();
                let mut d = vec![0.0; self.map.num_global()];
                for (e, m) in self.list.elements().iter().zip(&self.elem) {
                    for a in 0..e.ncoeffs() {
                        if let Some((g, _)) = self.map.global_of(e.coeff_offset + a) {
                            d[g] += m[(a, a)];
                        }
                    }
                }
                d.split_off(nd)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalSolution {
    /// Local (per-element) coefficients of the continuous solution.
    pub coeffs: Vec<f64>,
    pub global: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `(kind) u = f` weakly with Dirichlet lifting of `g` on the map's Dirichlet dofs.
pub fn solve_global(
    map: &AssemblyMap,
    list: &ExpList,
    kind: OperatorKind,
    forcing: &[f64],
    g: &dyn Fn(f64, f64) -> f64,
    opts: &SolverOptions,
) -> Result<GlobalSolution> {
    if let OperatorKind::Helmholtz(l) = kind {
        if l < 0.0 {
            return Err(Error::InvalidArgument(format!("Helmholtz λ must be >= 0, got {l}")));
        }
        if l == 0.0 && map.num_dirichlet() == 0 {
            return Err(Error::Singular(
                "pure Neumann Laplace problem (λ = 0 without Dirichlet boundary)".into(),
            ));
        }
    }
    let system = GlobalSystem::new(map, list, kind, opts);
    let nd = map.num_dirichlet();
    let b = map.assemble(&list.iproduct(forcing)?)?;
    let lift = map.dirichlet_values(list, g)?;
    let a_lift = system.apply_full(&lift)?;
    let rhs: Vec<f64> = (nd..map.num_global()).map(|i| b[i] - a_lift[i]).collect();
    let sol = solve_pcg(&system, &rhs, opts.tol, opts.max_iter)?;
    let mut global = lift;
    global[nd..].copy_from_slice(&sol.x);
    Ok(GlobalSolution {
        coeffs: map.scatter(&global)?,
        global,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Helmholtz solve `−∇²u + λu = f`, `u = g` on the Dirichlet segments of `map`.
pub fn helmholtz_solve(
    map: &AssemblyMap,
    list: &ExpList,
    lambda: f64,
    forcing: &[f64],
    g: &dyn Fn(f64, f64) -> f64,
    opts: &SolverOptions,
) -> Result<GlobalSolution> {
    solve_global(map, list, OperatorKind::Helmholtz(lambda), forcing, g, opts)
}

/// One side of a trace: an element edge and its interpolation to the trace points.
#[derive(Debug, Clone)]
pub struct TraceSide {
    pub element: usize,
    pub edge: usize,
    /// Local edge parameters of the trace points.
    pub s: Vec<f64>,
    /// `npoints × ncoeffs` evaluation of the element modes at the trace points.
    pub interp: Matrix,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub seg: u32,
    pub left: TraceSide,
    pub right: Option<TraceSide>,
    /// Boundary region of a boundary trace.
    pub region: Option<String>,
    pub periodic: bool,
    pub points: Vec<[f64; 2]>,
    /// Unit normals, outward from the left element.
    pub normals: Vec<[f64; 2]>,
    /// Quadrature weights times arc-length Jacobian.
    pub jw: Vec<f64>,
}

impl Trace {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct TraceMap {
    pub traces: Vec<Trace>,
}

impl TraceMap {
    pub fn num_interior(&self) -> usize {
        self.traces.iter().filter(|t| !t.is_boundary()).count()
    }

    pub fn num_boundary(&self) -> usize {
        self.traces.iter().filter(|t| t.is_boundary()).count()
    }
}

fn side(list: &ExpList, element: usize, edge: usize, s: Vec<f64>) -> Result<TraceSide> {
    let e = list.element(element);
    let xi: Vec<[f64; 2]> = s.iter().map(|&t| e.std.shape().edge_point(edge, t)).collect();
    let (v, _, _) = e.std.eval_modes(&xi)?;
    Ok(TraceSide {
        element,
        edge,
        s,
        interp: v.transpose(),
    })
}

/// Builds the trace; `periodic` pairs boundary regions whose segments are
/// identified by a constant translation.
pub fn build_trace(mesh: &MeshGraph, list: &ExpList, periodic: &[(String, String)]) -> Result<TraceMap> {
    let pairs = periodic
        .iter()
        .map(|(a, b)| Ok((mesh.boundary_segments(a)?, mesh.boundary_segments(b)?, format!("'{a}'/'{b}'"))))
        .collect::<Result<Vec<_>>>()?;
    build_trace_with_segments(mesh, list, &pairs)
}

/// As [`build_trace`], with periodic pairs given as segment lists plus a label for errors.
pub fn build_trace_with_segments(
    mesh: &MeshGraph,
    list: &ExpList,
    periodic: &[(Vec<u32>, Vec<u32>, String)],
) -> Result<TraceMap> {
    let mut users: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, e) in list.elements().iter().enumerate() {
        for (le, s) in mesh.element_edges(e.id)?.into_iter().enumerate() {
            users.entry(s).or_default().push((i, le));
        }
    }
    let mut region_of: BTreeMap<u32, String> = BTreeMap::new();
    for name in mesh.boundary.keys() {
        for s in mesh.boundary_segments(name)? {
            if !users.contains_key(&s) {
                return Err(Error::Mesh(format!(
                    "boundary '{name}' segment {s} does not bound any domain element"
                )));
            }
            region_of.entry(s).or_insert_with(|| name.clone());
        }
    }
    let npts = |a: usize, b: Option<usize>| {
        let p = list.element(a).order().max(b.map_or(0, |b| list.element(b).order()));
        p + 2
    };
    let mut traces = Vec::new();
    let mut paired: BTreeSet<u32> = BTreeSet::new();
    // periodic pairs
    for (sa, sb, label) in periodic {
        if sa.len() != sb.len() || sa.is_empty() {
            return Err(Error::Boundary(format!(
                "periodic pair {label} has {} and {} segments",
                sa.len(),
                sb.len()
            )));
        }
        let mid = |s: u32| {
            let [a, b] = mesh.segments[&s];
            let (p, q) = (mesh.vertices[&a], mesh.vertices[&b]);
            [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]
        };
        let centroid = |ss: &[u32]| {
            let n = ss.len() as f64;
            ss.iter().fold([0.0, 0.0], |acc, &s| {
                let m = mid(s);
                [acc[0] + m[0] / n, acc[1] + m[1] / n]
            })
        };
        let (ca, cb) = (centroid(sa), centroid(sb));
        let offset = [cb[0] - ca[0], cb[1] - ca[1]];
        for &s in sa {
            let m = mid(s);
            let target = [m[0] + offset[0], m[1] + offset[1]];
            let partner = sb
                .iter()
                .copied()
                .find(|&t| {
                    let q = mid(t);
                    (q[0] - target[0]).hypot(q[1] - target[1]) < 1e-8 * (1.0 + target[0].abs() + target[1].abs())
                })
                .ok_or_else(|| Error::Boundary(format!("periodic segment {s} of {label} has no partner")))?;
            let (le, ll) = users[&s][0];
            let (re, rl) = users[&partner][0];
            let q = npts(le, Some(re));
            let gl = make_rule(PointsKey::new(q, PointsType::GaussLegendre)?);
            let ep = list.element(le).geom.edge_points(ll, &gl.points)?;
            let flipped: Vec<f64> = gl.points.iter().map(|t| -t).collect();
            let right_pts = list.element(re).geom.edge_points(rl, &flipped)?;
            let matches = ep.iter().zip(&right_pts).all(|(a, b)| {
                (a.x[0] + offset[0] - b.x[0]).abs() + (a.x[1] + offset[1] - b.x[1]).abs() < 1e-8
            });
            let s_right = if matches { flipped } else { gl.points.clone() };
            traces.push(Trace {
                seg: s,
                left: side(list, le, ll, gl.points.clone())?,
                right: Some(side(list, re, rl, s_right)?),
                region: None,
                periodic: true,
                points: ep.iter().map(|p| p.x).collect(),
                normals: ep.iter().map(|p| p.normal).collect(),
                jw: ep.iter().zip(&gl.weights).map(|(p, w)| p.jac * w).collect(),
            });
            paired.insert(s);
            paired.insert(partner);
        }
    }
    for (&s, u) in &users {
        if paired.contains(&s) {
            continue;
        }
        let (le, ll) = u[0];
        let right = u.get(1).copied();
        if u.len() > 2 {
            return Err(Error::Mesh(format!("segment {s} is shared by {} elements", u.len())));
        }
        let q = npts(le, right.map(|r| r.0));
        let gl = make_rule(PointsKey::new(q, PointsType::GaussLegendre)?);
        let ep = list.element(le).geom.edge_points(ll, &gl.points)?;
        let right = match right {
            Some((re, rl)) => Some(side(list, re, rl, gl.points.iter().map(|t| -t).collect())?),
            None => None,
        };
        traces.push(Trace {
            seg: s,
            left: side(list, le, ll, gl.points.clone())?,
            region: if right.is_none() { region_of.get(&s).cloned() } else { None },
            right,
            periodic: false,
            points: ep.iter().map(|p| p.x).collect(),
            normals: ep.iter().map(|p| p.normal).collect(),
            jw: ep.iter().zip(&gl.weights).map(|(p, w)| p.jac * w).collect(),
        });
    }
    traces.sort_by_key(|t| t.seg);
    Ok(TraceMap { traces })
}

/// Interior (`minus`) and exterior (`plus`) states at a trace, one vector per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePair {
    pub minus: Vec<Vec<f64>>,
    pub plus: Vec<Vec<f64>>,
}

/// Supplies exterior states on boundary traces.
pub trait GhostState {
    fn ghost(&self, region: &str, trace: &Trace, minus: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

impl<F> GhostState for F
where
    F: Fn(&str, &Trace, &[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    fn ghost(&self, region: &str, trace: &Trace, minus: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self(region, trace, minus)
    }
}

/// Evaluates each field (given by coefficients) on both sides of every trace.
pub fn exchange_trace_values(
    tm: &TraceMap,
    list: &ExpList,
    fields: &[&[f64]],
    ghost: &dyn GhostState,
) -> Result<Vec<TracePair>> {
    tm.traces
        .iter()
        .map(|t| {
            let eval = |s: &TraceSide| -> Vec<Vec<f64>> {
                let e = list.element(s.element);
                fields.iter().map(|f| s.interp.matvec(&f[e.coeff_range()])).collect()
            };
            let minus = eval(&t.left);
            let plus = match &t.right {
                Some(r) => eval(r),
                None => {
                    let region = t.region.as_deref().ok_or_else(|| {
                        Error::Boundary(format!("boundary segment {} belongs to no boundary region", t.seg))
                    })?;
                    ghost.ghost(region, t, &minus)?
                }
            };
            Ok(TracePair { minus, plus })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisType;
    use crate::meshio::structured_mesh;

    fn all_boundary(mesh: &MeshGraph) -> BTreeSet<u32> {
        mesh.boundary
            .keys()
            .flat_map(|n| mesh.boundary_segments(n).unwrap())
            .collect()
    }

    #[test]
    fn dof_counts() {
        let one = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let l = ExpList::uniform(&one, 3, BasisType::ModifiedA).unwrap();
        let m = AssemblyMap::new(&one, &l, &BTreeSet::new()).unwrap();
        assert_eq!(m.num_global(), 16);
        assert!((0..16).all(|i| m.global_of(i).unwrap().1 == 1.0));

        let two = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let l = ExpList::uniform(&two, 2, BasisType::ModifiedA).unwrap();
        assert_eq!(AssemblyMap::new(&two, &l, &BTreeSet::new()).unwrap().num_global(), 15);

        let l = ExpList::new(&two, |e| if e.1 == 0 { 2 } else { 4 }, BasisType::ModifiedA).unwrap();
        let m = AssemblyMap::new(&two, &l, &BTreeSet::new()).unwrap();
        // brute force: 6 vertices, edges 3 (P=2 element's own) + 3·3 (P=4) + 1 shared, interiors 1 + 9
        assert_eq!(m.num_global(), 6 + 3 + 9 + 1 + 1 + 9);
        let pinned = (0..m.num_local()).filter(|&i| m.global_of(i).is_none()).count();
        assert_eq!(pinned, 2);
        for (s, &p) in m.edge_orders() {
            let users: Vec<usize> = l
                .elements()
                .iter()
                .filter(|e| two.element_edges(e.id).unwrap().contains(s))
                .map(|e| e.order())
                .collect();
            assert_eq!(p, *users.iter().min().unwrap());
        }
    }

    #[test]
    fn shared_dofs_accumulate() {
        let two = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let l = ExpList::uniform(&two, 2, BasisType::ModifiedA).unwrap();
        let m = AssemblyMap::new(&two, &l, &BTreeSet::new()).unwrap();
        let g = m.assemble(&vec![1.0; m.num_local()]).unwrap();
        // shared vertices accumulate 2; the shared quadratic edge mode gets +1 and ±1
        let twos = g.iter().filter(|&&v| v == 2.0).count();
        assert!(twos >= 2);
    }

    #[test]
    fn cg_projection_is_continuous_across_reversed_edges() {
        // triangles exercise reversed shared edges and odd-mode signs
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::uniform(&mesh, 5, BasisType::ModifiedA).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &BTreeSet::new()).unwrap();
        let f = list.evaluate(|x, y| (3.0 * x).sin() * (2.0 * y).cos() + x * y);
        let sol = solve_global(&map, &list, OperatorKind::Mass, &f, &|_, _| 0.0, &SolverOptions::default()).unwrap();
        let tm = build_trace(&mesh, &list, &[]).unwrap();
        let none = |_: &str, _: &Trace, m: &[Vec<f64>]| Ok(m.to_vec());
        let pairs = exchange_trace_values(&tm, &list, &[&sol.coeffs], &none).unwrap();
        for p in &pairs {
            for (a, b) in p.minus[0].iter().zip(&p.plus[0]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pcg_examples() {
        let id = Matrix::identity(4);
        let b = vec![1.0, -2.0, 3.0, 0.5];
        let s = solve_pcg(&id, &b, 1e-14, 10).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.x, b);
        let d = Matrix::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let s = solve_pcg(&d, &[1.0, 1.0, 1.0], 1e-14, 10).unwrap();
        assert_eq!(s.iterations, 1);
        let bad = Matrix::from_fn(30, 30, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1e-8 } else { 0.0 });
        match solve_pcg(&bad, &vec![1.0; 30], 1e-15, 3) {
            Err(Error::NoConvergence { history, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn assembled_mass_residual_by_recomputation() {
        let mesh = structured_mesh(3, 2, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 4, BasisType::ModifiedA).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &BTreeSet::new()).unwrap();
        let sys = GlobalSystem::new(&map, &list, OperatorKind::Mass, &SolverOptions::default());
        let n = sys.dim();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let s = solve_pcg(&sys, &b, 1e-10, 5000).unwrap();
        let mut ax = vec![0.0; n];
        sys.apply(&s.x, &mut ax);
        let r: f64 = ax.iter().zip(&b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        assert!(r / dot(&b, &b).sqrt() <= 1e-10);
    }

    #[test]
    fn helmholtz_constant_solution() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &all_boundary(&mesh)).unwrap();
        let f = vec![2.0 * 1.5; list.npoints()];
        let sol = helmholtz_solve(&map, &list, 2.0, &f, &|_, _| 1.5, &SolverOptions::default()).unwrap();
        let u = list.bwd_trans(&sol.coeffs).unwrap();
        assert!(u.iter().all(|v| (v - 1.5).abs() < 1e-10));
    }

    #[test]
    fn pure_neumann_laplace_is_singular() {
        let mesh = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 2, BasisType::ModifiedA).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &BTreeSet::new()).unwrap();
        let f = vec![0.0; list.npoints()];
        let r = helmholtz_solve(&map, &list, 0.0, &f, &|_, _| 0.0, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn matrix_free_matches_assembled() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::uniform(&mesh, 4, BasisType::ModifiedA).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &all_boundary(&mesh)).unwrap();
        let f = list.evaluate(|x, y| x + y * y);
        let g = |x: f64, y: f64| x * y;
        let a = helmholtz_solve(&map, &list, 1.0, &f, &g, &SolverOptions::default()).unwrap();
        let opts = SolverOptions {
            matrix_free_threshold: 0,
            ..Default::default()
        };
        assert!(GlobalSystem::new(&map, &list, OperatorKind::Helmholtz(1.0), &opts).is_matrix_free());
        let b = helmholtz_solve(&map, &list, 1.0, &f, &g, &opts).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn lagrange_basis_assembles_on_quads() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 4, BasisType::LagrangeGll).unwrap();
        let map = AssemblyMap::new(&mesh, &list, &all_boundary(&mesh)).unwrap();
        assert_eq!(map.num_global(), 81);
        let exact = |x: f64, y: f64| x * x - y * y + 0.5 * x * y;
        let f = vec![0.0; list.npoints()];
        let sol = helmholtz_solve(&map, &list, 0.0, &f, &exact, &SolverOptions::default()).unwrap();
        let u = list.bwd_trans(&sol.coeffs).unwrap();
        let e = list.evaluate(exact);
        assert!(list.l2_diff(&u, &e).unwrap() < 1e-10);
    }

    #[test]
    fn trace_counts() {
        let one = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let l = ExpList::uniform(&one, 2, BasisType::ModifiedA).unwrap();
        let t = build_trace(&one, &l, &[]).unwrap();
        assert_eq!((t.num_boundary(), t.num_interior()), (4, 0));
        let two = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let l = ExpList::uniform(&two, 2, BasisType::ModifiedA).unwrap();
        let t = build_trace(&two, &l, &[]).unwrap();
        assert_eq!((t.num_boundary(), t.num_interior()), (6, 1));
        let nine = structured_mesh(3, 3, [0.0, 3.0], [0.0, 3.0], false).unwrap();
        let l = ExpList::uniform(&nine, 2, BasisType::ModifiedA).unwrap();
        let t = build_trace(&nine, &l, &[]).unwrap();
        assert_eq!(t.num_interior(), 2 * 3 * 2);
    }

    #[test]
    fn trace_sides_match_in_world_coordinates() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::new(&mesh, |e| 2 + (e.1 as usize % 3), BasisType::ModifiedA).unwrap();
        let tm = build_trace(&mesh, &list, &[]).unwrap();
        for t in tm.traces.iter().filter(|t| !t.is_boundary()) {
            let r = t.right.as_ref().unwrap();
            let pts = list.element(r.element).geom.edge_points(r.edge, &r.s).unwrap();
            for (a, b) in t.points.iter().zip(&pts) {
                assert!((a[0] - b.x[0]).abs() + (a[1] - b.x[1]).abs() < 1e-13);
            }
            for (n, b) in t.normals.iter().zip(&pts) {
                assert!((n[0] + b.normal[0]).abs() + (n[1] + b.normal[1]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn exchange_of_piecewise_constants() {
        let mesh = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 2, BasisType::ModifiedA).unwrap();
        let mut phys = vec![1.0; list.npoints()];
        phys[list.element(1).phys_range()].iter_mut().for_each(|v| *v = 4.0);
        let c = list.fwd_trans_local(&phys).unwrap();
        let tm = build_trace(&mesh, &list, &[]).unwrap();
        let ghost = |_: &str, _: &Trace, m: &[Vec<f64>]| Ok(m.to_vec());
        let pairs = exchange_trace_values(&tm, &list, &[&c], &ghost).unwrap();
        for (t, p) in tm.traces.iter().zip(&pairs) {
            if !t.is_boundary() {
                for (a, b) in p.minus[0].iter().zip(&p.plus[0]) {
                    assert!(((a - b).abs() - 3.0).abs() < 1e-12);
                }
            }
        }
        let failing = |r: &str, _: &Trace, _: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
            Err(Error::Boundary(format!("no condition for '{r}'")))
        };
        assert!(exchange_trace_values(&tm, &list, &[&c], &failing).is_err());
    }

    #[test]
    fn periodic_traces_pair_opposite_sides() {
        let mesh = structured_mesh(3, 2, [0.0, 3.0], [0.0, 2.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        let per = vec![
            ("right".to_string(), "left".to_string()),
            ("top".to_string(), "bottom".to_string()),
        ];
        let tm = build_trace(&mesh, &list, &per).unwrap();
        assert_eq!(tm.num_boundary(), 0);
        assert_eq!(tm.traces.len(), 2 * 3 * 2);
        // right-side points coincide with the left-side points shifted by the period
        for t in tm.traces.iter().filter(|t| t.periodic) {
            let r = t.right.as_ref().unwrap();
            let pts = list.element(r.element).geom.edge_points(r.edge, &r.s).unwrap();
            for (a, b) in t.points.iter().zip(&pts) {
                let d = [b.x[0] - a[0], b.x[1] - a[1]];
                let ok = |v: [f64; 2]| (d[0] - v[0]).abs() + (d[1] - v[1]).abs() < 1e-12;
                assert!(ok([-3.0, 0.0]) || ok([3.0, 0.0]) || ok([0.0, 2.0]) || ok([0.0, -2.0]));
            }
        }
    }
}
