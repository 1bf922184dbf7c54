//! Solver drivers: Galerkin projection, CG Helmholtz, explicit DG advection,
//! the acoustic perturbation equations, sensor-driven order adaptivity,
//! artificial viscosity and periodic field output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::assembly::{
    build_trace_with_segments, solve_global, AssemblyMap, GlobalSolution, OperatorKind, SolverOptions, Trace,
    TraceMap,
};
use crate::basis::BasisType;
use crate::collections::{ExpListOps, Strategy};
use crate::error::{Error, Result};
use crate::explist::ExpList;
use crate::linalg::dot;
use crate::meshio::{write_canonical, ElementRef, MeshGraph};
use crate::session::{BcKind, BoundaryCondition, Expression};
use crate::stdregions::ShapeType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RiemannKind {
    #[default]
    Upwind,
    LaxFriedrichs,
}

impl std::str::FromStr for RiemannKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "upwind" => Ok(RiemannKind::Upwind),
            "laxfriedrichs" | "lax-friedrichs" => Ok(RiemannKind::LaxFriedrichs),
            other => Err(Error::InvalidArgument(format!("unknown Riemann solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Nfj,
    Vtk,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Nfj => "nfj",
            OutputFormat::Vtk => "vtk",
        }
    }
}

/// A named scalar field: coefficients plus their values at quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub phys: Vec<f64>,
}

impl Field {
    pub fn from_coeffs(list: &ExpList, name: impl Into<String>, coeffs: Vec<f64>) -> Result<Self> {
        let phys = list.bwd_trans(&coeffs)?;
        Ok(Field {
            name: name.into(),
            coeffs,
            phys,
        })
    }

    pub fn integral(&self, list: &ExpList) -> Result<f64> {
        list.integral(&self.phys)
    }
}

// ---------------------------------------------------------------------------
// Projection and Helmholtz
// ---------------------------------------------------------------------------

/// Element-wise L² projection of `f`.
pub fn project(list: &ExpList, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    list.fwd_trans_local(&list.evaluate(f))
}

/// Continuous (C⁰) L² projection of `f` through a global mass solve.
pub fn project_cg(mesh: &MeshGraph, list: &ExpList, f: impl Fn(f64, f64) -> f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let map = AssemblyMap::new(mesh, list, &BTreeSet::new())?;
    let sol = solve_global(&map, list, OperatorKind::Mass, &list.evaluate(f), &|_, _| 0.0, opts)?;
    Ok(sol.coeffs)
}

/// Boundary value function for a set of Dirichlet conditions: each point is
/// assigned to the nearest Dirichlet segment and evaluated with its expression.
pub fn dirichlet_function<'a>(
    mesh: &'a MeshGraph,
    bcs: &'a [BoundaryCondition],
    variable: &'a str,
) -> Result<impl Fn(f64, f64) -> f64 + 'a> {
    let mut segs: Vec<([f64; 2], [f64; 2], &Expression)> = Vec::new();
    for b in bcs {
        if let BcKind::Dirichlet(values) = &b.kind {
            let e = values.get(variable).ok_or_else(|| {
                Error::Boundary(format!(
                    "Dirichlet condition on composite {} has no value for '{variable}'",
                    b.composite
                ))
            })?;
            for s in &b.segments {
                let [a, c] = mesh.segments[s];
                let (p, q) = (mesh.vertices[&a], mesh.vertices[&c]);
                segs.push(([p[0], p[1]], [q[0], q[1]], e));
            }
        }
    }
    Ok(move |x: f64, y: f64| {
        let dist = |a: [f64; 2], b: [f64; 2]| {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l2 = dx * dx + dy * dy;
            let t = if l2 > 0.0 {
                (((x - a[0]) * dx + (y - a[1]) * dy) / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (a[0] + t * dx - x).hypot(a[1] + t * dy - y)
        };
        segs.iter()
            .min_by(|a, b| dist(a.0, a.1).total_cmp(&dist(b.0, b.1)))
            .map_or(0.0, |s| s.2.eval(x, y, 0.0))
    })
}

/// CG Helmholtz solve `−∇²u + λu = f` with the Dirichlet conditions in `bcs`.
pub fn helmholtz(
    mesh: &MeshGraph,
    list: &ExpList,
    lambda: f64,
    forcing: &Expression,
    bcs: &[BoundaryCondition],
    opts: &SolverOptions,
) -> Result<GlobalSolution> {
    for b in bcs {
        if !matches!(b.kind, BcKind::Dirichlet(_)) {
            return Err(Error::Boundary(format!(
                "Helmholtz solver supports Dirichlet conditions only (composite {} is {}); other boundaries are natural",
                b.composite,
                b.kind.name()
            )));
        }
    }
    let dirichlet: BTreeSet<u32> = bcs.iter().flat_map(|b| b.segments.iter().copied()).collect();
    let map = AssemblyMap::new(mesh, list, &dirichlet)?;
    let g = dirichlet_function(mesh, bcs, "u")?;
    let f = list.evaluate(|x, y| forcing.eval(x, y, 0.0));
    solve_global(&map, list, OperatorKind::Helmholtz(lambda), &f, &g, opts)
}

// ---------------------------------------------------------------------------
// Time integration
// ---------------------------------------------------------------------------

fn check_finite(v: &[f64], step: usize, context: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            step,
            context: format!("{context}, entry {i} = {}", v[i]),
        });
    }
    Ok(())
}

/// One classical fourth-order Runge–Kutta step of `dq/dt = rhs(q, t)`.
pub fn rk4_step(
    q: &mut [f64],
    t: f64,
    dt: f64,
    step: usize,
    rhs: &mut dyn FnMut(&[f64], f64) -> Result<Vec<f64>>,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let n = q.len();
    let k1 = rhs(q, t)?;
    check_finite(&k1, step, "stage 1")?;
    let stage = |k: &[f64], a: f64| -> Vec<f64> { (0..n).map(|i| q[i] + a * k[i]).collect() };
    let k2 = rhs(&stage(&k1, 0.5 * dt), t + 0.5 * dt)?;
    check_finite(&k2, step, "stage 2")?;
    let k3 = rhs(&stage(&k2, 0.5 * dt), t + 0.5 * dt)?;
    check_finite(&k3, step, "stage 3")?;
    let k4 = rhs(&stage(&k3, dt), t + dt)?;
    check_finite(&k4, step, "stage 4")?;
    for i in 0..n {
        q[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    check_finite(q, step, "updated state")
}

// ---------------------------------------------------------------------------
// Shared DG plumbing
// ---------------------------------------------------------------------------

/// Periodic pairs of a set of boundary conditions, as segment lists.
pub fn periodic_segment_pairs(mesh: &MeshGraph, bcs: &[BoundaryCondition]) -> Result<Vec<(Vec<u32>, Vec<u32>, String)>> {
    let mut out = Vec::new();
    let mut done = BTreeSet::new();
    for b in bcs {
        if let BcKind::Periodic { partner } = b.kind {
            if !done.insert(b.composite) || done.contains(&partner) {
                continue;
            }
            done.insert(partner);
            let other = mesh
                .composites
                .get(&partner)
                .ok_or_else(|| Error::Boundary(format!("periodic partner composite {partner} does not exist")))?;
            out.push((
                b.segments.clone(),
                other.ids.clone(),
                format!("composites {}/{}", b.composite, partner),
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Ghost {
    Dirichlet(Vec<Expression>),
    Wall,
    Farfield,
    Extrapolate,
}

struct DgSkeleton {
    traces: TraceMap,
    /// Ghost rule per trace (`None` for interior and periodic traces).
    ghosts: Vec<Option<Ghost>>,
}

fn dg_skeleton(
    mesh: &MeshGraph,
    list: &ExpList,
    bcs: &[BoundaryCondition],
    variables: &[&str],
    allowed: &[&str],
) -> Result<DgSkeleton> {
    let traces = build_trace_with_segments(mesh, list, &periodic_segment_pairs(mesh, bcs)?)?;
    let mut ghosts = Vec::with_capacity(traces.traces.len());
    for t in &traces.traces {
        if !t.is_boundary() {
            ghosts.push(None);
            continue;
        }
        let bc = bcs
            .iter()
            .find(|b| b.segments.contains(&t.seg))
            .ok_or_else(|| Error::Boundary(format!("boundary segment {} has no boundary condition", t.seg)))?;
        if !allowed.contains(&bc.kind.name()) {
            return Err(Error::Boundary(format!(
                "{} condition on composite {} is not supported by this solver",
                bc.kind.name(),
                bc.composite
            )));
        }
        ghosts.push(Some(match &bc.kind {
            BcKind::Periodic { .. } => {
                return Err(Error::Boundary(format!(
                    "periodic segment {} of composite {} found no partner",
                    t.seg, bc.composite
                )))
            }
            BcKind::Dirichlet(values) => Ghost::Dirichlet(
                variables
                    .iter()
                    .map(|v| {
                        values.get(*v).cloned().ok_or_else(|| {
                            Error::Boundary(format!(
                                "Dirichlet condition on composite {} has no value for '{v}'",
                                bc.composite
                            ))
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            BcKind::Wall => Ghost::Wall,
            BcKind::Farfield => Ghost::Farfield,
            BcKind::Extrapolate => Ghost::Extrapolate,
        }));
    }
    Ok(DgSkeleton { traces, ghosts })
}

fn trace_values(list: &ExpList, t: &Trace, coeffs: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
    let l = &t.left;
    let minus = l.interp.matvec(&coeffs[list.element(l.element).coeff_range()]);
    let plus = t
        .right
        .as_ref()
        .map(|r| r.interp.matvec(&coeffs[list.element(r.element).coeff_range()]));
    (minus, plus)
}

/// Adds `−∮ φ f̂ ds` of a trace flux (given at trace points, oriented along the left normal).
fn scatter_flux(list: &ExpList, t: &Trace, flux: &[f64], out: &mut [f64]) {
    let weighted: Vec<f64> = flux.iter().zip(&t.jw).map(|(f, w)| f * w).collect();
    let l = &t.left;
    let lr = list.element(l.element).coeff_range();
    for (o, v) in out[lr].iter_mut().zip(l.interp.matvec_t(&weighted)) {
        *o -= v;
    }
    if let Some(r) = &t.right {
        let rr = list.element(r.element).coeff_range();
        for (o, v) in out[rr].iter_mut().zip(r.interp.matvec_t(&weighted)) {
            *o += v;
        }
    }
}

// ---------------------------------------------------------------------------
// DG advection
// ---------------------------------------------------------------------------

/// Explicit DG discretisation of `∂u/∂t + ∇·(a u) = 0` with a steady,
/// divergence-free velocity `a` and upwind traces.
pub struct AdvectionSolver {
    list: ExpList,
    ops: ExpListOps,
    skeleton: DgSkeleton,
    velocity: [Vec<f64>; 2],
    /// `a·n` at trace points.
    trace_an: Vec<Vec<f64>>,
}

impl AdvectionSolver {
    pub fn new(
        mesh: &MeshGraph,
        list: ExpList,
        velocity: &[Expression; 2],
        bcs: &[BoundaryCondition],
        strategy: Strategy,
    ) -> Result<Self> {
        if velocity.iter().any(Expression::depends_on_time) {
            return Err(Error::Session("advection velocity must not depend on t".into()));
        }
        let skeleton = dg_skeleton(mesh, &list, bcs, &["u"], &["dirichlet", "extrapolate"])?;
        let vx = list.evaluate(|x, y| velocity[0].eval(x, y, 0.0));
        let vy = list.evaluate(|x, y| velocity[1].eval(x, y, 0.0));
        let trace_an = skeleton
            .traces
            .traces
            .iter()
            .map(|t| {
                t.points
                    .iter()
                    .zip(&t.normals)
                    .map(|(p, n)| velocity[0].eval(p[0], p[1], 0.0) * n[0] + velocity[1].eval(p[0], p[1], 0.0) * n[1])
                    .collect()
            })
            .collect();
        let ops = ExpListOps::new(&list, strategy)?;
        Ok(AdvectionSolver {
            list,
            ops,
            skeleton,
            velocity: [vx, vy],
            trace_an,
        })
    }

    pub fn list(&self) -> &ExpList {
        &self.list
    }

    pub fn into_list(self) -> ExpList {
        self.list
    }

    pub fn traces(&self) -> &TraceMap {
        &self.skeleton.traces
    }

    /// Largest `|a|` at quadrature points.
    pub fn max_speed(&self) -> f64 {
        self.velocity[0]
            .iter()
            .zip(&self.velocity[1])
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// `du/dt` in coefficient space.
    pub fn rhs(&self, u: &[f64], time: f64) -> Result<Vec<f64>> {
        let phys = self.ops.bwd_trans(u)?;
        let fx: Vec<f64> = phys.iter().zip(&self.velocity[0]).map(|(u, a)| u * a).collect();
        let fy: Vec<f64> = phys.iter().zip(&self.velocity[1]).map(|(u, a)| u * a).collect();
        let mut out = self.list.iproduct_deriv(&fx, &fy)?;
        for ((t, an), ghost) in self.skeleton.traces.traces.iter().zip(&self.trace_an).zip(&self.skeleton.ghosts) {
            let (minus, plus) = trace_values(&self.list, t, u);
            let plus = match (plus, ghost) {
                (Some(p), _) => p,
                (None, Some(Ghost::Dirichlet(g))) => t.points.iter().map(|p| g[0].eval(p[0], p[1], time)).collect(),
                (None, Some(Ghost::Extrapolate)) => minus.clone(),
                (None, _) => unreachable!("ghost rules validated at construction"),
            };
            let flux: Vec<f64> = (0..an.len())
                .map(|k| an[k] * if an[k] >= 0.0 { minus[k] } else { plus[k] })
                .collect();
            scatter_flux(&self.list, t, &flux, &mut out);
        }
        self.list.mass_solve_in_place(&mut out)?;
        Ok(out)
    }

    pub fn step(&self, u: &mut [f64], t: f64, dt: f64, step: usize) -> Result<()> {
        rk4_step(u, t, dt, step, &mut |q, s| self.rhs(q, s))
    }
}

// ---------------------------------------------------------------------------
// Acoustic perturbation equations
// ---------------------------------------------------------------------------

/// Base-flow state at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApeBase {
    pub u: f64,
    pub v: f64,
    pub rho: f64,
    pub c2: f64,
}

impl ApeBase {
    pub const QUIESCENT: ApeBase = ApeBase {
        u: 0.0,
        v: 0.0,
        rho: 1.0,
        c2: 1.0,
    };
}

/// Physical flux `F(q)·n` of `q = (p, u, v)`.
pub fn ape_normal_flux(q: [f64; 3], n: [f64; 2], b: &ApeBase) -> [f64; 3] {
    let [p, u, v] = q;
    let ubn = b.u * n[0] + b.v * n[1];
    let h = b.u * u + b.v * v + p / b.rho;
    [ubn * p + b.c2 * b.rho * (u * n[0] + v * n[1]), h * n[0], h * n[1]]
}

/// Numerical trace flux between interior state `left` and exterior `right`, along `n`.
pub fn riemann_flux(kind: RiemannKind, left: [f64; 3], right: [f64; 3], n: [f64; 2], b: &ApeBase) -> [f64; 3] {
    let fl = ape_normal_flux(left, n, b);
    let fr = ape_normal_flux(right, n, b);
    let dq = [right[0] - left[0], right[1] - left[1], right[2] - left[2]];
    let a = b.u * n[0] + b.v * n[1];
    let c = b.c2.sqrt();
    let mut out = [0.5 * (fl[0] + fr[0]), 0.5 * (fl[1] + fr[1]), 0.5 * (fl[2] + fr[2])];
    match kind {
        RiemannKind::LaxFriedrichs => {
            let lambda = a.abs() + c;
            for i in 0..3 {
                out[i] -= 0.5 * lambda * dq[i];
            }
        }
        RiemannKind::Upwind => {
            // |A_n| Δq over the acoustic waves a ± c; the third wave has speed 0
            for sgn in [1.0, -1.0] {
                let lam = a + sgn * c;
                let s = if lam > 0.0 {
                    1.0
                } else if lam < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                // |λ| l·Δq with l = (1, (c²ρ n ± cρ ū)/λ)
                let lu = [
                    b.c2 * b.rho * n[0] + sgn * c * b.rho * b.u,
                    b.c2 * b.rho * n[1] + sgn * c * b.rho * b.v,
                ];
                let alpha = 0.5 * (lam.abs() * dq[0] + s * (lu[0] * dq[1] + lu[1] * dq[2]));
                let r = [1.0, sgn * n[0] / (b.rho * c), sgn * n[1] / (b.rho * c)];
                for i in 0..3 {
                    out[i] -= 0.5 * alpha * r[i];
                }
            }
        }
    }
    out
}

/// Base flow and sources of an APE problem.
#[derive(Debug, Clone)]
pub struct ApeConfig {
    pub base: [Expression; 4],
    /// Sources for `p`, `u`, `v` (mass and momentum), functions of `(x, y, t)`.
    pub sources: [Option<Expression>; 3],
    pub riemann: RiemannKind,
}

impl ApeConfig {
    pub fn quiescent(riemann: RiemannKind) -> Self {
        ApeConfig {
            base: [
                Expression::constant(0.0),
                Expression::constant(0.0),
                Expression::constant(1.0),
                Expression::constant(1.0),
            ],
            sources: [None, None, None],
            riemann,
        }
    }

    fn sample(&self, x: f64, y: f64) -> ApeBase {
        ApeBase {
            u: self.base[0].eval(x, y, 0.0),
            v: self.base[1].eval(x, y, 0.0),
            rho: self.base[2].eval(x, y, 0.0),
            c2: self.base[3].eval(x, y, 0.0),
        }
    }
}

pub const APE_VARIABLES: [&str; 3] = ["p", "u", "v"];

/// DG discretisation of the acoustic perturbation equations; the state is
/// `[p | u | v]` coefficient blocks.
pub struct ApeSolver {
    list: ExpList,
    ops: ExpListOps,
    skeleton: DgSkeleton,
    base: Vec<ApeBase>,
    trace_base: Vec<Vec<ApeBase>>,
    coords: Vec<[f64; 2]>,
    config: ApeConfig,
}

impl ApeSolver {
    pub fn new(
        mesh: &MeshGraph,
        list: ExpList,
        config: ApeConfig,
        bcs: &[BoundaryCondition],
        strategy: Strategy,
    ) -> Result<Self> {
        if config.base.iter().any(Expression::depends_on_time) {
            return Err(Error::Session("APE base flow must not depend on t".into()));
        }
        let skeleton = dg_skeleton(
            mesh,
            &list,
            bcs,
            &APE_VARIABLES,
            &["dirichlet", "wall", "farfield", "extrapolate"],
        )?;
        let coords = list.coords();
        let check = |b: &ApeBase, p: [f64; 2]| -> Result<()> {
            if !(b.rho > 0.0 && b.c2 > 0.0 && b.u.is_finite() && b.v.is_finite()) {
                return Err(Error::Session(format!(
                    "APE base flow must have rho > 0 and c2 > 0 (rho = {}, c2 = {} at ({}, {}))",
                    b.rho, b.c2, p[0], p[1]
                )));
            }
            Ok(())
        };
        let mut base = Vec::with_capacity(coords.len());
        for p in &coords {
            let b = config.sample(p[0], p[1]);
            check(&b, *p)?;
            base.push(b);
        }
        let mut trace_base = Vec::new();
        for t in &skeleton.traces.traces {
            let mut v = Vec::with_capacity(t.points.len());
            for p in &t.points {
                let b = config.sample(p[0], p[1]);
                check(&b, *p)?;
                v.push(b);
            }
            trace_base.push(v);
        }
        let ops = ExpListOps::new(&list, strategy)?;
        Ok(ApeSolver {
            list,
            ops,
            skeleton,
            base,
            trace_base,
            coords,
            config,
        })
    }

    pub fn list(&self) -> &ExpList {
        &self.list
    }

    pub fn state_len(&self) -> usize {
        3 * self.list.ncoeffs()
    }

    /// Projects initial conditions into a state vector.
    pub fn initial_state(&self, init: [&dyn Fn(f64, f64) -> f64; 3]) -> Result<Vec<f64>> {
        let mut q = Vec::with_capacity(self.state_len());
        for f in init {
            q.extend(project(&self.list, f)?);
        }
        Ok(q)
    }

    /// Largest characteristic speed `|ū| + c̄` over quadrature points.
    pub fn max_speed(&self) -> f64 {
        self.base
            .iter()
            .fold(0.0, |m, b| m.max(b.u.hypot(b.v) + b.c2.sqrt()))
    }

    fn ghost(&self, ghost: &Ghost, t: &Trace, minus: &[Vec<f64>; 3], time: f64) -> [Vec<f64>; 3] {
        let m = t.points.len();
        match ghost {
            Ghost::Extrapolate => minus.clone(),
            Ghost::Farfield => [vec![0.0; m], vec![0.0; m], vec![0.0; m]],
            Ghost::Wall => {
                let mut out = minus.clone();
                for k in 0..m {
                    let n = t.normals[k];
                    let un = minus[1][k] * n[0] + minus[2][k] * n[1];
                    out[1][k] = minus[1][k] - 2.0 * un * n[0];
                    out[2][k] = minus[2][k] - 2.0 * un * n[1];
                }
                out
            }
            Ghost::Dirichlet(g) => {
                let mut out = minus.clone();
                for (var, o) in out.iter_mut().enumerate() {
                    for k in 0..m {
                        let p = t.points[k];
                        o[k] = 2.0 * g[var].eval(p[0], p[1], time) - minus[var][k];
                    }
                }
                out
            }
        }
    }

    /// Time derivative of the state.
    pub fn rhs(&self, q: &[f64], time: f64) -> Result<Vec<f64>> {
        let nc = self.list.ncoeffs();
        if q.len() != 3 * nc {
            return Err(Error::SizeMismatch {
                context: "APE state",
                expected: 3 * nc,
                actual: q.len(),
            });
        }
        let (qp, rest) = q.split_at(nc);
        let (qu, qv) = rest.split_at(nc);
        let p = self.ops.bwd_trans(qp)?;
        let u = self.ops.bwd_trans(qu)?;
        let v = self.ops.bwd_trans(qv)?;
        let np = p.len();
        let mut fpx = vec![0.0; np];
        let mut fpy = vec![0.0; np];
        let mut h = vec![0.0; np];
        for k in 0..np {
            let b = &self.base[k];
            fpx[k] = b.u * p[k] + b.c2 * b.rho * u[k];
            fpy[k] = b.v * p[k] + b.c2 * b.rho * v[k];
            h[k] = b.u * u[k] + b.v * v[k] + p[k] / b.rho;
        }
        let zero = vec![0.0; np];
        let mut rp = self.list.iproduct_deriv(&fpx, &fpy)?;
        let mut ru = self.list.iproduct_deriv(&h, &zero)?;
        let mut rv = self.list.iproduct_deriv(&zero, &h)?;
        for ((t, tb), ghost) in self
            .skeleton
            .traces
            .traces
            .iter()
            .zip(&self.trace_base)
            .zip(&self.skeleton.ghosts)
        {
            let (mp, pp) = trace_values(&self.list, t, qp);
            let (mu, pu) = trace_values(&self.list, t, qu);
            let (mv, pv) = trace_values(&self.list, t, qv);
            let minus = [mp, mu, mv];
            let plus = match (pp, pu, pv) {
                (Some(a), Some(b), Some(c)) => [a, b, c],
                _ => self.ghost(ghost.as_ref().expect("validated ghost"), t, &minus, time),
            };
            let m = t.points.len();
            let mut flux = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
            for k in 0..m {
                let f = riemann_flux(
                    self.config.riemann,
                    [minus[0][k], minus[1][k], minus[2][k]],
                    [plus[0][k], plus[1][k], plus[2][k]],
                    t.normals[k],
                    &tb[k],
                );
                for i in 0..3 {
                    flux[i][k] = f[i];
                }
            }
            scatter_flux(&self.list, t, &flux[0], &mut rp);
            scatter_flux(&self.list, t, &flux[1], &mut ru);
            scatter_flux(&self.list, t, &flux[2], &mut rv);
        }
        for (src, r) in self.config.sources.iter().zip([&mut rp, &mut ru, &mut rv]) {
            if let Some(e) = src {
                let s: Vec<f64> = self.coords.iter().map(|c| e.eval(c[0], c[1], time)).collect();
                for (o, v) in r.iter_mut().zip(self.ops.iproduct(&s)?) {
                    *o += v;
                }
            }
        }
        self.list.mass_solve_in_place(&mut rp)?;
        self.list.mass_solve_in_place(&mut ru)?;
        self.list.mass_solve_in_place(&mut rv)?;
        rp.extend(ru);
        rp.extend(rv);
        Ok(rp)
    }

    pub fn step(&self, q: &mut [f64], t: f64, dt: f64, step: usize) -> Result<()> {
        rk4_step(q, t, dt, step, &mut |s, time| self.rhs(s, time))
    }

    /// Discrete acoustic energy `∫ (p² + u² + v²)/2`.
    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        let nc = self.list.ncoeffs();
        let mut e = 0.0;
        for i in 0..3 {
            let f = self.list.bwd_trans(&q[i * nc..(i + 1) * nc])?;
            let sq: Vec<f64> = f.iter().map(|v| 0.5 * v * v).collect();
            e += self.list.integral(&sq)?;
        }
        Ok(e)
    }

    /// Physical values of one variable.
    pub fn variable(&self, q: &[f64], i: usize) -> Result<Vec<f64>> {
        let nc = self.list.ncoeffs();
        self.list.bwd_trans(&q[i * nc..(i + 1) * nc])
    }
}

// ---------------------------------------------------------------------------
// Sensor, adaptivity, artificial viscosity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorReport {
    /// `S_e = ‖u_P − u_{P−1}‖² / ‖u_P‖²` per element (0 for a zero field).
    pub s: Vec<f64>,
    pub orders: Vec<usize>,
}

/// Relative energy in the top-degree modes of each element.
pub fn sensor(list: &ExpList, coeffs: &[f64]) -> Result<SensorReport> {
    if coeffs.len() != list.ncoeffs() {
        return Err(Error::SizeMismatch {
            context: "sensor coefficients",
            expected: list.ncoeffs(),
            actual: coeffs.len(),
        });
    }
    let mut s = Vec::with_capacity(list.len());
    let mut scratch = Vec::new();
    for e in list.elements() {
        let p = e.order();
        if p < 2 {
            return Err(Error::InvalidArgument(format!(
                "sensor needs order >= 2, element {} has order {p}",
                e.id.1
            )));
        }
        let c = &coeffs[e.coeff_range()];
        let top: Vec<f64> = e
            .std
            .mode_degrees()
            .iter()
            .zip(c)
            .map(|(&d, &v)| if d >= p { v } else { 0.0 })
            .collect();
        let norm = |coef: &[f64], scratch: &mut Vec<f64>| {
            let mut u = vec![0.0; e.npoints()];
            e.std.bwd_sumfac_kernel(coef, &mut u, scratch);
            u.iter().zip(&e.gf.jw).map(|(v, w)| v * v * w).sum::<f64>()
        };
        let den = norm(c, &mut scratch);
        let num = norm(&top, &mut scratch);
        s.push(if den > 0.0 { (num / den).max(0.0) } else { 0.0 });
    }
    Ok(SensorReport {
        s,
        orders: list.orders(),
    })
}

/// New order per element: up where `S > hi`, down where `S < lo`, clamped to `[p_min, p_max]`.
pub fn adapted_orders(report: &SensorReport, hi: f64, lo: f64, p_min: usize, p_max: usize) -> Vec<usize> {
    report
        .s
        .iter()
        .zip(&report.orders)
        .map(|(&s, &p)| {
            let q = if s > hi {
                p + 1
            } else if s < lo {
                p.saturating_sub(1)
            } else {
                p
            };
            q.clamp(p_min, p_max)
        })
        .collect()
}

/// Rebuilds the expansion with new orders and transfers each field by
/// element-wise Galerkin projection.
pub fn transfer(mesh: &MeshGraph, list: &ExpList, orders: &[usize], fields: &[&[f64]]) -> Result<(ExpList, Vec<Vec<f64>>)> {
    if orders.len() != list.len() {
        return Err(Error::SizeMismatch {
            context: "order table",
            expected: list.len(),
            actual: orders.len(),
        });
    }
    let table: BTreeMap<ElementRef, usize> = list.elements().iter().zip(orders).map(|(e, &p)| (e.id, p)).collect();
    let new = ExpList::new(mesh, |el| table[&el], list.basis())?;
    let mut out = Vec::new();
    for f in fields {
        let mut c = vec![0.0; new.ncoeffs()];
        for (old, e) in list.elements().iter().zip(new.elements()) {
            let (v, _, _) = old.std.eval_modes(&e.std.coords())?;
            let phys = v.matvec_t(&f[old.coeff_range()]);
            let mut b = e.iproduct(&phys)?;
            e.mass_cholesky()?.solve_in_place(&mut b);
            c[e.coeff_range()].copy_from_slice(&b);
        }
        out.push(c);
    }
    Ok((new, out))
}

/// One adaptivity pass: sensor on `fields[variable]`, new orders, transfer of all fields.
#[allow(clippy::too_many_arguments)]
pub fn adapt_p(
    mesh: &MeshGraph,
    list: &ExpList,
    fields: &[&[f64]],
    variable: usize,
    hi: f64,
    lo: f64,
    p_min: usize,
    p_max: usize,
) -> Result<(ExpList, Vec<Vec<f64>>, SensorReport)> {
    let report = sensor(list, fields[variable])?;
    let orders = adapted_orders(&report, hi, lo, p_min, p_max);
    let (new, out) = transfer(mesh, list, &orders, fields)?;
    Ok((new, out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvReport {
    pub eps: Vec<f64>,
    pub eps0: f64,
    pub h: Vec<f64>,
    pub p: Vec<usize>,
    pub lambda_max: Vec<f64>,
    pub s: Vec<f64>,
}

/// `ε_e = ε₀ (h_e / p_e) λ_max,e S_e`.
pub fn artificial_viscosity_from(eps0: f64, h: &[f64], p: &[usize], lambda_max: &[f64], s: &[f64]) -> Result<AvReport> {
    if !(eps0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("ε₀ must be >= 0, got {eps0}")));
    }
    let n = h.len();
    for (what, len) in [("orders", p.len()), ("λ_max", lambda_max.len()), ("sensor", s.len())] {
        if len != n {
            return Err(Error::InvalidArgument(format!("{what} has {len} entries for {n} elements")));
        }
    }
    let eps = (0..n).map(|i| eps0 * (h[i] / p[i] as f64) * lambda_max[i] * s[i]).collect();
    Ok(AvReport {
        eps,
        eps0,
        h: h.to_vec(),
        p: p.to_vec(),
        lambda_max: lambda_max.to_vec(),
        s: s.to_vec(),
    })
}

/// Artificial viscosity from a field's sensor; `h` is each element's enclosing-circle diameter.
pub fn artificial_viscosity(list: &ExpList, coeffs: &[f64], eps0: f64, lambda_max: &[f64]) -> Result<AvReport> {
    let rep = sensor(list, coeffs)?;
    let h: Vec<f64> = list.elements().iter().map(|e| e.geom.diameter()).collect();
    artificial_viscosity_from(eps0, &h, &rep.orders, lambda_max, &rep.s)
}

// ---------------------------------------------------------------------------
// Output: NFJ snapshots, legacy VTK, periodic filter
// ---------------------------------------------------------------------------

/// Field snapshot contents.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub mesh: MeshGraph,
    pub basis: BasisType,
    pub orders: BTreeMap<ElementRef, usize>,
    pub time: f64,
    pub step: usize,
    pub variables: Vec<String>,
    /// Coefficients per variable, in expansion-list layout.
    pub fields: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn new(mesh: &MeshGraph, list: &ExpList, names: &[&str], fields: &[&[f64]], time: f64, step: usize) -> Result<Self> {
        if names.len() != fields.len() {
            return Err(Error::InvalidArgument("one name per field required".into()));
        }
        for f in fields {
            if f.len() != list.ncoeffs() {
                return Err(Error::SizeMismatch {
                    context: "snapshot field",
                    expected: list.ncoeffs(),
                    actual: f.len(),
                });
            }
        }
        Ok(Snapshot {
            mesh: mesh.clone(),
            basis: list.basis(),
            orders: list.elements().iter().map(|e| (e.id, e.order())).collect(),
            time,
            step,
            variables: names.iter().map(|s| s.to_string()).collect(),
            fields: fields.iter().map(|f| f.to_vec()).collect(),
        })
    }

    pub fn expansion_list(&self) -> Result<ExpList> {
        ExpList::new(&self.mesh, |el| self.orders[&el], self.basis)
    }

    pub fn to_nfj_string(&self) -> Result<String> {
        let list = self.expansion_list()?;
        let elements: Vec<Value> = list
            .elements()
            .iter()
            .map(|e| {
                let keys: Vec<Value> = e.std.basis_keys().iter().map(|k| json!(k.basis_type())).collect();
                json!({
                    "shape": e.id.0.name(),
                    "id": e.id.1,
                    "order": e.order(),
                    "basis": keys,
                    "points": e.std.points_per_dir(),
                })
            })
            .collect();
        let mut fields = Map::new();
        for (name, f) in self.variables.iter().zip(&self.fields) {
            let per: Vec<Value> = list.elements().iter().map(|e| json!(&f[e.coeff_range()])).collect();
            fields.insert(name.clone(), Value::Array(per));
        }
        let v = json!({
            "format": "NFJ",
            "version": 1,
            "time": self.time,
            "step": self.step,
            "basis": self.basis,
            "variables": self.variables,
            "elements": elements,
            "fields": fields,
            "mesh": self.mesh.to_json_value()?,
        });
        let mut out = String::new();
        write_canonical(&v, 0, &mut out);
        out.push('\n');
        Ok(out)
    }

    pub fn from_nfj_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawElement {
            shape: ShapeType,
            id: u32,
            order: usize,
            #[allow(dead_code)]
            basis: Vec<BasisType>,
            #[allow(dead_code)]
            points: Vec<usize>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawSnapshot {
            format: String,
            version: u32,
            time: f64,
            step: usize,
            basis: BasisType,
            variables: Vec<String>,
            elements: Vec<RawElement>,
            fields: BTreeMap<String, Vec<Vec<f64>>>,
            mesh: Value,
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawSnapshot = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if raw.format != "NFJ" || raw.version != 1 {
            return Err(Error::Schema {
                path: "format".into(),
                message: format!("expected NFJ version 1, found {} version {}", raw.format, raw.version),
            });
        }
        let mesh = MeshGraph::from_json_value(raw.mesh)?;
        let orders: BTreeMap<ElementRef, usize> = raw.elements.iter().map(|e| ((e.shape, e.id), e.order)).collect();
        let mut snap = Snapshot {
            mesh,
            basis: raw.basis,
            orders,
            time: raw.time,
            step: raw.step,
            variables: raw.variables.clone(),
            fields: Vec::new(),
        };
        let list = snap.expansion_list()?;
        if list.len() != raw.elements.len() {
            return Err(Error::Schema {
                path: "elements".into(),
                message: format!("{} elements listed, mesh domain has {}", raw.elements.len(), list.len()),
            });
        }
        for name in &raw.variables {
            let per = raw.fields.get(name).ok_or_else(|| Error::Schema {
                path: format!("fields.{name}"),
                message: "missing field".into(),
            })?;
            if per.len() != list.len() {
                return Err(Error::Schema {
                    path: format!("fields.{name}"),
                    message: format!("{} element blocks for {} elements", per.len(), list.len()),
                });
            }
            let mut c = Vec::with_capacity(list.ncoeffs());
            for (i, (block, e)) in per.iter().zip(list.elements()).enumerate() {
                if block.len() != e.ncoeffs() {
                    return Err(Error::Schema {
                        path: format!("fields.{name}[{i}]"),
                        message: format!("{} coefficients, expected {}", block.len(), e.ncoeffs()),
                    });
                }
                c.extend_from_slice(block);
            }
            snap.fields.push(c);
        }
        Ok(snap)
    }

    pub fn write_nfj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_nfj_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_nfj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_nfj_str(&text)
    }

    /// Legacy ASCII VTK with `resolution` equispaced points per element edge
    /// (default: order + 2).
    pub fn to_vtk_string(&self, resolution: Option<usize>) -> Result<String> {
        let list = self.expansion_list()?;
        let mut points: Vec<[f64; 2]> = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); self.fields.len()];
        let mut cells: Vec<(u8, Vec<usize>)> = Vec::new();
        for e in list.elements() {
            let n = resolution.unwrap_or(e.order() + 2).max(2);
            let base = points.len();
            let at = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let mut xi = Vec::new();
            let mut index = BTreeMap::new();
            for j in 0..n {
                for i in 0..n {
                    if e.id.0 == ShapeType::Tri && i + j > n - 1 {
                        continue;
                    }
                    index.insert((i, j), base + xi.len());
                    xi.push([at(i), at(j)]);
                }
            }
            points.extend(e.geom.x_map_many(&xi)?);
            let (v, _, _) = e.std.eval_modes(&xi)?;
            for (vals, f) in values.iter_mut().zip(&self.fields) {
                vals.extend(v.matvec_t(&f[e.coeff_range()]));
            }
            for j in 0..n - 1 {
                for i in 0..n - 1 {
                    match e.id.0 {
                        ShapeType::Tri => {
                            if i + j <= n - 2 {
                                cells.push((5, vec![index[&(i, j)], index[&(i + 1, j)], index[&(i, j + 1)]]));
                            }
                            if i + j < n - 2 {
                                cells.push((
                                    5,
                                    vec![index[&(i + 1, j)], index[&(i + 1, j + 1)], index[&(i, j + 1)]],
                                ));
                            }
                        }
                        _ => cells.push((
                            9,
                            vec![
                                index[&(i, j)],
                                index[&(i + 1, j)],
                                index[&(i + 1, j + 1)],
                                index[&(i, j + 1)],
                            ],
                        )),
                    }
                }
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0");
        let _ = writeln!(s, "spechp step {} time {:e}", self.step, self.time);
        let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", points.len());
        for p in &points {
            let _ = writeln!(s, "{:.12e} {:.12e} 0", p[0], p[1]);
        }
        let size: usize = cells.iter().map(|c| c.1.len() + 1).sum();
        let _ = writeln!(s, "CELLS {} {}", cells.len(), size);
        for (_, c) in &cells {
            let ids: Vec<String> = c.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{} {}", c.len(), ids.join(" "));
        }
        let _ = writeln!(s, "CELL_TYPES {}", cells.len());
        for (t, _) in &cells {
            let _ = writeln!(s, "{t}");
        }
        let _ = writeln!(s, "POINT_DATA {}", points.len());
        for (name, vals) in self.variables.iter().zip(&values) {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in vals {
                let _ = writeln!(s, "{v:.12e}");
            }
        }
        Ok(s)
    }

    pub fn write_vtk(&self, path: impl AsRef<Path>, resolution: Option<usize>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_vtk_string(resolution)?).map_err(|e| Error::io(path, e))
    }
}

/// Writes snapshots at steps `0, N, 2N, …`.
#[derive(Debug, Clone)]
pub struct OutputWriter {
    every: usize,
    prefix: PathBuf,
    format: OutputFormat,
    resolution: Option<usize>,
    written: Vec<PathBuf>,
}

impl OutputWriter {
    /// Checks that the output location is writable before any solving starts.
    pub fn new(every: usize, prefix: impl Into<PathBuf>, format: OutputFormat, resolution: Option<usize>) -> Result<Self> {
        if every == 0 {
            return Err(Error::InvalidArgument("output frequency must be at least 1".into()));
        }
        let prefix = prefix.into();
        let dir = match prefix.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let probe = dir.join(format!(".spechp-probe-{}", std::process::id()));
        std::fs::write(&probe, b"").map_err(|e| Error::io(&dir, e))?;
        let _ = std::fs::remove_file(&probe);
        Ok(OutputWriter {
            every,
            prefix,
            format,
            resolution,
            written: Vec::new(),
        })
    }

    pub fn path_for(&self, step: usize) -> PathBuf {
        let name = self.prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        self.prefix
            .with_file_name(format!("{name}_{step:06}.{}", self.format.extension()))
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes a snapshot if `step` is a multiple of the frequency.
    pub fn observe(
        &mut self,
        step: usize,
        time: f64,
        mesh: &MeshGraph,
        list: &ExpList,
        names: &[&str],
        fields: &[&[f64]],
    ) -> Result<()> {
        if !step.is_multiple_of(self.every) {
            return Ok(());
        }
        let snap = Snapshot::new(mesh, list, names, fields, time, step)?;
        let path = self.path_for(step);
        match self.format {
            OutputFormat::Nfj => snap.write_nfj(&path)?,
            OutputFormat::Vtk => snap.write_vtk(&path, self.resolution)?,
        }
        self.written.push(path);
        Ok(())
    }
}

/// Relative `L∞` distance helper used by drivers and tests.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `Σ_n c_n ∫ φ_n` for a coefficient vector, i.e. the exact integral of the expansion.
pub fn coefficient_integral(list: &ExpList, coeffs: &[f64]) -> Result<f64> {
    let ones = list.iproduct(&vec![1.0; list.npoints()])?;
    Ok(dot(&ones, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshio::structured_mesh;
    use crate::session::BoundaryCondition;

    fn periodic_bcs(mesh: &MeshGraph) -> Vec<BoundaryCondition> {
        let seg = |c: u32| mesh.composites[&c].ids.clone();
        vec![
            BoundaryCondition {
                composite: 1,
                segments: seg(1),
                kind: BcKind::Periodic { partner: 3 },
            },
            BoundaryCondition {
                composite: 2,
                segments: seg(2),
                kind: BcKind::Periodic { partner: 4 },
            },
        ]
    }

    fn walls(mesh: &MeshGraph) -> Vec<BoundaryCondition> {
        (1..=4)
            .map(|c| BoundaryCondition {
                composite: c,
                segments: mesh.composites[&c].ids.clone(),
                kind: BcKind::Wall,
            })
            .collect()
    }

    fn expr(s: &str) -> Expression {
        Expression::parse(s).unwrap()
    }

    #[test]
    fn projection_reproduces_polynomials_and_zero() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        assert!(project(&list, |_, _| 0.0).unwrap().iter().all(|&c| c == 0.0));
        let f = |x: f64, y: f64| x * x * x - x * y + 2.0;
        let c = project_cg(&mesh, &list, f, &SolverOptions::default()).unwrap();
        let phys = list.bwd_trans(&c).unwrap();
        for (v, p) in phys.iter().zip(list.coords()) {
            assert!((v - f(p[0], p[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn reference_quad_projection_integral() {
        let mesh = structured_mesh(1, 1, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 7, BasisType::ModifiedA).unwrap();
        let c = project(&list, |x, y| x.cos() * y.cos()).unwrap();
        let exact = 4.0 * 1f64.sin().powi(2);
        assert!((coefficient_integral(&list, &c).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn rk4_matches_taylor_polynomial() {
        let mut q = vec![1.0];
        rk4_step(&mut q, 0.0, 0.1, 0, &mut |u, _| Ok(vec![-u[0]])).unwrap();
        let taylor: f64 = (0..5).map(|k| (-0.1f64).powi(k) / (1..=k).product::<i32>().max(1) as f64).sum();
        assert!((q[0] - taylor).abs() < 1e-15);
        assert!((q[0] - 0.9048375).abs() < 1e-7);
        let mut z = vec![3.0, -1.0];
        rk4_step(&mut z, 0.0, 0.5, 0, &mut |u, _| Ok(vec![0.0; u.len()])).unwrap();
        assert_eq!(z, vec![3.0, -1.0]);
    }

    #[test]
    fn rk4_reports_non_finite_stage() {
        let mut q = vec![1.0];
        let e = rk4_step(&mut q, 0.0, 0.1, 7, &mut |_, _| Ok(vec![f64::NAN])).unwrap_err();
        match e {
            Error::NonFinite { step, context } => {
                assert_eq!(step, 7);
                assert!(context.contains("stage 1"));
            }
            other => panic!("{other:?}"),
        }
        assert!(rk4_step(&mut q, 0.0, 0.0, 0, &mut |u, _| Ok(u.to_vec())).is_err());
    }

    #[test]
    fn advection_of_constant_is_steady() {
        let mesh = structured_mesh(3, 3, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 4, BasisType::ModifiedA).unwrap();
        let c = project(&list, |_, _| 2.5).unwrap();
        let s = AdvectionSolver::new(&mesh, list, &[expr("-y"), expr("x")], &periodic_bcs(&mesh), Strategy::SumFac)
            .unwrap();
        let r = s.rhs(&c, 0.0).unwrap();
        assert!(max_abs(&r) < 1e-9, "{}", max_abs(&r));
    }

    #[test]
    fn zero_velocity_gives_zero_rhs() {
        let mesh = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        let c = project(&list, |x, y| x * y).unwrap();
        let bcs: Vec<_> = (1..=4)
            .map(|k| BoundaryCondition {
                composite: k,
                segments: mesh.composites[&k].ids.clone(),
                kind: BcKind::Extrapolate,
            })
            .collect();
        let s = AdvectionSolver::new(&mesh, list, &[expr("0"), expr("0")], &bcs, Strategy::StdMat).unwrap();
        assert_eq!(max_abs(&s.rhs(&c, 0.0).unwrap()), 0.0);
    }

    #[test]
    fn advection_rhs_matches_analytic_derivative() {
        let mesh = structured_mesh(4, 1, [0.0, 1.0], [0.0, 0.25], false).unwrap();
        let list = ExpList::uniform(&mesh, 8, BasisType::ModifiedA).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        let c = project(&list, |x, _| (two_pi * x).sin()).unwrap();
        let s = AdvectionSolver::new(&mesh, list, &[expr("1"), expr("0")], &periodic_bcs(&mesh), Strategy::IterPerExp)
            .unwrap();
        let r = s.list().bwd_trans(&s.rhs(&c, 0.0).unwrap()).unwrap();
        let exact = s.list().evaluate(|x, _| -two_pi * (two_pi * x).cos());
        let err = r.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn missing_boundary_condition_is_an_error() {
        let mesh = structured_mesh(2, 2, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 2, BasisType::ModifiedA).unwrap();
        let bcs = periodic_bcs(&mesh)[..1].to_vec();
        let e = AdvectionSolver::new(&mesh, list, &[expr("1"), expr("0")], &bcs, Strategy::StdMat)
            .err()
            .unwrap();
        assert!(e.to_string().contains("no boundary condition"), "{e}");
    }

    #[test]
    fn riemann_fluxes_are_consistent_and_conservative() {
        let bases = [
            ApeBase::QUIESCENT,
            ApeBase {
                u: 0.3,
                v: -0.2,
                rho: 1.2,
                c2: 2.0,
            },
        ];
        let n = [0.6, 0.8];
        let q = [0.7, -0.1, 0.4];
        let r = [-0.2, 0.5, 0.1];
        for b in &bases {
            for kind in [RiemannKind::Upwind, RiemannKind::LaxFriedrichs] {
                let f = riemann_flux(kind, q, q, n, b);
                let exact = ape_normal_flux(q, n, b);
                for i in 0..3 {
                    assert!((f[i] - exact[i]).abs() < 1e-12);
                }
                let a = riemann_flux(kind, q, r, n, b);
                let m = riemann_flux(kind, r, q, [-n[0], -n[1]], b);
                for i in 0..3 {
                    assert!((a[i] + m[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lax_friedrichs_pressure_jump_matches_wave_oracle() {
        let n = [1.0, 0.0];
        let (pl, pr) = (1.0, 0.4);
        let f = riemann_flux(RiemannKind::LaxFriedrichs, [pl, 0.0, 0.0], [pr, 0.0, 0.0], n, &ApeBase::QUIESCENT);
        assert!((f[0] - (-0.5 * (pr - pl))).abs() < 1e-15);
        assert!((f[1] - 0.5 * (pl + pr)).abs() < 1e-15);
        assert_eq!(f[2], 0.0);
        // for the scalar wave system upwind and LF coincide when ū = 0
        let u = riemann_flux(RiemannKind::Upwind, [pl, 0.0, 0.0], [pr, 0.0, 0.0], n, &ApeBase::QUIESCENT);
        for i in 0..3 {
            assert!((u[i] - f[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn upwind_flux_takes_supersonic_state_from_upstream() {
        let b = ApeBase {
            u: 2.0,
            v: 0.0,
            rho: 1.0,
            c2: 1.0,
        };
        let n = [1.0, 0.0];
        let (l, r) = ([0.3, 0.1, -0.2], [1.0, -0.5, 0.7]);
        let f = riemann_flux(RiemannKind::Upwind, l, r, n, &b);
        let fl = ape_normal_flux(l, n, &b);
        // both acoustic waves travel right; only the zero-speed wave carries right data
        assert!((f[0] - fl[0]).abs() < 1e-12);
    }

    #[test]
    fn ape_zero_and_constant_states_are_steady() {
        let mesh = structured_mesh(3, 3, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        let cfg = ApeConfig {
            base: [expr("0.3"), expr("0.1"), expr("1.2"), expr("1.5")],
            sources: [None, None, None],
            riemann: RiemannKind::Upwind,
        };
        let s = ApeSolver::new(&mesh, list, cfg, &periodic_bcs(&mesh), Strategy::SumFac).unwrap();
        let zero = vec![0.0; s.state_len()];
        assert_eq!(max_abs(&s.rhs(&zero, 0.0).unwrap()), 0.0);
        let q = s.initial_state([&|_, _| 0.5, &|_, _| -0.25, &|_, _| 0.75]).unwrap();
        let r = s.rhs(&q, 0.0).unwrap();
        assert!(max_abs(&r) < 1e-10, "{}", max_abs(&r));
    }

    #[test]
    fn ape_quiescent_operator_is_the_wave_operator() {
        let mesh = structured_mesh(4, 4, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 8, BasisType::ModifiedA).unwrap();
        let s = ApeSolver::new(&mesh, list, ApeConfig::quiescent(RiemannKind::Upwind), &walls(&mesh), Strategy::SumFac)
            .unwrap();
        let pi = std::f64::consts::PI;
        let q = s
            .initial_state([&|x, y| (pi * x).sin() * (pi * y).sin(), &|_, _| 0.0, &|_, _| 0.0])
            .unwrap();
        let r = s.rhs(&q, 0.0).unwrap();
        assert!(max_abs(&s.variable(&r, 0).unwrap()) < 1e-6);
        let du = s.variable(&r, 1).unwrap();
        let dv = s.variable(&r, 2).unwrap();
        let ex = s.list().evaluate(|x, y| -pi * (pi * x).cos() * (pi * y).sin());
        let ey = s.list().evaluate(|x, y| -pi * (pi * x).sin() * (pi * y).cos());
        let err = du
            .iter()
            .zip(&ex)
            .chain(dv.iter().zip(&ey))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn ape_rejects_nonpositive_base_density() {
        let mesh = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 2, BasisType::ModifiedA).unwrap();
        let mut cfg = ApeConfig::quiescent(RiemannKind::LaxFriedrichs);
        cfg.base[2] = expr("x - 0.5");
        assert!(ApeSolver::new(&mesh, list, cfg, &walls(&mesh), Strategy::StdMat).is_err());
    }

    #[test]
    fn sensor_extremes_and_scale_invariance() {
        let mesh = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 5, BasisType::ModifiedA).unwrap();
        let low = project(&list, |x, y| x * x * y + y.powi(4)).unwrap();
        let r = sensor(&list, &low).unwrap();
        assert!(r.s.iter().all(|&s| s.abs() < 1e-14), "{:?}", r.s);
        let mut top = vec![0.0; list.ncoeffs()];
        let degs = list.element(0).std.mode_degrees();
        let k = degs.iter().position(|&d| d == 5).unwrap();
        top[k] = 3.0;
        let r = sensor(&list, &top).unwrap();
        assert!((r.s[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.s[1], 0.0);
        let c = project(&list, |x, y| (3.0 * x).sin() * (2.0 * y).exp()).unwrap();
        let a = sensor(&list, &c).unwrap();
        let scaled: Vec<f64> = c.iter().map(|v| -7.5 * v).collect();
        let b = sensor(&list, &scaled).unwrap();
        for (x, y) in a.s.iter().zip(&b.s) {
            assert!((x - y).abs() < 1e-14 * x.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn adaptation_rules_and_polynomial_transfer() {
        let rep = SensorReport {
            s: vec![0.5, 1e-3, 1e-12, 0.5],
            orders: vec![3, 3, 3, 6],
        };
        assert_eq!(adapted_orders(&rep, 1e-2, 1e-8, 2, 6), vec![4, 3, 2, 6]);
        let mesh = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::uniform(&mesh, 4, BasisType::ModifiedA).unwrap();
        let f = |x: f64, y: f64| 1.0 + x * y - 0.5 * y * y;
        let c = project(&list, f).unwrap();
        let (new, out) = transfer(&mesh, &list, &vec![3; list.len()], &[&c]).unwrap();
        let phys = new.bwd_trans(&out[0]).unwrap();
        for (v, p) in phys.iter().zip(new.coords()) {
            assert!((v - f(p[0], p[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn artificial_viscosity_formula() {
        let r = artificial_viscosity_from(1.0, &[1.0], &[1], &[1.0], &[1.0]).unwrap();
        assert_eq!(r.eps, vec![1.0]);
        let a = artificial_viscosity_from(0.3, &[0.5, 2.0], &[3, 4], &[1.5, 2.0], &[0.1, 0.0]).unwrap();
        let b = artificial_viscosity_from(0.6, &[0.5, 2.0], &[3, 4], &[1.5, 2.0], &[0.1, 0.0]).unwrap();
        assert_eq!(a.eps[1], 0.0);
        assert!((b.eps[0] - 2.0 * a.eps[0]).abs() < 1e-16);
        assert!(artificial_viscosity_from(-1.0, &[1.0], &[1], &[1.0], &[1.0]).is_err());
        let mesh = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let list = ExpList::uniform(&mesh, 3, BasisType::ModifiedA).unwrap();
        let c = project(&list, |x, _| x).unwrap();
        let av = artificial_viscosity(&list, &c, 2.0, &[1.0]).unwrap();
        assert!(av.eps[0].abs() < 1e-14);
        assert!((av.h[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn snapshots_roundtrip_and_filter_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = structured_mesh(2, 1, [0.0, 1.0], [0.0, 1.0], true).unwrap();
        let list = ExpList::new(&mesh, |e| 2 + e.1 as usize % 2, BasisType::ModifiedA).unwrap();
        let c = project(&list, |x, y| x - y).unwrap();
        let snap = Snapshot::new(&mesh, &list, &["u"], &[&c], 0.5, 3).unwrap();
        let path = dir.path().join("s.nfj");
        snap.write_nfj(&path).unwrap();
        let back = Snapshot::read_nfj(&path).unwrap();
        assert_eq!(back.fields, snap.fields);
        assert_eq!(back.orders, snap.orders);
        assert_eq!(back.to_nfj_string().unwrap(), snap.to_nfj_string().unwrap());
        let vtk = snap.to_vtk_string(Some(3)).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
        assert!(vtk.contains("POINTS 24 double"));

        let mut w = OutputWriter::new(5, dir.path().join("out/u"), OutputFormat::Nfj, None).unwrap();
        for step in 0..=10 {
            w.observe(step, step as f64, &mesh, &list, &["u"], &[&c]).unwrap();
        }
        assert_eq!(w.written().len(), 3);
        assert!(w.written()[2].ends_with("u_000010.nfj"));
        let mut w = OutputWriter::new(50, dir.path().join("v"), OutputFormat::Vtk, None).unwrap();
        for step in 0..=10 {
            w.observe(step, 0.0, &mesh, &list, &["u"], &[&c]).unwrap();
        }
        assert_eq!(w.written().len(), 1);
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        assert!(OutputWriter::new(1, blocker.join("sub/u"), OutputFormat::Nfj, None).is_err());
    }
}
