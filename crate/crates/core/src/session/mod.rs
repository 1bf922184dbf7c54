//! JSON session files: mesh, expansions, solver settings, boundary
//! conditions, expressions, collections, filters and adaptivity.
//!
//! ```json
//! {
//!   "version": 1,
//!   "mesh": "mesh.nmj",
//!   "parameters": { "k": 2.0 },
//!   "expansions": [ { "composite": 0, "order": 6 } ],
//!   "solver": { "kind": "advection", "dt": 0.002, "steps": 500 },
//!   "initial": { "u": "exp(-k*(x^2 + y^2))" },
//!   "velocity": ["-y", "x"],
//!   "boundary": [ { "composite": 1, "type": "periodic", "partner": 3 } ],
//!   "collections": { "default": "auto" },
//!   "filters": [ { "type": "output", "every": 100, "path": "out/u", "format": "vtk" } ]
//! }
//! ```
//!
//! `mesh` may instead be an inline structured grid:
//! `{ "structured": { "nx": 8, "ny": 8, "x": [-1, 1], "y": [-1, 1] } }`.

pub mod expr;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub use expr::Expression;

use crate::basis::BasisType;
use crate::collections::Strategy;
use crate::error::{Error, Result};
use crate::meshio::{structured_mesh, ElementRef, MeshGraph};
use crate::solvers::{OutputFormat, RiemannKind};
use crate::stdregions::ShapeType;

pub const MIN_ORDER: usize = 1;
pub const MAX_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Projection,
    Helmholtz,
    Advection,
    Ape,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Projection => "projection",
            SolverKind::Helmholtz => "helmholtz",
            SolverKind::Advection => "advection",
            SolverKind::Ape => "ape",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Discretisation {
    Cg,
    #[default]
    Dg,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub discretisation: Discretisation,
    /// Helmholtz constant in `−∇²u + λu = f`.
    pub lambda: f64,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub riemann: RiemannKind,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SolverConfig {
    /// Time step and step count, required by time-dependent solvers.
    pub fn time_stepping(&self) -> Result<(f64, usize)> {
        match (self.dt, self.steps) {
            (Some(dt), Some(n)) => Ok((dt, n)),
            _ => Err(Error::Session(format!(
                "{} solver requires solver.dt and solver.steps",
                self.kind.name()
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BcKind {
    Periodic { partner: u32 },
    /// Boundary values per variable.
    Dirichlet(BTreeMap<String, Expression>),
    Wall,
    Farfield,
    Extrapolate,
}

impl BcKind {
    pub fn name(&self) -> &'static str {
        match self {
            BcKind::Periodic { .. } => "periodic",
            BcKind::Dirichlet(_) => "dirichlet",
            BcKind::Wall => "wall",
            BcKind::Farfield => "farfield",
            BcKind::Extrapolate => "extrapolate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryCondition {
    pub composite: u32,
    pub segments: Vec<u32>,
    pub kind: BcKind,
}

#[derive(Debug, Clone)]
pub struct OutputFilter {
    pub every: usize,
    /// Path prefix; files are `<path>_<step>.<ext>`.
    pub path: PathBuf,
    pub format: OutputFormat,
    /// Visualisation lattice points per element edge (VTK only).
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adaptivity {
    /// Cadence in time steps.
    pub n_steps: usize,
    pub threshold_hi: f64,
    pub threshold_lo: f64,
    pub p_min: usize,
    pub p_max: usize,
    #[serde(default = "default_sensor_variable")]
    pub variable: String,
}

fn default_sensor_variable() -> String {
    "u".into()
}

#[derive(Debug, Clone)]
pub struct BaseFlow {
    pub u: Expression,
    pub v: Expression,
    pub rho: Expression,
    pub c2: Expression,
}

#[derive(Debug, Clone)]
pub struct Session {
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
    pub mesh: MeshGraph,
    pub parameters: BTreeMap<String, f64>,
    pub basis: BasisType,
    /// Expansion order of every domain element.
    pub orders: BTreeMap<ElementRef, usize>,
    pub solver: SolverConfig,
    pub initial: BTreeMap<String, Expression>,
    pub exact: BTreeMap<String, Expression>,
    pub forcing: Option<Expression>,
    pub velocity: Option<[Expression; 2]>,
    pub base_flow: Option<BaseFlow>,
    pub sources: BTreeMap<String, Expression>,
    pub boundary: Vec<BoundaryCondition>,
    pub collections: Strategy,
    pub filters: Vec<OutputFilter>,
    pub adaptivity: Option<Adaptivity>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSession {
    #[serde(default = "one")]
    version: u32,
    mesh: RawMesh,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    expansions: Vec<RawExpansion>,
    solver: RawSolver,
    #[serde(default)]
    initial: BTreeMap<String, String>,
    #[serde(default)]
    exact: BTreeMap<String, String>,
    forcing: Option<String>,
    velocity: Option<[String; 2]>,
    base_flow: Option<RawBaseFlow>,
    #[serde(default)]
    sources: BTreeMap<String, String>,
    #[serde(default)]
    boundary: Vec<RawBoundary>,
    #[serde(default)]
    collections: RawCollections,
    #[serde(default)]
    filters: Vec<RawFilter>,
    adaptivity: Option<Adaptivity>,
}

fn one() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMesh {
    Path(String),
    Inline(InlineMesh),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineMesh {
    structured: StructuredSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StructuredSpec {
    nx: usize,
    ny: usize,
    x: [f64; 2],
    y: [f64; 2],
    #[serde(default)]
    triangles: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawOrder {
    Uniform(usize),
    /// Element id → order.
    PerElement(BTreeMap<String, usize>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpansion {
    composite: u32,
    #[serde(default)]
    basis: Option<BasisType>,
    order: RawOrder,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    kind: String,
    #[serde(default)]
    discretisation: Discretisation,
    #[serde(default = "one_f64")]
    lambda: f64,
    dt: Option<f64>,
    steps: Option<usize>,
    #[serde(default)]
    riemann: RiemannKind,
    #[serde(default = "default_tol")]
    tolerance: f64,
    #[serde(default = "default_max_iter")]
    max_iterations: usize,
}

fn one_f64() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    10_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseFlow {
    #[serde(default = "zero_str")]
    u: String,
    #[serde(default = "zero_str")]
    v: String,
    #[serde(default = "one_str")]
    rho: String,
    #[serde(default = "one_str")]
    c2: String,
}

fn zero_str() -> String {
    "0".into()
}

fn one_str() -> String {
    "1".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    composite: u32,
    #[serde(rename = "type")]
    kind: String,
    partner: Option<u32>,
    #[serde(default)]
    values: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollections {
    /// `auto` picks by timing, so it is opt-in: the fixed default keeps runs reproducible.
    #[serde(default = "default_strategy")]
    default: Strategy,
}

impl Default for RawCollections {
    fn default() -> Self {
        RawCollections {
            default: default_strategy(),
        }
    }
}

fn default_strategy() -> Strategy {
    Strategy::SumFac
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    #[serde(rename = "type")]
    kind: String,
    every: usize,
    path: String,
    #[serde(default)]
    format: OutputFormat,
    resolution: Option<usize>,
}

impl Session {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, &BTreeMap::new())
    }

    /// Loads a session, overriding top-level parameters.
    pub fn load_with(path: impl AsRef<Path>, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_with(&text, &base, overrides)
    }

    /// Parses session text; relative paths resolve against `base_dir`.
    pub fn from_str_with(text: &str, base_dir: &Path, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawSession = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::resolve(raw, base_dir, overrides)
    }

    fn resolve(raw: RawSession, base_dir: &Path, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        if raw.version != 1 {
            return Err(Error::Schema {
                path: "version".into(),
                message: format!("unsupported version {}", raw.version),
            });
        }
        let mut parameters = raw.parameters;
        for (k, v) in overrides {
            parameters.insert(k.clone(), *v);
        }
        for name in parameters.keys() {
            let reserved = ["x", "y", "t", "PI", "E"];
            let valid = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_alphanumeric() || c == '_');
            if reserved.contains(&name.as_str()) || !valid {
                return Err(Error::Session(format!("invalid parameter name '{name}'")));
            }
        }
        let parse = |what: &str, src: &str| -> Result<Expression> {
            Expression::parse_with(src, &parameters).map_err(|e| match e {
                Error::Expression { column, message } => Error::Expression {
                    column,
                    message: format!("{message} (in {what})"),
                },
                other => other,
            })
        };

        let mesh = match raw.mesh {
            RawMesh::Path(p) => MeshGraph::read(base_dir.join(p))?,
            RawMesh::Inline(m) => {
                let s = m.structured;
                structured_mesh(s.nx, s.ny, s.x, s.y, s.triangles)?
            }
        };

        // expansions
        let mut basis = None;
        let mut orders = BTreeMap::new();
        for (i, ex) in raw.expansions.iter().enumerate() {
            let comp = mesh.composites.get(&ex.composite).ok_or_else(|| {
                Error::Session(format!("expansions[{i}] references unknown composite {}", ex.composite))
            })?;
            if comp.kind == ShapeType::Seg {
                return Err(Error::Session(format!(
                    "expansions[{i}]: composite {} holds segments, not elements",
                    ex.composite
                )));
            }
            let b = ex.basis.unwrap_or(BasisType::ModifiedA);
            if b == BasisType::ModifiedB {
                return Err(Error::Session(format!(
                    "expansions[{i}]: use modified_a (triangles pick modified_b automatically)"
                )));
            }
            match basis {
                None => basis = Some(b),
                Some(prev) if prev != b => {
                    return Err(Error::Session("all expansions must use the same basis type".into()))
                }
                _ => {}
            }
            for &id in &comp.ids {
                let p = match &ex.order {
                    RawOrder::Uniform(p) => *p,
                    RawOrder::PerElement(table) => *table.get(&id.to_string()).ok_or_else(|| {
                        Error::Session(format!("expansions[{i}]: no order for element {id}"))
                    })?,
                };
                if !(MIN_ORDER..=MAX_ORDER).contains(&p) {
                    return Err(Error::Session(format!(
                        "expansions[{i}]: order {p} of element {id} outside [{MIN_ORDER}, {MAX_ORDER}]"
                    )));
                }
                orders.insert((comp.kind, id), p);
            }
            if let RawOrder::PerElement(table) = &ex.order {
                for key in table.keys() {
                    let known = key.parse::<u32>().is_ok_and(|id| comp.ids.contains(&id));
                    if !known {
                        return Err(Error::Session(format!(
                            "expansions[{i}]: element '{key}' is not in composite {}",
                            ex.composite
                        )));
                    }
                }
            }
        }
        for el in mesh.domain_elements() {
            if !orders.contains_key(&el) {
                return Err(Error::Session(format!(
                    "domain element {} {} has no expansion",
                    el.0.name(),
                    el.1
                )));
            }
        }

        // solver
        let r = raw.solver;
        let kind = match r.kind.as_str() {
            "projection" => SolverKind::Projection,
            "helmholtz" => SolverKind::Helmholtz,
            "advection" => SolverKind::Advection,
            "ape" => SolverKind::Ape,
            other => {
                return Err(Error::Session(format!(
                    "unknown solver kind '{other}' (expected projection, helmholtz, advection or ape)"
                )))
            }
        };
        if let Some(dt) = r.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Session(format!("solver.dt must be positive, got {dt}")));
            }
        }
        let solver = SolverConfig {
            kind,
            discretisation: r.discretisation,
            lambda: r.lambda,
            dt: r.dt,
            steps: r.steps,
            riemann: r.riemann,
            tolerance: r.tolerance,
            max_iterations: r.max_iterations,
        };

        let named = |what: &str, m: &BTreeMap<String, String>| -> Result<BTreeMap<String, Expression>> {
            m.iter()
                .map(|(k, v)| Ok((k.clone(), parse(&format!("{what}.{k}"), v)?)))
                .collect()
        };
        let initial = named("initial", &raw.initial)?;
        let exact = named("exact", &raw.exact)?;
        let sources = named("sources", &raw.sources)?;
        let forcing = raw.forcing.as_deref().map(|s| parse("forcing", s)).transpose()?;
        let velocity = match &raw.velocity {
            Some([a, b]) => Some([parse("velocity[0]", a)?, parse("velocity[1]", b)?]),
            None => None,
        };
        let base_flow = match &raw.base_flow {
            Some(b) => Some(BaseFlow {
                u: parse("base_flow.u", &b.u)?,
                v: parse("base_flow.v", &b.v)?,
                rho: parse("base_flow.rho", &b.rho)?,
                c2: parse("base_flow.c2", &b.c2)?,
            }),
            None => None,
        };

        // boundary conditions
        let seg_composite = |i: usize, id: u32| -> Result<Vec<u32>> {
            let comp = mesh.composites.get(&id).ok_or_else(|| {
                Error::Session(format!("boundary[{i}] references unknown composite {id}"))
            })?;
            if comp.kind != ShapeType::Seg {
                return Err(Error::Session(format!(
                    "boundary[{i}]: composite {id} does not hold segments"
                )));
            }
            Ok(comp.ids.clone())
        };
        let mut boundary = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, b) in raw.boundary.iter().enumerate() {
            let segments = seg_composite(i, b.composite)?;
            if !seen.insert(b.composite) {
                return Err(Error::Session(format!(
                    "boundary[{i}]: composite {} has more than one condition",
                    b.composite
                )));
            }
            if b.partner.is_some() && b.kind != "periodic" {
                return Err(Error::Session(format!("boundary[{i}]: 'partner' only applies to periodic conditions")));
            }
            if !b.values.is_empty() && b.kind != "dirichlet" {
                return Err(Error::Session(format!("boundary[{i}]: 'values' only applies to dirichlet conditions")));
            }
            let kind = match b.kind.as_str() {
                "periodic" => {
                    let partner = b.partner.ok_or_else(|| {
                        Error::Session(format!("boundary[{i}]: periodic condition needs 'partner'"))
                    })?;
                    seg_composite(i, partner)?;
                    BcKind::Periodic { partner }
                }
                "dirichlet" => BcKind::Dirichlet(named(&format!("boundary[{i}].values"), &b.values)?),
                "wall" => BcKind::Wall,
                "farfield" => BcKind::Farfield,
                "extrapolate" => BcKind::Extrapolate,
                other => {
                    return Err(Error::Session(format!(
                        "boundary[{i}]: unknown condition '{other}' (expected periodic, dirichlet, wall, farfield or extrapolate)"
                    )))
                }
            };
            boundary.push(BoundaryCondition {
                composite: b.composite,
                segments,
                kind,
            });
        }
        // periodic partners are implied; they must not carry their own condition
        for b in &boundary {
            if let BcKind::Periodic { partner } = b.kind {
                if let Some(other) = boundary.iter().find(|o| o.composite == partner) {
                    if !matches!(other.kind, BcKind::Periodic { partner: p } if p == b.composite) {
                        return Err(Error::Session(format!(
                            "composite {partner} is periodic partner of {} but has a {} condition",
                            b.composite,
                            other.kind.name()
                        )));
                    }
                }
            }
        }

        let mut filters = Vec::new();
        for (i, f) in raw.filters.into_iter().enumerate() {
            if f.kind != "output" {
                return Err(Error::Session(format!("filters[{i}]: unknown filter type '{}'", f.kind)));
            }
            if f.every == 0 {
                return Err(Error::Session(format!("filters[{i}]: 'every' must be at least 1")));
            }
            filters.push(OutputFilter {
                every: f.every,
                path: base_dir.join(f.path),
                format: f.format,
                resolution: f.resolution,
            });
        }

        if let Some(a) = &raw.adaptivity {
            if a.p_min > a.p_max || a.p_min < MIN_ORDER || a.p_max > MAX_ORDER {
                return Err(Error::Session(format!(
                    "adaptivity: invalid order bounds [{}, {}]",
                    a.p_min, a.p_max
                )));
            }
            if a.threshold_lo > a.threshold_hi {
                return Err(Error::Session("adaptivity: threshold_lo exceeds threshold_hi".into()));
            }
            if a.n_steps == 0 {
                return Err(Error::Session("adaptivity: n_steps must be at least 1".into()));
            }
        }

        Ok(Session {
            base_dir: base_dir.to_path_buf(),
            mesh,
            parameters,
            basis: basis.ok_or_else(|| Error::Session("no expansions given".into()))?,
            orders,
            solver,
            initial,
            exact,
            forcing,
            velocity,
            base_flow,
            sources,
            boundary,
            collections: raw.collections.default,
            filters,
            adaptivity: raw.adaptivity,
        })
    }

    pub fn order_of(&self, el: ElementRef) -> usize {
        self.orders[&el]
    }

    pub fn expansion_list(&self) -> Result<crate::explist::ExpList> {
        crate::explist::ExpList::new(&self.mesh, |el| self.order_of(el), self.basis)
    }

    /// Condition governing a boundary segment, if any.
    pub fn condition_of_segment(&self, seg: u32) -> Option<&BoundaryCondition> {
        self.boundary.iter().find(|b| b.segments.contains(&seg))
    }

    /// Periodic pairs as segment lists, for trace construction.
    pub fn periodic_pairs(&self) -> Vec<(Vec<u32>, Vec<u32>, String)> {
        let mut out = Vec::new();
        let mut done = BTreeSet::new();
        for b in &self.boundary {
            if let BcKind::Periodic { partner } = b.kind {
                if done.contains(&b.composite) {
                    continue;
                }
                done.insert(b.composite);
                done.insert(partner);
                out.push((
                    b.segments.clone(),
                    self.mesh.composites[&partner].ids.clone(),
                    format!("composites {}/{}", b.composite, partner),
                ));
            }
        }
        out
    }

    /// Segment ids of all Dirichlet conditions.
    pub fn dirichlet_segments(&self) -> BTreeSet<u32> {
        self.boundary
            .iter()
            .filter(|b| matches!(b.kind, BcKind::Dirichlet(_)))
            .flat_map(|b| b.segments.iter().copied())
            .collect()
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }
}

/// Parses `NAME=value` overrides.
pub fn parse_param_overrides<S: AsRef<str>>(items: &[S]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        let item = item.as_ref();
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("parameter override '{item}' is not NAME=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("parameter '{k}' value '{v}' is not a number")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
