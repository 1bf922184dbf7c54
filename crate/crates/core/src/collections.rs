//! Batched elemental operators over groups of identical elements.
//!
//! Three evaluation strategies compute the same operators:
//!
//! - `StdMat`: a dense reference-element matrix applied to each element block;
//! - `IterPerExp`: per-element sum-factorized kernels with the geometric
//!   factors applied in a fused loop;
//! - `SumFac`: sum-factorized contractions over the whole batch at once, with
//!   the element index as the trailing (fastest) dimension.
//!
//! Inputs and outputs use one packed layout: element-major, each element's
//! coefficients (or quadrature values) contiguous. `PhysDeriv` produces the
//! `x`-derivative block for all elements followed by the `y` block.

use std::sync::Arc;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explist::ExpList;
use crate::flops;
use crate::geometry::GeomFactors;
use crate::linalg::{axpy, dot};
use crate::stdregions::{ShapeType, StdExpansion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpType {
    BwdTrans,
    IProductWrtBase,
    PhysDeriv,
}

impl OpType {
    pub const ALL: [OpType; 3] = [OpType::BwdTrans, OpType::IProductWrtBase, OpType::PhysDeriv];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    StdMat,
    IterPerExp,
    SumFac,
    #[default]
    Auto,
}

impl Strategy {
    pub const CONCRETE: [Strategy; 3] = [Strategy::StdMat, Strategy::IterPerExp, Strategy::SumFac];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::StdMat => "stdmat",
            Strategy::IterPerExp => "iterperexp",
            Strategy::SumFac => "sumfac",
            Strategy::Auto => "auto",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stdmat" => Ok(Strategy::StdMat),
            "iterperexp" => Ok(Strategy::IterPerExp),
            "sumfac" => Ok(Strategy::SumFac),
            "auto" => Ok(Strategy::Auto),
            other => Err(Error::InvalidArgument(format!(
                "unknown collection strategy '{other}' (expected auto, stdmat, iterperexp or sumfac)"
            ))),
        }
    }
}

/// Geometric data of a batch, point-major within each element.
#[derive(Debug, Clone)]
struct BatchGeom {
    jw: Vec<f64>,
    inv: Vec<[[f64; 2]; 2]>,
}

/// One operator over a homogeneous batch with a concrete strategy.
#[derive(Debug, Clone)]
pub struct Collection {
    std: Arc<StdExpansion>,
    op: OpType,
    strategy: Strategy,
    nelem: usize,
    geom: Arc<BatchGeom>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyTiming {
    pub strategy: Strategy,
    /// Median wall-clock seconds per application.
    pub median: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AutotuneReport {
    pub op: OpType,
    pub chosen: Strategy,
    pub timings: Vec<StrategyTiming>,
}

impl Collection {
    /// Builds a collection from a reference expansion and per-element geometric factors.
    pub fn new(
        std: Arc<StdExpansion>,
        geoms: &[&GeomFactors],
        op: OpType,
        strategy: Strategy,
    ) -> Result<Self> {
        if geoms.is_empty() {
            return Err(Error::InvalidArgument("collection needs at least one element".into()));
        }
        let np = std.num_points();
        let mut jw = Vec::with_capacity(np * geoms.len());
        let mut inv = Vec::with_capacity(np * geoms.len());
        for g in geoms {
            if g.jw.len() != np {
                return Err(Error::Heterogeneous(format!(
                    "element geometry has {} points, expansion has {np}",
                    g.jw.len()
                )));
            }
            jw.extend_from_slice(&g.jw);
            inv.extend_from_slice(&g.inv);
        }
        let mut c = Collection {
            std,
            op,
            strategy: Strategy::StdMat,
            nelem: geoms.len(),
            geom: Arc::new(BatchGeom { jw, inv }),
        };
        c.strategy = match strategy {
            Strategy::Auto => c.autotune(&Strategy::CONCRETE, 5, 2)?.chosen,
            s => s,
        };
        Ok(c)
    }

    /// Collection over elements `indices` of an expansion list.
    pub fn from_explist(list: &ExpList, indices: &[usize], op: OpType, strategy: Strategy) -> Result<Self> {
        let first = indices
            .first()
            .map(|&i| list.element(i))
            .ok_or_else(|| Error::InvalidArgument("collection needs at least one element".into()))?;
        for &i in indices {
            let e = list.element(i);
            if e.std.shape() != first.std.shape() || e.std.basis_keys() != first.std.basis_keys() {
                return Err(Error::Heterogeneous(format!(
                    "element {} ({} P={}) differs from element {} ({} P={})",
                    e.id.1,
                    e.std.shape().name(),
                    e.order(),
                    first.id.1,
                    first.std.shape().name(),
                    first.order()
                )));
            }
        }
        let geoms: Vec<&GeomFactors> = indices.iter().map(|&i| &list.element(i).gf).collect();
        Self::new(first.std.clone(), &geoms, op, strategy)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn op(&self) -> OpType {
        self.op
    }

    pub fn num_elements(&self) -> usize {
        self.nelem
    }

    pub fn std(&self) -> &Arc<StdExpansion> {
        &self.std
    }

    pub fn input_len(&self) -> usize {
        self.nelem
            * match self.op {
                OpType::BwdTrans => self.std.num_coeffs(),
                _ => self.std.num_points(),
            }
    }

    pub fn output_len(&self) -> usize {
        self.nelem
            * match self.op {
                OpType::BwdTrans => self.std.num_points(),
                OpType::IProductWrtBase => self.std.num_coeffs(),
                OpType::PhysDeriv => 2 * self.std.num_points(),
            }
    }

    /// Same batch, another strategy.
    pub fn with_strategy(&self, strategy: Strategy) -> Result<Self> {
        let mut c = self.clone();
        c.strategy = match strategy {
            Strategy::Auto => self.autotune(&Strategy::CONCRETE, 5, 2)?.chosen,
            s => s,
        };
        Ok(c)
    }

    pub fn apply(&self, input: &[f64], output: &mut [f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::SizeMismatch {
                context: "collection input",
                expected: self.input_len(),
                actual: input.len(),
            });
        }
        if output.len() != self.output_len() {
            return Err(Error::SizeMismatch {
                context: "collection output",
                expected: self.output_len(),
                actual: output.len(),
            });
        }
        match (self.strategy, self.op) {
            (Strategy::StdMat, OpType::BwdTrans) => self.stdmat_bwd(input, output),
            (Strategy::StdMat, OpType::IProductWrtBase) => self.stdmat_iprod(input, output),
            (Strategy::StdMat, OpType::PhysDeriv) => self.stdmat_deriv(input, output),
            (Strategy::IterPerExp, OpType::BwdTrans) => self.iter_bwd(input, output),
            (Strategy::IterPerExp, OpType::IProductWrtBase) => self.iter_iprod(input, output),
            (Strategy::IterPerExp, OpType::PhysDeriv) => self.iter_deriv(input, output),
            (Strategy::SumFac, OpType::BwdTrans) => self.sumfac_bwd(input, output),
            (Strategy::SumFac, OpType::IProductWrtBase) => self.sumfac_iprod(input, output),
            (Strategy::SumFac, OpType::PhysDeriv) => self.sumfac_deriv(input, output),
            (Strategy::Auto, _) => unreachable!("strategy resolved at construction"),
        }
        Ok(())
    }

    /// Multiply-adds of one application.
    pub fn op_count(&self) -> u64 {
        let input = vec![1.0; self.input_len()];
        let mut output = vec![0.0; self.output_len()];
        self.std.dense();
        flops::count(|| self.apply(&input, &mut output)).1
    }

    /// Times each candidate strategy (median of `trials` after `warmups`) and picks the fastest.
    pub fn autotune(&self, candidates: &[Strategy], trials: usize, warmups: usize) -> Result<AutotuneReport> {
        if trials == 0 {
            return Err(Error::InvalidArgument("autotune needs at least one trial".into()));
        }
        let candidates: Vec<Strategy> = candidates
            .iter()
            .copied()
            .filter(|s| *s != Strategy::Auto)
            .collect();
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("autotune needs a concrete candidate".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed());
        let input: Vec<f64> = (0..self.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut output = vec![0.0; self.output_len()];
        self.std.dense();
        let mut timings = Vec::new();
        for &s in &candidates {
            let mut c = self.clone();
            c.strategy = s;
            for _ in 0..warmups {
                c.apply(&input, &mut output)?;
            }
            let mut samples = Vec::with_capacity(trials);
            for _ in 0..trials {
                let t = Instant::now();
                c.apply(&input, &mut output)?;
                samples.push(t.elapsed().as_secs_f64());
            }
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            let median = if trials % 2 == 1 {
                sorted[trials / 2]
            } else {
                0.5 * (sorted[trials / 2 - 1] + sorted[trials / 2])
            };
            timings.push(StrategyTiming {
                strategy: s,
                median,
                samples,
            });
        }
        let chosen = timings
            .iter()
            .min_by(|a, b| a.median.total_cmp(&b.median))
            .map(|t| t.strategy)
            .unwrap();
        Ok(AutotuneReport {
            op: self.op,
            chosen,
            timings,
        })
    }

    fn dims(&self) -> (usize, usize) {
        (self.std.num_coeffs(), self.std.num_points())
    }

    fn apply_geom_deriv(&self, e: usize, d1: &[f64], d2: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        let np = self.std.num_points();
        let inv = &self.geom.inv[e * np..(e + 1) * np];
        for k in 0..np {
            let g = inv[k];
            dx[k] = g[0][0] * d1[k] + g[1][0] * d2[k];
            dy[k] = g[0][1] * d1[k] + g[1][1] * d2[k];
        }
        flops::record(4 * np);
    }

    // ---- StdMat ----

    fn stdmat_bwd(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let b = &self.std.dense().basis;
        for e in 0..self.nelem {
            let out = &mut output[e * np..(e + 1) * np];
            out.iter_mut().for_each(|v| *v = 0.0);
            for (n, &c) in input[e * nc..(e + 1) * nc].iter().enumerate() {
                flops::record(np);
                axpy(c, b.row(n), out);
            }
        }
    }

    fn stdmat_iprod(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let b = &self.std.dense().basis;
        let mut w = vec![0.0; np];
        for e in 0..self.nelem {
            let jw = &self.geom.jw[e * np..(e + 1) * np];
            for k in 0..np {
                w[k] = input[e * np + k] * jw[k];
            }
            for n in 0..nc {
                flops::record(np);
                output[e * nc + n] = dot(b.row(n), &w);
            }
        }
    }

    fn stdmat_deriv(&self, input: &[f64], output: &mut [f64]) {
        let np = self.std.num_points();
        let d = &self.std.dense().phys_deriv;
        let (dxs, dys) = output.split_at_mut(self.nelem * np);
        let mut d1 = vec![0.0; np];
        let mut d2 = vec![0.0; np];
        for e in 0..self.nelem {
            let u = &input[e * np..(e + 1) * np];
            d[0].matvec_into(u, &mut d1);
            d[1].matvec_into(u, &mut d2);
            flops::record(2 * np * np);
            self.apply_geom_deriv(
                e,
                &d1,
                &d2,
                &mut dxs[e * np..(e + 1) * np],
                &mut dys[e * np..(e + 1) * np],
            );
        }
    }

    // ---- IterPerExp ----

    fn iter_bwd(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let mut scratch = Vec::new();
        for e in 0..self.nelem {
            self.std.bwd_sumfac_kernel(
                &input[e * nc..(e + 1) * nc],
                &mut output[e * np..(e + 1) * np],
                &mut scratch,
            );
        }
    }

    fn iter_iprod(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let mut scratch = Vec::new();
        let mut w = vec![0.0; np];
        for e in 0..self.nelem {
            let jw = &self.geom.jw[e * np..(e + 1) * np];
            for k in 0..np {
                w[k] = input[e * np + k] * jw[k];
            }
            self.std
                .iproduct_sumfac_kernel(&w, &mut output[e * nc..(e + 1) * nc], &mut scratch);
        }
    }

    fn iter_deriv(&self, input: &[f64], output: &mut [f64]) {
        let np = self.std.num_points();
        let (dxs, dys) = output.split_at_mut(self.nelem * np);
        let mut d = vec![vec![0.0; np], vec![0.0; np]];
        for e in 0..self.nelem {
            self.std.phys_deriv_kernel(&input[e * np..(e + 1) * np], &mut d);
            self.apply_geom_deriv(
                e,
                &d[0],
                &d[1],
                &mut dxs[e * np..(e + 1) * np],
                &mut dys[e * np..(e + 1) * np],
            );
        }
    }

    // ---- SumFac (element index trailing) ----

    fn to_trailing(&self, input: &[f64], len: usize) -> Vec<f64> {
        let ne = self.nelem;
        let mut t = vec![0.0; len * ne];
        for e in 0..ne {
            for k in 0..len {
                t[k * ne + e] = input[e * len + k];
            }
        }
        t
    }

    fn from_trailing(&self, t: &[f64], len: usize, output: &mut [f64]) {
        let ne = self.nelem;
        for e in 0..ne {
            for k in 0..len {
                output[e * len + k] = t[k * ne + e];
            }
        }
    }

    fn sumfac_bwd(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let ne = self.nelem;
        if self.std.shape() == ShapeType::Seg {
            let a = &self.std.table_a().values;
            let c = self.to_trailing(input, nc);
            let mut u = vec![0.0; np * ne];
            for n in 0..nc {
                for i in 0..np {
                    flops::record(ne);
                    axpy(a[(n, i)], &c[n * ne..(n + 1) * ne], &mut u[i * ne..(i + 1) * ne]);
                }
            }
            self.from_trailing(&u, np, output);
            return;
        }
        let a = &self.std.table_a().values;
        let b = &self.std.table_b().unwrap().values;
        let [qa, qb] = [self.std.points_per_dir()[0], self.std.points_per_dir()[1]];
        let na = a.rows();
        let c = self.to_trailing(input, nc);
        let mut tmp = vec![0.0; na * qb * ne];
        let modes = self.std.modes();
        let brow = |r: usize, q: usize| -> usize {
            // quadrilateral table rows are indexed by q, triangle rows by mode
            if self.std.shape() == ShapeType::Quad {
                q
            } else {
                r
            }
        };
        for (r, &(p, q)) in modes.iter().enumerate() {
            let src = &c[r * ne..(r + 1) * ne];
            let br = b.row(brow(r, q));
            for j in 0..qb {
                flops::record(ne);
                axpy(br[j], src, &mut tmp[(p * qb + j) * ne..(p * qb + j + 1) * ne]);
            }
        }
        if let Some(cv) = self.std.collapsed_vertex_mode() {
            let src = &c[cv * ne..(cv + 1) * ne];
            for j in 0..qb {
                flops::record(ne);
                axpy(b[(cv, j)], src, &mut tmp[(qb + j) * ne..(qb + j + 1) * ne]);
            }
        }
        let mut u = vec![0.0; np * ne];
        for j in 0..qb {
            for p in 0..na {
                let src = &tmp[(p * qb + j) * ne..(p * qb + j + 1) * ne];
                for i in 0..qa {
                    flops::record(ne);
                    let k = j * qa + i;
                    axpy(a[(p, i)], src, &mut u[k * ne..(k + 1) * ne]);
                }
            }
        }
        self.from_trailing(&u, np, output);
    }

    fn sumfac_iprod(&self, input: &[f64], output: &mut [f64]) {
        let (nc, np) = self.dims();
        let ne = self.nelem;
        let weighted: Vec<f64> = input.iter().zip(&self.geom.jw).map(|(u, w)| u * w).collect();
        let w = self.to_trailing(&weighted, np);
        let a = &self.std.table_a().values;
        let mut out = vec![0.0; nc * ne];
        if self.std.shape() == ShapeType::Seg {
            for n in 0..nc {
                for i in 0..np {
                    flops::record(ne);
                    axpy(a[(n, i)], &w[i * ne..(i + 1) * ne], &mut out[n * ne..(n + 1) * ne]);
                }
            }
            self.from_trailing(&out, nc, output);
            return;
        }
        let b = &self.std.table_b().unwrap().values;
        let [qa, qb] = [self.std.points_per_dir()[0], self.std.points_per_dir()[1]];
        let na = a.rows();
        let mut tmp = vec![0.0; na * qb * ne];
        for p in 0..na {
            for j in 0..qb {
                let dst = (p * qb + j) * ne;
                for i in 0..qa {
                    let k = j * qa + i;
                    flops::record(ne);
                    let (src, dst) = (&w[k * ne..(k + 1) * ne], &mut tmp[dst..dst + ne]);
                    axpy(a[(p, i)], src, dst);
                }
            }
        }
        let quad = self.std.shape() == ShapeType::Quad;
        for (r, &(p, q)) in self.std.modes().iter().enumerate() {
            let br = b.row(if quad { q } else { r });
            let dst = &mut out[r * ne..(r + 1) * ne];
            for j in 0..qb {
                flops::record(ne);
                axpy(br[j], &tmp[(p * qb + j) * ne..(p * qb + j + 1) * ne], dst);
            }
        }
        if let Some(cv) = self.std.collapsed_vertex_mode() {
            for j in 0..qb {
                flops::record(ne);
                axpy(b[(cv, j)], &tmp[(qb + j) * ne..(qb + j + 1) * ne], &mut out[cv * ne..(cv + 1) * ne]);
            }
        }
        self.from_trailing(&out, nc, output);
    }

    fn sumfac_deriv(&self, input: &[f64], output: &mut [f64]) {
        let np = self.std.num_points();
        let ne = self.nelem;
        let u = self.to_trailing(input, np);
        let diff = self.std.diff_matrices();
        let mut d1 = vec![0.0; np * ne];
        let mut d2 = vec![0.0; np * ne];
        if self.std.shape() == ShapeType::Seg {
            for i in 0..np {
                for k in 0..np {
                    flops::record(ne);
                    axpy(diff[0][(i, k)], &u[k * ne..(k + 1) * ne], &mut d1[i * ne..(i + 1) * ne]);
                }
            }
        } else {
            let [qa, qb] = [self.std.points_per_dir()[0], self.std.points_per_dir()[1]];
            for j in 0..qb {
                for i in 0..qa {
                    let dst = (j * qa + i) * ne;
                    for k in 0..qa {
                        let src = (j * qa + k) * ne;
                        flops::record(ne);
                        axpy(diff[0][(i, k)], &u[src..src + ne], &mut d1[dst..dst + ne]);
                    }
                    for k in 0..qb {
                        let src = (k * qa + i) * ne;
                        flops::record(ne);
                        axpy(diff[1][(j, k)], &u[src..src + ne], &mut d2[dst..dst + ne]);
                    }
                }
            }
            if self.std.shape() == ShapeType::Tri {
                let za = &self.std.rules()[0].points;
                let zb = &self.std.rules()[1].points;
                for j in 0..qb {
                    for i in 0..qa {
                        let f1 = 2.0 / (1.0 - zb[j]);
                        let f2 = (1.0 + za[i]) / (1.0 - zb[j]);
                        let k = (j * qa + i) * ne;
                        for e in 0..ne {
                            let de1 = d1[k + e];
                            d1[k + e] = f1 * de1;
                            d2[k + e] += f2 * de1;
                        }
                    }
                }
                flops::record(2 * np * ne);
            }
        }
        let (dxs, dys) = output.split_at_mut(ne * np);
        for e in 0..ne {
            let inv = &self.geom.inv[e * np..(e + 1) * np];
            for k in 0..np {
                let g = inv[k];
                let (a, b) = (d1[k * ne + e], d2[k * ne + e]);
                dxs[e * np + k] = g[0][0] * a + g[1][0] * b;
                dys[e * np + k] = g[0][1] * a + g[1][1] * b;
            }
        }
        flops::record(4 * np * ne);
    }
}

/// Field-level operators dispatched through collections grouped by element type.
#[derive(Debug, Clone)]
pub struct ExpListOps {
    groups: Vec<Group>,
    ncoeffs: usize,
    npoints: usize,
}

#[derive(Debug, Clone)]
struct Group {
    indices: Vec<usize>,
    coeff_ranges: Vec<std::ops::Range<usize>>,
    phys_ranges: Vec<std::ops::Range<usize>>,
    bwd: Collection,
    iprod: Collection,
    deriv: Collection,
}

impl ExpListOps {
    pub fn new(list: &ExpList, strategy: Strategy) -> Result<Self> {
        let mut by_key: Vec<(Arc<StdExpansion>, Vec<usize>)> = Vec::new();
        for (i, e) in list.elements().iter().enumerate() {
            match by_key.iter_mut().find(|(s, _)| Arc::ptr_eq(s, &e.std)) {
                Some((_, v)) => v.push(i),
                None => by_key.push((e.std.clone(), vec![i])),
            }
        }
        let mut groups = Vec::new();
        for (_, indices) in by_key {
            groups.push(Group {
                coeff_ranges: indices.iter().map(|&i| list.element(i).coeff_range()).collect(),
                phys_ranges: indices.iter().map(|&i| list.element(i).phys_range()).collect(),
                bwd: Collection::from_explist(list, &indices, OpType::BwdTrans, strategy)?,
                iprod: Collection::from_explist(list, &indices, OpType::IProductWrtBase, strategy)?,
                deriv: Collection::from_explist(list, &indices, OpType::PhysDeriv, strategy)?,
                indices,
            });
        }
        Ok(ExpListOps {
            groups,
            ncoeffs: list.ncoeffs(),
            npoints: list.npoints(),
        })
    }

    /// Strategy chosen for each (group, operator).
    pub fn strategies(&self) -> Vec<(usize, OpType, Strategy)> {
        self.groups
            .iter()
            .flat_map(|g| {
                let n = g.indices.len();
                [
                    (n, OpType::BwdTrans, g.bwd.strategy()),
                    (n, OpType::IProductWrtBase, g.iprod.strategy()),
                    (n, OpType::PhysDeriv, g.deriv.strategy()),
                ]
            })
            .collect()
    }

    fn run(
        coll: &Collection,
        input: &[f64],
        in_ranges: &[std::ops::Range<usize>],
        out_ranges: &[std::ops::Range<usize>],
        outputs: &mut [&mut [f64]],
    ) -> Result<()> {
        let packed: Vec<f64> = in_ranges.iter().flat_map(|r| input[r.clone()].iter().copied()).collect();
        let mut out = vec![0.0; coll.output_len()];
        coll.apply(&packed, &mut out)?;
        let block = coll.output_len() / outputs.len();
        for (o, dst) in outputs.iter_mut().enumerate() {
            let mut pos = o * block;
            for r in out_ranges {
                dst[r.clone()].copy_from_slice(&out[pos..pos + r.len()]);
                pos += r.len();
            }
        }
        Ok(())
    }

    pub fn bwd_trans(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.npoints];
        for g in &self.groups {
            Self::run(&g.bwd, coeffs, &g.coeff_ranges, &g.phys_ranges, &mut [&mut out])?;
        }
        Ok(out)
    }

    pub fn iproduct(&self, phys: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ncoeffs];
        for g in &self.groups {
            Self::run(&g.iprod, phys, &g.phys_ranges, &g.coeff_ranges, &mut [&mut out])?;
        }
        Ok(out)
    }

    pub fn phys_deriv(&self, phys: &[f64]) -> Result<[Vec<f64>; 2]> {
        let mut dx = vec![0.0; self.npoints];
        let mut dy = vec![0.0; self.npoints];
        for g in &self.groups {
            Self::run(&g.deriv, phys, &g.phys_ranges, &g.phys_ranges, &mut [&mut dx, &mut dy])?;
        }
        Ok([dx, dy])
    }
}
