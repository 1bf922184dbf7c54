//! Reference elements (segment, quadrilateral, triangle) and their operators.
//!
//! Physical (quadrature) values are stored with the first-direction index
//! fastest: point `(i, j)` lives at `j * Q1 + i`. Coefficients are ordered
//! lexicographically in `(p, q)` with `p` outermost. Triangle mode `(0, 1)` is
//! the collapsed-vertex function `(1 + η2)/2`, independent of `η1`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::basis::{
    eval_1d, eval_modified_b, modified_a_degree, modified_b_value, BasisKey,
    BasisTable, BasisType,
};
use crate::error::{Error, Result};
use crate::flops;
use crate::linalg::{axpy, dot, Cholesky, Matrix};
use crate::quadrature::{diff_matrix, make_rule, PointsKey, PointsType, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeType {
    Seg,
    Quad,
    Tri,
}

impl ShapeType {
    pub fn name(self) -> &'static str {
        match self {
            ShapeType::Seg => "seg",
            ShapeType::Quad => "quad",
            ShapeType::Tri => "tri",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ShapeType::Seg => 1,
            _ => 2,
        }
    }

    pub fn num_vertices(self) -> usize {
        match self {
            ShapeType::Seg => 2,
            ShapeType::Quad => 4,
            ShapeType::Tri => 3,
        }
    }

    pub fn num_edges(self) -> usize {
        match self {
            ShapeType::Seg => 0,
            ShapeType::Quad => 4,
            ShapeType::Tri => 3,
        }
    }

    /// Reference vertex coordinates, counter-clockwise.
    pub fn ref_vertices(self) -> &'static [[f64; 2]] {
        match self {
            ShapeType::Seg => &[[-1.0, 0.0], [1.0, 0.0]],
            ShapeType::Quad => &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
            ShapeType::Tri => &[[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]],
        }
    }

    /// Local vertices `(start, end)` of local edge `e`, traversed counter-clockwise.
    pub fn edge_vertices(self, e: usize) -> (usize, usize) {
        let n = self.num_vertices();
        (e, (e + 1) % n)
    }

    /// Reference coordinates of the point with parameter `s ∈ [-1, 1]` on local edge `e`.
    pub fn edge_point(self, e: usize, s: f64) -> [f64; 2] {
        match (self, e) {
            (ShapeType::Quad, 0) => [s, -1.0],
            (ShapeType::Quad, 1) => [1.0, s],
            (ShapeType::Quad, 2) => [-s, 1.0],
            (ShapeType::Quad, 3) => [-1.0, -s],
            (ShapeType::Tri, 0) => [s, -1.0],
            (ShapeType::Tri, 1) => [-s, s],
            (ShapeType::Tri, 2) => [-1.0, -s],
            _ => panic!("{} has no edge {e}", self.name()),
        }
    }

    /// Derivative of [`ShapeType::edge_point`] with respect to `s`.
    pub fn edge_tangent(self, e: usize) -> [f64; 2] {
        match (self, e) {
            (ShapeType::Quad, 0) | (ShapeType::Tri, 0) => [1.0, 0.0],
            (ShapeType::Quad, 1) => [0.0, 1.0],
            (ShapeType::Quad, 2) => [-1.0, 0.0],
            (ShapeType::Quad, 3) | (ShapeType::Tri, 2) => [0.0, -1.0],
            (ShapeType::Tri, 1) => [-1.0, 1.0],
            _ => panic!("{} has no edge {e}", self.name()),
        }
    }

    pub fn contains(self, xi: [f64; 2]) -> bool {
        const TOL: f64 = 1e-12;
        let box_ok = |v: f64| (-1.0 - TOL..=1.0 + TOL).contains(&v);
        match self {
            ShapeType::Seg => box_ok(xi[0]),
            ShapeType::Quad => box_ok(xi[0]) && box_ok(xi[1]),
            ShapeType::Tri => box_ok(xi[0]) && box_ok(xi[1]) && xi[0] + xi[1] <= TOL,
        }
    }

    /// Reference-element measure (length or area).
    pub fn ref_measure(self) -> f64 {
        match self {
            ShapeType::Seg => 2.0,
            ShapeType::Quad => 4.0,
            ShapeType::Tri => 2.0,
        }
    }
}

/// A local mode lying on an element edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMode {
    /// Local coefficient index.
    pub mode: usize,
    /// Position along the edge, `1..P`: hierarchical degree slot or nodal position.
    pub slot: usize,
    /// Sign relating the mode's edge restriction to the counter-clockwise edge parameter.
    pub sign: f64,
}

/// `M⁻¹ B W` for a 1D table (`modes × points`).
fn projector_1d(t: &BasisTable, w: &[f64]) -> Result<Matrix> {
    let b = &t.values;
    let (nm, nq) = (b.rows(), b.cols());
    let m = Matrix::from_fn(nm, nm, |i, j| (0..nq).map(|k| b[(i, k)] * b[(j, k)] * w[k]).sum());
    let chol = Cholesky::factor(&m)?;
    let mut p = Matrix::zeros(nm, nq);
    for k in 0..nq {
        let col: Vec<f64> = (0..nm).map(|i| b[(i, k)] * w[k]).collect();
        for (i, v) in chol.solve(&col).into_iter().enumerate() {
            p[(i, k)] = v;
        }
    }
    Ok(p)
}

/// Reference element with cached basis tables and operator matrices.
#[derive(Debug)]
pub struct StdExpansion {
    shape: ShapeType,
    keys: Vec<BasisKey>,
    rules: Vec<Arc<QuadratureRule>>,
    /// First-direction table (degree ordered for triangles).
    table_a: BasisTable,
    /// Second-direction table (principal functions ψ_{pq} for triangles, one row per mode).
    table_b: Option<BasisTable>,
    modes: Vec<(usize, usize)>,
    weights: Vec<f64>,
    diff: Vec<Matrix>,
    dense: OnceLock<DenseOps>,
    projectors: OnceLock<Result<[Matrix; 2]>>,
    mass_factor: OnceLock<Result<Cholesky>>,
}

/// Dense operator matrices, materialized on first use.
#[derive(Debug)]
pub struct DenseOps {
    /// `ncoeffs × npoints` basis values.
    pub basis: Matrix,
    /// Reference derivatives of the basis, one `ncoeffs × npoints` matrix per direction.
    pub basis_deriv: Vec<Matrix>,
    /// Collocation derivative `npoints × npoints` per reference direction.
    pub phys_deriv: Vec<Matrix>,
}

impl StdExpansion {
    pub fn seg(key: BasisKey) -> Result<Self> {
        if key.basis_type() == BasisType::ModifiedB {
            return Err(Error::InvalidBasis("segments use ModifiedA or LagrangeGll".into()));
        }
        let rule = make_rule(key.points_key());
        let table_a = eval_1d(key.basis_type(), key.num_modes(), &rule.points)?;
        let modes = (0..key.num_modes()).map(|p| (p, 0)).collect();
        let weights = rule.weights.clone();
        let diff = vec![diff_matrix(&rule.points)];
        Ok(Self::assemble(ShapeType::Seg, vec![key], vec![rule], table_a, None, modes, weights, diff))
    }

    pub fn quad(key_a: BasisKey, key_b: BasisKey) -> Result<Self> {
        for k in [key_a, key_b] {
            if k.basis_type() == BasisType::ModifiedB {
                return Err(Error::InvalidBasis(
                    "quadrilateral directions use ModifiedA or LagrangeGll".into(),
                ));
            }
        }
        let ra = make_rule(key_a.points_key());
        let rb = make_rule(key_b.points_key());
        let table_a = eval_1d(key_a.basis_type(), key_a.num_modes(), &ra.points)?;
        let table_b = eval_1d(key_b.basis_type(), key_b.num_modes(), &rb.points)?;
        let mut modes = Vec::with_capacity(key_a.num_modes() * key_b.num_modes());
        for p in 0..key_a.num_modes() {
            for q in 0..key_b.num_modes() {
                modes.push((p, q));
            }
        }
        let mut weights = Vec::with_capacity(ra.len() * rb.len());
        for &wb in &rb.weights {
            for &wa in &ra.weights {
                weights.push(wa * wb);
            }
        }
        let diff = vec![diff_matrix(&ra.points), diff_matrix(&rb.points)];
        Ok(Self::assemble(
            ShapeType::Quad,
            vec![key_a, key_b],
            vec![ra, rb],
            table_a,
            Some(table_b),
            modes,
            weights,
            diff,
        ))
    }

    pub fn tri(key_a: BasisKey, key_b: BasisKey) -> Result<Self> {
        if key_a.basis_type() != BasisType::ModifiedA || key_b.basis_type() != BasisType::ModifiedB
        {
            return Err(Error::InvalidBasis(
                "triangles require ModifiedA in direction 1 and ModifiedB in direction 2".into(),
            ));
        }
        if key_b.points_key().points_type() == PointsType::GaussLobattoLegendre {
            return Err(Error::InvalidBasis(
                "triangle collapsed direction must not include the collapsed vertex (use Gauss or Gauss-Radau points)".into(),
            ));
        }
        let (pa, pb) = (key_a.order(), key_b.order());
        let ra = make_rule(key_a.points_key());
        let rb = make_rule(key_b.points_key());
        let mut values = Matrix::zeros(pa + 1, ra.len());
        let mut derivs = Matrix::zeros(pa + 1, ra.len());
        for d in 0..=pa {
            for (i, &x) in ra.points.iter().enumerate() {
                let (v, dv) = modified_a_degree(d, x);
                values[(d, i)] = v;
                derivs[(d, i)] = dv;
            }
        }
        let table_a = BasisTable { values, derivs };
        let bt = eval_modified_b(pa, pb, &rb.points)?;
        let modes = bt.indices.clone();
        let mut weights = Vec::with_capacity(ra.len() * rb.len());
        for (&wb, &z) in rb.weights.iter().zip(&rb.points) {
            for &wa in &ra.weights {
                weights.push(wa * wb * 0.5 * (1.0 - z));
            }
        }
        let diff = vec![diff_matrix(&ra.points), diff_matrix(&rb.points)];
        Ok(Self::assemble(
            ShapeType::Tri,
            vec![key_a, key_b],
            vec![ra, rb],
            table_a,
            Some(bt.table),
            modes,
            weights,
            diff,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        shape: ShapeType,
        keys: Vec<BasisKey>,
        rules: Vec<Arc<QuadratureRule>>,
        table_a: BasisTable,
        table_b: Option<BasisTable>,
        modes: Vec<(usize, usize)>,
        weights: Vec<f64>,
        diff: Vec<Matrix>,
    ) -> Self {
        StdExpansion {
            shape,
            keys,
            rules,
            table_a,
            table_b,
            modes,
            weights,
            diff,
            dense: OnceLock::new(),
            projectors: OnceLock::new(),
            mass_factor: OnceLock::new(),
        }
    }

    /// Builds an expansion of order `order` with the default quadrature:
    /// `order + 2` Gauss-Lobatto-Legendre points per direction, and
    /// `order + 2` Gauss-Radau points in the collapsed triangle direction.
    pub fn with_order(shape: ShapeType, basis: BasisType, order: usize) -> Result<Self> {
        Self::with_order_and_points(shape, basis, order, order + 2)
    }

    pub fn with_order_and_points(
        shape: ShapeType,
        basis: BasisType,
        order: usize,
        num_points: usize,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidBasis("order must be >= 1".into()));
        }
        let gll = PointsKey::new(num_points, PointsType::GaussLobattoLegendre)?;
        match shape {
            ShapeType::Seg => Self::seg(BasisKey::new(basis, order + 1, gll)?),
            ShapeType::Quad => {
                let k = BasisKey::new(basis, order + 1, gll)?;
                Self::quad(k, k)
            }
            ShapeType::Tri => {
                if basis != BasisType::ModifiedA && basis != BasisType::ModifiedB {
                    return Err(Error::InvalidBasis(
                        "triangles support only the modified basis".into(),
                    ));
                }
                let radau = PointsKey::new(num_points, PointsType::GaussRadauMinusLegendre)?;
                Self::tri(
                    BasisKey::new(BasisType::ModifiedA, order + 1, gll)?,
                    BasisKey::new(BasisType::ModifiedB, order + 1, radau)?,
                )
            }
        }
    }

    pub fn shape(&self) -> ShapeType {
        self.shape
    }

    pub fn basis_keys(&self) -> &[BasisKey] {
        &self.keys
    }

    pub fn rules(&self) -> &[Arc<QuadratureRule>] {
        &self.rules
    }

    pub fn order(&self) -> usize {
        self.keys[0].order()
    }

    pub fn is_hierarchical(&self) -> bool {
        self.keys[0].basis_type().is_hierarchical()
    }

    pub fn num_coeffs(&self) -> usize {
        self.modes.len()
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    /// Quadrature points per direction.
    pub fn points_per_dir(&self) -> Vec<usize> {
        self.rules.iter().map(|r| r.len()).collect()
    }

    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    /// Quadrature weights including the collapse Jacobian for triangles.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn table_a(&self) -> &BasisTable {
        &self.table_a
    }

    pub fn table_b(&self) -> Option<&BasisTable> {
        self.table_b.as_ref()
    }

    pub fn diff_matrices(&self) -> &[Matrix] {
        &self.diff
    }

    /// Mode index of the triangle collapsed-vertex function, if any.
    pub fn collapsed_vertex_mode(&self) -> Option<usize> {
        (self.shape == ShapeType::Tri).then_some(1)
    }

    /// Reference coordinates `ξ` of the quadrature points.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        match self.shape {
            ShapeType::Seg => self.rules[0].points.iter().map(|&x| [x, 0.0]).collect(),
            ShapeType::Quad => {
                let mut out = Vec::with_capacity(self.num_points());
                for &y in &self.rules[1].points {
                    for &x in &self.rules[0].points {
                        out.push([x, y]);
                    }
                }
                out
            }
            ShapeType::Tri => {
                let mut out = Vec::with_capacity(self.num_points());
                for &e2 in &self.rules[1].points {
                    for &e1 in &self.rules[0].points {
                        out.push(crate::basis::duffy_collapse([e1, e2]));
                    }
                }
                out
            }
        }
    }

    /// Evaluates every mode (and its reference derivatives) at arbitrary reference points.
    ///
    /// Returns `(values, d/dξ1, d/dξ2)`, each `ncoeffs × npts`. Derivatives at the
    /// collapsed triangle vertex are not defined and are returned as zero.
    pub fn eval_modes(&self, xi: &[[f64; 2]]) -> Result<(Matrix, Matrix, Matrix)> {
        for p in xi {
            if !self.shape.contains(*p) {
                return Err(Error::OutsideDomain {
                    shape: self.shape.name(),
                    point: p.to_vec(),
                });
            }
        }
        let n = self.num_coeffs();
        let m = xi.len();
        let mut v = Matrix::zeros(n, m);
        let mut d1 = Matrix::zeros(n, m);
        let mut d2 = Matrix::zeros(n, m);
        match self.shape {
            ShapeType::Seg => {
                let pts: Vec<f64> = xi.iter().map(|p| p[0]).collect();
                let t = eval_1d(self.keys[0].basis_type(), self.keys[0].num_modes(), &pts)?;
                v = t.values;
                d1 = t.derivs;
            }
            ShapeType::Quad => {
                let xs: Vec<f64> = xi.iter().map(|p| p[0]).collect();
                let ys: Vec<f64> = xi.iter().map(|p| p[1]).collect();
                let ta = eval_1d(self.keys[0].basis_type(), self.keys[0].num_modes(), &xs)?;
                let tb = eval_1d(self.keys[1].basis_type(), self.keys[1].num_modes(), &ys)?;
                for (r, &(p, q)) in self.modes.iter().enumerate() {
                    for k in 0..m {
                        v[(r, k)] = ta.values[(p, k)] * tb.values[(q, k)];
                        d1[(r, k)] = ta.derivs[(p, k)] * tb.values[(q, k)];
                        d2[(r, k)] = ta.values[(p, k)] * tb.derivs[(q, k)];
                    }
                }
            }
            ShapeType::Tri => {
                for (k, &p) in xi.iter().enumerate() {
                    let eta = crate::basis::duffy_expand(p);
                    let singular = (1.0 - eta[1]).abs() < 1e-14;
                    for (r, &(pa, qb)) in self.modes.iter().enumerate() {
                        let (b, db) = modified_b_value(pa, qb, eta[1]);
                        let (a, da) = if r == 1 {
                            (1.0, 0.0)
                        } else {
                            modified_a_degree(pa, eta[0])
                        };
                        v[(r, k)] = a * b;
                        if !singular {
                            let de1 = da * b;
                            let de2 = a * db;
                            d1[(r, k)] = 2.0 / (1.0 - eta[1]) * de1;
                            d2[(r, k)] = (1.0 + eta[0]) / (1.0 - eta[1]) * de1 + de2;
                        }
                    }
                }
            }
        }
        Ok((v, d1, d2))
    }

    /// Dense operator matrices (built once).
    pub fn dense(&self) -> &DenseOps {
        self.dense.get_or_init(|| self.build_dense())
    }

    fn build_dense(&self) -> DenseOps {
        let nc = self.num_coeffs();
        let np = self.num_points();
        let qa = self.rules[0].len();
        let mut basis = Matrix::zeros(nc, np);
        let mut bd: Vec<Matrix> = (0..self.shape.dim()).map(|_| Matrix::zeros(nc, np)).collect();
        match self.shape {
            ShapeType::Seg => {
                basis = self.table_a.values.clone();
                bd[0] = self.table_a.derivs.clone();
            }
            ShapeType::Quad => {
                let tb = self.table_b.as_ref().unwrap();
                let qb = self.rules[1].len();
                for (r, &(p, q)) in self.modes.iter().enumerate() {
                    for j in 0..qb {
                        for i in 0..qa {
                            let k = j * qa + i;
                            basis[(r, k)] = self.table_a.values[(p, i)] * tb.values[(q, j)];
                            bd[0][(r, k)] = self.table_a.derivs[(p, i)] * tb.values[(q, j)];
                            bd[1][(r, k)] = self.table_a.values[(p, i)] * tb.derivs[(q, j)];
                        }
                    }
                }
            }
            ShapeType::Tri => {
                let tb = self.table_b.as_ref().unwrap();
                let (za, zb) = (&self.rules[0].points, &self.rules[1].points);
                for (r, &(p, _)) in self.modes.iter().enumerate() {
                    for (j, &e2) in zb.iter().enumerate() {
                        for (i, &e1) in za.iter().enumerate() {
                            let k = j * qa + i;
                            let (a, da) = if r == 1 {
                                (1.0, 0.0)
                            } else {
                                (self.table_a.values[(p, i)], self.table_a.derivs[(p, i)])
                            };
                            let (b, db) = (tb.values[(r, j)], tb.derivs[(r, j)]);
                            basis[(r, k)] = a * b;
                            let de1 = da * b;
                            bd[0][(r, k)] = 2.0 / (1.0 - e2) * de1;
                            bd[1][(r, k)] = (1.0 + e1) / (1.0 - e2) * de1 + a * db;
                        }
                    }
                }
            }
        }
        let phys_deriv = self.dense_phys_deriv();
        DenseOps {
            basis,
            basis_deriv: bd,
            phys_deriv,
        }
    }

    fn dense_phys_deriv(&self) -> Vec<Matrix> {
        let np = self.num_points();
        match self.shape {
            ShapeType::Seg => vec![self.diff[0].clone()],
            ShapeType::Quad | ShapeType::Tri => {
                let qa = self.rules[0].len();
                let qb = self.rules[1].len();
                let mut d_eta1 = Matrix::zeros(np, np);
                let mut d_eta2 = Matrix::zeros(np, np);
                for j in 0..qb {
                    for i in 0..qa {
                        let row = j * qa + i;
                        for k in 0..qa {
                            d_eta1[(row, j * qa + k)] = self.diff[0][(i, k)];
                        }
                        for k in 0..qb {
                            d_eta2[(row, k * qa + i)] = self.diff[1][(j, k)];
                        }
                    }
                }
                if self.shape == ShapeType::Quad {
                    return vec![d_eta1, d_eta2];
                }
                let (za, zb) = (&self.rules[0].points, &self.rules[1].points);
                let mut dx1 = Matrix::zeros(np, np);
                let mut dx2 = Matrix::zeros(np, np);
                for j in 0..qb {
                    for i in 0..qa {
                        let row = j * qa + i;
                        let f1 = 2.0 / (1.0 - zb[j]);
                        let f2 = (1.0 + za[i]) / (1.0 - zb[j]);
                        for c in 0..np {
                            dx1[(row, c)] = f1 * d_eta1[(row, c)];
                            dx2[(row, c)] = f2 * d_eta1[(row, c)] + d_eta2[(row, c)];
                        }
                    }
                }
                vec![dx1, dx2]
            }
        }
    }

    fn check_len(&self, context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::SizeMismatch {
                context,
                expected,
                actual,
            });
        }
        Ok(())
    }

    /// Backward transform by the dense basis matrix.
    pub fn bwd_trans(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_len("bwd_trans coefficients", self.num_coeffs(), coeffs.len())?;
        let b = &self.dense().basis;
        let mut out = vec![0.0; self.num_points()];
        for (n, &c) in coeffs.iter().enumerate() {
            flops::record(out.len());
            axpy(c, b.row(n), &mut out);
        }
        Ok(out)
    }

    /// Backward transform by staged (sum-factorized) contractions.
    pub fn bwd_trans_sumfac(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_len("bwd_trans coefficients", self.num_coeffs(), coeffs.len())?;
        let mut out = vec![0.0; self.num_points()];
        let mut scratch = Vec::new();
        self.bwd_sumfac_kernel(coeffs, &mut out, &mut scratch);
        Ok(out)
    }

    /// Sum-factorized backward transform into `out`; `scratch` is resized as needed.
    pub fn bwd_sumfac_kernel(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.shape {
            ShapeType::Seg => {
                for (n, &c) in coeffs.iter().enumerate() {
                    flops::record(out.len());
                    axpy(c, self.table_a.values.row(n), out);
                }
            }
            ShapeType::Quad => {
                let tb = self.table_b.as_ref().unwrap();
                let (na, nb) = (self.keys[0].num_modes(), self.keys[1].num_modes());
                let (qa, qb) = (self.rules[0].len(), self.rules[1].len());
                scratch.clear();
                scratch.resize(na * qb, 0.0);
                for p in 0..na {
                    let tmp = &mut scratch[p * qb..(p + 1) * qb];
                    for q in 0..nb {
                        flops::record(qb);
                        axpy(coeffs[p * nb + q], tb.values.row(q), tmp);
                    }
                }
                for j in 0..qb {
                    let dst = &mut out[j * qa..(j + 1) * qa];
                    for p in 0..na {
                        flops::record(qa);
                        axpy(scratch[p * qb + j], self.table_a.values.row(p), dst);
                    }
                }
            }
            ShapeType::Tri => {
                let tb = self.table_b.as_ref().unwrap();
                let na = self.keys[0].num_modes();
                let (qa, qb) = (self.rules[0].len(), self.rules[1].len());
                scratch.clear();
                scratch.resize(na * qb, 0.0);
                for (r, &(p, _)) in self.modes.iter().enumerate() {
                    flops::record(qb);
                    axpy(coeffs[r], tb.values.row(r), &mut scratch[p * qb..(p + 1) * qb]);
                }
                // collapsed vertex: (1+η2)/2 = (φ0 + φ1)(η1) ψ01(η2)
                flops::record(qb);
                axpy(coeffs[1], tb.values.row(1), &mut scratch[qb..2 * qb]);
                for j in 0..qb {
                    let dst = &mut out[j * qa..(j + 1) * qa];
                    for p in 0..na {
                        flops::record(qa);
                        axpy(scratch[p * qb + j], self.table_a.values.row(p), dst);
                    }
                }
            }
        }
    }

    /// Inner product with respect to the basis by staged contractions:
    /// `b_n = Σ_i w_i φ_n(ξ_i) u(ξ_i)`.
    pub fn iproduct_wrt_base(&self, phys: &[f64]) -> Result<Vec<f64>> {
        self.check_len("iproduct physical values", self.num_points(), phys.len())?;
        let weighted: Vec<f64> = phys.iter().zip(&self.weights).map(|(u, w)| u * w).collect();
        let mut out = vec![0.0; self.num_coeffs()];
        let mut scratch = Vec::new();
        self.iproduct_sumfac_kernel(&weighted, &mut out, &mut scratch);
        Ok(out)
    }

    /// Dense `B W u` inner product.
    pub fn iproduct_wrt_base_dense(&self, phys: &[f64]) -> Result<Vec<f64>> {
        self.check_len("iproduct physical values", self.num_points(), phys.len())?;
        let weighted: Vec<f64> = phys.iter().zip(&self.weights).map(|(u, w)| u * w).collect();
        let b = &self.dense().basis;
        Ok((0..self.num_coeffs())
            .map(|n| {
                flops::record(weighted.len());
                dot(b.row(n), &weighted)
            })
            .collect())
    }

    /// Sum-factorized inner product of already weighted values.
    pub fn iproduct_sumfac_kernel(&self, weighted: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        match self.shape {
            ShapeType::Seg => {
                for (n, o) in out.iter_mut().enumerate() {
                    flops::record(weighted.len());
                    *o = dot(self.table_a.values.row(n), weighted);
                }
            }
            ShapeType::Quad | ShapeType::Tri => {
                let tb = self.table_b.as_ref().unwrap();
                let na = self.keys[0].num_modes();
                let (qa, qb) = (self.rules[0].len(), self.rules[1].len());
                scratch.clear();
                scratch.resize(na * qb, 0.0);
                for p in 0..na {
                    let arow = self.table_a.values.row(p);
                    for j in 0..qb {
                        flops::record(qa);
                        scratch[p * qb + j] = dot(arow, &weighted[j * qa..(j + 1) * qa]);
                    }
                }
                if self.shape == ShapeType::Quad {
                    let nb = self.keys[1].num_modes();
                    for p in 0..na {
                        let tmp = &scratch[p * qb..(p + 1) * qb];
                        for q in 0..nb {
                            flops::record(qb);
                            out[p * nb + q] = dot(tb.values.row(q), tmp);
                        }
                    }
                } else {
                    for (r, &(p, _)) in self.modes.iter().enumerate() {
                        flops::record(qb);
                        out[r] = dot(tb.values.row(r), &scratch[p * qb..(p + 1) * qb]);
                    }
                    flops::record(qb);
                    out[1] += dot(tb.values.row(1), &scratch[qb..2 * qb]);
                }
            }
        }
    }

    /// Mass matrix `M_nm = ∫ φ_n φ_m` by quadrature.
    pub fn mass_matrix(&self) -> Matrix {
        self.weighted_mass(&self.weights)
    }

    /// `Σ_k w_k φ_n φ_m` for arbitrary point weights (e.g. including a Jacobian).
    pub fn weighted_mass(&self, point_weights: &[f64]) -> Matrix {
        let b = &self.dense().basis;
        let nc = self.num_coeffs();
        let mut m = Matrix::zeros(nc, nc);
        let mut wrow = vec![0.0; self.num_points()];
        for n in 0..nc {
            for (k, w) in wrow.iter_mut().enumerate() {
                *w = b[(n, k)] * point_weights[k];
            }
            for l in n..nc {
                let v = dot(&wrow, b.row(l));
                m[(n, l)] = v;
                m[(l, n)] = v;
            }
        }
        m
    }

    fn mass_cholesky(&self) -> Result<&Cholesky> {
        self.mass_factor
            .get_or_init(|| Cholesky::factor(&self.mass_matrix()))
            .as_ref()
            .map_err(|e| Error::Singular(format!("reference mass matrix: {e}")))
    }

    /// True when the default quadrature integrates the mass matrix exactly.
    pub fn has_exact_mass(&self) -> bool {
        match self.shape {
            ShapeType::Tri => {
                let p = self.order();
                self.keys[0].has_exact_mass()
                    && self.keys[1]
                        .points_key()
                        .points_type()
                        .exact_degree(self.keys[1].num_points())
                        > 2 * p
            }
            _ => self.keys.iter().all(|k| k.has_exact_mass()),
        }
    }

    /// Galerkin projection: solves `M û = IProduct(u)`.
    pub fn fwd_trans(&self, phys: &[f64]) -> Result<Vec<f64>> {
        if self.shape == ShapeType::Quad {
            return self.fwd_trans_tensor(phys);
        }
        let rhs = self.iproduct_wrt_base(phys)?;
        Ok(self.mass_cholesky()?.solve(&rhs))
    }

    /// Tensor-product quadrature makes the quad mass matrix `M_a ⊗ M_b`, so the
    /// projection factors into 1D projectors `M⁻¹ B W` whose conditioning is
    /// that of the 1D mass matrices rather than their product.
    fn fwd_trans_tensor(&self, phys: &[f64]) -> Result<Vec<f64>> {
        self.check_len("fwd_trans values", self.num_points(), phys.len())?;
        let [pa, pb] = self
            .projectors
            .get_or_init(|| {
                let tb = self.table_b.as_ref().expect("quad has two tables");
                Ok([
                    projector_1d(&self.table_a, &self.rules[0].weights)?,
                    projector_1d(tb, &self.rules[1].weights)?,
                ])
            })
            .as_ref()
            .map_err(|e| Error::Singular(format!("1D mass matrix: {e}")))?;
        let (na, qa) = (pa.rows(), pa.cols());
        let (nb, qb) = (pb.rows(), pb.cols());
        let mut tmp = vec![0.0; na * qb];
        for j in 0..qb {
            let row = &phys[j * qa..(j + 1) * qa];
            for p in 0..na {
                tmp[p * qb + j] = dot(pa.row(p), row);
            }
        }
        let mut out = vec![0.0; na * nb];
        for p in 0..na {
            for q in 0..nb {
                out[p * nb + q] = dot(pb.row(q), &tmp[p * qb..(p + 1) * qb]);
            }
        }
        flops::record(na * qa * qb + na * nb * qb);
        Ok(out)
    }

    /// Collocation derivatives in reference coordinates `(∂/∂ξ1, ∂/∂ξ2)`.
    pub fn phys_deriv(&self, phys: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len("phys_deriv values", self.num_points(), phys.len())?;
        let mut out: Vec<Vec<f64>> = (0..self.shape.dim()).map(|_| vec![0.0; phys.len()]).collect();
        self.phys_deriv_kernel(phys, &mut out);
        Ok(out)
    }

    /// Tensor-product collocation derivative kernel; `out` has one slice per direction.
    pub fn phys_deriv_kernel(&self, phys: &[f64], out: &mut [Vec<f64>]) {
        match self.shape {
            ShapeType::Seg => {
                for (i, o) in out[0].iter_mut().enumerate() {
                    flops::record(phys.len());
                    *o = dot(self.diff[0].row(i), phys);
                }
            }
            ShapeType::Quad | ShapeType::Tri => {
                let (qa, qb) = (self.rules[0].len(), self.rules[1].len());
                let (d0, d1) = out.split_at_mut(1);
                let (d0, d1) = (&mut d0[0], &mut d1[0]);
                for j in 0..qb {
                    let line = &phys[j * qa..(j + 1) * qa];
                    for i in 0..qa {
                        flops::record(qa);
                        d0[j * qa + i] = dot(self.diff[0].row(i), line);
                    }
                }
                d1.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..qb {
                    for k in 0..qb {
                        let c = self.diff[1][(j, k)];
                        flops::record(qa);
                        let (src, dst) = (k * qa, j * qa);
                        for i in 0..qa {
                            d1[dst + i] += c * phys[src + i];
                        }
                    }
                }
                if self.shape == ShapeType::Tri {
                    let (za, zb) = (&self.rules[0].points, &self.rules[1].points);
                    for j in 0..qb {
                        for i in 0..qa {
                            let k = j * qa + i;
                            let de1 = d0[k];
                            d0[k] = 2.0 / (1.0 - zb[j]) * de1;
                            d1[k] += (1.0 + za[i]) / (1.0 - zb[j]) * de1;
                        }
                    }
                    flops::record(2 * qa * qb);
                }
            }
        }
    }

    /// Quadrature integral `∫ u dξ` over the reference element.
    pub fn integral(&self, phys: &[f64]) -> Result<f64> {
        self.check_len("integral values", self.num_points(), phys.len())?;
        Ok(dot(phys, &self.weights))
    }

    /// Vertex modes in counter-clockwise vertex order.
    pub fn vertex_modes(&self) -> Vec<usize> {
        let p = self.order();
        match self.shape {
            ShapeType::Seg => vec![0, p],
            ShapeType::Quad => {
                let nb = self.keys[1].num_modes();
                let idx = |a: usize, b: usize| a * nb + b;
                vec![idx(0, 0), idx(p, 0), idx(p, p), idx(0, p)]
            }
            ShapeType::Tri => vec![self.mode_index(0, 0), self.mode_index(1, 0), self.mode_index(0, 1)],
        }
    }

    fn mode_index(&self, p: usize, q: usize) -> usize {
        self.modes
            .iter()
            .position(|&m| m == (p, q))
            .expect("mode exists")
    }

    /// Modes on local edge `e` excluding the vertices, ordered by slot.
    pub fn edge_modes(&self, e: usize) -> Vec<EdgeMode> {
        let p = self.order();
        let parity = |k: usize| if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
        let hier = self.is_hierarchical();
        let mut out = Vec::new();
        match self.shape {
            ShapeType::Seg => {}
            ShapeType::Quad => {
                let nb = self.keys[1].num_modes();
                let idx = |a: usize, b: usize| a * nb + b;
                for k in 1..p {
                    let (mode, sign) = match (e, hier) {
                        (0, _) => (idx(k, 0), 1.0),
                        (1, _) => (idx(p, k), 1.0),
                        (2, true) => (idx(k, p), parity(k)),
                        (3, true) => (idx(0, k), parity(k)),
                        (2, false) => (idx(p - k, p), 1.0),
                        (3, false) => (idx(0, p - k), 1.0),
                        _ => unreachable!(),
                    };
                    out.push(EdgeMode { mode, slot: k, sign });
                }
            }
            ShapeType::Tri => {
                for k in 1..p {
                    let (mode, sign) = match e {
                        0 => (self.mode_index(k + 1, 0), 1.0),
                        1 => (self.mode_index(1, k), 1.0),
                        2 => (self.mode_index(0, k + 1), parity(k)),
                        _ => unreachable!(),
                    };
                    out.push(EdgeMode { mode, slot: k, sign });
                }
            }
        }
        out
    }

    /// Modes that vanish on the element boundary.
    pub fn interior_modes(&self) -> Vec<usize> {
        let mut boundary = vec![false; self.num_coeffs()];
        for v in self.vertex_modes() {
            boundary[v] = true;
        }
        for e in 0..self.shape.num_edges() {
            for m in self.edge_modes(e) {
                boundary[m.mode] = true;
            }
        }
        (0..self.num_coeffs()).filter(|&n| !boundary[n]).collect()
    }

    /// Polynomial degree of each hierarchical mode (max direction degree on
    /// quadrilaterals, total degree on triangles).
    pub fn mode_degrees(&self) -> Vec<usize> {
        let p = self.order();
        let deg1 = |k: usize| if k == 0 || k == p { 1 } else { k + 1 };
        self.modes
            .iter()
            .enumerate()
            .map(|(r, &(a, b))| match self.shape {
                ShapeType::Seg => deg1(a),
                ShapeType::Quad => deg1(a).max(deg1(b)),
                ShapeType::Tri => {
                    if r == 1 {
                        1
                    } else if a == 0 {
                        b.max(1)
                    } else if b == 0 {
                        a
                    } else {
                        a + b
                    }
                }
            })
            .collect()
    }

    /// Coefficients of the same function in an expansion `target` of another order,
    /// by Galerkin projection at the target quadrature.
    pub fn project_coeffs(&self, coeffs: &[f64], target: &StdExpansion) -> Result<Vec<f64>> {
        if self.shape != target.shape {
            return Err(Error::InvalidArgument("projection between different shapes".into()));
        }
        let (v, _, _) = self.eval_modes(&target.coords())?;
        let phys = v.matvec_t(coeffs);
        target.fwd_trans(&phys)
    }
}

type ExpansionCache = RwLock<HashMap<(ShapeType, BasisType, usize), Arc<StdExpansion>>>;

/// Shared reference expansion with the default quadrature, cached by `(shape, basis, order)`.
pub fn std_expansion(shape: ShapeType, basis: BasisType, order: usize) -> Result<Arc<StdExpansion>> {
    static CACHE: OnceLock<ExpansionCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (shape, basis, order);
    if let Some(e) = cache.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(e.clone());
    }
    let exp = Arc::new(StdExpansion::with_order(shape, basis, order)?);
    let mut w = cache.write().unwrap_or_else(|e| e.into_inner());
    Ok(w.entry(key).or_insert(exp).clone())
}

/// Multiply-add counts of the dense and sum-factorized quadrilateral backward transform.
pub fn quad_bwd_trans_counts(order: usize) -> Result<(u64, u64)> {
    let exp = StdExpansion::with_order(ShapeType::Quad, BasisType::ModifiedA, order)?;
    let coeffs = vec![1.0; exp.num_coeffs()];
    exp.dense();
    let (_, dense) = flops::count(|| exp.bwd_trans(&coeffs));
    let (_, sumfac) = flops::count(|| exp.bwd_trans_sumfac(&coeffs));
    Ok((dense, sumfac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{duffy_expand, modified_a_degree};

    fn quad(order: usize) -> StdExpansion {
        StdExpansion::with_order(ShapeType::Quad, BasisType::ModifiedA, order).unwrap()
    }

    fn tri(order: usize) -> StdExpansion {
        StdExpansion::with_order(ShapeType::Tri, BasisType::ModifiedA, order).unwrap()
    }

    fn seg(order: usize) -> StdExpansion {
        StdExpansion::with_order(ShapeType::Seg, BasisType::ModifiedA, order).unwrap()
    }

    /// Direct evaluation of triangle mode `(p, q)` from the basis formulas.
    fn tri_mode_oracle(p: usize, q: usize, xi: [f64; 2]) -> f64 {
        let eta = duffy_expand(xi);
        let b = modified_b_value(p, q, eta[1]).0;
        if p == 0 && q == 1 {
            return b;
        }
        modified_a_degree(p, eta[0]).0 * b
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn zero_coefficients_give_zero_field() {
        for e in [seg(3), quad(3), tri(3)] {
            let u = e.bwd_trans(&vec![0.0; e.num_coeffs()]).unwrap();
            assert!(u.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_segment_sums_to_one() {
        let e = seg(1);
        let u = e.bwd_trans(&[1.0, 1.0]).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let e = quad(2);
        assert!(matches!(e.bwd_trans(&[1.0]), Err(Error::SizeMismatch { .. })));
        assert!(e.iproduct_wrt_base(&[1.0]).is_err());
        assert!(e.phys_deriv(&[1.0]).is_err());
    }

    #[test]
    fn quad_bwd_trans_matches_dense_oracle() {
        let e = quad(3);
        let c = rand_vec(e.num_coeffs(), 3);
        let coords = e.coords();
        let p = 3;
        let u = e.bwd_trans(&c).unwrap();
        for (k, x) in coords.iter().enumerate() {
            let mut expected = 0.0;
            for (r, &(a, b)) in e.modes().iter().enumerate() {
                let fa = modified_a_degree(crate::basis::degree_index(a, p), x[0]).0;
                let fb = modified_a_degree(crate::basis::degree_index(b, p), x[1]).0;
                expected += c[r] * fa * fb;
            }
            assert!((u[k] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn tri_sumfac_matches_dense_oracle() {
        let e = tri(4);
        let c = rand_vec(e.num_coeffs(), 5);
        let u = e.bwd_trans_sumfac(&c).unwrap();
        for (k, x) in e.coords().iter().enumerate() {
            let expected: f64 = e
                .modes()
                .iter()
                .zip(&c)
                .map(|(&(p, q), ci)| ci * tri_mode_oracle(p, q, *x))
                .sum();
            assert!((u[k] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn unit_vector_reproduces_dense_column() {
        let e = quad(5);
        for k in [0, 7, e.num_coeffs() - 1] {
            let mut c = vec![0.0; e.num_coeffs()];
            c[k] = 1.0;
            let u = e.bwd_trans_sumfac(&c).unwrap();
            assert_eq!(u.as_slice(), e.dense().basis.row(k));
        }
    }

    #[test]
    fn sumfac_equals_dense_for_all_shapes_and_orders() {
        for order in 2..=8 {
            for e in [quad(order), tri(order), seg(order)] {
                for s in 0..100 {
                    let c = rand_vec(e.num_coeffs(), s);
                    let a = e.bwd_trans(&c).unwrap();
                    let b = e.bwd_trans_sumfac(&c).unwrap();
                    let scale = crate::linalg::norm_inf(&a).max(1e-300);
                    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    assert!(diff / scale < 1e-13, "{:?} P={order}", e.shape());
                }
            }
        }
    }

    #[test]
    fn iproduct_examples() {
        let e = seg(1);
        let b = e.iproduct_wrt_base(&vec![1.0; e.num_points()]).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 1.0).abs() < 1e-14);
        let q = quad(3);
        assert!(q
            .iproduct_wrt_base(&vec![0.0; q.num_points()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let u = rand_vec(q.num_points(), 11);
        let fast = q.iproduct_wrt_base(&u).unwrap();
        // dense Bᵀ W u from direct basis evaluation
        let coords = q.coords();
        for (r, &(a, bq)) in q.modes().iter().enumerate() {
            let expected: f64 = coords
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let fa = modified_a_degree(crate::basis::degree_index(a, 3), x[0]).0;
                    let fb = modified_a_degree(crate::basis::degree_index(bq, 3), x[1]).0;
                    q.weights()[k] * fa * fb * u[k]
                })
                .sum();
            assert!((fast[r] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn iproduct_is_adjoint_of_bwd_trans() {
        for e in [quad(6), tri(6), seg(6)] {
            let c = rand_vec(e.num_coeffs(), 1);
            let v = rand_vec(e.num_points(), 2);
            let bu = e.bwd_trans(&c).unwrap();
            let lhs: f64 = bu.iter().zip(&v).zip(e.weights()).map(|((a, b), w)| a * b * w).sum();
            let rhs = dot(&c, &e.iproduct_wrt_base(&v).unwrap());
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
            let dense = e.iproduct_wrt_base_dense(&v).unwrap();
            let fast = e.iproduct_wrt_base(&v).unwrap();
            for (a, b) in dense.iter().zip(&fast) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn segment_mass_matrix_of_hat_functions() {
        let m = seg(1).mass_matrix();
        let expected = Matrix::from_row_major(2, 2, vec![2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!(m.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn quad_mass_is_kronecker_of_segments() {
        let ms = seg(1).mass_matrix();
        let mq = quad(1).mass_matrix();
        for (r, &(a, b)) in quad(1).modes().iter().enumerate() {
            for (c, &(d, e)) in quad(1).modes().iter().enumerate() {
                assert!((mq[(r, c)] - ms[(a, d)] * ms[(b, e)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mass_matrices_are_spd() {
        for e in [tri(3), tri(4), quad(4), seg(5)] {
            let m = e.mass_matrix();
            assert!(m.is_symmetric(1e-13));
            assert!(Cholesky::factor(&m).is_ok());
            assert!(e.has_exact_mass());
        }
    }

    #[test]
    fn fwd_trans_recovers_basis_function() {
        for e in [quad(4), tri(4), seg(4)] {
            let k = 2;
            let mut c = vec![0.0; e.num_coeffs()];
            c[k] = 1.0;
            let u = e.bwd_trans(&c).unwrap();
            let back = e.fwd_trans(&u).unwrap();
            for (i, v) in back.iter().enumerate() {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fwd_trans_of_constant() {
        let e = seg(3);
        let c = e.fwd_trans(&vec![1.0; e.num_points()]).unwrap();
        let u = e.bwd_trans(&c).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn projection_is_idempotent() {
        for e in [quad(5), tri(5)] {
            let c = rand_vec(e.num_coeffs(), 9);
            let back = e.fwd_trans(&e.bwd_trans(&c).unwrap()).unwrap();
            for (a, b) in c.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cos_cos_projection_integral() {
        // 8 modes per direction, 9 GLL points.
        let e = StdExpansion::with_order_and_points(ShapeType::Quad, BasisType::ModifiedA, 7, 9)
            .unwrap();
        let f: Vec<f64> = e.coords().iter().map(|x| x[0].cos() * x[1].cos()).collect();
        let exact = 4.0 * 1f64.sin().powi(2);
        assert!((e.integral(&f).unwrap() - exact).abs() < 1e-8);
        let c = e.fwd_trans(&f).unwrap();
        let proj = e.bwd_trans(&c).unwrap();
        assert!((e.integral(&proj).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn reference_areas() {
        let q = quad(3);
        assert!((q.integral(&vec![1.0; q.num_points()]).unwrap() - 4.0).abs() < 1e-14);
        let t = tri(3);
        assert!((t.integral(&vec![1.0; t.num_points()]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn phys_deriv_examples() {
        let q = quad(4);
        let d = q.phys_deriv(&vec![3.0; q.num_points()]).unwrap();
        assert!(d.iter().flatten().all(|v| v.abs() < 1e-12));
        let x: Vec<f64> = q.coords().iter().map(|c| c[0]).collect();
        let d = q.phys_deriv(&x).unwrap();
        assert!(d[0].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(d[1].iter().all(|v| v.abs() < 1e-12));

        let t = tri(4);
        let f: Vec<f64> = t.coords().iter().map(|c| c[0] * c[1]).collect();
        let d = t.phys_deriv(&f).unwrap();
        for (k, c) in t.coords().iter().enumerate() {
            assert!((d[0][k] - c[1]).abs() < 1e-10);
            assert!((d[1][k] - c[0]).abs() < 1e-10);
        }
        // dense operator agrees with the kernel
        let dd = &t.dense().phys_deriv;
        let a = dd[0].matvec(&f);
        for (u, v) in a.iter().zip(&d[0]) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn basis_derivative_tables_are_exact() {
        let t = tri(5);
        let c = rand_vec(t.num_coeffs(), 4);
        let u = t.bwd_trans(&c).unwrap();
        let d = t.phys_deriv(&u).unwrap();
        let dense = t.dense();
        for dir in 0..2 {
            let analytic = dense.basis_deriv[dir].matvec_t(&c);
            for (a, b) in analytic.iter().zip(&d[dir]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eval_modes_agrees_with_tables_and_rejects_outside_points() {
        let t = tri(4);
        let (v, _, _) = t.eval_modes(&t.coords()).unwrap();
        assert!(v.max_abs_diff(&t.dense().basis) < 1e-13);
        assert!(t.eval_modes(&[[0.5, 0.6]]).is_err());
        let q = quad(3);
        assert!(q.eval_modes(&[[1.5, 0.0]]).is_err());
    }

    #[test]
    fn boundary_interior_decomposition() {
        for e in [quad(5), tri(5)] {
            let n_edges: usize = (0..e.shape().num_edges()).map(|k| e.edge_modes(k).len()).sum();
            let total = e.vertex_modes().len() + n_edges + e.interior_modes().len();
            assert_eq!(total, e.num_coeffs());
            // interior modes vanish on every edge
            let mut pts = Vec::new();
            for k in 0..e.shape().num_edges() {
                for s in [-0.7, 0.1, 0.55] {
                    pts.push(e.shape().edge_point(k, s));
                }
            }
            let (v, _, _) = e.eval_modes(&pts).unwrap();
            for m in e.interior_modes() {
                assert!(v.row(m).iter().all(|x| x.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn edge_restrictions_match_the_1d_basis() {
        let p = 5;
        for e in [quad(p), tri(p)] {
            for k in 0..e.shape().num_edges() {
                let ss = [-0.8, -0.2, 0.3, 0.9];
                let pts: Vec<[f64; 2]> = ss.iter().map(|&s| e.shape().edge_point(k, s)).collect();
                let (v, _, _) = e.eval_modes(&pts).unwrap();
                for m in e.edge_modes(k) {
                    for (i, &s) in ss.iter().enumerate() {
                        let expected = modified_a_degree(m.slot + 1, s).0;
                        assert!(
                            (m.sign * v[(m.mode, i)] - expected).abs() < 1e-13,
                            "{:?} edge {k} slot {}",
                            e.shape(),
                            m.slot
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn operation_counts_scale_as_expected() {
        for p in [4, 8, 16] {
            let (dense, sumfac) = quad_bwd_trans_counts(p).unwrap();
            let (n, q) = ((p + 1) as u64, (p + 2) as u64);
            assert_eq!(dense, n * n * q * q);
            assert_eq!(sumfac, n * n * q + n * q * q);
        }
    }

    #[test]
    fn mode_degrees_truncate_hierarchically() {
        let t = tri(3);
        let deg = t.mode_degrees();
        assert_eq!(deg.iter().filter(|&&d| d <= 2).count(), 6);
        let q = quad(3);
        assert_eq!(q.mode_degrees().iter().filter(|&&d| d <= 2).count(), 9);
    }
}
