//! Modified hierarchical (boundary/interior) bases, nodal Lagrange bases and
//! the collapsed-coordinate map for triangles.
//!
//! One-dimensional `ModifiedA` tables are stored in vertex-interior-vertex
//! order: row `0` is `(1-ξ)/2`, rows `1..P` are the bubbles
//! `(1-ξ)/2 (1+ξ)/2 P^{1,1}_{p-1}(ξ)` and row `P` is `(1+ξ)/2`.
//!
//! Triangle bases are built from the degree-ordered variant (`degree index`
//! `0` and `1` are the two vertex modes, `d ≥ 2` has polynomial degree `d`),
//! because the `ModifiedB` principal functions couple to the degree of the
//! first-direction mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::polylib::{jacobi, jacobi_deriv};
use crate::quadrature::{diff_matrix, interp_matrix, make_rule, PointsKey, PointsType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasisType {
    #[serde(rename = "modified_a")]
    ModifiedA,
    #[serde(rename = "modified_b")]
    ModifiedB,
    #[serde(rename = "lagrange_gll")]
    LagrangeGll,
}

impl BasisType {
    pub fn is_hierarchical(self) -> bool {
        matches!(self, BasisType::ModifiedA | BasisType::ModifiedB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisKey {
    basis_type: BasisType,
    num_modes: usize,
    points_key: PointsKey,
}

impl BasisKey {
    pub fn new(basis_type: BasisType, num_modes: usize, points_key: PointsKey) -> Result<Self> {
        if num_modes < 2 {
            return Err(Error::InvalidBasis(format!(
                "{basis_type:?} needs at least 2 modes (boundary modes), got {num_modes}"
            )));
        }
        Ok(BasisKey {
            basis_type,
            num_modes,
            points_key,
        })
    }

    pub fn basis_type(&self) -> BasisType {
        self.basis_type
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    /// Polynomial order `P = num_modes - 1`.
    pub fn order(&self) -> usize {
        self.num_modes - 1
    }

    pub fn points_key(&self) -> PointsKey {
        self.points_key
    }

    pub fn num_points(&self) -> usize {
        self.points_key.num_points()
    }

    /// True when the quadrature integrates the 1D mass matrix exactly.
    pub fn has_exact_mass(&self) -> bool {
        self.points_key.points_type().exact_degree(self.num_points()) >= 2 * self.order()
    }
}

/// Basis values and derivatives at a set of points: `values[(p, i)] = φ_p(ξ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub values: Matrix,
    pub derivs: Matrix,
}

impl BasisTable {
    pub fn num_modes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_points(&self) -> usize {
        self.values.cols()
    }
}

/// Degree-ordered modified mode `d` and its derivative at `x`.
pub(crate) fn modified_a_degree(d: usize, x: f64) -> (f64, f64) {
    match d {
        0 => (0.5 * (1.0 - x), -0.5),
        1 => (0.5 * (1.0 + x), 0.5),
        _ => {
            let bubble = 0.25 * (1.0 - x) * (1.0 + x);
            let dbubble = -0.5 * x;
            let j = jacobi(d - 2, 1.0, 1.0, x);
            let dj = jacobi_deriv(d - 2, 1.0, 1.0, x);
            (bubble * j, dbubble * j + bubble * dj)
        }
    }
}

/// Maps a vertex-interior-vertex index `p` of an order-`order` table to its degree index.
pub(crate) fn degree_index(p: usize, order: usize) -> usize {
    if p == 0 {
        0
    } else if p == order {
        1
    } else {
        p + 1
    }
}

/// Evaluates the order-`order` modified basis at `points` (vertex-interior-vertex order).
pub fn eval_modified_a(order: usize, points: &[f64]) -> Result<BasisTable> {
    if order == 0 {
        return Err(Error::InvalidBasis(
            "modified basis needs order P >= 1 (two boundary modes)".into(),
        ));
    }
    let n = order + 1;
    let mut values = Matrix::zeros(n, points.len());
    let mut derivs = Matrix::zeros(n, points.len());
    for p in 0..n {
        let d = degree_index(p, order);
        for (i, &x) in points.iter().enumerate() {
            let (v, dv) = modified_a_degree(d, x);
            values[(p, i)] = v;
            derivs[(p, i)] = dv;
        }
    }
    Ok(BasisTable { values, derivs })
}

/// Principal function `ψ_{pq}(z)` of the collapsed direction and its derivative.
pub fn modified_b_value(p: usize, q: usize, z: f64) -> (f64, f64) {
    if p == 0 {
        return modified_a_degree(q, z);
    }
    let a = 0.5 * (1.0 - z);
    let ap = a.powi(p as i32);
    let dap = -0.5 * p as f64 * a.powi(p as i32 - 1);
    if q == 0 {
        return (ap, dap);
    }
    let b = 0.5 * (1.0 + z);
    let alpha = (2 * p - 1) as f64;
    let j = jacobi(q - 1, alpha, 1.0, z);
    let dj = jacobi_deriv(q - 1, alpha, 1.0, z);
    (ap * b * j, dap * b * j + ap * 0.5 * j + ap * b * dj)
}

/// Index pairs `(p, q)` of the collapsed-direction functions for orders `(order_a, order_b)`.
pub fn modified_b_indices(order_a: usize, order_b: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::new();
    for p in 0..=order_a {
        let qmax = if p == 0 { order_b } else { order_b - p };
        for q in 0..=qmax {
            idx.push((p, q));
        }
    }
    idx
}

/// Rows `ψ_{pq}` evaluated at `points`, one row per entry of [`modified_b_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedBTable {
    pub indices: Vec<(usize, usize)>,
    pub table: BasisTable,
}

pub fn eval_modified_b(order_a: usize, order_b: usize, points: &[f64]) -> Result<ModifiedBTable> {
    if order_a == 0 || order_b == 0 {
        return Err(Error::InvalidBasis(format!(
            "collapsed basis orders must be >= 1, got ({order_a}, {order_b})"
        )));
    }
    if order_b < order_a {
        return Err(Error::InvalidBasis(format!(
            "collapsed direction order {order_b} must be >= first direction order {order_a}"
        )));
    }
    let indices = modified_b_indices(order_a, order_b);
    let mut values = Matrix::zeros(indices.len(), points.len());
    let mut derivs = Matrix::zeros(indices.len(), points.len());
    for (r, &(p, q)) in indices.iter().enumerate() {
        for (i, &z) in points.iter().enumerate() {
            let (v, dv) = modified_b_value(p, q, z);
            values[(r, i)] = v;
            derivs[(r, i)] = dv;
        }
    }
    Ok(ModifiedBTable {
        indices,
        table: BasisTable { values, derivs },
    })
}

/// Nodal Lagrange basis through `num_modes` GLL nodes, evaluated at `points`.
pub fn eval_lagrange_gll(num_modes: usize, points: &[f64]) -> Result<BasisTable> {
    let nodes = make_rule(PointsKey::new(num_modes, PointsType::GaussLobattoLegendre)?);
    let interp = interp_matrix(&nodes.points, points);
    let dnodes = diff_matrix(&nodes.points);
    let dvals = interp.matmul(&dnodes);
    Ok(BasisTable {
        values: interp.transpose(),
        derivs: dvals.transpose(),
    })
}

/// Evaluates a one-directional basis (`ModifiedA` or `LagrangeGll`) at arbitrary points.
pub fn eval_1d(basis_type: BasisType, num_modes: usize, points: &[f64]) -> Result<BasisTable> {
    match basis_type {
        BasisType::ModifiedA => eval_modified_a(num_modes - 1, points),
        BasisType::LagrangeGll => eval_lagrange_gll(num_modes, points),
        BasisType::ModifiedB => Err(Error::InvalidBasis(
            "ModifiedB is two-index; use eval_modified_b".into(),
        )),
    }
}

/// Collapsed square coordinates `η` to triangle reference coordinates `ξ`.
pub fn duffy_collapse(eta: [f64; 2]) -> [f64; 2] {
    [0.5 * (1.0 + eta[0]) * (1.0 - eta[1]) - 1.0, eta[1]]
}

/// Triangle reference coordinates `ξ` to collapsed coordinates `η`.
///
/// At the collapsed vertex `ξ = (-1, 1)` the first coordinate is fixed to `-1`.
pub fn duffy_expand(xi: [f64; 2]) -> [f64; 2] {
    let denom = 1.0 - xi[1];
    if denom.abs() < 1e-14 {
        return [-1.0, xi[1]];
    }
    [2.0 * (1.0 + xi[0]) / denom - 1.0, xi[1]]
}
