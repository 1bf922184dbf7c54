//! Quadrature rules, Lagrange interpolation and collocation differentiation
//! on the reference segment `[-1, 1]`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::polylib::{jacobi, jacobi_zeros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointsType {
    GaussLegendre,
    GaussLobattoLegendre,
    /// Gauss-Radau-Legendre including the endpoint `-1`.
    GaussRadauMinusLegendre,
}

impl PointsType {
    /// Highest polynomial degree integrated exactly with `q` points.
    pub fn exact_degree(self, q: usize) -> usize {
        match self {
            PointsType::GaussLegendre => 2 * q - 1,
            PointsType::GaussLobattoLegendre => 2 * q - 3,
            PointsType::GaussRadauMinusLegendre => 2 * q - 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointsKey {
    num_points: usize,
    points_type: PointsType,
}

impl PointsKey {
    pub fn new(num_points: usize, points_type: PointsType) -> Result<Self> {
        if num_points == 0 {
            return Err(Error::InvalidQuadrature(
                "at least one quadrature point is required".into(),
            ));
        }
        if points_type == PointsType::GaussLobattoLegendre && num_points < 2 {
            return Err(Error::InvalidQuadrature(format!(
                "Gauss-Lobatto-Legendre needs at least 2 points, got {num_points}"
            )));
        }
        Ok(PointsKey {
            num_points,
            points_type,
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn points_type(&self) -> PointsType {
        self.points_type
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn build_rule(key: PointsKey) -> QuadratureRule {
    let q = key.num_points;
    match key.points_type {
        PointsType::GaussLegendre => {
            let points = jacobi_zeros(q, 0.0, 0.0);
            let weights = points
                .iter()
                .map(|&x| {
                    let dp = crate::polylib::jacobi_deriv(q, 0.0, 0.0, x);
                    2.0 / ((1.0 - x * x) * dp * dp)
                })
                .collect();
            QuadratureRule { points, weights }
        }
        PointsType::GaussLobattoLegendre => {
            let mut points = Vec::with_capacity(q);
            points.push(-1.0);
            points.extend(jacobi_zeros(q - 2, 1.0, 1.0));
            points.push(1.0);
            let qf = q as f64;
            let weights = points
                .iter()
                .map(|&x| {
                    let p = jacobi(q - 1, 0.0, 0.0, x);
                    2.0 / (qf * (qf - 1.0) * p * p)
                })
                .collect();
            QuadratureRule { points, weights }
        }
        PointsType::GaussRadauMinusLegendre => {
            let mut points = Vec::with_capacity(q);
            points.push(-1.0);
            points.extend(jacobi_zeros(q - 1, 0.0, 1.0));
            let qf = q as f64;
            let weights = points
                .iter()
                .map(|&x| {
                    let p = jacobi(q - 1, 0.0, 0.0, x);
                    (1.0 - x) / (qf * qf * p * p)
                })
                .collect();
            QuadratureRule { points, weights }
        }
    }
}

type RuleCache = RwLock<HashMap<PointsKey, Arc<QuadratureRule>>>;

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Returns the (cached) quadrature rule for `key`.
pub fn make_rule(key: PointsKey) -> Arc<QuadratureRule> {
    if let Some(rule) = cache().read().expect("rule cache poisoned").get(&key) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(build_rule(key));
    let mut guard = cache().write().expect("rule cache poisoned");
    Arc::clone(guard.entry(key).or_insert(rule))
}

fn barycentric_weights(points: &[f64]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let prod: f64 = points
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &xm)| xj - xm)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Lagrange interpolation matrix from `from` to `to_points`; row `i` holds the
/// Lagrange polynomials through `from` evaluated at `to_points[i]`.
pub fn interp_matrix(from: &[f64], to_points: &[f64]) -> Matrix {
    let lambda = barycentric_weights(from);
    let mut m = Matrix::zeros(to_points.len(), from.len());
    for (i, &x) in to_points.iter().enumerate() {
        if let Some(j) = from.iter().position(|&xj| xj == x) {
            m[(i, j)] = 1.0;
            continue;
        }
        let terms: Vec<f64> = from
            .iter()
            .zip(&lambda)
            .map(|(&xj, &lj)| lj / (x - xj))
            .collect();
        let denom: f64 = terms.iter().sum();
        for (j, t) in terms.iter().enumerate() {
            m[(i, j)] = t / denom;
        }
    }
    m
}

/// Collocation differentiation matrix on `points`.
pub fn diff_matrix(points: &[f64]) -> Matrix {
    let n = points.len();
    let lambda = barycentric_weights(points);
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lambda[j] / lambda[i]) / (points[i] - points[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    d
}
