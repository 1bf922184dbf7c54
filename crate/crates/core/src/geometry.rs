//! Physical elements: the mapping `x = χ(ξ)` from a reference element,
//! its Jacobian and derived geometric factors.
//!
//! The map is itself a modal expansion (same basis machinery as the solution)
//! whose boundary modes are fitted to the vertex positions and, for curved
//! edges, to high-order edge nodes given at Gauss-Lobatto-Legendre positions.
//! Interior geometric modes are zero.

use std::sync::Arc;

use crate::basis::{modified_a_degree, BasisType};
use crate::error::{Error, Result};
use crate::linalg::{lu_solve, Matrix};
use crate::quadrature::{interp_matrix, make_rule, PointsKey, PointsType};
use crate::stdregions::{std_expansion, ShapeType, StdExpansion};

/// Geometry of one physical element.
#[derive(Debug, Clone)]
pub struct ElementGeom {
    id: u32,
    shape: ShapeType,
    vertices: Vec<[f64; 2]>,
    /// Per local edge: nodes from the start to the end vertex (counter-clockwise), GLL spaced.
    curves: Vec<Option<Vec<[f64; 2]>>>,
    geom_exp: Arc<StdExpansion>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

/// Geometric factors at the quadrature points of an expansion.
#[derive(Debug, Clone)]
pub struct GeomFactors {
    /// World coordinates of the quadrature points.
    pub points: Vec<[f64; 2]>,
    /// `∂x/∂ξ` as `[[x_ξ1, x_ξ2], [y_ξ1, y_ξ2]]`.
    pub jac: Vec<[[f64; 2]; 2]>,
    pub det: Vec<f64>,
    /// `∂ξ/∂x` as `[[ξ1_x, ξ1_y], [ξ2_x, ξ2_y]]`.
    pub inv: Vec<[[f64; 2]; 2]>,
    /// Quadrature weight times `det J`.
    pub jw: Vec<f64>,
}

/// Geometry at a point of an element edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    pub x: [f64; 2],
    /// Outward unit normal.
    pub normal: [f64; 2],
    /// `|dx/ds|`, the arc-length Jacobian of the edge parameter.
    pub jac: f64,
}

impl ElementGeom {
    /// Straight-sided element from counter-clockwise vertices.
    pub fn straight(id: u32, shape: ShapeType, vertices: Vec<[f64; 2]>) -> Result<Self> {
        let n = shape.num_edges();
        Self::new(id, shape, vertices, vec![None; n])
    }

    /// Element with optional curved edges (see the struct documentation for node layout).
    pub fn new(
        id: u32,
        shape: ShapeType,
        vertices: Vec<[f64; 2]>,
        curves: Vec<Option<Vec<[f64; 2]>>>,
    ) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidElement {
            kind: shape.name(),
            id,
            reason,
        };
        if shape == ShapeType::Seg {
            return Err(invalid("2D geometry requires a triangle or quadrilateral".into()));
        }
        if vertices.len() != shape.num_vertices() {
            return Err(invalid(format!(
                "expected {} vertices, got {}",
                shape.num_vertices(),
                vertices.len()
            )));
        }
        if curves.len() != shape.num_edges() {
            return Err(invalid(format!(
                "expected {} edge curve slots, got {}",
                shape.num_edges(),
                curves.len()
            )));
        }
        let mut order = 1;
        for (e, c) in curves.iter().enumerate() {
            if let Some(nodes) = c {
                if nodes.len() < 2 {
                    return Err(invalid(format!("edge {e} curve needs at least 2 nodes")));
                }
                let (a, b) = shape.edge_vertices(e);
                let close = |p: [f64; 2], q: [f64; 2]| {
                    let scale = 1.0 + p[0].abs().max(p[1].abs());
                    (p[0] - q[0]).abs().max((p[1] - q[1]).abs()) <= 1e-10 * scale
                };
                if !close(nodes[0], vertices[a]) || !close(nodes[nodes.len() - 1], vertices[b]) {
                    return Err(invalid(format!("edge {e} curve endpoints do not match its vertices")));
                }
                order = order.max(nodes.len() - 1);
            }
        }
        let geom_exp = std_expansion(shape, BasisType::ModifiedA, order)?;
        let mut geom = ElementGeom {
            id,
            shape,
            vertices,
            curves,
            geom_exp,
            cx: Vec::new(),
            cy: Vec::new(),
        };
        geom.fit_coefficients()?;
        let check = geom.jacobians(&geom.geom_exp.coords())?;
        check_determinants(shape, id, &check)?;
        Ok(geom)
    }

    fn fit_coefficients(&mut self) -> Result<()> {
        let exp = self.geom_exp.clone();
        let n = exp.num_coeffs();
        let (mut cx, mut cy) = (vec![0.0; n], vec![0.0; n]);
        for (v, &m) in exp.vertex_modes().iter().enumerate() {
            cx[m] = self.vertices[v][0];
            cy[m] = self.vertices[v][1];
        }
        let order = exp.order();
        if order >= 2 {
            let gll = make_rule(PointsKey::new(order + 1, PointsType::GaussLobattoLegendre)?);
            let s_fit = &gll.points[1..order];
            let a = Matrix::from_fn(order - 1, order - 1, |i, k| modified_a_degree(k + 2, s_fit[i]).0);
            for e in 0..self.shape.num_edges() {
                let Some(nodes) = &self.curves[e] else { continue };
                let node_rule =
                    make_rule(PointsKey::new(nodes.len(), PointsType::GaussLobattoLegendre)?);
                let interp = interp_matrix(&node_rule.points, s_fit);
                let (va, vb) = self.shape.edge_vertices(e);
                let modes = exp.edge_modes(e);
                for dim in 0..2 {
                    let samples: Vec<f64> = nodes.iter().map(|p| p[dim]).collect();
                    let on_curve = interp.matvec(&samples);
                    let resid: Vec<f64> = s_fit
                        .iter()
                        .zip(&on_curve)
                        .map(|(&s, &x)| {
                            let linear = 0.5 * (1.0 - s) * self.vertices[va][dim]
                                + 0.5 * (1.0 + s) * self.vertices[vb][dim];
                            x - linear
                        })
                        .collect();
                    let c = lu_solve(&a, &resid)?;
                    let target = if dim == 0 { &mut cx } else { &mut cy };
                    for m in &modes {
                        target[m.mode] = m.sign * c[m.slot - 1];
                    }
                }
            }
        }
        self.cx = cx;
        self.cy = cy;
        Ok(())
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn shape(&self) -> ShapeType {
        self.shape
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn geom_order(&self) -> usize {
        self.geom_exp.order()
    }

    pub fn is_curved(&self) -> bool {
        self.curves.iter().any(Option::is_some)
    }

    /// Maps reference points to world coordinates.
    pub fn x_map_many(&self, xi: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let (v, _, _) = self.geom_exp.eval_modes(xi)?;
        let xs = v.matvec_t(&self.cx);
        let ys = v.matvec_t(&self.cy);
        Ok(xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect())
    }

    pub fn x_map(&self, xi: [f64; 2]) -> Result<[f64; 2]> {
        Ok(self.x_map_many(&[xi])?[0])
    }

    /// `∂x/∂ξ` at reference points.
    pub fn jacobians(&self, xi: &[[f64; 2]]) -> Result<Vec<[[f64; 2]; 2]>> {
        let (_, d1, d2) = self.geom_exp.eval_modes(xi)?;
        let (x1, x2) = (d1.matvec_t(&self.cx), d2.matvec_t(&self.cx));
        let (y1, y2) = (d1.matvec_t(&self.cy), d2.matvec_t(&self.cy));
        Ok((0..xi.len())
            .map(|k| [[x1[k], x2[k]], [y1[k], y2[k]]])
            .collect())
    }

    /// Geometric factors at the quadrature points of `layout`.
    pub fn geom_factors(&self, layout: &StdExpansion) -> Result<GeomFactors> {
        if layout.shape() != self.shape {
            return Err(Error::InvalidArgument(format!(
                "{} layout for {} geometry",
                layout.shape().name(),
                self.shape.name()
            )));
        }
        let xi = layout.coords();
        let points = self.x_map_many(&xi)?;
        let jac = self.jacobians(&xi)?;
        let det = check_determinants(self.shape, self.id, &jac)?;
        let inv = jac
            .iter()
            .zip(&det)
            .map(|(j, &d)| [[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]])
            .collect();
        let jw = layout.weights().iter().zip(&det).map(|(w, d)| w * d).collect();
        Ok(GeomFactors {
            points,
            jac,
            det,
            inv,
            jw,
        })
    }

    /// Positions, outward normals and arc-length Jacobians at edge parameters `s`.
    pub fn edge_points(&self, edge: usize, s: &[f64]) -> Result<Vec<EdgePoint>> {
        if edge >= self.shape.num_edges() {
            return Err(Error::InvalidArgument(format!(
                "{} has no edge {edge}",
                self.shape.name()
            )));
        }
        let xi: Vec<[f64; 2]> = s.iter().map(|&t| self.shape.edge_point(edge, t)).collect();
        let x = self.x_map_many(&xi)?;
        let tan_ref = self.shape.edge_tangent(edge);
        let mut out = Vec::with_capacity(s.len());
        // derivative of the map along the edge, avoiding the collapsed vertex where needed
        for (k, p) in xi.iter().enumerate() {
            let t = self.edge_tangent_at(*p, tan_ref)?;
            let len = t[0].hypot(t[1]);
            out.push(EdgePoint {
                x: x[k],
                normal: [t[1] / len, -t[0] / len],
                jac: len,
            });
        }
        Ok(out)
    }

    fn edge_tangent_at(&self, xi: [f64; 2], dir: [f64; 2]) -> Result<[f64; 2]> {
        let on_apex = self.shape == ShapeType::Tri && (1.0 - xi[1]).abs() < 1e-12;
        if !on_apex {
            let j = self.jacobians(&[xi])?[0];
            return Ok([
                j[0][0] * dir[0] + j[0][1] * dir[1],
                j[1][0] * dir[0] + j[1][1] * dir[1],
            ]);
        }
        // the Jacobian is singular at the collapsed vertex: use a point just inside the edge
        let h = 1e-9;
        let inside = [xi[0] + h * dir[0], xi[1] + h * dir[1]];
        let p = if self.shape.contains(inside) {
            inside
        } else {
            [xi[0] - h * dir[0], xi[1] - h * dir[1]]
        };
        self.edge_tangent_at(p, dir)
    }

    /// Element area by quadrature of `det J`.
    pub fn area(&self) -> Result<f64> {
        let exp = std_expansion(self.shape, BasisType::ModifiedA, self.geom_order() + 2)?;
        Ok(self.geom_factors(&exp)?.jw.iter().sum())
    }

    /// Diameter of the smallest circle enclosing the vertices.
    pub fn diameter(&self) -> f64 {
        min_enclosing_diameter(&self.vertices)
    }
}

fn check_determinants(shape: ShapeType, id: u32, jac: &[[[f64; 2]; 2]]) -> Result<Vec<f64>> {
    jac.iter()
        .enumerate()
        .map(|(k, j)| {
            let d = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::InvalidElement {
                    kind: shape.name(),
                    id,
                    reason: format!("Jacobian determinant {d:e} at quadrature point {k} is not positive"),
                })
            }
        })
        .collect()
}

/// World-coordinate gradient `∇_x u = (∂ξ/∂x)ᵀ ∇_ξ u` at quadrature points.
pub fn phys_deriv_world(exp: &StdExpansion, gf: &GeomFactors, phys: &[f64]) -> Result<[Vec<f64>; 2]> {
    if gf.inv.len() != exp.num_points() {
        return Err(Error::SizeMismatch {
            context: "geometric factors",
            expected: exp.num_points(),
            actual: gf.inv.len(),
        });
    }
    let d = exp.phys_deriv(phys)?;
    let mut dx = vec![0.0; phys.len()];
    let mut dy = vec![0.0; phys.len()];
    for k in 0..phys.len() {
        let inv = gf.inv[k];
        dx[k] = inv[0][0] * d[0][k] + inv[1][0] * d[1][k];
        dy[k] = inv[0][1] * d[0][k] + inv[1][1] * d[1][k];
    }
    Ok([dx, dy])
}

/// Diameter of the minimal enclosing circle of a small point set.
pub fn min_enclosing_diameter(pts: &[[f64; 2]]) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let contains = |c: [f64; 2], r: f64| pts.iter().all(|&p| dist(p, c) <= r * (1.0 + 1e-12) + 1e-14);
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let c = [(pts[i][0] + pts[j][0]) / 2.0, (pts[i][1] + pts[j][1]) / 2.0];
            let r = dist(pts[i], pts[j]) / 2.0;
            if r < best && contains(c, r) {
                best = r;
            }
            for k in j + 1..pts.len() {
                if let Some((c, r)) = circumcircle(pts[i], pts[j], pts[k]) {
                    if r < best && contains(c, r) {
                        best = r;
                    }
                }
            }
        }
    }
    if best.is_finite() {
        2.0 * best
    } else {
        0.0
    }
}

fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<([f64; 2], f64)> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-300 {
        return None;
    }
    let (a2, b2, c2) = (
        a[0] * a[0] + a[1] * a[1],
        b[0] * b[0] + b[1] * b[1],
        c[0] * c[0] + c[1] * c[1],
    );
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    Some(([ux, uy], (a[0] - ux).hypot(a[1] - uy)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> ElementGeom {
        ElementGeom::straight(
            0,
            ShapeType::Quad,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap()
    }

    fn gll_nodes(n: usize) -> Vec<f64> {
        make_rule(PointsKey::new(n, PointsType::GaussLobattoLegendre).unwrap())
            .points
            .clone()
    }

    /// Quad on [0,1]² whose top edge bulges to y = 1 + a·x(1−x).
    fn parabolic_quad(a: f64, n: usize) -> ElementGeom {
        // top edge runs from (1,1) to (0,1)
        let top: Vec<[f64; 2]> = gll_nodes(n)
            .iter()
            .map(|&s| {
                let x = (1.0 - s) / 2.0;
                [x, 1.0 + a * x * (1.0 - x)]
            })
            .collect();
        ElementGeom::new(
            7,
            ShapeType::Quad,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![None, None, Some(top), None],
        )
        .unwrap()
    }

    #[test]
    fn x_map_of_unit_square() {
        let g = unit_square();
        let p = g.x_map([-1.0, -1.0]).unwrap();
        assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15);
        let c = g.x_map([0.0, 0.0]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
        assert!(g.x_map([2.0, 0.0]).is_err());
    }

    #[test]
    fn reference_quad_has_identity_jacobian() {
        let g = ElementGeom::straight(
            0,
            ShapeType::Quad,
            vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
        )
        .unwrap();
        let exp = std_expansion(ShapeType::Quad, BasisType::ModifiedA, 3).unwrap();
        let gf = g.geom_factors(&exp).unwrap();
        for (j, d) in gf.jac.iter().zip(&gf.det) {
            assert!((j[0][0] - 1.0).abs() < 1e-14 && j[0][1].abs() < 1e-14);
            assert!(j[1][0].abs() < 1e-14 && (j[1][1] - 1.0).abs() < 1e-14);
            assert!((d - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scaled_quad_has_constant_determinant() {
        let g = ElementGeom::straight(
            0,
            ShapeType::Quad,
            vec![[-2.0, -1.0], [2.0, -1.0], [2.0, 1.0], [-2.0, 1.0]],
        )
        .unwrap();
        let exp = std_expansion(ShapeType::Quad, BasisType::ModifiedA, 4).unwrap();
        let gf = g.geom_factors(&exp).unwrap();
        assert!(gf.det.iter().all(|d| (d - 2.0).abs() < 1e-14));
    }

    #[test]
    fn affine_areas_match_polygon_area() {
        let tri = ElementGeom::straight(
            0,
            ShapeType::Tri,
            vec![[0.0, 0.0], [3.0, 0.5], [1.0, 2.0]],
        )
        .unwrap();
        let shoelace = 0.5 * ((3.0 * 2.0 - 0.5 * 1.0) as f64);
        assert!((tri.area().unwrap() - shoelace).abs() < 1e-12);
        let quad = ElementGeom::straight(
            1,
            ShapeType::Quad,
            vec![[0.0, 0.0], [2.0, 0.0], [2.5, 1.5], [0.2, 1.0]],
        )
        .unwrap();
        let v = quad.vertices();
        let mut area = 0.0;
        for i in 0..4 {
            let (a, b) = (v[i], v[(i + 1) % 4]);
            area += a[0] * b[1] - b[0] * a[1];
        }
        assert!((quad.area().unwrap() - area / 2.0).abs() < 1e-12);
    }

    #[test]
    fn clockwise_element_is_rejected() {
        let err = ElementGeom::straight(
            42,
            ShapeType::Quad,
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]],
        )
        .unwrap_err();
        match err {
            Error::InvalidElement { id, .. } => assert_eq!(id, 42),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn curved_edge_passes_through_nodes() {
        let g = parabolic_quad(0.3, 3);
        let mid = g.x_map([0.0, 1.0]).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-14);
        assert!((mid[1] - 1.075).abs() < 1e-14);
        assert!(g.is_curved());
        assert_eq!(g.geom_order(), 2);
    }

    #[test]
    fn curved_area_matches_polygon_refinement() {
        let a = 0.3;
        let g = parabolic_quad(a, 3);
        // polygonal oracle: fine polyline along the parabola plus the straight sides
        let n = 20000;
        let mut poly = vec![[0.0, 0.0], [1.0, 0.0]];
        for i in 0..=n {
            let x = 1.0 - i as f64 / n as f64;
            poly.push([x, 1.0 + a * x * (1.0 - x)]);
        }
        let mut area = 0.0;
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            area += p[0] * q[1] - q[0] * p[1];
        }
        let area = area / 2.0;
        assert!((g.area().unwrap() - area).abs() < 1e-6);
        let exp = std_expansion(ShapeType::Quad, BasisType::ModifiedA, 4).unwrap();
        let gf = g.geom_factors(&exp).unwrap();
        let (lo, hi) = gf
            .det
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &d| (l.min(d), h.max(d)));
        assert!(hi - lo > 1e-3);
    }

    #[test]
    fn self_intersecting_curve_is_rejected() {
        // the top edge dives below the bottom edge
        let top: Vec<[f64; 2]> = gll_nodes(3)
            .iter()
            .map(|&s| {
                let x = (1.0 - s) / 2.0;
                [x, 1.0 - 12.0 * x * (1.0 - x)]
            })
            .collect();
        let r = ElementGeom::new(
            3,
            ShapeType::Quad,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![None, None, Some(top), None],
        );
        assert!(matches!(r, Err(Error::InvalidElement { id: 3, .. })));
    }

    #[test]
    fn world_derivatives_on_affine_elements() {
        let tri = ElementGeom::straight(
            0,
            ShapeType::Tri,
            vec![[0.0, 0.0], [2.0, 0.3], [0.4, 1.5]],
        )
        .unwrap();
        let quad = ElementGeom::straight(
            1,
            ShapeType::Quad,
            vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        for g in [tri, quad] {
            let exp = std_expansion(g.shape(), BasisType::ModifiedA, 4).unwrap();
            let gf = g.geom_factors(&exp).unwrap();
            let x: Vec<f64> = gf.points.iter().map(|p| p[0]).collect();
            let d = phys_deriv_world(&exp, &gf, &x).unwrap();
            assert!(d[0].iter().all(|v| (v - 1.0).abs() < 1e-10));
            assert!(d[1].iter().all(|v| v.abs() < 1e-10));
            let r2: Vec<f64> = gf.points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
            let d = phys_deriv_world(&exp, &gf, &r2).unwrap();
            for (k, p) in gf.points.iter().enumerate() {
                assert!((d[0][k] - 2.0 * p[0]).abs() < 1e-10);
                assert!((d[1][k] - 2.0 * p[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn world_derivative_on_curved_element() {
        let g = parabolic_quad(0.2, 3);
        let exp = std_expansion(ShapeType::Quad, BasisType::ModifiedA, 8).unwrap();
        let gf = g.geom_factors(&exp).unwrap();
        let u: Vec<f64> = gf.points.iter().map(|p| p[0].sin()).collect();
        let d = phys_deriv_world(&exp, &gf, &u).unwrap();
        for (k, p) in gf.points.iter().enumerate() {
            assert!((d[0][k] - p[0].cos()).abs() < 1e-6);
            assert!(d[1][k].abs() < 1e-6);
        }
    }

    #[test]
    fn edge_normals_point_outward() {
        let g = unit_square();
        let expect = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        for (e, n) in expect.iter().enumerate() {
            for p in g.edge_points(e, &[-0.5, 0.5]).unwrap() {
                assert!((p.normal[0] - n[0]).abs() < 1e-14 && (p.normal[1] - n[1]).abs() < 1e-14);
                assert!((p.jac - 0.5).abs() < 1e-14);
            }
        }
        let t = ElementGeom::straight(0, ShapeType::Tri, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        let h = t.edge_points(1, &[0.0]).unwrap()[0];
        let r = 0.5f64.sqrt();
        assert!((h.normal[0] - r).abs() < 1e-14 && (h.normal[1] - r).abs() < 1e-14);
        assert!((h.jac - 2f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((h.x[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn enclosing_circle_diameters() {
        assert!((unit_square().diameter() - 2f64.sqrt()).abs() < 1e-14);
        // obtuse triangle: diameter is the longest side
        let d = min_enclosing_diameter(&[[0.0, 0.0], [4.0, 0.0], [2.0, 0.5]]);
        assert!((d - 4.0).abs() < 1e-14);
        // equilateral triangle: circumcircle
        let s3 = 3f64.sqrt();
        let d = min_enclosing_diameter(&[[0.0, 0.0], [1.0, 0.0], [0.5, s3 / 2.0]]);
        assert!((d - 2.0 / s3).abs() < 1e-14);
    }
}
