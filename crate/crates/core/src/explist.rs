//! A list of physical elements with per-element order, and the packed
//! coefficient/physical layouts used by fields.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::basis::BasisType;
use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::flops;
use crate::geometry::{phys_deriv_world, ElementGeom, GeomFactors};
use crate::linalg::{dot, Cholesky};
use crate::meshio::{ElementRef, MeshGraph};
use crate::stdregions::{std_expansion, StdExpansion};

#[derive(Debug)]
pub struct Element {
    pub id: ElementRef,
    pub std: Arc<StdExpansion>,
    pub geom: ElementGeom,
    pub gf: GeomFactors,
    pub coeff_offset: usize,
    pub phys_offset: usize,
    mass: OnceLock<Result<Cholesky>>,
}

impl Element {
    pub fn order(&self) -> usize {
        self.std.order()
    }

    pub fn ncoeffs(&self) -> usize {
        self.std.num_coeffs()
    }

    pub fn npoints(&self) -> usize {
        self.std.num_points()
    }

    pub fn coeff_range(&self) -> std::ops::Range<usize> {
        self.coeff_offset..self.coeff_offset + self.ncoeffs()
    }

    pub fn phys_range(&self) -> std::ops::Range<usize> {
        self.phys_offset..self.phys_offset + self.npoints()
    }

    /// Physical mass matrix factor `∫ φ_n φ_m dx`.
    pub fn mass_cholesky(&self) -> Result<&Cholesky> {
        self.mass
            .get_or_init(|| Cholesky::factor(&self.std.weighted_mass(&self.gf.jw)))
            .as_ref()
            .map_err(|e| Error::Singular(format!("element {} mass matrix: {e}", self.id.1)))
    }

    /// Inner product with the basis over the physical element: `∫ φ_n u dx`.
    pub fn iproduct(&self, phys: &[f64]) -> Result<Vec<f64>> {
        let weighted: Vec<f64> = phys.iter().zip(&self.gf.jw).map(|(u, w)| u * w).collect();
        let mut out = vec![0.0; self.ncoeffs()];
        self.std.iproduct_sumfac_kernel(&weighted, &mut out, &mut Vec::new());
        Ok(out)
    }
}

/// Elements of a mesh, each with its own expansion order.
#[derive(Debug)]
pub struct ExpList {
    elements: Vec<Element>,
    index: BTreeMap<ElementRef, usize>,
    basis: BasisType,
    ncoeffs: usize,
    npoints: usize,
}

impl ExpList {
    pub fn uniform(mesh: &MeshGraph, order: usize, basis: BasisType) -> Result<Self> {
        Self::new(mesh, |_| order, basis)
    }

    /// Builds the list over the mesh domain with `order(element)` per element.
    pub fn new(
        mesh: &MeshGraph,
        order: impl Fn(ElementRef) -> usize,
        basis: BasisType,
    ) -> Result<Self> {
        let mut elements = Vec::new();
        let mut index = BTreeMap::new();
        let (mut co, mut po) = (0, 0);
        for el in mesh.domain_elements() {
            let p = order(el);
            let std = std_expansion(el.0, basis, p)?;
            let geom = mesh.element_geom(el)?;
            let gf = geom.geom_factors(&std)?;
            index.insert(el, elements.len());
            let (nc, np) = (std.num_coeffs(), std.num_points());
            elements.push(Element {
                id: el,
                std,
                geom,
                gf,
                coeff_offset: co,
                phys_offset: po,
                mass: OnceLock::new(),
            });
            co += nc;
            po += np;
        }
        if elements.is_empty() {
            return Err(Error::Mesh("mesh domain has no elements".into()));
        }
        Ok(ExpList {
            elements,
            index,
            basis,
            ncoeffs: co,
            npoints: po,
        })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Element {
        &self.elements[i]
    }

    pub fn position(&self, el: ElementRef) -> Option<usize> {
        self.index.get(&el).copied()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn basis(&self) -> BasisType {
        self.basis
    }

    pub fn ncoeffs(&self) -> usize {
        self.ncoeffs
    }

    pub fn npoints(&self) -> usize {
        self.npoints
    }

    pub fn orders(&self) -> Vec<usize> {
        self.elements.iter().map(Element::order).collect()
    }

    /// World coordinates of every quadrature point.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.elements
            .iter()
            .flat_map(|e| e.gf.points.iter().copied())
            .collect()
    }

    pub fn evaluate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.coords().iter().map(|p| f(p[0], p[1])).collect()
    }

    fn check(&self, context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::SizeMismatch {
                context,
                expected,
                actual,
            });
        }
        Ok(())
    }

    pub fn bwd_trans(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check("field coefficients", self.ncoeffs, coeffs.len())?;
        let mut out = vec![0.0; self.npoints];
        let mut scratch = Vec::new();
        for e in &self.elements {
            e.std
                .bwd_sumfac_kernel(&coeffs[e.coeff_range()], &mut out[e.phys_range()], &mut scratch);
        }
        Ok(out)
    }

    /// Elemental inner products `∫ φ_n u dx` (not assembled).
    pub fn iproduct(&self, phys: &[f64]) -> Result<Vec<f64>> {
        self.check("field values", self.npoints, phys.len())?;
        let mut out = vec![0.0; self.ncoeffs];
        for e in &self.elements {
            out[e.coeff_range()].copy_from_slice(&e.iproduct(&phys[e.phys_range()])?);
        }
        Ok(out)
    }

    /// Elemental inner products with basis gradients: `∫ ∇φ_n · (fx, fy) dx`.
    pub fn iproduct_deriv(&self, fx: &[f64], fy: &[f64]) -> Result<Vec<f64>> {
        self.check("field values", self.npoints, fx.len())?;
        self.check("field values", self.npoints, fy.len())?;
        let blocks: Vec<Vec<f64>> = self
            .elements
            .par_iter()
            .map(|e| {
                let r = e.phys_range();
                let (fx, fy) = (&fx[r.clone()], &fy[r]);
                let mut f1 = vec![0.0; fx.len()];
                let mut f2 = vec![0.0; fx.len()];
                for k in 0..fx.len() {
                    let g = e.gf.inv[k];
                    f1[k] = (g[0][0] * fx[k] + g[0][1] * fy[k]) * e.gf.jw[k];
                    f2[k] = (g[1][0] * fx[k] + g[1][1] * fy[k]) * e.gf.jw[k];
                }
                let d = &e.std.dense().basis_deriv;
                flops::record(2 * e.ncoeffs() * fx.len() + 6 * fx.len());
                (0..e.ncoeffs())
                    .map(|n| dot(d[0].row(n), &f1) + dot(d[1].row(n), &f2))
                    .collect()
            })
            .collect();
        Ok(blocks.concat())
    }

    /// Element-wise (discontinuous) L² projection.
    pub fn fwd_trans_local(&self, phys: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.iproduct(phys)?;
        for e in &self.elements {
            e.mass_cholesky()?.solve_in_place(&mut out[e.coeff_range()]);
        }
        Ok(out)
    }

    /// Applies the inverse elemental mass matrices in place.
    pub fn mass_solve_in_place(&self, coeffs: &mut [f64]) -> Result<()> {
        self.check("field coefficients", self.ncoeffs, coeffs.len())?;
        for e in &self.elements {
            e.mass_cholesky()?.solve_in_place(&mut coeffs[e.coeff_range()]);
        }
        Ok(())
    }

    pub fn integral(&self, phys: &[f64]) -> Result<f64> {
        self.check("field values", self.npoints, phys.len())?;
        Ok(self
            .elements
            .iter()
            .map(|e| dot(&phys[e.phys_range()], &e.gf.jw))
            .sum())
    }

    /// World-coordinate gradient at quadrature points.
    pub fn phys_deriv(&self, phys: &[f64]) -> Result<[Vec<f64>; 2]> {
        self.check("field values", self.npoints, phys.len())?;
        let mut dx = vec![0.0; self.npoints];
        let mut dy = vec![0.0; self.npoints];
        for e in &self.elements {
            let [a, b] = phys_deriv_world(&e.std, &e.gf, &phys[e.phys_range()])?;
            dx[e.phys_range()].copy_from_slice(&a);
            dy[e.phys_range()].copy_from_slice(&b);
        }
        Ok([dx, dy])
    }

    /// `sqrt(∫ (u - v)² dx)` from physical values.
    pub fn l2_diff(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).collect();
        Ok(self.integral(&d)?.max(0.0).sqrt())
    }

    /// Evaluates element `i`'s expansion at reference points.
    pub fn eval_element(&self, i: usize, coeffs: &[f64], xi: &[[f64; 2]]) -> Result<Vec<f64>> {
        let e = &self.elements[i];
        let (v, _, _) = e.std.eval_modes(xi)?;
        Ok(v.matvec_t(&coeffs[e.coeff_range()]))
    }
}
