#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use spechp::meshio::{structured_mesh, MeshGraph};
use spechp::session::{BcKind, BoundaryCondition};

pub fn bcs(mesh: &MeshGraph, kind: impl Fn(u32) -> BcKind) -> Vec<BoundaryCondition> {
    (1..=4)
        .map(|c| BoundaryCondition {
            composite: c,
            segments: mesh.composites[&c].ids.clone(),
            kind: kind(c),
        })
        .collect()
}

/// Bottom↔top and right↔left periodic pairs.
pub fn periodic(mesh: &MeshGraph) -> Vec<BoundaryCondition> {
    bcs(mesh, |c| BcKind::Periodic {
        partner: [3, 4, 1, 2][c as usize - 1],
    })
}

pub fn walls(mesh: &MeshGraph) -> Vec<BoundaryCondition> {
    bcs(mesh, |_| BcKind::Wall)
}

/// Structured mesh with interior vertices moved by up to `amp` of the spacing.
pub fn jittered(nx: usize, ny: usize, triangles: bool, amp: f64, rng: &mut impl Rng) -> MeshGraph {
    let mut m = structured_mesh(nx, ny, [0.0, 1.0], [0.0, 1.0], triangles).unwrap();
    let (hx, hy) = (1.0 / nx as f64, 1.0 / ny as f64);
    for v in m.vertices.values_mut() {
        let interior = v[0] > 1e-12 && v[0] < 1.0 - 1e-12 && v[1] > 1e-12 && v[1] < 1.0 - 1e-12;
        if interior {
            v[0] += amp * hx * rng.random_range(-1.0..1.0);
            v[1] += amp * hy * rng.random_range(-1.0..1.0);
        }
    }
    m
}

fn relabel(ids: impl Iterator<Item = u32>, rng: &mut impl Rng) -> BTreeMap<u32, u32> {
    let old: Vec<u32> = ids.collect();
    let offset = rng.random_range(0..1000u32);
    let mut new: Vec<u32> = (0..old.len() as u32).map(|i| offset + 3 * i).collect();
    new.shuffle(rng);
    old.into_iter().zip(new).collect()
}

/// A valid mesh with random size, element kind, jitter, ids and curved boundary segments.
pub fn random_mesh(rng: &mut impl Rng) -> MeshGraph {
    let nx = rng.random_range(1..=10);
    let ny = rng.random_range(1..=10);
    let tri = rng.random_bool(0.5);
    let m = jittered(nx, ny, tri, 0.2, rng);
    let vmap = relabel(m.vertices.keys().copied(), rng);
    let smap = relabel(m.segments.keys().copied(), rng);
    let tmap = relabel(m.tris.keys().copied(), rng);
    let qmap = relabel(m.quads.keys().copied(), rng);
    let mut out = MeshGraph {
        vertices: m.vertices.iter().map(|(k, v)| (vmap[k], *v)).collect(),
        segments: m.segments.iter().map(|(k, s)| (smap[k], [vmap[&s[0]], vmap[&s[1]]])).collect(),
        tris: m.tris.iter().map(|(k, e)| (tmap[k], e.map(|s| smap[&s]))).collect(),
        quads: m.quads.iter().map(|(k, e)| (qmap[k], e.map(|s| smap[&s]))).collect(),
        curves: BTreeMap::new(),
        composites: m.composites.clone(),
        domain: m.domain.clone(),
        boundary: m.boundary.clone(),
    };
    for c in out.composites.values_mut() {
        let map = match c.kind {
            spechp::stdregions::ShapeType::Seg => &smap,
            spechp::stdregions::ShapeType::Tri => &tmap,
            spechp::stdregions::ShapeType::Quad => &qmap,
        };
        c.ids = c.ids.iter().map(|i| map[i]).collect();
        c.ids.sort_unstable();
    }
    // bulge a few bottom segments outward with a three-node curve
    let bottom: Vec<u32> = out.composites[&1].ids.clone();
    for s in bottom {
        if rng.random_bool(0.3) {
            let [a, b] = out.segments[&s];
            let (pa, pb) = (out.vertices[&a], out.vertices[&b]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]) - 0.05 * (pb[0] - pa[0]).abs(), 0.0];
            out.curves.insert(s, vec![pa, mid, pb]);
        }
    }
    out
}
