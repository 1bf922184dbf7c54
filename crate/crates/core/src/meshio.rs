//! Hierarchical mesh container (NMJ v1 JSON), element dual graph and
//! graph-growing partitioner.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::ElementGeom;
use crate::stdregions::ShapeType;

/// An element or segment reference: `(kind, id)`.
pub type ElementRef = (ShapeType, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composite {
    pub kind: ShapeType,
    pub ids: Vec<u32>,
}

/// Topological mesh: vertices → segments → faces, plus curvature and groupings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshGraph {
    pub vertices: BTreeMap<u32, [f64; 3]>,
    pub segments: BTreeMap<u32, [u32; 2]>,
    pub tris: BTreeMap<u32, [u32; 3]>,
    pub quads: BTreeMap<u32, [u32; 4]>,
    /// High-order nodes of curved segments, from vertex 0 to vertex 1 (GLL spaced).
    pub curves: BTreeMap<u32, Vec<[f64; 3]>>,
    pub composites: BTreeMap<u32, Composite>,
    pub domain: Vec<u32>,
    pub boundary: BTreeMap<String, Vec<u32>>,
}

impl MeshGraph {
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.vertices.len(),
            self.segments.len(),
            self.tris.len(),
            self.quads.len(),
        )
    }

    /// Segment ids bounding an element, in local edge order.
    pub fn element_edges(&self, el: ElementRef) -> Result<Vec<u32>> {
        let missing = || Error::Mesh(format!("no {} with id {}", el.0.name(), el.1));
        match el.0 {
            ShapeType::Tri => Ok(self.tris.get(&el.1).ok_or_else(missing)?.to_vec()),
            ShapeType::Quad => Ok(self.quads.get(&el.1).ok_or_else(missing)?.to_vec()),
            ShapeType::Seg => Err(Error::Mesh("segments have no edges".into())),
        }
    }

    /// Element vertices: local vertex `i` is shared by local edges `i-1` and `i`.
    pub fn element_vertices(&self, el: ElementRef) -> Result<Vec<u32>> {
        let edges = self.element_edges(el)?;
        let segs: Vec<[u32; 2]> = edges
            .iter()
            .map(|e| {
                self.segments.get(e).copied().ok_or(Error::DanglingId {
                    kind: "seg",
                    id: *e,
                    from: format!("{} {}", el.0.name(), el.1),
                })
            })
            .collect::<Result<_>>()?;
        let n = segs.len();
        let mut verts = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (segs[(i + n - 1) % n], segs[i]);
            let common: Vec<u32> = a.iter().filter(|v| b.contains(v)).copied().collect();
            if common.len() != 1 {
                return Err(Error::Mesh(format!(
                    "{} {}: edges {} and {} do not meet at a single vertex",
                    el.0.name(),
                    el.1,
                    edges[(i + n - 1) % n],
                    edges[i]
                )));
            }
            verts.push(common[0]);
        }
        for i in 0..n {
            let s = segs[i];
            let (v0, v1) = (verts[i], verts[(i + 1) % n]);
            if !((s[0] == v0 && s[1] == v1) || (s[0] == v1 && s[1] == v0)) {
                return Err(Error::Mesh(format!(
                    "{} {}: edges do not form a closed loop",
                    el.0.name(),
                    el.1
                )));
            }
        }
        Ok(verts)
    }

    /// Whether local edge `i` runs along its segment's stored direction.
    pub fn edge_orientations(&self, el: ElementRef) -> Result<Vec<bool>> {
        let edges = self.element_edges(el)?;
        let verts = self.element_vertices(el)?;
        Ok(edges
            .iter()
            .enumerate()
            .map(|(i, e)| self.segments[e][0] == verts[i])
            .collect())
    }

    /// Domain elements in `(kind, id)` order.
    pub fn domain_elements(&self) -> Vec<ElementRef> {
        let mut set = BTreeSet::new();
        for c in &self.domain {
            if let Some(comp) = self.composites.get(c) {
                for &id in &comp.ids {
                    set.insert((comp.kind, id));
                }
            }
        }
        set.into_iter().collect()
    }

    /// Segments belonging to a named boundary region.
    pub fn boundary_segments(&self, name: &str) -> Result<Vec<u32>> {
        let comps = self
            .boundary
            .get(name)
            .ok_or_else(|| Error::Mesh(format!("no boundary region '{name}'")))?;
        let mut out = BTreeSet::new();
        for c in comps {
            let comp = &self.composites[c];
            out.extend(comp.ids.iter().copied());
        }
        Ok(out.into_iter().collect())
    }

    /// Physical geometry of an element (curves oriented along local edges).
    pub fn element_geom(&self, el: ElementRef) -> Result<ElementGeom> {
        let verts = self.element_vertices(el)?;
        let edges = self.element_edges(el)?;
        let orient = self.edge_orientations(el)?;
        let coords: Vec<[f64; 2]> = verts
            .iter()
            .map(|v| {
                let p = self.vertices[v];
                [p[0], p[1]]
            })
            .collect();
        let curves = edges
            .iter()
            .zip(&orient)
            .map(|(e, &fwd)| {
                self.curves.get(e).map(|pts| {
                    let mut c: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
                    if !fwd {
                        c.reverse();
                    }
                    c
                })
            })
            .collect();
        ElementGeom::new(el.1, el.0, coords, curves)
    }

    /// Checks referential integrity and face closure.
    pub fn validate(&self) -> Result<()> {
        for (&id, s) in &self.segments {
            for v in s {
                if !self.vertices.contains_key(v) {
                    return Err(Error::DanglingId {
                        kind: "vert",
                        id: *v,
                        from: format!("seg {id}"),
                    });
                }
            }
            if s[0] == s[1] {
                return Err(Error::Mesh(format!("seg {id} is degenerate")));
            }
        }
        for &id in self.tris.keys() {
            self.element_vertices((ShapeType::Tri, id))?;
        }
        for &id in self.quads.keys() {
            self.element_vertices((ShapeType::Quad, id))?;
        }
        for (&id, pts) in &self.curves {
            if !self.segments.contains_key(&id) {
                return Err(Error::DanglingId {
                    kind: "seg",
                    id,
                    from: "curves".into(),
                });
            }
            if pts.len() < 2 {
                return Err(Error::Mesh(format!("curve of seg {id} has fewer than 2 points")));
            }
        }
        for (&cid, comp) in &self.composites {
            for &id in &comp.ids {
                let exists = match comp.kind {
                    ShapeType::Seg => self.segments.contains_key(&id),
                    ShapeType::Tri => self.tris.contains_key(&id),
                    ShapeType::Quad => self.quads.contains_key(&id),
                };
                if !exists {
                    return Err(Error::DanglingId {
                        kind: comp.kind.name(),
                        id,
                        from: format!("composite {cid}"),
                    });
                }
            }
        }
        if self.domain.is_empty() {
            return Err(Error::Mesh("domain list is empty".into()));
        }
        for &c in &self.domain {
            match self.composites.get(&c) {
                None => {
                    return Err(Error::DanglingId {
                        kind: "composite",
                        id: c,
                        from: "domain".into(),
                    })
                }
                Some(comp) if comp.kind == ShapeType::Seg => {
                    return Err(Error::Mesh(format!("domain composite {c} holds segments")))
                }
                _ => {}
            }
        }
        for (name, comps) in &self.boundary {
            for &c in comps {
                match self.composites.get(&c) {
                    None => {
                        return Err(Error::DanglingId {
                            kind: "composite",
                            id: c,
                            from: format!("boundary '{name}'"),
                        })
                    }
                    Some(comp) if comp.kind != ShapeType::Seg => {
                        return Err(Error::Mesh(format!(
                            "boundary '{name}' composite {c} does not hold segments"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Canonical NMJ v1 text.
    pub fn to_nmj_string(&self) -> Result<String> {
        let mut v = Value::Null;
        self.to_value(&mut v)?;
        let mut out = String::new();
        write_canonical(&v, 0, &mut out);
        out.push('\n');
        Ok(out)
    }

    fn to_value(&self, out: &mut Value) -> Result<()> {
        let coord = |p: &[f64; 3]| -> Result<Value> {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Mesh(format!("non-finite coordinate {p:?}")));
            }
            Ok(json!(p))
        };
        let verts: Vec<Value> = self.vertices.values().map(coord).collect::<Result<_>>()?;
        let mut curves = Vec::new();
        for (id, pts) in &self.curves {
            let pts: Vec<Value> = pts.iter().map(coord).collect::<Result<_>>()?;
            curves.push(json!({"id": id, "points": pts}));
        }
        let mut comps = Map::new();
        for (id, c) in &self.composites {
            let mut ids = c.ids.clone();
            ids.sort_unstable();
            comps.insert(id.to_string(), json!({"kind": c.kind.name(), "ids": ids}));
        }
        let mut domain = self.domain.clone();
        domain.sort_unstable();
        let boundary: Map<String, Value> = self
            .boundary
            .iter()
            .map(|(k, v)| {
                let mut v = v.clone();
                v.sort_unstable();
                (k.clone(), json!(v))
            })
            .collect();
        *out = json!({
            "version": 1,
            "mesh": {
                "vert": verts,
                "seg": self.segments.values().collect::<Vec<_>>(),
                "tri": self.tris.values().collect::<Vec<_>>(),
                "quad": self.quads.values().collect::<Vec<_>>(),
            },
            "maps": {
                "vert": self.vertices.keys().collect::<Vec<_>>(),
                "seg": self.segments.keys().collect::<Vec<_>>(),
                "tri": self.tris.keys().collect::<Vec<_>>(),
                "quad": self.quads.keys().collect::<Vec<_>>(),
            },
            "curves": {"seg": curves},
            "composites": comps,
            "domain": domain,
            "boundary": boundary,
        });
        Ok(())
    }

    /// The NMJ v1 document as a JSON value.
    pub fn to_json_value(&self) -> Result<Value> {
        let mut v = Value::Null;
        self.to_value(&mut v)?;
        Ok(v)
    }

    /// Parses and validates NMJ v1 text.
    pub fn from_nmj_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: NmjFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_file(file)
    }

    /// Parses and validates an NMJ v1 document held as a JSON value.
    pub fn from_json_value(v: Value) -> Result<Self> {
        let file: NmjFile = serde_path_to_error::deserialize(v).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_file(file)
    }

    fn from_file(file: NmjFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::Schema {
                path: "version".into(),
                message: format!("unsupported version {}", file.version),
            });
        }
        fn zip<T: Copy>(
            name: &str,
            rows: &[T],
            ids: &[u32],
        ) -> Result<BTreeMap<u32, T>> {
            if rows.len() != ids.len() {
                return Err(Error::Schema {
                    path: format!("maps.{name}"),
                    message: format!("{} ids for {} rows", ids.len(), rows.len()),
                });
            }
            let mut out = BTreeMap::new();
            for (i, (&id, row)) in ids.iter().zip(rows).enumerate() {
                if out.insert(id, *row).is_some() {
                    return Err(Error::Schema {
                        path: format!("maps.{name}[{i}]"),
                        message: format!("duplicate id {id}"),
                    });
                }
            }
            Ok(out)
        }
        let mut mesh = MeshGraph {
            vertices: zip("vert", &file.mesh.vert, &file.maps.vert)?,
            segments: zip("seg", &file.mesh.seg, &file.maps.seg)?,
            tris: zip("tri", &file.mesh.tri, &file.maps.tri)?,
            quads: zip("quad", &file.mesh.quad, &file.maps.quad)?,
            domain: file.domain,
            boundary: file.boundary,
            ..Default::default()
        };
        for (i, c) in file.curves.seg.into_iter().enumerate() {
            if mesh.curves.insert(c.id, c.points).is_some() {
                return Err(Error::Schema {
                    path: format!("curves.seg[{i}]"),
                    message: format!("duplicate curve for seg {}", c.id),
                });
            }
        }
        for (key, c) in file.composites {
            let id: u32 = key.parse().map_err(|_| Error::Schema {
                path: format!("composites.{key}"),
                message: "composite keys must be integer ids".into(),
            })?;
            mesh.composites.insert(id, Composite { kind: c.kind, ids: c.ids });
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_nmj_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_nmj_string()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NmjFile {
    version: u32,
    mesh: NmjMesh,
    maps: NmjMaps,
    #[serde(default)]
    curves: NmjCurves,
    #[serde(default)]
    composites: BTreeMap<String, NmjComposite>,
    domain: Vec<u32>,
    #[serde(default)]
    boundary: BTreeMap<String, Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NmjMesh {
    #[serde(default)]
    vert: Vec<[f64; 3]>,
    #[serde(default)]
    seg: Vec<[u32; 2]>,
    #[serde(default)]
    tri: Vec<[u32; 3]>,
    #[serde(default)]
    quad: Vec<[u32; 4]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NmjMaps {
    #[serde(default)]
    vert: Vec<u32>,
    #[serde(default)]
    seg: Vec<u32>,
    #[serde(default)]
    tri: Vec<u32>,
    #[serde(default)]
    quad: Vec<u32>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NmjCurves {
    #[serde(default)]
    seg: Vec<NmjCurve>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NmjCurve {
    id: u32,
    points: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NmjComposite {
    kind: ShapeType,
    ids: Vec<u32>,
}

/// Deterministic pretty printer: sorted keys (serde_json's default map),
/// two-space indentation, scalar arrays inline, floats with 17 significant digits.
pub(crate) fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_canonical(x, indent, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, x) in items.iter().enumerate() {
                pad(indent + 2, out);
                write_canonical(x, indent + 2, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                pad(indent + 2, out);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_canonical(x, indent + 2, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push('}');
        }
        Value::Number(n) if n.is_f64() => {
            let _ = write!(out, "{:.16e}", n.as_f64().unwrap_or(0.0));
        }
        other => out.push_str(&other.to_string()),
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

/// Element adjacency through shared segments.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub nodes: Vec<ElementRef>,
    /// Sorted neighbour lists.
    pub adjacency: Vec<Vec<usize>>,
}

impl DualGraph {
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Self {
        let nodes = (0..adjacency.len() as u32).map(|i| (ShapeType::Quad, i)).collect();
        DualGraph { nodes, adjacency }
    }
}

pub fn build_dual_graph(mesh: &MeshGraph) -> Result<DualGraph> {
    let nodes = mesh.domain_elements();
    let mut by_seg: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &el) in nodes.iter().enumerate() {
        for s in mesh.element_edges(el)? {
            by_seg.entry(s).or_default().push(i);
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
    for els in by_seg.values() {
        for &a in els {
            for &b in els {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    Ok(DualGraph {
        nodes,
        adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Part index per graph node.
    pub parts: Vec<usize>,
    pub sizes: Vec<usize>,
    pub edge_cut: usize,
}

pub fn edge_cut(graph: &DualGraph, parts: &[usize]) -> usize {
    graph
        .adjacency
        .iter()
        .enumerate()
        .flat_map(|(a, nb)| nb.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| a < b && parts[a] != parts[b])
        .count()
}

/// Greedy graph-growing partition into `k` parts of sizes ⌊n/k⌋ or ⌈n/k⌉.
pub fn partition(graph: &DualGraph, k: usize) -> Result<Partition> {
    let n = graph.nodes.len();
    if k == 0 || k > n {
        return Err(Error::Partition(format!(
            "cannot split {n} elements into {k} parts"
        )));
    }
    const UNASSIGNED: usize = usize::MAX;
    let mut parts = vec![UNASSIGNED; n];
    let mut sizes = Vec::with_capacity(k);
    for p in 0..k {
        let target = n / k + usize::from(p < n % k);
        let mut size = 0;
        let mut in_frontier = vec![false; n];
        let mut frontier: Vec<usize> = Vec::new();
        while size < target {
            // pick the frontier node most connected to the growing part
            let next = if frontier.is_empty() {
                pseudo_peripheral(graph, &parts, UNASSIGNED)
            } else {
                let (pos, _) = frontier
                    .iter()
                    .enumerate()
                    .max_by_key(|&(pos, &v)| {
                        let inside = graph.adjacency[v].iter().filter(|&&w| parts[w] == p).count();
                        let outside =
                            graph.adjacency[v].iter().filter(|&&w| parts[w] == UNASSIGNED).count();
                        // deterministic tie-break: earliest entry
                        (inside as i64 * 2 - outside as i64, std::cmp::Reverse(pos))
                    })
                    .unwrap();
                frontier.swap_remove(pos)
            };
            parts[next] = p;
            size += 1;
            for &w in &graph.adjacency[next] {
                if parts[w] == UNASSIGNED && !in_frontier[w] {
                    in_frontier[w] = true;
                    frontier.push(w);
                }
            }
            frontier.retain(|&w| parts[w] == UNASSIGNED);
        }
        sizes.push(size);
    }
    let cut = edge_cut(graph, &parts);
    Ok(Partition {
        parts,
        sizes,
        edge_cut: cut,
    })
}

/// A node far from the others in the unassigned subgraph (repeated BFS sweeps).
fn pseudo_peripheral(graph: &DualGraph, parts: &[usize], free: usize) -> usize {
    let start = parts.iter().position(|&p| p == free).expect("unassigned node");
    let bfs_far = |s: usize| -> (usize, usize) {
        let mut dist = vec![usize::MAX; parts.len()];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        let mut last = s;
        while let Some(v) = q.pop_front() {
            last = v;
            for &w in &graph.adjacency[v] {
                if parts[w] == free && dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
            }
        }
        (last, dist[last])
    };
    let (mut node, mut ecc) = bfs_far(start);
    for _ in 0..4 {
        let (far, d) = bfs_far(node);
        if d <= ecc {
            break;
        }
        node = far;
        ecc = d;
    }
    node
}

/// Elements of other parts adjacent to part `i`.
pub fn ghost_elements(graph: &DualGraph, parts: &[usize], i: usize) -> Vec<ElementRef> {
    let mut out = BTreeSet::new();
    for (a, nb) in graph.adjacency.iter().enumerate() {
        if parts[a] == i {
            for &b in nb {
                if parts[b] != i {
                    out.insert(graph.nodes[b]);
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Sub-mesh holding the elements of part `i` and their closure.
pub fn extract_partition(
    mesh: &MeshGraph,
    graph: &DualGraph,
    parts: &[usize],
    i: usize,
) -> Result<MeshGraph> {
    let elements: BTreeSet<ElementRef> = graph
        .nodes
        .iter()
        .zip(parts)
        .filter(|(_, &p)| p == i)
        .map(|(&e, _)| e)
        .collect();
    if elements.is_empty() {
        return Err(Error::Partition(format!("part {i} is empty")));
    }
    let mut sub = MeshGraph::default();
    for &el in &elements {
        match el.0 {
            ShapeType::Tri => {
                sub.tris.insert(el.1, mesh.tris[&el.1]);
            }
            ShapeType::Quad => {
                sub.quads.insert(el.1, mesh.quads[&el.1]);
            }
            ShapeType::Seg => {}
        }
        for s in mesh.element_edges(el)? {
            let seg = mesh.segments[&s];
            sub.segments.insert(s, seg);
            for v in seg {
                sub.vertices.insert(v, mesh.vertices[&v]);
            }
            if let Some(c) = mesh.curves.get(&s) {
                sub.curves.insert(s, c.clone());
            }
        }
    }
    for (&cid, comp) in &mesh.composites {
        let ids: Vec<u32> = comp
            .ids
            .iter()
            .copied()
            .filter(|id| match comp.kind {
                ShapeType::Seg => sub.segments.contains_key(id),
                kind => elements.contains(&(kind, *id)),
            })
            .collect();
        if !ids.is_empty() {
            sub.composites.insert(cid, Composite { kind: comp.kind, ids });
        }
    }
    sub.domain = mesh
        .domain
        .iter()
        .copied()
        .filter(|c| sub.composites.contains_key(c))
        .collect();
    for (name, comps) in &mesh.boundary {
        let kept: Vec<u32> = comps
            .iter()
            .copied()
            .filter(|c| sub.composites.contains_key(c))
            .collect();
        if !kept.is_empty() {
            sub.boundary.insert(name.clone(), kept);
        }
    }
    sub.validate()?;
    Ok(sub)
}

/// Structured `nx × ny` mesh of `[x0,x1] × [y0,y1]` with quads, or triangles when
/// `triangles` is set (each cell split along its anti-diagonal).
///
/// Composite 0 holds the elements; composites 1–4 hold the bottom, right, top and
/// left boundary segments, exposed as boundary regions of the same names.
pub fn structured_mesh(
    nx: usize,
    ny: usize,
    x: [f64; 2],
    y: [f64; 2],
    triangles: bool,
) -> Result<MeshGraph> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("structured mesh needs nx, ny >= 1".into()));
    }
    let mut m = MeshGraph::default();
    let vid = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    for j in 0..=ny {
        for i in 0..=nx {
            let px = x[0] + (x[1] - x[0]) * i as f64 / nx as f64;
            let py = y[0] + (y[1] - y[0]) * j as f64 / ny as f64;
            m.vertices.insert(vid(i, j), [px, py, 0.0]);
        }
    }
    let n_h = nx * (ny + 1);
    let n_v = (nx + 1) * ny;
    let hid = |i: usize, j: usize| (j * nx + i) as u32;
    let vsid = |i: usize, j: usize| (n_h + j * (nx + 1) + i) as u32;
    let did = |i: usize, j: usize| (n_h + n_v + j * nx + i) as u32;
    for j in 0..=ny {
        for i in 0..nx {
            m.segments.insert(hid(i, j), [vid(i, j), vid(i + 1, j)]);
        }
    }
    for j in 0..ny {
        for i in 0..=nx {
            m.segments.insert(vsid(i, j), [vid(i, j), vid(i, j + 1)]);
        }
    }
    let mut elements = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let cell = (j * nx + i) as u32;
            if triangles {
                m.segments.insert(did(i, j), [vid(i + 1, j), vid(i, j + 1)]);
                m.tris.insert(2 * cell, [hid(i, j), did(i, j), vsid(i, j)]);
                m.tris.insert(2 * cell + 1, [vsid(i + 1, j), hid(i, j + 1), did(i, j)]);
                elements.extend([2 * cell, 2 * cell + 1]);
            } else {
                m.quads
                    .insert(cell, [hid(i, j), vsid(i + 1, j), hid(i, j + 1), vsid(i, j)]);
                elements.push(cell);
            }
        }
    }
    let kind = if triangles { ShapeType::Tri } else { ShapeType::Quad };
    m.composites.insert(0, Composite { kind, ids: elements });
    let sides: [(u32, &str, Vec<u32>); 4] = [
        (1, "bottom", (0..nx).map(|i| hid(i, 0)).collect()),
        (2, "right", (0..ny).map(|j| vsid(nx, j)).collect()),
        (3, "top", (0..nx).map(|i| hid(i, ny)).collect()),
        (4, "left", (0..ny).map(|j| vsid(0, j)).collect()),
    ];
    for (cid, name, ids) in sides {
        m.composites.insert(cid, Composite { kind: ShapeType::Seg, ids });
        m.boundary.insert(name.to_string(), vec![cid]);
    }
    m.domain = vec![0];
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SINGLE_QUAD: &str = r#"{
  "version": 1,
  "mesh": {
    "vert": [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
    "seg": [[0, 1], [1, 2], [2, 3], [3, 0]],
    "quad": [[0, 1, 2, 3]]
  },
  "maps": {"vert": [0, 1, 2, 3], "seg": [0, 1, 2, 3], "quad": [0]},
  "composites": {"0": {"kind": "quad", "ids": [0]}, "1": {"kind": "seg", "ids": [0, 1, 2, 3]}},
  "domain": [0],
  "boundary": {"wall": [1]}
}"#;

    #[test]
    fn single_quad_counts() {
        let m = MeshGraph::from_nmj_str(SINGLE_QUAD).unwrap();
        assert_eq!(m.counts(), (4, 4, 0, 1));
        assert_eq!(m.element_vertices((ShapeType::Quad, 0)).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let text = SINGLE_QUAD.replace("\"domain\": [0]", "\"domain\": []");
        assert!(matches!(MeshGraph::from_nmj_str(&text), Err(Error::Mesh(_))));
    }

    #[test]
    fn dangling_segment_is_named() {
        let text = SINGLE_QUAD.replace("\"quad\": [[0, 1, 2, 3]]", "\"quad\": [[0, 1, 2, 9]]");
        match MeshGraph::from_nmj_str(&text).unwrap_err() {
            Error::DanglingId { kind, id, .. } => assert_eq!((kind, id), ("seg", 9)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let text = SINGLE_QUAD.replace("[1.0, 1.0, 0.0]", "[1.0, \"a\", 0.0]");
        match MeshGraph::from_nmj_str(&text).unwrap_err() {
            Error::Schema { path, .. } => assert!(path.starts_with("mesh.vert"), "{path}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn canonical_roundtrip_is_byte_identical() {
        let m = MeshGraph::from_nmj_str(SINGLE_QUAD).unwrap();
        let a = m.to_nmj_string().unwrap();
        let b = MeshGraph::from_nmj_str(&a).unwrap().to_nmj_string().unwrap();
        assert_eq!(a, b);
        assert!(!a.contains('\r'));
        let m2 = structured_mesh(3, 2, [0.0, 0.3], [-1.0, 1.0 / 3.0], true).unwrap();
        let back = MeshGraph::from_nmj_str(&m2.to_nmj_string().unwrap()).unwrap();
        assert_eq!(back, m2);
    }

    #[test]
    fn open_face_is_rejected() {
        let mut m = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        // swap an edge of quad 0 for a segment of quad 1
        let q1 = m.quads[&1];
        m.quads.get_mut(&0).unwrap()[1] = q1[1];
        assert!(m.validate().is_err());
    }

    #[test]
    fn dual_graph_examples() {
        let one = structured_mesh(1, 1, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let g = build_dual_graph(&one).unwrap();
        assert_eq!((g.nodes.len(), g.num_edges()), (1, 0));
        let two = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        assert_eq!(build_dual_graph(&two).unwrap().num_edges(), 1);
        let nine = structured_mesh(3, 3, [0.0, 3.0], [0.0, 3.0], false).unwrap();
        let g = build_dual_graph(&nine).unwrap();
        // oracle: count horizontally and vertically adjacent cell pairs
        let expected = 2 * 3 * (3 - 1);
        assert_eq!(g.num_edges(), expected);
        for (a, nb) in g.adjacency.iter().enumerate() {
            for &b in nb {
                assert!(g.adjacency[b].contains(&a));
            }
        }
    }

    #[test]
    fn partition_examples() {
        let path = DualGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]]);
        let p = partition(&path, 2).unwrap();
        assert_eq!(p.sizes, vec![2, 2]);
        assert_eq!(p.edge_cut, 1);
        let p1 = partition(&path, 1).unwrap();
        assert!(p1.parts.iter().all(|&x| x == 0));
        assert!(partition(&path, 0).is_err());
        assert!(partition(&path, 5).is_err());
    }

    #[test]
    fn structured_partitions_are_balanced() {
        let m = structured_mesh(16, 16, [0.0, 1.0], [0.0, 1.0], false).unwrap();
        let g = build_dual_graph(&m).unwrap();
        for k in [2, 4, 8] {
            let p = partition(&g, k).unwrap();
            let bound = (1.1 * 256.0 / k as f64).ceil() as usize;
            assert!(p.sizes.iter().all(|&s| s <= bound));
            assert_eq!(p.sizes.iter().sum::<usize>(), 256);
            assert_eq!(p.edge_cut, edge_cut(&g, &p.parts));
        }
    }

    #[test]
    fn extraction_keeps_closure() {
        let m = structured_mesh(2, 1, [0.0, 2.0], [0.0, 1.0], false).unwrap();
        let g = build_dual_graph(&m).unwrap();
        let whole = extract_partition(&m, &g, &[0, 0], 0).unwrap();
        assert_eq!(whole.to_nmj_string().unwrap(), m.to_nmj_string().unwrap());
        let p = partition(&g, 2).unwrap();
        let a = extract_partition(&m, &g, &p.parts, 0).unwrap();
        let b = extract_partition(&m, &g, &p.parts, 1).unwrap();
        assert_eq!((a.quads.len(), b.quads.len()), (1, 1));
        let shared: Vec<_> = a.segments.keys().filter(|s| b.segments.contains_key(s)).collect();
        assert_eq!(shared.len(), 1);
        assert!(extract_partition(&m, &g, &[0, 0], 1).is_err());
        assert_eq!(ghost_elements(&g, &p.parts, 0).len(), 1);
    }

    #[test]
    fn element_geometry_from_mesh() {
        let m = structured_mesh(2, 2, [0.0, 2.0], [0.0, 2.0], true).unwrap();
        let mut area = 0.0;
        for el in m.domain_elements() {
            area += m.element_geom(el).unwrap().area().unwrap();
        }
        assert!((area - 4.0).abs() < 1e-12);
    }
}
