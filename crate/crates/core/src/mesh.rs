//! Finite-element mesh, Lip-mesh and the edge graph.
//!
//! The displacement lives on [`FeMesh`], a conforming mesh of linear
//! triangles. Damage is stored per element and interpolated linearly on the
//! [`LipMesh`], the triangulation of the element centroids. Vertex `i` of the
//! Lip-mesh is the centroid of FE element `i`.
//!
//! The Lip-mesh is the Delaunay triangulation of the centroids with every
//! triangle removed that reaches outside the FE domain: triangles with an edge
//! touching an FE boundary edge, triangles containing an FE boundary node and
//! triangles whose centroid is outside the domain. Holes, notches and
//! concave corners of the FE mesh are therefore never bridged.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

pub type Point = [f64; 2];

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("cannot read mesh file: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format version {0} (only ASCII MSH 2.2 is read)")]
    UnsupportedFormat(String),
    #[error("element {id}: unsupported element type {kind}")]
    UnsupportedElement { id: usize, kind: i64 },
    #[error("element {element}: zero area")]
    ZeroArea { element: usize },
    #[error("non-conforming mesh: {0}")]
    NonConforming(String),
    #[error("nodes {a} and {b} coincide")]
    DuplicateNode { a: usize, b: usize },
    #[error("fewer than 3 centroids ({0}) to build a Lip-mesh")]
    TooFewCentroids(usize),
    #[error("degenerate centroid configuration: {0}")]
    Degenerate(String),
    #[error("invalid triangulation: {0}")]
    InvalidTriangulation(String),
}

#[inline]
pub(crate) fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

#[inline]
pub(crate) fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn triangle_area(p: [Point; 3]) -> f64 {
    0.5 * cross(p[0], p[1], p[2])
}

fn centroid(p: [Point; 3]) -> Point {
    [
        (p[0][0] + p[1][0] + p[2][0]) / 3.0,
        (p[0][1] + p[1][1] + p[2][1]) / 3.0,
    ]
}

/// Closed-segment intersection test, touching and collinear overlap included.
fn segments_touch(p: Point, q: Point, a: Point, b: Point, eps: f64) -> bool {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let d3 = cross(p, q, a);
    let d4 = cross(p, q, b);
    let sgn = |v: f64| {
        if v > eps {
            1
        } else if v < -eps {
            -1
        } else {
            0
        }
    };
    let (s1, s2, s3, s4) = (sgn(d1), sgn(d2), sgn(d3), sgn(d4));
    if s1 * s2 < 0 && s3 * s4 < 0 {
        return true;
    }
    let on_segment = |s: Point, e: Point, r: Point| {
        r[0] >= s[0].min(e[0]) - eps
            && r[0] <= s[0].max(e[0]) + eps
            && r[1] >= s[1].min(e[1]) - eps
            && r[1] <= s[1].max(e[1]) + eps
    };
    (s1 == 0 && on_segment(a, b, p))
        || (s2 == 0 && on_segment(a, b, q))
        || (s3 == 0 && on_segment(p, q, a))
        || (s4 == 0 && on_segment(p, q, b))
}

fn point_in_triangle(p: Point, t: [Point; 3], eps: f64) -> bool {
    cross(t[0], t[1], p) >= -eps && cross(t[1], t[2], p) >= -eps && cross(t[2], t[0], p) >= -eps
}

/// Uniform bucket grid over axis-aligned boxes, for proximity queries.
struct BucketGrid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn new(lo: Point, hi: Point, item_count: usize) -> Self {
        let w = (hi[0] - lo[0]).max(1e-300);
        let h = (hi[1] - lo[1]).max(1e-300);
        let target = (item_count.max(1) as f64).sqrt().ceil().max(1.0);
        let cell = (w.max(h) / target).max(w.min(h) / target).max(1e-300);
        let nx = ((w / cell).ceil() as usize).clamp(1, 4096);
        let ny = ((h / cell).ceil() as usize).clamp(1, 4096);
        let cell = (w / nx as f64).max(h / ny as f64);
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        }
    }

    fn range(&self, lo: Point, hi: Point) -> (usize, usize, usize, usize) {
        let clampi = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v as usize).min(n - 1)
            }
        };
        (
            clampi((lo[0] - self.origin[0]) / self.cell, self.nx),
            clampi((hi[0] - self.origin[0]) / self.cell, self.nx),
            clampi((lo[1] - self.origin[1]) / self.cell, self.ny),
            clampi((hi[1] - self.origin[1]) / self.cell, self.ny),
        )
    }

    fn insert(&mut self, item: usize, lo: Point, hi: Point) {
        let (i0, i1, j0, j1) = self.range(lo, hi);
        for j in j0..=j1 {
            for i in i0..=i1 {
                self.buckets[j * self.nx + i].push(item);
            }
        }
    }

    /// Items whose boxes may overlap `[lo, hi]`, deduplicated and sorted.
    fn query(&self, lo: Point, hi: Point) -> Vec<usize> {
        let (i0, i1, j0, j1) = self.range(lo, hi);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.extend_from_slice(&self.buckets[j * self.nx + i]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn bbox_of(points: impl IntoIterator<Item = Point>) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// A boundary edge oriented with the domain on its left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub element: usize,
    /// Physical tag from the mesh file, 0 when the edge carries no line element.
    pub tag: i32,
}

/// A closed chain of boundary edges. Outer boundaries have positive signed
/// area, holes negative.
#[derive(Debug, Clone)]
pub struct BoundaryLoop {
    pub edges: Vec<usize>,
    pub signed_area: f64,
}

impl BoundaryLoop {
    pub fn is_hole(&self) -> bool {
        self.signed_area < 0.0
    }
}

/// A 2-node line element as read from file, before matching to the boundary.
#[derive(Debug, Clone, Copy)]
pub struct TaggedLine {
    pub nodes: [usize; 2],
    pub tag: i32,
}

#[derive(Debug, Clone)]
pub struct FeMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    centroids: Vec<Point>,
    boundary: Vec<BoundaryEdge>,
    loops: Vec<BoundaryLoop>,
    physical_names: BTreeMap<i32, String>,
}

impl FeMesh {
    /// Builds and validates a mesh. Clockwise triangles are reordered, nodes
    /// not referenced by any triangle are dropped.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        lines: Vec<TaggedLine>,
        physical_names: BTreeMap<i32, String>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::NonConforming("mesh has no triangles".into()));
        }
        for (e, t) in triangles.iter().enumerate() {
            if t.iter().any(|&n| n >= nodes.len()) {
                return Err(MeshError::NonConforming(format!(
                    "element {e} references a missing node"
                )));
            }
        }

        // Compact away unused nodes.
        let mut remap = vec![usize::MAX; nodes.len()];
        let mut kept = Vec::new();
        for t in &triangles {
            for &n in t {
                if remap[n] == usize::MAX {
                    remap[n] = kept.len();
                    kept.push(n);
                }
            }
        }
        kept.sort_unstable();
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let nodes: Vec<Point> = kept.iter().map(|&i| nodes[i]).collect();
        let mut triangles: Vec<[usize; 3]> = triangles
            .iter()
            .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
            .collect();
        let mut line_nodes = Vec::with_capacity(lines.len());
        for l in &lines {
            let a = *remap.get(l.nodes[0]).unwrap_or(&usize::MAX);
            let b = *remap.get(l.nodes[1]).unwrap_or(&usize::MAX);
            if a == usize::MAX || b == usize::MAX {
                return Err(MeshError::NonConforming(format!(
                    "line element {:?} (tag {}) does not lie on any triangle",
                    l.nodes, l.tag
                )));
            }
            line_nodes.push(([a, b], l.tag));
        }

        let (lo, hi) = bbox_of(nodes.iter().copied());
        let diag = distance(lo, hi);
        let area_tol = 1e-14 * diag * diag;

        let mut areas = Vec::with_capacity(triangles.len());
        let mut centroids = Vec::with_capacity(triangles.len());
        for (e, t) in triangles.iter_mut().enumerate() {
            let p = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
            let mut a = triangle_area(p);
            if a.abs() <= area_tol {
                return Err(MeshError::ZeroArea { element: e });
            }
            if a < 0.0 {
                t.swap(1, 2);
                a = -a;
            }
            areas.push(a);
            centroids.push(centroid(p));
        }

        let mut edge_use: HashMap<(usize, usize), Vec<(usize, usize, usize)>> = HashMap::new();
        for (e, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edge_use
                    .entry((a.min(b), a.max(b)))
                    .or_default()
                    .push((e, a, b));
            }
        }
        let mut boundary = Vec::new();
        let mut boundary_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut keys: Vec<_> = edge_use.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let uses = &edge_use[&key];
            match uses.len() {
                1 => {
                    let (e, a, b) = uses[0];
                    boundary_index.insert(key, boundary.len());
                    boundary.push(BoundaryEdge {
                        nodes: [a, b],
                        element: e,
                        tag: 0,
                    });
                }
                2 => {
                    if uses[0].1 == uses[1].1 {
                        return Err(MeshError::NonConforming(format!(
                            "elements {} and {} overlap along edge {:?}",
                            uses[0].0, uses[1].0, key
                        )));
                    }
                }
                n => {
                    return Err(MeshError::NonConforming(format!(
                        "edge {key:?} shared by {n} triangles"
                    )))
                }
            }
        }
        for ([a, b], tag) in line_nodes {
            match boundary_index.get(&(a.min(b), a.max(b))) {
                Some(&i) => boundary[i].tag = tag,
                None => {
                    return Err(MeshError::NonConforming(format!(
                        "line element ({a}, {b}) with tag {tag} is not a boundary edge"
                    )))
                }
            }
        }

        let mut on_boundary = vec![false; nodes.len()];
        for b in &boundary {
            on_boundary[b.nodes[0]] = true;
            on_boundary[b.nodes[1]] = true;
        }
        check_duplicates(&nodes, &on_boundary, 1e-12 * diag)?;
        check_hanging(&nodes, &boundary, &on_boundary, lo, hi, 1e-10 * diag)?;
        let loops = chain_loops(&nodes, &boundary)?;

        Ok(Self {
            nodes,
            triangles,
            areas,
            centroids,
            boundary,
            loops,
            physical_names,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn boundary_loops(&self) -> &[BoundaryLoop] {
        &self.loops
    }

    pub fn hole_loops(&self) -> impl Iterator<Item = &BoundaryLoop> {
        self.loops.iter().filter(|l| l.is_hole())
    }

    pub fn physical_names(&self) -> &BTreeMap<i32, String> {
        &self.physical_names
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bbox_of(self.nodes.iter().copied())
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        distance(lo, hi)
    }

    /// Resolves a tag given either as a number or as a physical name.
    pub fn resolve_tag(&self, tag: &str) -> Option<i32> {
        let tag = tag.trim();
        if let Ok(v) = tag.parse::<i32>() {
            return self.boundary.iter().any(|b| b.tag == v).then_some(v);
        }
        let name = tag.trim_matches('"');
        self.physical_names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(&k, _)| k)
            .filter(|k| self.boundary.iter().any(|b| b.tag == *k))
    }

    /// Sorted unique nodes on boundary edges carrying `tag`.
    pub fn nodes_with_tag(&self, tag: i32) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary
            .iter()
            .filter(|b| b.tag == tag)
            .flat_map(|b| b.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Gradients of the three linear shape functions of element `e` (1/mm).
    pub fn shape_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[e];
        let [p0, p1, p2] = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
        let two_a = 2.0 * self.areas[e];
        [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ]
    }

    /// Index of the node closest to `p`.
    pub fn nearest_node(&self, p: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &q) in self.nodes.iter().enumerate() {
            let d = distance(p, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn write_msh<W: Write>(&self, w: W) -> io::Result<()> {
        let lines: Vec<([usize; 2], i32)> = self
            .boundary
            .iter()
            .filter(|b| b.tag != 0)
            .map(|b| (b.nodes, b.tag))
            .collect();
        write_msh(w, &self.nodes, &self.triangles, &lines, &self.physical_names)
    }
}

fn check_duplicates(nodes: &[Point], on_boundary: &[bool], tol: f64) -> Result<(), MeshError> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        nodes[a][0]
            .partial_cmp(&nodes[b][0])
            .unwrap_or(Ordering::Equal)
            .then(nodes[a][1].partial_cmp(&nodes[b][1]).unwrap_or(Ordering::Equal))
    });
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if nodes[j][0] - nodes[i][0] > tol {
                break;
            }
            if distance(nodes[i], nodes[j]) <= tol && !(on_boundary[i] && on_boundary[j]) {
                return Err(MeshError::DuplicateNode {
                    a: i.min(j),
                    b: i.max(j),
                });
            }
        }
    }
    Ok(())
}

fn check_hanging(
    nodes: &[Point],
    boundary: &[BoundaryEdge],
    on_boundary: &[bool],
    lo: Point,
    hi: Point,
    tol: f64,
) -> Result<(), MeshError> {
    let bnodes: Vec<usize> = (0..nodes.len()).filter(|&i| on_boundary[i]).collect();
    let mut grid = BucketGrid::new(lo, hi, bnodes.len());
    for &n in &bnodes {
        grid.insert(n, nodes[n], nodes[n]);
    }
    for b in boundary {
        let (p, q) = (nodes[b.nodes[0]], nodes[b.nodes[1]]);
        let len = distance(p, q);
        let (blo, bhi) = bbox_of([p, q]);
        for n in grid.query(blo, bhi) {
            if n == b.nodes[0] || n == b.nodes[1] {
                continue;
            }
            let r = nodes[n];
            if distance(r, p) <= tol || distance(r, q) <= tol {
                continue;
            }
            let t = ((r[0] - p[0]) * (q[0] - p[0]) + (r[1] - p[1]) * (q[1] - p[1])) / (len * len);
            if t > 0.0 && t < 1.0 && (cross(p, q, r) / len).abs() <= tol {
                return Err(MeshError::NonConforming(format!(
                    "node {n} hangs on boundary edge {:?}",
                    b.nodes
                )));
            }
        }
    }
    Ok(())
}

fn chain_loops(nodes: &[Point], boundary: &[BoundaryEdge]) -> Result<Vec<BoundaryLoop>, MeshError> {
    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, b) in boundary.iter().enumerate() {
        outgoing.entry(b.nodes[0]).or_default().push(i);
    }
    let mut used = vec![false; boundary.len()];
    let mut loops = Vec::new();
    for start in 0..boundary.len() {
        if used[start] {
            continue;
        }
        let mut edges = vec![start];
        used[start] = true;
        let first = boundary[start].nodes[0];
        let mut at = boundary[start].nodes[1];
        while at != first {
            let next = outgoing
                .get(&at)
                .and_then(|v| v.iter().copied().find(|&e| !used[e]))
                .ok_or_else(|| {
                    MeshError::NonConforming(format!("boundary is not closed at node {at}"))
                })?;
            used[next] = true;
            edges.push(next);
            at = boundary[next].nodes[1];
        }
        let signed_area = 0.5
            * edges
                .iter()
                .map(|&e| {
                    let [a, b] = boundary[e].nodes;
                    nodes[a][0] * nodes[b][1] - nodes[b][0] * nodes[a][1]
                })
                .sum::<f64>();
        loops.push(BoundaryLoop { edges, signed_area });
    }
    Ok(loops)
}

/// Reads an ASCII MSH 2.2 file: `$Nodes`, `$Elements` (3-node triangles and
/// 2-node lines; point elements are skipped) and optional `$PhysicalNames`.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<FeMesh, MeshError> {
    let text = fs::read_to_string(path)?;
    parse_msh(&text)
}

pub fn parse_msh(text: &str) -> Result<FeMesh, MeshError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut node_ids: HashMap<i64, usize> = HashMap::new();
    let mut nodes: Vec<Point> = Vec::new();
    let mut triangles = Vec::new();
    let mut tagged = Vec::new();
    let mut names = BTreeMap::new();
    let mut seen_format = false;
    let mut pending_elements: Vec<(usize, i64, i32, Vec<i64>)> = Vec::new();

    let perr = |line: usize, message: String| MeshError::Parse {
        line: line + 1,
        message,
    };
    let count_line = |i: usize| -> Result<usize, MeshError> {
        lines
            .get(i)
            .ok_or_else(|| perr(i, "unexpected end of file".into()))?
            .trim()
            .parse::<usize>()
            .map_err(|_| perr(i, "expected an entry count".into()))
    };

    while i < lines.len() {
        let head = lines[i].trim();
        match head {
            "" => {
                i += 1;
            }
            "$MeshFormat" => {
                let spec = lines
                    .get(i + 1)
                    .ok_or_else(|| perr(i, "truncated $MeshFormat".into()))?;
                let mut it = spec.split_whitespace();
                let version = it.next().unwrap_or("");
                let file_type = it.next().unwrap_or("");
                if !version.starts_with("2.2") {
                    return Err(MeshError::UnsupportedFormat(version.to_string()));
                }
                if file_type != "0" {
                    return Err(MeshError::UnsupportedFormat(format!("{version} (binary)")));
                }
                seen_format = true;
                i = expect_end(&lines, i + 2, "$EndMeshFormat")?;
            }
            "$PhysicalNames" => {
                let n = count_line(i + 1)?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let l = lines
                        .get(li)
                        .ok_or_else(|| perr(li, "truncated $PhysicalNames".into()))?;
                    let mut it = l.splitn(3, char::is_whitespace);
                    let _dim = it.next();
                    let tag: i32 = it
                        .next()
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| perr(li, "bad physical tag".into()))?;
                    let name = it.next().unwrap_or("").trim().trim_matches('"').to_string();
                    names.insert(tag, name);
                }
                i = expect_end(&lines, i + 2 + n, "$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let n = count_line(i + 1)?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let l = lines.get(li).ok_or_else(|| perr(li, "truncated $Nodes".into()))?;
                    let v: Vec<&str> = l.split_whitespace().collect();
                    if v.len() < 3 {
                        return Err(perr(li, "node line needs id x y [z]".into()));
                    }
                    let id: i64 = v[0].parse().map_err(|_| perr(li, "bad node id".into()))?;
                    let x: f64 = v[1].parse().map_err(|_| perr(li, "bad x coordinate".into()))?;
                    let y: f64 = v[2].parse().map_err(|_| perr(li, "bad y coordinate".into()))?;
                    if node_ids.insert(id, nodes.len()).is_some() {
                        return Err(perr(li, format!("node id {id} repeated")));
                    }
                    nodes.push([x, y]);
                }
                i = expect_end(&lines, i + 2 + n, "$EndNodes")?;
            }
            "$Elements" => {
                let n = count_line(i + 1)?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let l = lines
                        .get(li)
                        .ok_or_else(|| perr(li, "truncated $Elements".into()))?;
                    let v: Vec<i64> = l
                        .split_whitespace()
                        .map(|s| s.parse::<i64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| perr(li, "non-integer entry in element line".into()))?;
                    if v.len() < 3 {
                        return Err(perr(li, "element line too short".into()));
                    }
                    let id = v[0].max(0) as usize;
                    let kind = v[1];
                    let ntags = v[2].max(0) as usize;
                    if v.len() < 3 + ntags {
                        return Err(perr(li, "element tags truncated".into()));
                    }
                    let physical = if ntags > 0 { v[3] as i32 } else { 0 };
                    let conn = v[3 + ntags..].to_vec();
                    let expected = match kind {
                        1 => 2,
                        2 => 3,
                        15 => 1,
                        _ => return Err(MeshError::UnsupportedElement { id, kind }),
                    };
                    if conn.len() != expected {
                        return Err(perr(
                            li,
                            format!("element {id} of type {kind} needs {expected} nodes"),
                        ));
                    }
                    pending_elements.push((li, kind, physical, conn));
                }
                i = expect_end(&lines, i + 2 + n, "$EndElements")?;
            }
            s if s.starts_with('$') => {
                let end = format!("$End{}", &s[1..]);
                let mut j = i + 1;
                while j < lines.len() && lines[j].trim() != end {
                    j += 1;
                }
                if j == lines.len() {
                    return Err(perr(i, format!("section {s} is not closed")));
                }
                i = j + 1;
            }
            _ => return Err(perr(i, format!("unexpected content '{head}'"))),
        }
    }
    if !seen_format {
        return Err(perr(0, "missing $MeshFormat section".into()));
    }
    let lookup = |li: usize, id: i64| -> Result<usize, MeshError> {
        node_ids
            .get(&id)
            .copied()
            .ok_or_else(|| perr(li, format!("unknown node id {id}")))
    };
    for (li, kind, physical, conn) in pending_elements {
        match kind {
            1 => tagged.push(TaggedLine {
                nodes: [lookup(li, conn[0])?, lookup(li, conn[1])?],
                tag: physical,
            }),
            2 => triangles.push([
                lookup(li, conn[0])?,
                lookup(li, conn[1])?,
                lookup(li, conn[2])?,
            ]),
            _ => {}
        }
    }
    FeMesh::new(nodes, triangles, tagged, names)
}

fn expect_end(lines: &[&str], at: usize, marker: &str) -> Result<usize, MeshError> {
    match lines.get(at) {
        Some(l) if l.trim() == marker => Ok(at + 1),
        _ => Err(MeshError::Parse {
            line: at + 1,
            message: format!("expected {marker}"),
        }),
    }
}

/// Writes an ASCII MSH 2.2 file with 3-node triangles and tagged 2-node lines.
pub fn write_msh<W: Write>(
    mut w: W,
    nodes: &[Point],
    triangles: &[[usize; 3]],
    lines: &[([usize; 2], i32)],
    names: &BTreeMap<i32, String>,
) -> io::Result<()> {
    writeln!(w, "$MeshFormat\n2.2 0 8\n$EndMeshFormat")?;
    if !names.is_empty() {
        writeln!(w, "$PhysicalNames\n{}", names.len())?;
        for (tag, name) in names {
            let dim = if lines.iter().any(|l| l.1 == *tag) { 1 } else { 2 };
            writeln!(w, "{dim} {tag} \"{name}\"")?;
        }
        writeln!(w, "$EndPhysicalNames")?;
    }
    writeln!(w, "$Nodes\n{}", nodes.len())?;
    for (i, p) in nodes.iter().enumerate() {
        writeln!(w, "{} {:.17e} {:.17e} 0", i + 1, p[0], p[1])?;
    }
    writeln!(w, "$EndNodes\n$Elements\n{}", lines.len() + triangles.len())?;
    let mut id = 1;
    for (l, tag) in lines {
        writeln!(w, "{id} 1 2 {tag} {tag} {} {}", l[0] + 1, l[1] + 1)?;
        id += 1;
    }
    for t in triangles {
        writeln!(w, "{id} 2 2 1 1 {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        id += 1;
    }
    writeln!(w, "$EndElements")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipEdge {
    pub vertices: [usize; 2],
    pub length: f64,
}

/// Triangulation of the element centroids carrying the piecewise-linear
/// damage field.
#[derive(Debug, Clone)]
pub struct LipMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    gradient_rows: Vec<[[f64; 3]; 2]>,
    edges: Vec<LipEdge>,
    vertex_triangles: Vec<Vec<usize>>,
}

impl LipMesh {
    /// Wraps an explicit triangulation. Clockwise triangles are reordered.
    pub fn from_triangulation(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        let (lo, hi) = bbox_of(vertices.iter().copied());
        let diag = distance(lo, hi);
        let mut areas = Vec::with_capacity(triangles.len());
        let mut gradient_rows = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= n) || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::InvalidTriangulation(format!(
                    "triangle {k} has invalid vertices {t:?}"
                )));
            }
            let mut a = triangle_area([vertices[t[0]], vertices[t[1]], vertices[t[2]]]);
            if a.abs() <= 1e-14 * diag * diag {
                return Err(MeshError::InvalidTriangulation(format!(
                    "triangle {k} is degenerate"
                )));
            }
            if a < 0.0 {
                t.swap(1, 2);
                a = -a;
            }
            let [p0, p1, p2] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            let two_a = 2.0 * a;
            gradient_rows.push([
                [
                    (p1[1] - p2[1]) / two_a,
                    (p2[1] - p0[1]) / two_a,
                    (p0[1] - p1[1]) / two_a,
                ],
                [
                    (p2[0] - p1[0]) / two_a,
                    (p0[0] - p2[0]) / two_a,
                    (p1[0] - p0[0]) / two_a,
                ],
            ]);
            areas.push(a);
        }
        let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut vertex_triangles = vec![Vec::new(); n];
        for (k, t) in triangles.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (t[j], t[(j + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
                vertex_triangles[t[j]].push(k);
            }
        }
        if let Some((e, c)) = edge_count.iter().find(|(_, &c)| c > 2) {
            return Err(MeshError::InvalidTriangulation(format!(
                "edge {e:?} shared by {c} triangles"
            )));
        }
        let edges = edge_count
            .keys()
            .map(|&(a, b)| LipEdge {
                vertices: [a, b],
                length: distance(vertices[a], vertices[b]),
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            areas,
            gradient_rows,
            edges,
            vertex_triangles,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn edges(&self) -> &[LipEdge] {
        &self.edges
    }

    /// Triangles incident to vertex `v`.
    pub fn star(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    /// Rows mapping the three vertex values of triangle `t` to the constant
    /// gradient of their linear interpolant: `[row_x, row_y]`.
    pub fn gradient_rows(&self, t: usize) -> [[f64; 3]; 2] {
        self.gradient_rows[t]
    }

    pub fn gradient(&self, t: usize, field: &[f64]) -> [f64; 2] {
        let tri = self.triangles[t];
        let rows = self.gradient_rows[t];
        let v = [field[tri[0]], field[tri[1]], field[tri[2]]];
        [
            rows[0][0] * v[0] + rows[0][1] * v[1] + rows[0][2] * v[2],
            rows[1][0] * v[0] + rows[1][1] * v[1] + rows[1][2] * v[2],
        ]
    }

    pub fn gradient_norm(&self, t: usize, field: &[f64]) -> f64 {
        let g = self.gradient(t, field);
        (g[0] * g[0] + g[1] * g[1]).sqrt()
    }

    /// Index of the vertex closest to `p`.
    pub fn nearest_vertex(&self, p: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &q) in self.vertices.iter().enumerate() {
            let d = distance(p, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn write_msh<W: Write>(&self, w: W) -> io::Result<()> {
        write_msh(w, &self.vertices, &self.triangles, &[], &BTreeMap::new())
    }
}

#[derive(Clone, Copy)]
struct Centroid {
    position: Point2<f64>,
    index: usize,
}

impl HasPosition for Centroid {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.position
    }
}

/// Builds the Lip-mesh on the centroids of `mesh`.
pub fn build_lip_mesh(mesh: &FeMesh) -> Result<LipMesh, MeshError> {
    let n = mesh.element_count();
    if n < 3 {
        return Err(MeshError::TooFewCentroids(n));
    }
    let mut dt: DelaunayTriangulation<Centroid> = DelaunayTriangulation::new();
    for (index, c) in mesh.centroids().iter().enumerate() {
        dt.insert(Centroid {
            position: Point2::new(c[0], c[1]),
            index,
        })
        .map_err(|e| MeshError::Degenerate(format!("centroid {index}: {e:?}")))?;
    }
    if dt.num_vertices() != n {
        return Err(MeshError::Degenerate("two elements share a centroid".into()));
    }
    if dt.num_inner_faces() == 0 {
        return Err(MeshError::Degenerate("all centroids are collinear".into()));
    }

    let nodes = mesh.nodes();
    let diag = mesh.diagonal();
    let eps = 1e-12 * diag * diag;
    let (lo, hi) = mesh.bounding_box();
    let boundary = mesh.boundary_edges();
    let mut seg_grid = BucketGrid::new(lo, hi, boundary.len());
    for (i, b) in boundary.iter().enumerate() {
        let (blo, bhi) = bbox_of([nodes[b.nodes[0]], nodes[b.nodes[1]]]);
        seg_grid.insert(i, blo, bhi);
    }
    let mut elem_grid = BucketGrid::new(lo, hi, n);
    for (e, t) in mesh.triangles().iter().enumerate() {
        let (tlo, thi) = bbox_of(t.iter().map(|&k| nodes[k]));
        elem_grid.insert(e, tlo, thi);
    }
    let inside_domain = |p: Point| -> bool {
        elem_grid.query(p, p).into_iter().any(|e| {
            let t = mesh.triangles()[e];
            point_in_triangle(p, [nodes[t[0]], nodes[t[1]], nodes[t[2]]], eps)
        })
    };

    let cents = mesh.centroids();
    let mut triangles = Vec::new();
    for face in dt.inner_faces() {
        let vs = face.vertices();
        let tri = [vs[0].data().index, vs[1].data().index, vs[2].data().index];
        let p = [cents[tri[0]], cents[tri[1]], cents[tri[2]]];
        let (tlo, thi) = bbox_of(p);
        let mut keep = inside_domain(centroid(p));
        if keep {
            for bi in seg_grid.query(tlo, thi) {
                let b = boundary[bi];
                let (a, bb) = (nodes[b.nodes[0]], nodes[b.nodes[1]]);
                let crosses = (0..3).any(|k| segments_touch(p[k], p[(k + 1) % 3], a, bb, eps));
                if crosses || point_in_triangle(a, p, -eps) || point_in_triangle(bb, p, -eps) {
                    keep = false;
                    break;
                }
            }
        }
        if keep {
            triangles.push(tri);
        }
    }
    triangles.sort_unstable();
    LipMesh::from_triangulation(cents.to_vec(), triangles)
}

/// Adjacency of Lip vertices along Lip-mesh edges, weighted by edge length.
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    links: Vec<(usize, f64)>,
}

#[derive(Copy, Clone, PartialEq)]
struct Tentative {
    dist: f64,
    vertex: usize,
}

impl Eq for Tentative {}

impl Ord for Tentative {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap, ties by vertex for determinism
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Tentative {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl EdgeGraph {
    pub fn from_edges(vertex_count: usize, edges: &[LipEdge]) -> Self {
        let mut degree = vec![0usize; vertex_count + 1];
        for e in edges {
            degree[e.vertices[0] + 1] += 1;
            degree[e.vertices[1] + 1] += 1;
        }
        for i in 0..vertex_count {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut links = vec![(0, 0.0); offsets[vertex_count]];
        for e in edges {
            let [a, b] = e.vertices;
            links[fill[a]] = (b, e.length);
            fill[a] += 1;
            links[fill[b]] = (a, e.length);
            fill[b] += 1;
        }
        for v in 0..vertex_count {
            links[offsets[v]..offsets[v + 1]].sort_by_key(|l| l.0);
        }
        Self { offsets, links }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.links.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.links[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Single-source shortest path lengths along edges; unreachable vertices
    /// get `f64::INFINITY`.
    pub fn shortest_paths(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.vertex_count()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Tentative {
            dist: 0.0,
            vertex: source,
        });
        while let Some(Tentative { dist: d, vertex }) = heap.pop() {
            if d > dist[vertex] {
                continue;
            }
            for &(next, w) in self.neighbors(vertex) {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Tentative {
                        dist: nd,
                        vertex: next,
                    });
                }
            }
        }
        dist
    }
}

pub fn edge_graph(lip: &LipMesh) -> EdgeGraph {
    EdgeGraph::from_edges(lip.vertex_count(), lip.edges())
}
