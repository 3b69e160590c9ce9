//! Small fixture meshes for tests and examples: structured rectangles, a
//! square plate pierced by a circular hole, a notched strip and a strip cut
//! in two halves along its mid-line.
//!
//! Boundary tags follow one convention everywhere: 1 bottom, 2 right, 3 top,
//! 4 left, 5 hole or notch faces.

use std::collections::BTreeMap;

use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::mesh::{cross, FeMesh, MeshError, Point, TaggedLine};

pub const BOTTOM: i32 = 1;
pub const RIGHT: i32 = 2;
pub const TOP: i32 = 3;
pub const LEFT: i32 = 4;
pub const HOLE: i32 = 5;
/// Crack faces of the split strip, upper and lower half.
pub const CRACK_UPPER: i32 = 6;
pub const CRACK_LOWER: i32 = 7;
/// Left ends of the split strip, upper and lower half.
pub const LEFT_UPPER: i32 = 8;
pub const LEFT_LOWER: i32 = 9;

fn default_names() -> BTreeMap<i32, String> {
    [
        (BOTTOM, "bottom"),
        (RIGHT, "right"),
        (TOP, "top"),
        (LEFT, "left"),
        (HOLE, "hole"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect()
}

/// Builds the mesh, then tags every boundary edge with `classify(a, b)`.
/// Edges classified as 0 stay untagged.
fn tagged(
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    names: BTreeMap<i32, String>,
    classify: impl Fn(Point, Point) -> i32,
) -> Result<FeMesh, MeshError> {
    let bare = FeMesh::new(nodes, triangles, vec![], BTreeMap::new())?;
    let lines: Vec<TaggedLine> = bare
        .boundary_edges()
        .iter()
        .filter_map(|b| {
            let tag = classify(bare.nodes()[b.nodes[0]], bare.nodes()[b.nodes[1]]);
            (tag != 0).then_some(TaggedLine {
                nodes: b.nodes,
                tag,
            })
        })
        .collect();
    let used: BTreeMap<i32, String> = names
        .into_iter()
        .filter(|(k, _)| lines.iter().any(|l| l.tag == *k))
        .collect();
    FeMesh::new(
        bare.nodes().to_vec(),
        bare.triangles().to_vec(),
        lines,
        used,
    )
}

fn box_classifier(lo: Point, hi: Point) -> impl Fn(Point, Point) -> i32 {
    let tol = 1e-9 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    move |a: Point, b: Point| {
        let both = |f: &dyn Fn(Point) -> bool| f(a) && f(b);
        if both(&|p| (p[1] - lo[1]).abs() < tol) {
            BOTTOM
        } else if both(&|p| (p[0] - hi[0]).abs() < tol) {
            RIGHT
        } else if both(&|p| (p[1] - hi[1]).abs() < tol) {
            TOP
        } else if both(&|p| (p[0] - lo[0]).abs() < tol) {
            LEFT
        } else {
            HOLE
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonals {
    /// Every cell split along the same diagonal.
    Uniform,
    /// Diagonal direction alternating like a checkerboard, so each interior
    /// vertex of an even grid has the same star on both sides of both axes.
    Checkerboard,
}

fn grid_triangles(nx: usize, ny: usize, diag: Diagonals, id: impl Fn(usize, usize) -> usize) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let flip = diag == Diagonals::Checkerboard && (i + j) % 2 == 1;
            if flip {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            } else {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
    }
    tris
}

/// Structured `nx × ny` rectangle with two triangles per cell.
pub fn rectangle(
    origin: Point,
    size: [f64; 2],
    cells: [usize; 2],
    diag: Diagonals,
) -> Result<FeMesh, MeshError> {
    let [nx, ny] = cells;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([
                origin[0] + size[0] * i as f64 / nx as f64,
                origin[1] + size[1] * j as f64 / ny as f64,
            ]);
        }
    }
    let tris = grid_triangles(nx, ny, diag, |i, j| j * (nx + 1) + i);
    let hi = [origin[0] + size[0], origin[1] + size[1]];
    tagged(nodes, tris, default_names(), box_classifier(origin, hi))
}

/// Delaunay mesh of a point cloud; triangles whose centroid fails `keep` are
/// dropped.
fn delaunay_mesh(points: &[Point], keep: impl Fn(Point) -> bool) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(points.len());
    for p in points {
        let h = dt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| MeshError::Degenerate(format!("{e:?}")))?;
        handles.push(h);
    }
    if dt.num_vertices() != points.len() {
        return Err(MeshError::Degenerate("duplicate generator points".into()));
    }
    let mut index = vec![usize::MAX; points.len()];
    for (i, h) in handles.iter().enumerate() {
        index[h.index()] = i;
    }
    let mut tris = Vec::new();
    for face in dt.inner_faces() {
        let v = face.vertices();
        let t = [index[v[0].fix().index()], index[v[1].fix().index()], index[v[2].fix().index()]];
        let p = [points[t[0]], points[t[1]], points[t[2]]];
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        if keep(c) && cross(p[0], p[1], p[2]).abs() > 1e-12 {
            tris.push(t);
        }
    }
    tris.sort_unstable();
    Ok(tris)
}

/// Square plate of side `side` centered at the origin, pierced by a centered
/// hole of radius `radius`; target edge length `h` everywhere.
pub fn plate_with_hole(side: f64, radius: f64, h: f64) -> Result<FeMesh, MeshError> {
    let half = 0.5 * side;
    let mut pts: Vec<Point> = Vec::new();
    let n_side = (side / h).round().max(1.0) as usize;
    for k in 0..n_side {
        let t = -half + side * k as f64 / n_side as f64;
        pts.push([t, -half]);
        pts.push([half, t]);
        pts.push([-t, half]);
        pts.push([-half, -t]);
    }
    let n_hole = ((2.0 * std::f64::consts::PI * radius / h).round() as usize).max(8);
    for k in 0..n_hole {
        let a = 2.0 * std::f64::consts::PI * k as f64 / n_hole as f64;
        pts.push([radius * a.cos(), radius * a.sin()]);
    }
    // hexagonal lattice, kept clear of the boundaries
    let gap = 0.6 * h;
    let dy = h * 3f64.sqrt() / 2.0;
    let rows = (side / dy).ceil() as i64;
    for r in -rows..=rows {
        let y = r as f64 * dy;
        let shift = if r.rem_euclid(2) == 1 { 0.5 * h } else { 0.0 };
        let cols = (side / h).ceil() as i64;
        for c in -cols..=cols {
            let x = c as f64 * h + shift;
            if x.abs() > half - gap || y.abs() > half - gap {
                continue;
            }
            if x.hypot(y) < radius + gap {
                continue;
            }
            pts.push([x, y]);
        }
    }
    let tris = delaunay_mesh(&pts, |c| c[0].hypot(c[1]) > radius)?;
    tagged(pts, tris, default_names(), box_classifier([-half, -half], [half, half]))
}

/// Structured strip `[0, width] × [0, height]` with a slit of length `notch`
/// rising from the middle of the bottom edge. `cells[0]` must be even.
pub fn notched_strip(width: f64, height: f64, notch: f64, cells: [usize; 2]) -> Result<FeMesh, MeshError> {
    let [nx, ny] = cells;
    assert!(nx % 2 == 0, "notched strip needs an even number of columns");
    let mid = nx / 2;
    let hy = height / ny as f64;
    let slit_rows = (notch / hy).round() as usize;
    let mut nodes = Vec::new();
    let mut ids = vec![usize::MAX; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            ids[j * (nx + 1) + i] = nodes.len();
            nodes.push([width * i as f64 / nx as f64, hy * j as f64]);
        }
    }
    // duplicated column for the right lip of the slit, below the tip
    let mut twin = vec![usize::MAX; slit_rows];
    for (j, t) in twin.iter_mut().enumerate() {
        *t = nodes.len();
        nodes.push([width * mid as f64 / nx as f64, hy * j as f64]);
    }
    let id = |i: usize, j: usize, right_side: bool| -> usize {
        if i == mid && j < slit_rows && right_side {
            twin[j]
        } else {
            ids[j * (nx + 1) + i]
        }
    };
    let mut tris = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let right = i >= mid;
            let (a, b, c, d) = (id(i, j, right), id(i + 1, j, right), id(i + 1, j + 1, right), id(i, j + 1, right));
            // mirror the diagonals about the slit
            if i < mid {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            } else {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
    }
    tagged(nodes, tris, default_names(), box_classifier([0.0, 0.0], [width, height]))
}

/// Strip `[0, length] × [-half_height, half_height]` cut along `y = 0` into
/// two disconnected halves with coincident mid-line nodes. Crack faces carry
/// tags [`CRACK_UPPER`] and [`CRACK_LOWER`], the left ends [`LEFT_UPPER`] and
/// [`LEFT_LOWER`]. `cells = [nx, ny]` with `ny` rows per half.
pub fn split_strip(length: f64, half_height: f64, cells: [usize; 2]) -> Result<FeMesh, MeshError> {
    let [nx, ny] = cells;
    let mut nodes = Vec::new();
    let mut tris = Vec::new();
    for sign in [1.0, -1.0] {
        let base = nodes.len();
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([length * i as f64 / nx as f64, sign * half_height * j as f64 / ny as f64]);
            }
        }
        tris.extend(grid_triangles(nx, ny, Diagonals::Uniform, |i, j| base + j * (nx + 1) + i));
    }
    let mut names = default_names();
    names.remove(&LEFT);
    names.remove(&HOLE);
    names.insert(CRACK_UPPER, "crack_upper".into());
    names.insert(CRACK_LOWER, "crack_lower".into());
    names.insert(LEFT_UPPER, "left_upper".into());
    names.insert(LEFT_LOWER, "left_lower".into());
    let tol = 1e-9 * length.max(half_height);
    tagged(nodes, tris, names, move |a, b| {
        let mid_y = 0.5 * (a[1] + b[1]);
        if a[1].abs() < tol && b[1].abs() < tol {
            // the upper half has its domain above, so its face runs +x
            if a[0] < b[0] {
                CRACK_UPPER
            } else {
                CRACK_LOWER
            }
        } else if a[0].abs() < tol && b[0].abs() < tol {
            if mid_y > 0.0 {
                LEFT_UPPER
            } else {
                LEFT_LOWER
            }
        } else if (a[0] - length).abs() < tol && (b[0] - length).abs() < tol {
            RIGHT
        } else if mid_y > 0.0 {
            TOP
        } else {
            BOTTOM
        }
    })
}

/// Same strip as [`split_strip`] without the cut; mid-line nodes are shared.
pub fn solid_strip(length: f64, half_height: f64, cells: [usize; 2]) -> Result<FeMesh, MeshError> {
    let [nx, ny] = cells;
    let mut nodes = Vec::new();
    for j in 0..=2 * ny {
        for i in 0..=nx {
            nodes.push([
                length * i as f64 / nx as f64,
                half_height * (j as f64 / ny as f64 - 1.0),
            ]);
        }
    }
    // keep the upper half's diagonals identical to the split version
    let mut tris = Vec::new();
    for j in 0..2 * ny {
        for i in 0..nx {
            let id = |i: usize, j: usize| j * (nx + 1) + i;
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if j >= ny {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            } else {
                // mirrored copy of the lower half of the split strip
                tris.push([d, c, b]);
                tris.push([d, b, a]);
            }
        }
    }
    let mut names = default_names();
    names.remove(&LEFT);
    names.remove(&HOLE);
    names.insert(LEFT_UPPER, "left_upper".into());
    names.insert(LEFT_LOWER, "left_lower".into());
    let tol = 1e-9 * length.max(half_height);
    tagged(nodes, tris, names, move |a, b| {
        let mid_y = 0.5 * (a[1] + b[1]);
        if a[0].abs() < tol && b[0].abs() < tol {
            if mid_y > 0.0 {
                LEFT_UPPER
            } else {
                LEFT_LOWER
            }
        } else if (a[0] - length).abs() < tol && (b[0] - length).abs() < tol {
            RIGHT
        } else if mid_y > 0.0 {
            TOP
        } else {
            BOTTOM
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_lip_mesh;

    #[test]
    fn rectangle_counts_and_tags() {
        let m = rectangle([0.0, 0.0], [2.0, 1.0], [4, 2], Diagonals::Checkerboard).unwrap();
        assert_eq!(m.element_count(), 16);
        assert_eq!(m.node_count(), 15);
        assert!((m.total_area() - 2.0).abs() < 1e-12);
        assert_eq!(m.nodes_with_tag(LEFT).len(), 3);
        assert_eq!(m.nodes_with_tag(TOP).len(), 5);
        assert_eq!(m.resolve_tag("right"), Some(RIGHT));
    }

    #[test]
    fn plate_has_one_hole() {
        let m = plate_with_hole(2.0, 0.2, 0.1).unwrap();
        let holes: Vec<_> = m.hole_loops().collect();
        assert_eq!(holes.len(), 1);
        let area = 4.0 - std::f64::consts::PI * 0.04;
        assert!((m.total_area() - area).abs() < 0.01, "{}", m.total_area());
        assert!(!m.nodes_with_tag(HOLE).is_empty());
        build_lip_mesh(&m).unwrap();
    }

    #[test]
    fn notched_strip_has_slit() {
        let m = notched_strip(1.0, 0.5, 0.2, [20, 10]).unwrap();
        assert_eq!(m.element_count(), 400);
        assert_eq!(m.boundary_loops().len(), 1);
        let slit = m.nodes_with_tag(HOLE);
        assert_eq!(slit.len(), 9);
    }

    #[test]
    fn split_strip_halves() {
        let m = split_strip(4.0, 0.5, [8, 2]).unwrap();
        assert_eq!(m.boundary_loops().len(), 2);
        assert_eq!(m.nodes_with_tag(CRACK_UPPER).len(), 9);
        assert_eq!(m.nodes_with_tag(CRACK_LOWER).len(), 9);
        assert_eq!(m.nodes_with_tag(LEFT_UPPER).len(), 3);
        let s = solid_strip(4.0, 0.5, [8, 2]).unwrap();
        assert_eq!(s.element_count(), m.element_count());
    }
}
