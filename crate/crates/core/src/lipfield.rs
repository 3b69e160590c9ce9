//! Lipschitz machinery: membership checks, envelope bounds, patch extraction,
//! the constrained damage minimization and the L² Lipschitz projection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::conic::{self, NormBound, Problem, Quadratic, Separable, SolverOptions, SolverError};
use crate::material::{DamageDensity, MaterialParams, Strain2D};
use crate::mesh::{EdgeGraph, LipMesh, Point};
use crate::meshgen::{self, Diagonals};

#[derive(Debug, thiserror::Error)]
pub enum LipError {
    #[error("damage minimization failed: {0}")]
    Solver(#[from] SolverError),
    #[error("size mismatch: {what} has {got} entries, expected {expected}")]
    Size {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("damage value {value} at vertex {vertex} is outside [0, 1]")]
    OutOfRange { vertex: usize, value: f64 },
    #[error("mesh: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("degenerate benchmark: {0}")]
    Degenerate(String),
}

/// One damage value per Lip vertex, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DamageField {
    values: Vec<f64>,
}

impl DamageField {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, LipError> {
        if let Some((vertex, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(LipError::OutOfRange { vertex, value });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(1.0, f64::min)
    }

    /// Largest decrease against `previous` (positive means irreversibility is violated).
    pub fn max_decrease(&self, previous: &DamageField) -> f64 {
        self.values
            .iter()
            .zip(&previous.values)
            .map(|(a, b)| b - a)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lower and upper Lipschitz envelopes of the local damage.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsPair {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipSet {
    /// gradient norm bounded on every Lip triangle
    Lh,
    /// difference bounded along every Lip edge
    LhPlus,
}

/// Pointwise damage update on every vertex.
pub fn local_field_update(strains: &[Strain2D], d_n: &[f64], mat: &MaterialParams, tol: f64) -> Vec<f64> {
    strains
        .par_iter()
        .zip(d_n.par_iter())
        .map(|(e, &dn)| crate::material::local_damage_update(e, dn, mat, tol))
        .collect()
}

#[derive(Copy, Clone, PartialEq)]
struct Keyed {
    key: f64,
    vertex: usize,
}

impl Eq for Keyed {}

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .partial_cmp(&other.key)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Upper envelope `max_y (d(y) - dist(x, y)/l)` by a Dijkstra sweep from the
/// largest values down. The lower envelope is obtained by symmetry.
fn upper_envelope(d: &[f64], graph: &EdgeGraph, l: f64) -> Vec<f64> {
    let mut out = d.to_vec();
    let mut done = vec![false; d.len()];
    let mut heap: BinaryHeap<Keyed> = d
        .iter()
        .enumerate()
        .map(|(vertex, &key)| Keyed { key, vertex })
        .collect();
    while let Some(Keyed { key, vertex }) = heap.pop() {
        if done[vertex] || key < out[vertex] {
            continue;
        }
        done[vertex] = true;
        for &(next, len) in graph.neighbors(vertex) {
            if done[next] {
                continue;
            }
            let cand = out[vertex] - len / l;
            if cand > out[next] {
                out[next] = cand;
                heap.push(Keyed {
                    key: cand,
                    vertex: next,
                });
            }
        }
    }
    out
}

pub fn dijkstra_bounds(d_loc: &[f64], graph: &EdgeGraph, l: f64) -> BoundsPair {
    let neg: Vec<f64> = d_loc.iter().map(|v| -v).collect();
    let lower = upper_envelope(&neg, graph, l).into_iter().map(|v| -v).collect();
    BoundsPair {
        lower,
        upper: upper_envelope(d_loc, graph, l),
    }
}

/// Envelopes by exhaustive single-source shortest paths; O(n² log n).
pub fn bruteforce_bounds(d_loc: &[f64], graph: &EdgeGraph, l: f64) -> BoundsPair {
    let n = d_loc.len();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let dist = graph.shortest_paths(x);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in 0..n {
                if dist[y].is_finite() {
                    lo = lo.min(d_loc[y] + dist[y] / l);
                    hi = hi.max(d_loc[y] - dist[y] / l);
                }
            }
            (lo, hi)
        })
        .collect();
    BoundsPair {
        lower: rows.iter().map(|r| r.0).collect(),
        upper: rows.iter().map(|r| r.1).collect(),
    }
}

/// Largest `lhs - 1/l` over the constraints of `set`; `<= 0` means member.
pub fn lipschitz_check(d: &[f64], lip: &LipMesh, l: f64, set: LipSet) -> f64 {
    let worst = match set {
        LipSet::Lh => (0..lip.triangle_count())
            .map(|t| lip.gradient_norm(t, d))
            .fold(f64::NEG_INFINITY, f64::max),
        LipSet::LhPlus => lip
            .edges()
            .iter()
            .map(|e| (d[e.vertices[0]] - d[e.vertices[1]]).abs() / e.length)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    worst.max(0.0) - 1.0 / l
}

/// Largest `|d(x) - d(y)| / dist(x, y) - 1/l` over all vertex pairs, with
/// `dist` the edge-path metric. Exhaustive; for small meshes only.
pub fn pairwise_check(d: &[f64], graph: &EdgeGraph, l: f64) -> f64 {
    let n = d.len();
    let worst = (0..n)
        .into_par_iter()
        .map(|x| {
            let dist = graph.shortest_paths(x);
            (0..n)
                .filter(|&y| y != x && dist[y].is_finite())
                .map(|y| (d[x] - d[y]).abs() / dist[y])
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    worst - 1.0 / l
}

/// Active subdomain of the constrained damage problem.
#[derive(Debug, Clone)]
pub struct Patch {
    /// per vertex: frozen at its local value
    pub frozen: Vec<bool>,
    /// frozen value on frozen vertices, starting value elsewhere
    pub values: Vec<f64>,
    /// box lower bound d_n per vertex; the upper bound is 1
    pub box_lower: Vec<f64>,
}

impl Patch {
    pub fn active_vertices(&self) -> Vec<usize> {
        (0..self.frozen.len()).filter(|&v| !self.frozen[v]).collect()
    }

    /// Triangles with at least one active vertex.
    pub fn active_triangles(&self, lip: &LipMesh) -> Vec<usize> {
        (0..lip.triangle_count())
            .filter(|&t| lip.triangles()[t].iter().any(|&v| !self.frozen[v]))
            .collect()
    }

    /// Triangles whose three vertices are frozen.
    pub fn frozen_triangles(&self, lip: &LipMesh) -> Vec<usize> {
        (0..lip.triangle_count())
            .filter(|&t| lip.triangles()[t].iter().all(|&v| self.frozen[v]))
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.frozen.iter().filter(|f| !**f).count()
    }
}

pub fn extract_patch(bounds: &BoundsPair, d_loc: &[f64], d_n: &[f64], tol_eq: f64) -> Patch {
    let frozen: Vec<bool> = bounds
        .upper
        .iter()
        .zip(&bounds.lower)
        .map(|(u, l)| u - l <= tol_eq)
        .collect();
    Patch {
        frozen,
        values: d_loc.to_vec(),
        box_lower: d_n.to_vec(),
    }
}

/// Constraint blocks over the active variables. `var[v]` is the variable
/// index of vertex `v` or `usize::MAX` when frozen at `fixed[v]`.
fn lipschitz_constraints(lip: &LipMesh, l: f64, set: LipSet, var: &[usize], fixed: &[f64]) -> Vec<NormBound> {
    let mut out = Vec::new();
    match set {
        LipSet::Lh => {
            for (t, tri) in lip.triangles().iter().enumerate() {
                if tri.iter().all(|&v| var[v] == usize::MAX) {
                    continue;
                }
                let rows = lip.gradient_rows(t);
                let s = (2.0 * lip.triangle_areas()[t]).sqrt();
                let mut sparse = vec![Vec::new(), Vec::new()];
                let mut offset = vec![0.0, 0.0];
                for k in 0..2 {
                    for j in 0..3 {
                        let v = tri[j];
                        if var[v] == usize::MAX {
                            offset[k] += s * rows[k][j] * fixed[v];
                        } else {
                            sparse[k].push((var[v], s * rows[k][j]));
                        }
                    }
                }
                out.push(NormBound {
                    rows: sparse,
                    offset,
                    radius: s / l,
                });
            }
        }
        LipSet::LhPlus => {
            for e in lip.edges() {
                let [a, b] = e.vertices;
                if var[a] == usize::MAX && var[b] == usize::MAX {
                    continue;
                }
                let mut row = Vec::new();
                let mut offset = 0.0;
                for (v, c) in [(a, 1.0), (b, -1.0)] {
                    if var[v] == usize::MAX {
                        offset += c * fixed[v];
                    } else {
                        row.push((var[v], c));
                    }
                }
                out.push(NormBound {
                    rows: vec![row],
                    offset: vec![offset],
                    radius: e.length / l,
                });
            }
        }
    }
    out
}

/// Minimizes `Σ_v A_v f(ε_v, d_v)` over the active vertices of `patch`
/// subject to the Lipschitz set and the box `[d_n, 1]`; frozen vertices keep
/// their values. `areas` are the FE element areas.
pub fn constrained_damage_minimize(
    strains: &[Strain2D],
    areas: &[f64],
    patch: &Patch,
    lip: &LipMesh,
    mat: &MaterialParams,
    set: LipSet,
    opts: &SolverOptions,
) -> Result<Vec<f64>, LipError> {
    let n = lip.vertex_count();
    for (what, got) in [("strains", strains.len()), ("areas", areas.len()), ("patch", patch.frozen.len())] {
        if got != n {
            return Err(LipError::Size {
                what,
                got,
                expected: n,
            });
        }
    }
    let active = patch.active_vertices();
    let mut result = patch.values.clone();
    if active.is_empty() {
        return Ok(result);
    }
    let mut var = vec![usize::MAX; n];
    for (k, &v) in active.iter().enumerate() {
        var[v] = k;
    }
    let densities: Vec<DamageDensity> = active.iter().map(|&v| DamageDensity::new(&strains[v], mat)).collect();
    let weights: Vec<f64> = active.iter().map(|&v| areas[v]).collect();
    let objective = Separable {
        n: active.len(),
        eval: |i: usize, x: f64| {
            let (a, b, c) = densities[i].eval(x);
            (weights[i] * a, weights[i] * b, weights[i] * c)
        },
    };
    let bounds = lipschitz_constraints(lip, mat.l, set, &var, &patch.values);
    let lower: Vec<f64> = active.iter().map(|&v| patch.box_lower[v]).collect();
    let upper = vec![1.0; active.len()];
    let mut x: Vec<f64> = active
        .iter()
        .map(|&v| patch.values[v].clamp(patch.box_lower[v], 1.0))
        .collect();
    let problem = Problem {
        objective: &objective,
        bounds: &bounds,
        lower: &lower,
        upper: &upper,
    };
    conic::minimize(&problem, &mut x, opts)?;
    for (k, &v) in active.iter().enumerate() {
        result[v] = x[k].clamp(lower[k], 1.0);
    }
    Ok(result)
}

/// Full-domain minimization without patching: every vertex active.
pub fn full_domain_minimize(
    strains: &[Strain2D],
    areas: &[f64],
    d_n: &[f64],
    start: &[f64],
    lip: &LipMesh,
    mat: &MaterialParams,
    set: LipSet,
    opts: &SolverOptions,
) -> Result<Vec<f64>, LipError> {
    let patch = Patch {
        frozen: vec![false; d_n.len()],
        values: start.to_vec(),
        box_lower: d_n.to_vec(),
    };
    constrained_damage_minimize(strains, areas, &patch, lip, mat, set, opts)
}

#[derive(Debug, Clone, Copy)]
pub struct DamageOptions {
    /// tolerance of the pointwise update
    pub tol_local: f64,
    /// bound coincidence for freezing a vertex
    pub tol_eq: f64,
    /// slack on the gradient bound before a frozen triangle is released
    pub tol_release: f64,
    pub solver: SolverOptions,
}

impl Default for DamageOptions {
    fn default() -> Self {
        Self {
            tol_local: 1e-12,
            tol_eq: 1e-9,
            tol_release: 1e-8,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DamageStep {
    pub d: Vec<f64>,
    pub d_loc: Vec<f64>,
    pub bounds: BoundsPair,
    /// active vertices in the last solve
    pub active: usize,
    /// constrained solves performed, 0 when every vertex stayed frozen
    pub solves: usize,
}

/// One damage update at fixed strains: local update, envelopes, patch, then
/// constrained solves until no frozen triangle violates the gradient bound
/// and no tight bound involves a frozen vertex.
/// `start` seeds the active vertices (previous iterate or `d_loc`).
pub fn damage_step(
    strains: &[Strain2D],
    areas: &[f64],
    d_n: &[f64],
    start: Option<&[f64]>,
    lip: &LipMesh,
    graph: &EdgeGraph,
    mat: &MaterialParams,
    opts: &DamageOptions,
) -> Result<DamageStep, LipError> {
    let n = lip.vertex_count();
    if d_n.len() != n {
        return Err(LipError::Size {
            what: "d_n",
            got: d_n.len(),
            expected: n,
        });
    }
    let d_loc = local_field_update(strains, d_n, mat, opts.tol_local);
    let bounds = dijkstra_bounds(&d_loc, graph, mat.l);
    let mut patch = extract_patch(&bounds, &d_loc, d_n, opts.tol_eq);
    // frozen triangles keep d_loc, so their violations are known before solving
    let limit = 1.0 / mat.l + opts.tol_release;
    let released: Vec<usize> = patch
        .frozen_triangles(lip)
        .into_iter()
        .filter(|&t| lip.gradient_norm(t, &d_loc) > limit)
        .collect();
    for &t in &released {
        for v in lip.triangles()[t] {
            patch.frozen[v] = false;
        }
    }
    let mut solves = 0;
    if let Some(s) = start {
        for v in 0..n {
            if !patch.frozen[v] {
                patch.values[v] = s[v];
            }
        }
    }
    let mut d = d_loc.clone();
    // A frozen vertex stays at d_loc only while no gradient bound it shares
    // with active vertices is tight; otherwise it is released and the patch
    // solved again from the current iterate.
    let tight = (1.0 - 1e-6) / mat.l;
    while patch.active_count() > 0 {
        solves += 1;
        d = match constrained_damage_minimize(strains, areas, &patch, lip, mat, LipSet::Lh, &opts.solver) {
            Ok(d) => d,
            Err(e) if patch.frozen.iter().any(|&f| f) => {
                // frozen values can leave the patched problem infeasible;
                // the full domain always contains d_n
                log::debug!("patched solve failed ({e}), releasing all vertices");
                for v in 0..n {
                    if patch.frozen[v] {
                        patch.frozen[v] = false;
                        patch.values[v] = patch.values[v].clamp(d_n[v], 1.0);
                    }
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut released = Vec::new();
        for (t, tri) in lip.triangles().iter().enumerate() {
            let frozen = tri.iter().filter(|&&v| patch.frozen[v]).count();
            if frozen > 0 && frozen < 3 && lip.gradient_norm(t, &d) >= tight {
                released.extend(tri.iter().copied().filter(|&v| patch.frozen[v]));
            }
        }
        if released.is_empty() {
            break;
        }
        for v in 0..n {
            if !patch.frozen[v] {
                patch.values[v] = d[v];
            }
        }
        for v in released {
            patch.frozen[v] = false;
            patch.values[v] = d[v];
        }
    }
    let active = patch.active_count();
    Ok(DamageStep {
        d,
        d_loc,
        bounds,
        active,
        solves,
    })
}

/// Consistent mass matrix of the piecewise-linear interpolant on the Lip-mesh.
pub fn mass_matrix(lip: &LipMesh) -> Vec<(usize, usize, f64)> {
    let mut m = Vec::with_capacity(9 * lip.triangle_count());
    for (t, tri) in lip.triangles().iter().enumerate() {
        let a = lip.triangle_areas()[t] / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                m.push((tri[i], tri[j], if i == j { 2.0 * a } else { a }));
            }
        }
    }
    m
}

/// L² projection onto the discrete Lipschitz set (consistent mass norm).
pub fn lip_project_l2(d_in: &[f64], lip: &LipMesh, l: f64, set: LipSet, opts: &SolverOptions) -> Result<Vec<f64>, LipError> {
    let n = lip.vertex_count();
    if d_in.len() != n {
        return Err(LipError::Size {
            what: "d_in",
            got: d_in.len(),
            expected: n,
        });
    }
    let objective = Quadratic {
        n,
        matrix: mass_matrix(lip),
        target: d_in.to_vec(),
        linear: vec![0.0; n],
    };
    let var: Vec<usize> = (0..n).collect();
    let bounds = lipschitz_constraints(lip, l, set, &var, d_in);
    let lower = vec![f64::NEG_INFINITY; n];
    let upper = vec![f64::INFINITY; n];
    let mut x = d_in.to_vec();
    if lipschitz_check(&x, lip, l, set) <= 0.0 {
        return Ok(x);
    }
    let problem = Problem {
        objective: &objective,
        bounds: &bounds,
        lower: &lower,
        upper: &upper,
    };
    conic::minimize(&problem, &mut x, opts)?;
    Ok(x)
}

/// Oracle comparisons run alongside the fast path in validation mode.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ValidationReport {
    /// max |dijkstra - bruteforce| over both envelopes
    pub bounds_discrepancy: f64,
    /// max |patched - full-domain| damage
    pub oracle_discrepancy: f64,
}

pub fn validate_damage_step(
    strains: &[Strain2D],
    areas: &[f64],
    d_n: &[f64],
    step: &DamageStep,
    lip: &LipMesh,
    graph: &EdgeGraph,
    mat: &MaterialParams,
    opts: &DamageOptions,
) -> Result<ValidationReport, LipError> {
    let brute = bruteforce_bounds(&step.d_loc, graph, mat.l);
    let bounds_discrepancy = max_abs_diff(&brute.lower, &step.bounds.lower).max(max_abs_diff(&brute.upper, &step.bounds.upper));
    let full = full_domain_minimize(strains, areas, d_n, &step.d_loc, lip, mat, LipSet::Lh, &opts.solver)?;
    Ok(ValidationReport {
        bounds_discrepancy,
        oracle_discrepancy: max_abs_diff(&full, &step.d),
    })
}

/// L² norm of `values - exact` over the Lip-mesh, with the linear
/// interpolant of `values` and `exact` sampled on a sub-triangulation.
pub fn l2_error(lip: &LipMesh, values: &[f64], exact: impl Fn(Point) -> f64 + Sync) -> (f64, f64) {
    const K: usize = 8;
    let (err, norm) = (0..lip.triangle_count())
        .into_par_iter()
        .map(|t| {
            let tri = lip.triangles()[t];
            let p = tri.map(|v| lip.vertices()[v]);
            let f = tri.map(|v| values[v]);
            let sub_area = lip.triangle_areas()[t] / (K * K) as f64;
            let at = |a: f64, b: f64| {
                let c = 1.0 - a - b;
                let x = [c * p[0][0] + a * p[1][0] + b * p[2][0], c * p[0][1] + a * p[1][1] + b * p[2][1]];
                let e = exact(x);
                (c * f[0] + a * f[1] + b * f[2] - e, e)
            };
            let (mut err, mut norm) = (0.0, 0.0);
            let kf = K as f64;
            // edge-midpoint rule on each sub-triangle, exact for quadratics
            let mut accumulate = |corners: [(f64, f64); 3]| {
                for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                    let (d, e) = at(0.5 * (corners[i].0 + corners[j].0), 0.5 * (corners[i].1 + corners[j].1));
                    err += sub_area / 3.0 * d * d;
                    norm += sub_area / 3.0 * e * e;
                }
            };
            for i in 0..K {
                for j in 0..K - i {
                    let (a, b) = (i as f64 / kf, j as f64 / kf);
                    let h = 1.0 / kf;
                    accumulate([(a, b), (a + h, b), (a, b + h)]);
                    if i + j + 1 < K {
                        accumulate([(a + h, b), (a + h, b + h), (a, b + h)]);
                    }
                }
            }
            (err, norm)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    (err.sqrt(), norm.sqrt())
}

/// Projection of the cone `max(1 - r/l̄, 0)` on a structured Lip-mesh of the
/// square of side `side` centered at the origin.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConeProjection {
    /// cells per side, L/h
    pub cells: usize,
    pub h_over_side: f64,
    /// relative L² distance to the exact projection
    pub rel_error: f64,
    /// projected value at the origin
    pub peak: f64,
    /// exact peak `(l̄/l)^(2/3)`
    pub exact_peak: f64,
    #[serde(skip)]
    pub mesh: Option<LipMesh>,
    #[serde(skip)]
    pub input: Vec<f64>,
    #[serde(skip)]
    pub projected: Vec<f64>,
}

pub fn cone_projection(
    side: f64,
    l: f64,
    l_bar: f64,
    cells: usize,
    set: LipSet,
    opts: &SolverOptions,
) -> Result<ConeProjection, LipError> {
    if !(l_bar < l) {
        return Err(LipError::Degenerate(format!(
            "cone slope 1/{l_bar} already satisfies the 1/{l} bound"
        )));
    }
    if cells < 2 || cells % 2 != 0 {
        return Err(LipError::Degenerate(format!("cells per side must be even, got {cells}")));
    }
    let half = 0.5 * side;
    let grid = meshgen::rectangle([-half, -half], [side, side], [cells, cells], Diagonals::Checkerboard)?;
    let lip = LipMesh::from_triangulation(grid.nodes().to_vec(), grid.triangles().to_vec())?;
    let r = |p: Point| (p[0] * p[0] + p[1] * p[1]).sqrt();
    let input: Vec<f64> = lip.vertices().iter().map(|&p| (1.0 - r(p) / l_bar).max(0.0)).collect();
    let projected = lip_project_l2(&input, &lip, l, set, opts)?;
    let exact_peak = (l_bar / l).powf(2.0 / 3.0);
    let (err, norm) = l2_error(&lip, &projected, |p| (exact_peak - r(p) / l).max(0.0));
    let origin = lip.nearest_vertex([0.0, 0.0]);
    Ok(ConeProjection {
        cells,
        h_over_side: 1.0 / cells as f64,
        rel_error: err / norm,
        peak: projected[origin],
        exact_peak,
        mesh: Some(lip),
        input,
        projected,
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_lip_mesh, edge_graph};
    use crate::meshgen::{rectangle, Diagonals};
    use proptest::prelude::*;

    fn small() -> (LipMesh, EdgeGraph) {
        let m = rectangle([0.0, 0.0], [1.0, 1.0], [4, 4], Diagonals::Uniform).unwrap();
        let lip = build_lip_mesh(&m).unwrap();
        let g = edge_graph(&lip);
        (lip, g)
    }

    #[test]
    fn constant_field_bounds() {
        let (_, g) = small();
        let d = vec![0.3; g.vertex_count()];
        let b = dijkstra_bounds(&d, &g, 0.5);
        assert_eq!(b.lower, d);
        assert_eq!(b.upper, d);
    }

    #[test]
    fn spike_bounds() {
        let (lip, g) = small();
        let n = g.vertex_count();
        let mut d = vec![0.0; n];
        d[7] = 1.0;
        let l = 0.3;
        let b = dijkstra_bounds(&d, &g, l);
        let dist = g.shortest_paths(7);
        for v in 0..n {
            assert!((b.upper[v] - (1.0 - dist[v] / l).max(0.0)).abs() < 1e-12);
            if v != 7 {
                assert_eq!(b.lower[v], 0.0);
            }
        }
        let patch = extract_patch(&b, &d, &vec![0.0; n], 1e-9);
        for v in patch.active_vertices() {
            assert!(dist[v] < l, "vertex {v} at {}", dist[v]);
        }
        assert!(lipschitz_check(&b.upper, &lip, l, LipSet::LhPlus) <= 1e-12);
    }

    #[test]
    fn large_l_gives_constant_envelopes() {
        let (_, g) = small();
        let d: Vec<f64> = (0..g.vertex_count()).map(|i| (i as f64 * 0.37).fract()).collect();
        let b = dijkstra_bounds(&d, &g, 1e12);
        let lo = d.iter().copied().fold(1.0, f64::min);
        let hi = d.iter().copied().fold(0.0, f64::max);
        assert!(b.lower.iter().all(|v| (v - lo).abs() < 1e-9));
        assert!(b.upper.iter().all(|v| (v - hi).abs() < 1e-9));
    }

    #[test]
    fn checks_on_simple_fields() {
        let (lip, _) = small();
        let n = lip.vertex_count();
        let l = 0.5;
        let c = vec![0.4; n];
        assert!((lipschitz_check(&c, &lip, l, LipSet::Lh) + 1.0 / l).abs() < 1e-15);
        assert!((lipschitz_check(&c, &lip, l, LipSet::LhPlus) + 1.0 / l).abs() < 1e-15);
        let affine: Vec<f64> = lip.vertices().iter().map(|p| p[0] / l).collect();
        assert!(lipschitz_check(&affine, &lip, l, LipSet::Lh).abs() < 1e-12);
    }

    #[test]
    fn single_interior_disagreement() {
        let (lip, g) = small();
        let n = lip.vertex_count();
        let v = (0..n).max_by_key(|&v| lip.star(v).len()).unwrap();
        let mut b = BoundsPair {
            lower: vec![0.2; n],
            upper: vec![0.2; n],
        };
        b.upper[v] = 0.3;
        let p = extract_patch(&b, &vec![0.2; n], &vec![0.0; n], 1e-9);
        assert_eq!(p.active_vertices(), vec![v]);
        let mut star = lip.star(v).to_vec();
        star.sort_unstable();
        assert_eq!(p.active_triangles(&lip), star);
        assert_eq!(g.vertex_count(), n);
    }

    #[test]
    fn empty_patch_returns_frozen_values() {
        let (lip, _) = small();
        let n = lip.vertex_count();
        let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 1e-6).unwrap();
        let patch = Patch {
            frozen: vec![true; n],
            values: vec![0.25; n],
            box_lower: vec![0.0; n],
        };
        let strains = vec![Strain2D::uniaxial(3.0); n];
        let areas = vec![1.0; n];
        let d = constrained_damage_minimize(&strains, &areas, &patch, &lip, &mat, LipSet::Lh, &SolverOptions::default()).unwrap();
        assert_eq!(d, patch.values);
    }

    #[test]
    fn below_onset_keeps_previous_damage() {
        let (lip, g) = small();
        let n = lip.vertex_count();
        let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 1e-6).unwrap();
        let d_n: Vec<f64> = lip.vertices().iter().map(|p| (0.2 - p[0] * 0.1).max(0.0)).collect();
        let strains = vec![Strain2D::uniaxial(0.5); n];
        let areas = vec![1.0 / n as f64; n];
        let s = damage_step(&strains, &areas, &d_n, None, &lip, &g, &mat, &DamageOptions::default()).unwrap();
        assert_eq!(s.d, d_n);
    }

    #[test]
    fn projection_is_idempotent_on_feasible_input() {
        let (lip, _) = small();
        let d: Vec<f64> = lip.vertices().iter().map(|p| 0.3 * p[0] + 0.1 * p[1]).collect();
        let out = lip_project_l2(&d, &lip, 1.0, LipSet::Lh, &SolverOptions::default()).unwrap();
        assert!(max_abs_diff(&out, &d) < 1e-12);
    }

    #[test]
    fn projection_is_feasible() {
        let (lip, _) = small();
        let d: Vec<f64> = lip.vertices().iter().map(|p| (1.0 - 3.0 * (p[0] - 0.5).hypot(p[1] - 0.5)).max(0.0)).collect();
        let out = lip_project_l2(&d, &lip, 1.0, LipSet::Lh, &SolverOptions::default()).unwrap();
        assert!(lipschitz_check(&out, &lip, 1.0, LipSet::Lh) <= 1e-9);
        assert!(max_abs_diff(&out, &d) > 1e-3);
    }

    #[test]
    fn mass_matrix_integrates_constants() {
        let (lip, _) = small();
        let total: f64 = mass_matrix(&lip).iter().map(|e| e.2).sum();
        let area: f64 = lip.triangle_areas().iter().sum();
        assert!((total - area).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dijkstra_matches_bruteforce(vals in proptest::collection::vec(0.0..1.0f64, 32), l in 0.05..2.0f64) {
            let (lip, g) = small();
            let b = dijkstra_bounds(&vals, &g, l);
            let o = bruteforce_bounds(&vals, &g, l);
            prop_assert!(max_abs_diff(&b.lower, &o.lower) <= 1e-12);
            prop_assert!(max_abs_diff(&b.upper, &o.upper) <= 1e-12);
            for v in 0..vals.len() {
                prop_assert!(b.lower[v] <= vals[v] && vals[v] <= b.upper[v]);
            }
            prop_assert!(lipschitz_check(&b.lower, &lip, l, LipSet::LhPlus) <= 1e-12);
            // envelope fixed point
            let again = dijkstra_bounds(&b.upper, &g, l);
            prop_assert!(max_abs_diff(&again.upper, &b.upper) <= 1e-12);
        }

        #[test]
        fn gradient_membership_implies_edge_membership(vals in proptest::collection::vec(0.0..0.2f64, 32)) {
            let (lip, _) = small();
            let l = 1.0;
            if lipschitz_check(&vals, &lip, l, LipSet::Lh) <= 0.0 {
                prop_assert!(lipschitz_check(&vals, &lip, l, LipSet::LhPlus) <= 1e-12);
            }
        }

        #[test]
        fn feasible_set_is_convex(a in proptest::collection::vec(0.0..1.0f64, 32), b in proptest::collection::vec(0.0..1.0f64, 32), t in 0.0..1.0f64) {
            let (lip, g) = small();
            let l = 0.4;
            let fa = dijkstra_bounds(&a, &g, l).upper;
            let fb = dijkstra_bounds(&b, &g, l).lower;
            let mix: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            prop_assert!(lipschitz_check(&mix, &lip, l, LipSet::LhPlus) <= 1e-12);
        }
    }

    #[test]
    fn l2_error_of_exact_linear_field() {
        let (lip, _) = small();
        let f = |p: Point| 2.0 * p[0] - p[1] + 0.5;
        let v: Vec<f64> = lip.vertices().iter().map(|&p| f(p)).collect();
        let (err, norm) = l2_error(&lip, &v, f);
        assert!(err < 1e-14);
        let (e2, _) = l2_error(&lip, &v, |p| f(p) + 1.0);
        let area: f64 = lip.triangle_areas().iter().sum();
        assert!((e2 - area.sqrt()).abs() < 1e-12);
        assert!(norm > 0.0);
    }

    #[test]
    fn cone_projection_peak_and_degenerate_case() {
        let r = cone_projection(2.0, 1.0, 0.25, 8, LipSet::Lh, &SolverOptions::default()).unwrap();
        assert!((r.exact_peak - 0.25f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((r.peak - r.exact_peak).abs() < 2.0 / 8.0, "{}", r.peak);
        assert!(lipschitz_check(&r.projected, r.mesh.as_ref().unwrap(), 1.0, LipSet::Lh) < 1e-8);
        assert!(matches!(
            cone_projection(2.0, 1.0, 1.5, 8, LipSet::Lh, &SolverOptions::default()),
            Err(LipError::Degenerate(_))
        ));
    }
}
