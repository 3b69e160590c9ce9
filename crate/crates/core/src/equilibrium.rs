//! Displacement problem at fixed damage.
//!
//! Dirichlet conditions are eliminated. Rigid links and tied node pairs enter
//! through Lagrange multipliers and the resulting saddle-point system is
//! factorized with a sparse LU. The symmetric model (β = 1) is linear and
//! needs a single Newton step; the asymmetric model is solved by Newton with
//! an energy line search.

use std::collections::{BTreeMap, HashMap};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;

use crate::material::{free_energy, stress, tangent, MaterialParams, Strain2D};
use crate::mesh::{distance, FeMesh, Point};

#[derive(Debug, Clone, thiserror::Error)]
pub enum EquilibriumError {
    #[error("unknown boundary tag '{0}'")]
    UnknownTag(String),
    #[error("degree of freedom {node}/{component} constrained twice")]
    DoubleConstraint { node: usize, component: usize },
    #[error("tied nodes {a} and {b} are {gap:.3e} apart")]
    TieNotCoincident { a: usize, b: usize, gap: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("crack length index {index} outside admissible range [{min}, {max}]")]
    CrackOutOfRange { index: usize, min: usize, max: usize },
    #[error("crack path: {0}")]
    CrackPath(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Param {
    Free,
    /// value = coefficient × load factor
    Prescribed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dirichlet {
    pub node: usize,
    pub component: usize,
    pub coef: f64,
}

/// Nodes moving as a rigid body about `center` with linearized parameters
/// `(ux, uy, θ)`: `u = (ux - θ (y - cy), uy + θ (x - cx))`.
#[derive(Debug, Clone)]
pub struct RigidLink {
    pub nodes: Vec<usize>,
    pub center: Point,
    pub params: [Param; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tie {
    pub a: usize,
    pub b: usize,
    pub active: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub dirichlet: Vec<Dirichlet>,
    pub links: Vec<RigidLink>,
    pub ties: Vec<Tie>,
}

fn tag_nodes(mesh: &FeMesh, tag: &str) -> Result<Vec<usize>, EquilibriumError> {
    let id = mesh
        .resolve_tag(tag)
        .ok_or_else(|| EquilibriumError::UnknownTag(tag.to_string()))?;
    Ok(mesh.nodes_with_tag(id))
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prescribes `component` (0 = x, 1 = y) on every node of `tag`.
    pub fn dirichlet_tag(&mut self, mesh: &FeMesh, tag: &str, component: usize, coef: f64) -> Result<&mut Self, EquilibriumError> {
        for node in tag_nodes(mesh, tag)? {
            self.dirichlet.push(Dirichlet { node, component, coef });
        }
        Ok(self)
    }

    /// Prescribes `component` on the node nearest to `p`.
    pub fn dirichlet_point(&mut self, mesh: &FeMesh, p: Point, component: usize, coef: f64) -> &mut Self {
        let node = mesh.nearest_node(p);
        self.dirichlet.push(Dirichlet { node, component, coef });
        self
    }

    pub fn rigid_link(&mut self, mesh: &FeMesh, tag: &str, center: Point, params: [Param; 3]) -> Result<&mut Self, EquilibriumError> {
        let nodes = tag_nodes(mesh, tag)?;
        self.links.push(RigidLink { nodes, center, params });
        Ok(self)
    }

    /// Ties coincident nodes of two tags, ordered by distance from `origin`.
    pub fn tie_tags(&mut self, mesh: &FeMesh, tag_a: &str, tag_b: &str, origin: Point) -> Result<&mut Self, EquilibriumError> {
        let a = tag_nodes(mesh, tag_a)?;
        let b = tag_nodes(mesh, tag_b)?;
        let tol = 1e-10 * mesh.diagonal();
        let mut pairs = Vec::new();
        for &na in &a {
            let p = mesh.nodes()[na];
            let nb = b
                .iter()
                .copied()
                .min_by(|&x, &y| distance(p, mesh.nodes()[x]).total_cmp(&distance(p, mesh.nodes()[y])))
                .ok_or_else(|| EquilibriumError::CrackPath(format!("tag {tag_b} has no nodes")))?;
            let gap = distance(p, mesh.nodes()[nb]);
            if gap > tol {
                return Err(EquilibriumError::TieNotCoincident { a: na, b: nb, gap });
            }
            pairs.push((distance(origin, p), na, nb));
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        self.ties
            .extend(pairs.into_iter().map(|(_, a, b)| Tie { a, b, active: true }));
        Ok(self)
    }

    /// Checks that no dof is constrained twice and ties join coincident nodes.
    pub fn validate(&self, mesh: &FeMesh) -> Result<(), EquilibriumError> {
        let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
        for d in &self.dirichlet {
            if let Some(&c) = seen.get(&(d.node, d.component)) {
                if c != d.coef {
                    return Err(EquilibriumError::DoubleConstraint {
                        node: d.node,
                        component: d.component,
                    });
                }
            }
            seen.insert((d.node, d.component), d.coef);
        }
        let mut linked: HashMap<usize, usize> = HashMap::new();
        for (k, link) in self.links.iter().enumerate() {
            for &n in &link.nodes {
                for c in 0..2 {
                    if seen.contains_key(&(n, c)) {
                        return Err(EquilibriumError::DoubleConstraint { node: n, component: c });
                    }
                }
                if linked.insert(n, k).is_some() {
                    return Err(EquilibriumError::DoubleConstraint { node: n, component: 0 });
                }
            }
        }
        let tol = 1e-10 * mesh.diagonal();
        let mut tied: HashMap<usize, usize> = HashMap::new();
        for t in self.ties.iter().filter(|t| t.active) {
            let gap = distance(mesh.nodes()[t.a], mesh.nodes()[t.b]);
            if gap > tol {
                return Err(EquilibriumError::TieNotCoincident { a: t.a, b: t.b, gap });
            }
            for c in 0..2 {
                if seen.contains_key(&(t.a, c)) && seen.contains_key(&(t.b, c)) {
                    return Err(EquilibriumError::DoubleConstraint { node: t.b, component: c });
                }
            }
            if linked.get(&t.a).is_some_and(|k| linked.get(&t.b) == Some(k)) {
                return Err(EquilibriumError::DoubleConstraint { node: t.b, component: 0 });
            }
            for n in [t.a, t.b] {
                if tied.insert(n, t.a).is_some() {
                    return Err(EquilibriumError::DoubleConstraint { node: n, component: 0 });
                }
            }
        }
        Ok(())
    }
}

/// Rejects constraint sets leaving a rigid motion of some connected body free.
fn check_rigid_modes(mesh: &FeMesh, c: &ConstraintSet) -> Result<(), EquilibriumError> {
    let n = mesh.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let join = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        p[ra] = rb;
    };
    for t in mesh.triangles() {
        join(&mut parent, t[0], t[1]);
        join(&mut parent, t[1], t[2]);
    }
    for t in c.ties.iter().filter(|t| t.active) {
        join(&mut parent, t.a, t.b);
    }
    for link in &c.links {
        for w in link.nodes.windows(2) {
            join(&mut parent, w[0], w[1]);
        }
    }
    let (lo, hi) = mesh.bounding_box();
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let scale = mesh.diagonal();
    let rel = |p: Point| [(p[0] - mid[0]) / scale, (p[1] - mid[1]) / scale];
    let mut gram: BTreeMap<usize, [[f64; 3]; 3]> = BTreeMap::new();
    let mut add = |root: usize, r: [f64; 3]| {
        let g = gram.entry(root).or_insert([[0.0; 3]; 3]);
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += r[i] * r[j];
            }
        }
    };
    for d in &c.dirichlet {
        let p = rel(mesh.nodes()[d.node]);
        let row = if d.component == 0 { [1.0, 0.0, -p[1]] } else { [0.0, 1.0, p[0]] };
        add(find(&mut parent, d.node), row);
    }
    for link in &c.links {
        let Some(&first) = link.nodes.first() else { continue };
        let root = find(&mut parent, first);
        let p = rel(link.center);
        let rows = [[1.0, 0.0, -p[1]], [0.0, 1.0, p[0]], [0.0, 0.0, 1.0]];
        for (k, row) in rows.into_iter().enumerate() {
            if link.params[k] != Param::Free {
                add(root, row);
            }
        }
    }
    let mut roots: Vec<usize> = mesh.triangles().iter().map(|t| find(&mut parent, t[0])).collect();
    roots.sort_unstable();
    roots.dedup();
    for root in roots {
        let g = gram.get(&root).copied().unwrap_or([[0.0; 3]; 3]);
        let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
            + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
        let tr = (g[0][0] + g[1][1] + g[2][2]) / 3.0;
        if !(det > 1e-12 * tr.powi(3)) {
            return Err(EquilibriumError::Singular(format!(
                "rigid motion of the body containing node {root} is not constrained"
            )));
        }
    }
    Ok(())
}

/// Per-element strain-displacement data.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// shape-function gradients per element
    grads: Vec<[[f64; 2]; 3]>,
}

impl Kinematics {
    pub fn new(mesh: &FeMesh) -> Self {
        Self {
            grads: (0..mesh.element_count()).map(|e| mesh.shape_gradients(e)).collect(),
        }
    }

    /// Voigt B matrix (3 × 6) of element `e`, dofs ordered (x0, y0, x1, ...).
    pub fn b_matrix(&self, e: usize) -> [[f64; 6]; 3] {
        let g = self.grads[e];
        let mut b = [[0.0; 6]; 3];
        for a in 0..3 {
            b[0][2 * a] = g[a][0];
            b[1][2 * a + 1] = g[a][1];
            b[2][2 * a] = g[a][1];
            b[2][2 * a + 1] = g[a][0];
        }
        b
    }
}

fn element_dofs(tri: [usize; 3]) -> [usize; 6] {
    [2 * tri[0], 2 * tri[0] + 1, 2 * tri[1], 2 * tri[1] + 1, 2 * tri[2], 2 * tri[2] + 1]
}

/// Element strains of a nodal displacement vector `u` (length 2 × nodes).
pub fn element_strains(mesh: &FeMesh, kin: &Kinematics, u: &[f64]) -> Vec<Strain2D> {
    mesh.triangles()
        .par_iter()
        .enumerate()
        .map(|(e, &tri)| {
            let b = kin.b_matrix(e);
            let dofs = element_dofs(tri);
            let mut v = [0.0; 3];
            for i in 0..3 {
                for k in 0..6 {
                    v[i] += b[i][k] * u[dofs[k]];
                }
            }
            Strain2D::from_voigt(v)
        })
        .collect()
}

/// `Bᵀ D B A` for a 3 × 3 material matrix `dmat`.
fn btdb(b: &[[f64; 6]; 3], dmat: &[[f64; 3]; 3], area: f64) -> [[f64; 6]; 6] {
    let mut db = [[0.0; 6]; 3];
    for i in 0..3 {
        for k in 0..6 {
            db[i][k] = (0..3).map(|j| dmat[i][j] * b[j][k]).sum();
        }
    }
    let mut k = [[0.0; 6]; 6];
    for r in 0..6 {
        for c in 0..6 {
            k[r][c] = area * (0..3).map(|i| b[i][r] * db[i][c]).sum::<f64>();
        }
    }
    k
}

/// Stiffness of element `e` for the symmetric model at damage `d_e`:
/// `g_k(d_e)` times the undamaged plane-strain stiffness.
pub fn element_stiffness(mesh: &FeMesh, kin: &Kinematics, e: usize, d_e: f64, mat: &MaterialParams) -> [[f64; 6]; 6] {
    let mut dmat = crate::material::hooke(mat);
    let g = mat.g_floor(d_e);
    for row in dmat.iter_mut() {
        for v in row.iter_mut() {
            *v *= g;
        }
    }
    btdb(&kin.b_matrix(e), &dmat, mesh.areas()[e])
}

/// Total free energy `Σ_e A_e φ(ε_e, d_e)`.
pub fn strain_energy(mesh: &FeMesh, strains: &[Strain2D], d: &[f64], mat: &MaterialParams) -> f64 {
    strains
        .iter()
        .zip(d)
        .zip(mesh.areas())
        .map(|((e, &de), &a)| a * free_energy(e, de, mat))
        .sum()
}

/// Nodal internal forces `Σ_e A_e Bᵀ σ_e`.
pub fn internal_forces(mesh: &FeMesh, kin: &Kinematics, strains: &[Strain2D], d: &[f64], mat: &MaterialParams) -> Vec<f64> {
    let mut f = vec![0.0; 2 * mesh.node_count()];
    for (e, &tri) in mesh.triangles().iter().enumerate() {
        let s = stress(&strains[e], d[e], mat);
        let sv = [s[0], s[1], s[2]];
        let b = kin.b_matrix(e);
        let a = mesh.areas()[e];
        for (k, dof) in element_dofs(tri).into_iter().enumerate() {
            f[dof] += a * (0..3).map(|i| b[i][k] * sv[i]).sum::<f64>();
        }
    }
    f
}

fn assemble_tangent(mesh: &FeMesh, kin: &Kinematics, strains: &[Strain2D], d: &[f64], mat: &MaterialParams) -> Vec<(usize, usize, f64)> {
    let blocks: Vec<[[f64; 6]; 6]> = (0..mesh.element_count())
        .into_par_iter()
        .map(|e| {
            if mat.is_symmetric() {
                element_stiffness(mesh, kin, e, d[e], mat)
            } else {
                btdb(&kin.b_matrix(e), &tangent(&strains[e], d[e], mat), mesh.areas()[e])
            }
        })
        .collect();
    let mut trip = Vec::with_capacity(36 * blocks.len());
    for (e, k) in blocks.iter().enumerate() {
        let dofs = element_dofs(mesh.triangles()[e]);
        for r in 0..6 {
            for c in 0..6 {
                trip.push((dofs[r], dofs[c], k[r][c]));
            }
        }
    }
    trip
}

/// Equilibrium state at one load factor.
#[derive(Debug, Clone)]
pub struct Solution {
    /// nodal displacements (x0, y0, x1, ...), mm
    pub u: Vec<f64>,
    /// rigid-link parameters (ux, uy, θ) per link
    pub link_params: Vec<[f64; 3]>,
    pub newton_iterations: usize,
}

impl Solution {
    pub fn zeros(mesh: &FeMesh, constraints: &ConstraintSet) -> Self {
        Self {
            u: vec![0.0; 2 * mesh.node_count()],
            link_params: vec![[0.0; 3]; constraints.links.len()],
            newton_iterations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 50,
        }
    }
}

/// Unknown numbering for one constraint set.
struct Layout {
    /// equation index per dof, or None for Dirichlet dofs
    dof_eq: Vec<Option<usize>>,
    /// equation index per free link parameter
    param_eq: Vec<[Option<usize>; 3]>,
    primal: usize,
    dirichlet: BTreeMap<usize, f64>,
}

impl Layout {
    fn new(mesh: &FeMesh, c: &ConstraintSet) -> Self {
        let ndof = 2 * mesh.node_count();
        let mut dirichlet = BTreeMap::new();
        for d in &c.dirichlet {
            dirichlet.insert(2 * d.node + d.component, d.coef);
        }
        let mut dof_eq = vec![None; ndof];
        let mut k = 0;
        for (dof, slot) in dof_eq.iter_mut().enumerate() {
            if !dirichlet.contains_key(&dof) {
                *slot = Some(k);
                k += 1;
            }
        }
        let mut param_eq = Vec::with_capacity(c.links.len());
        for link in &c.links {
            let mut slots = [None; 3];
            for (p, slot) in slots.iter_mut().enumerate() {
                if link.params[p] == Param::Free {
                    *slot = Some(k);
                    k += 1;
                }
            }
            param_eq.push(slots);
        }
        Self {
            dof_eq,
            param_eq,
            primal: k,
            dirichlet,
        }
    }
}

/// One linear constraint row: `Σ coef · unknown = rhs`, where unknowns are
/// dofs (`Ok(dof)`) or link parameters (`Err((link, param))`).
type Row = Vec<(Result<usize, (usize, usize)>, f64)>;

fn constraint_rows(mesh: &FeMesh, c: &ConstraintSet) -> Vec<Row> {
    let mut rows = Vec::new();
    for (k, link) in c.links.iter().enumerate() {
        for &n in &link.nodes {
            let p = mesh.nodes()[n];
            rows.push(vec![(Ok(2 * n), 1.0), (Err((k, 0)), -1.0), (Err((k, 2)), p[1] - link.center[1])]);
            rows.push(vec![(Ok(2 * n + 1), 1.0), (Err((k, 1)), -1.0), (Err((k, 2)), -(p[0] - link.center[0]))]);
        }
    }
    for t in c.ties.iter().filter(|t| t.active) {
        for comp in 0..2 {
            rows.push(vec![(Ok(2 * t.a + comp), 1.0), (Ok(2 * t.b + comp), -1.0)]);
        }
    }
    rows
}

fn link_value(c: &ConstraintSet, sol_params: &[[f64; 3]], k: usize, p: usize, load: f64) -> f64 {
    match c.links[k].params[p] {
        Param::Free => sol_params[k][p],
        Param::Prescribed(coef) => coef * load,
    }
}

/// Solves for the displacement at damage `d` and load factor `load`, starting
/// from `init` (previous state) when given.
pub fn solve_displacement(
    mesh: &FeMesh,
    kin: &Kinematics,
    d: &[f64],
    constraints: &ConstraintSet,
    load: f64,
    mat: &MaterialParams,
    init: Option<&Solution>,
    opts: &EquilibriumOptions,
) -> Result<Solution, EquilibriumError> {
    check_rigid_modes(mesh, constraints)?;
    let layout = Layout::new(mesh, constraints);
    let rows = constraint_rows(mesh, constraints);
    let mut sol = init.cloned().unwrap_or_else(|| Solution::zeros(mesh, constraints));
    sol.newton_iterations = 0;
    for (&dof, &coef) in &layout.dirichlet {
        sol.u[dof] = coef * load;
    }
    for (k, link) in constraints.links.iter().enumerate() {
        for p in 0..3 {
            if let Param::Prescribed(coef) = link.params[p] {
                sol.link_params[k][p] = coef * load;
            }
        }
    }
    let nm = rows.len();
    let size = layout.primal + nm;
    let mut energy = f64::INFINITY;
    let mut scale = 0.0f64;

    for iter in 0..opts.max_iterations {
        let strains = element_strains(mesh, kin, &sol.u);
        let fint = internal_forces(mesh, kin, &strains, d, mat);
        if iter == 0 {
            energy = strain_energy(mesh, &strains, d, mat);
        }
        // constraint residuals g - C z
        let mut cres = vec![0.0; nm];
        for (r, row) in rows.iter().enumerate() {
            let mut v = 0.0;
            for &(var, coef) in row {
                v += coef
                    * match var {
                        Ok(dof) => sol.u[dof],
                        Err((k, p)) => link_value(constraints, &sol.link_params, k, p, load),
                    };
            }
            cres[r] = -v;
        }
        let trip = assemble_tangent(mesh, kin, &strains, d, mat);
        let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(trip.len() + 6 * nm);
        let mut diag_max = 0.0f64;
        for &(r, c, v) in &trip {
            if let (Some(er), Some(ec)) = (layout.dof_eq[r], layout.dof_eq[c]) {
                t.push(Triplet::new(er, ec, v));
                if er == ec {
                    diag_max = diag_max.max(v.abs());
                }
            }
        }
        scale = scale.max(diag_max);
        // multiplier rows scaled to the stiffness magnitude
        let s = diag_max.max(f64::MIN_POSITIVE);
        let mut rhs = vec![0.0; size];
        for (i, slot) in layout.dof_eq.iter().enumerate() {
            if let Some(eq) = slot {
                rhs[*eq] = -fint[i];
            }
        }
        for (r, row) in rows.iter().enumerate() {
            let m = layout.primal + r;
            for &(var, coef) in row {
                let eq = match var {
                    Ok(dof) => layout.dof_eq[dof],
                    Err((k, p)) => layout.param_eq[k][p],
                };
                if let Some(eq) = eq {
                    t.push(Triplet::new(m, eq, s * coef));
                    t.push(Triplet::new(eq, m, s * coef));
                }
            }
            rhs[m] = s * cres[r];
        }
        let cviol = cres.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(size, size, &t)
            .map_err(|e| EquilibriumError::Singular(format!("{e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| EquilibriumError::Singular(format!("{e:?}")))?;
        let b = Mat::from_fn(size, 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        let step: Vec<f64> = (0..size).map(|i| x[(i, 0)]).collect();
        if step.iter().any(|v| !v.is_finite()) {
            return Err(EquilibriumError::Singular("factorization produced non-finite values; check that rigid motions are constrained".into()));
        }
        // residual of the reduced equilibrium: fint + Cᵀλ on free unknowns
        let mut eq_res = vec![0.0; layout.primal];
        for (i, slot) in layout.dof_eq.iter().enumerate() {
            if let Some(e) = slot {
                eq_res[*e] = fint[i];
            }
        }
        for (r, row) in rows.iter().enumerate() {
            let lam = step[layout.primal + r];
            for &(var, coef) in row {
                let eq = match var {
                    Ok(dof) => layout.dof_eq[dof],
                    Err((k, p)) => layout.param_eq[k][p],
                };
                if let Some(eq) = eq {
                    eq_res[eq] += s * coef * lam;
                }
            }
        }
        let step_norm = step[..layout.primal].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let u_norm = sol.u.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(load.abs()).max(1e-300);
        if iter > 0 && cviol <= opts.tol * u_norm && step_norm <= opts.tol * u_norm {
            return Ok(sol);
        }

        let apply = |sol: &mut Solution, base: &Solution, tstep: f64| {
            for (i, slot) in layout.dof_eq.iter().enumerate() {
                if let Some(e) = slot {
                    sol.u[i] = base.u[i] + tstep * step[*e];
                }
            }
            for (k, slots) in layout.param_eq.iter().enumerate() {
                for p in 0..3 {
                    if let Some(e) = slots[p] {
                        sol.link_params[k][p] = base.link_params[k][p] + tstep * step[e];
                    }
                }
            }
        };
        let base = sol.clone();
        sol.newton_iterations += 1;
        if mat.is_symmetric() {
            apply(&mut sol, &base, 1.0);
            // the quadratic problem is solved by one step; a second pass only checks
            if iter == 0 {
                continue;
            }
            return Ok(sol);
        }
        if iter == 0 || cviol > opts.tol * u_norm {
            apply(&mut sol, &base, 1.0);
            energy = strain_energy(mesh, &element_strains(mesh, kin, &sol.u), d, mat);
            continue;
        }
        // directional derivative of the energy along the step
        let mut slope = 0.0;
        for (i, slot) in layout.dof_eq.iter().enumerate() {
            if let Some(e) = slot {
                slope += fint[i] * step[*e];
            }
        }
        let mut tstep = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            apply(&mut sol, &base, tstep);
            let e1 = strain_energy(mesh, &element_strains(mesh, kin, &sol.u), d, mat);
            if e1 <= energy + 1e-4 * tstep * slope || (e1 - energy).abs() <= 1e-14 * energy.abs() {
                energy = e1;
                accepted = true;
                break;
            }
            tstep *= 0.5;
        }
        if !accepted {
            sol = base;
            let r = eq_res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if r <= 1e-8 * scale.max(1e-300) * u_norm {
                return Ok(sol);
            }
            return Err(EquilibriumError::NoConvergence {
                iterations: iter + 1,
                residual: r,
            });
        }
    }
    let strains = element_strains(mesh, kin, &sol.u);
    let fint = internal_forces(mesh, kin, &strains, d, mat);
    Err(EquilibriumError::NoConvergence {
        iterations: opts.max_iterations,
        residual: fint.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
    })
}

/// Sum of internal forces over the nodes of `tag` (N/mm per unit thickness).
pub fn reaction_force(mesh: &FeMesh, fint: &[f64], tag: &str) -> Result<[f64; 2], EquilibriumError> {
    let nodes = tag_nodes(mesh, tag)?;
    let mut r = [0.0; 2];
    for n in nodes {
        r[0] += fint[2 * n];
        r[1] += fint[2 * n + 1];
    }
    Ok(r)
}

/// Coincident node pairs along a crack path, ordered from its origin, with
/// their spacing.
#[derive(Debug, Clone)]
pub struct CrackPath {
    /// indices into `ConstraintSet::ties`
    pub ties: Vec<usize>,
    pub spacing: f64,
}

impl CrackPath {
    /// Uses every tie of `constraints` in order; spacing from the first two pairs.
    pub fn from_ties(mesh: &FeMesh, constraints: &ConstraintSet) -> Result<Self, EquilibriumError> {
        let n = constraints.ties.len();
        if n < 4 {
            return Err(EquilibriumError::CrackPath(format!("{n} tied pairs, need at least 4")));
        }
        let p = |k: usize| mesh.nodes()[constraints.ties[k].a];
        let spacing = distance(p(0), p(1));
        for k in 1..n {
            let s = distance(p(k - 1), p(k));
            if (s - spacing).abs() > 1e-6 * spacing {
                return Err(EquilibriumError::CrackPath(format!(
                    "pairs are not regularly spaced ({s} vs {spacing})"
                )));
            }
        }
        Ok(Self {
            ties: (0..n).collect(),
            spacing,
        })
    }

    pub fn admissible(&self) -> (usize, usize) {
        (1, self.ties.len() - 2)
    }
}

/// Constraints of a two-half specimen: the crack faces tied pair by pair from
/// `origin`, the upper grip opened by a unit vertical displacement and the
/// lower grip held, both free to rotate. Crack-face nodes are kept out of
/// the grips.
pub fn two_half_constraints(
    mesh: &FeMesh,
    crack: [&str; 2],
    origin: Point,
    upper_grip: (&str, Point),
    lower_grip: (&str, Point),
) -> Result<(ConstraintSet, CrackPath), EquilibriumError> {
    let mut c = ConstraintSet::new();
    c.rigid_link(mesh, upper_grip.0, upper_grip.1, [Param::Prescribed(0.0), Param::Prescribed(1.0), Param::Free])?;
    c.rigid_link(mesh, lower_grip.0, lower_grip.1, [Param::Prescribed(0.0), Param::Prescribed(0.0), Param::Free])?;
    let mut faces = tag_nodes(mesh, crack[0])?;
    faces.extend(tag_nodes(mesh, crack[1])?);
    for link in c.links.iter_mut() {
        link.nodes.retain(|n| !faces.contains(n));
    }
    c.tie_tags(mesh, crack[0], crack[1], origin)?;
    let path = CrackPath::from_ties(mesh, &c)?;
    Ok((c, path))
}

/// Energy and reaction at unit load with the first `released` pairs untied.
pub fn griffith_state(
    mesh: &FeMesh,
    kin: &Kinematics,
    constraints: &ConstraintSet,
    path: &CrackPath,
    released: usize,
    mat: &MaterialParams,
    reaction_tag: &str,
) -> Result<(f64, f64), EquilibriumError> {
    let mut c = constraints.clone();
    for (k, &t) in path.ties.iter().enumerate() {
        c.ties[t].active = k >= released;
    }
    c.validate(mesh)?;
    let d = vec![0.0; mesh.element_count()];
    let sol = solve_displacement(mesh, kin, &d, &c, 1.0, mat, None, &EquilibriumOptions::default())?;
    let strains = element_strains(mesh, kin, &sol.u);
    let fint = internal_forces(mesh, kin, &strains, &d, mat);
    let r = reaction_force(mesh, &fint, reaction_tag)?;
    Ok((strain_energy(mesh, &strains, &d, mat), r[1]))
}

/// Energy release rate at unit load, `-(e(a+h) - e(a-h)) / 2h`.
pub fn griffith_release_rate(
    mesh: &FeMesh,
    kin: &Kinematics,
    constraints: &ConstraintSet,
    path: &CrackPath,
    released: usize,
    mat: &MaterialParams,
    reaction_tag: &str,
) -> Result<f64, EquilibriumError> {
    let (min, max) = path.admissible();
    if released < min || released > max {
        return Err(EquilibriumError::CrackOutOfRange { index: released, min, max });
    }
    let (e_minus, _) = griffith_state(mesh, kin, constraints, path, released - 1, mat, reaction_tag)?;
    let (e_plus, _) = griffith_state(mesh, kin, constraints, path, released + 1, mat, reaction_tag)?;
    Ok((e_minus - e_plus) / (2.0 * path.spacing))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GriffithRow {
    /// crack length, mm
    pub a: f64,
    /// strain energy at unit load, N·mm/mm
    pub e1: f64,
    /// release rate at unit load, N/mm per mm²
    pub g1: f64,
    /// critical displacement, mm
    pub u_c: f64,
    /// critical reaction, N/mm
    pub f_c: f64,
}

/// Plane-strain critical energy release rate (N/mm) from `K_Ic` in MPa·√m.
pub fn gc_from_kic(mat: &MaterialParams, k_ic: f64) -> f64 {
    (1.0 - mat.poisson * mat.poisson) / mat.young * k_ic * k_ic * 1000.0
}

/// Critical displacement and force for every admissible crack length.
pub fn griffith_critical_curves(
    mesh: &FeMesh,
    constraints: &ConstraintSet,
    path: &CrackPath,
    mat: &MaterialParams,
    gc: f64,
    reaction_tag: &str,
) -> Result<Vec<GriffithRow>, EquilibriumError> {
    let kin = Kinematics::new(mesh);
    let (min, max) = path.admissible();
    let states: Vec<(f64, f64)> = (min - 1..=max + 1)
        .into_par_iter()
        .map(|n| griffith_state(mesh, &kin, constraints, path, n, mat, reaction_tag))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for n in min..=max {
        let (e_minus, _) = states[n - 1 - (min - 1)];
        let (e1, r1) = states[n - (min - 1)];
        let (e_plus, _) = states[n + 1 - (min - 1)];
        let g1 = (e_minus - e_plus) / (2.0 * path.spacing);
        let u_c = (gc / g1).sqrt();
        rows.push(GriffithRow {
            a: n as f64 * path.spacing,
            e1,
            g1,
            u_c,
            f_c: u_c * r1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::{self, rectangle, Diagonals};

    fn mat(beta: f64) -> MaterialParams {
        MaterialParams::new(1.0, 0.2, 1.0, 0.2, 0.1, beta, 1e-6).unwrap()
    }

    fn square() -> FeMesh {
        rectangle([0.0, 0.0], [1.0, 1.0], [4, 4], Diagonals::Checkerboard).unwrap()
    }

    fn boundary_affine(mesh: &FeMesh, grad: [[f64; 2]; 2], shift: [f64; 2]) -> ConstraintSet {
        let mut c = ConstraintSet::new();
        let mut nodes: Vec<usize> = mesh.boundary_edges().iter().flat_map(|b| b.nodes).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for n in nodes {
            let p = mesh.nodes()[n];
            for comp in 0..2 {
                let v = shift[comp] + grad[comp][0] * p[0] + grad[comp][1] * p[1];
                c.dirichlet.push(Dirichlet { node: n, component: comp, coef: v });
            }
        }
        c
    }

    #[test]
    fn element_stiffness_rigid_modes() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mt = mat(1.0);
        let k = element_stiffness(&m, &kin, 3, 0.0, &mt);
        let t = m.triangles()[3];
        let p: Vec<Point> = t.iter().map(|&n| m.nodes()[n]).collect();
        let modes = [
            [1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            [-p[0][1], p[0][0], -p[1][1], p[1][0], -p[2][1], p[2][0]],
        ];
        let kmax = k.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for mode in modes {
            for r in 0..6 {
                let v: f64 = (0..6).map(|c| k[r][c] * mode[c]).sum();
                assert!(v.abs() < 1e-12 * kmax);
            }
        }
        for r in 0..6 {
            for c in 0..6 {
                assert!((k[r][c] - k[c][r]).abs() < 1e-15 * kmax);
            }
        }
        let k1 = element_stiffness(&m, &kin, 3, 1.0, &mt);
        assert!((k1[0][0] - 1e-6 * k[0][0]).abs() < 1e-18);
    }

    #[test]
    fn patch_test() {
        let m = square();
        let kin = Kinematics::new(&m);
        let grad = [[0.01, 0.003], [-0.002, 0.02]];
        let c = boundary_affine(&m, grad, [0.1, -0.2]);
        for (beta, dv) in [(1.0, 0.0), (1.0, 0.4), (0.0, 0.4)] {
            let d = vec![dv; m.element_count()];
            let s = solve_displacement(&m, &kin, &d, &c, 1.0, &mat(beta), None, &EquilibriumOptions::default()).unwrap();
            for (n, p) in m.nodes().iter().enumerate() {
                for comp in 0..2 {
                    let exact = [0.1, -0.2][comp] + grad[comp][0] * p[0] + grad[comp][1] * p[1];
                    assert!((s.u[2 * n + comp] - exact).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_load_zero_displacement() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(&m, "bottom", 1, 0.0).unwrap();
        c.dirichlet_tag(&m, "left", 0, 0.0).unwrap();
        c.dirichlet_tag(&m, "top", 1, 1.0).unwrap();
        let d = vec![0.0; m.element_count()];
        let s = solve_displacement(&m, &kin, &d, &c, 0.0, &mat(0.0), None, &EquilibriumOptions::default()).unwrap();
        assert!(s.u.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn uniform_damage_scales_reaction() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mt = mat(1.0);
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(&m, "bottom", 1, 0.0).unwrap();
        c.dirichlet_tag(&m, "left", 0, 0.0).unwrap();
        c.dirichlet_tag(&m, "right", 0, 0.0).unwrap();
        c.dirichlet_tag(&m, "top", 1, 0.01).unwrap();
        let opts = EquilibriumOptions::default();
        let d0 = vec![0.0; m.element_count()];
        let d1 = vec![0.5; m.element_count()];
        let s0 = solve_displacement(&m, &kin, &d0, &c, 1.0, &mt, None, &opts).unwrap();
        let s1 = solve_displacement(&m, &kin, &d1, &c, 1.0, &mt, None, &opts).unwrap();
        for (a, b) in s0.u.iter().zip(&s1.u) {
            assert!((a - b).abs() < 1e-14);
        }
        let f0 = internal_forces(&m, &kin, &element_strains(&m, &kin, &s0.u), &d0, &mt);
        let f1 = internal_forces(&m, &kin, &element_strains(&m, &kin, &s1.u), &d1, &mt);
        let r0 = reaction_force(&m, &f0, "top").unwrap();
        let r1 = reaction_force(&m, &f1, "top").unwrap();
        // uniaxial strain: σyy = (λ + 2μ) ε over unit width
        assert!((r0[1] - mt.p_modulus() * 0.01).abs() < 1e-12);
        assert!((r1[1] - mt.g_floor(0.5) * r0[1]).abs() < 1e-14);
        let rb = reaction_force(&m, &f0, "bottom").unwrap();
        assert!((rb[1] + r0[1]).abs() < 1e-12);
        let total: [f64; 2] = [f0.iter().step_by(2).sum(), f0.iter().skip(1).step_by(2).sum()];
        assert!(total[0].abs() < 1e-12 && total[1].abs() < 1e-12);
        // energy = ½ u · F for single-parameter loading
        let e = strain_energy(&m, &element_strains(&m, &kin, &s0.u), &d0, &mt);
        assert!((e - 0.5 * 0.01 * r0[1]).abs() < 1e-12 * e.max(1.0));
        assert!(reaction_force(&m, &f0, "nowhere").is_err());
    }

    #[test]
    fn energy_scales_quadratically() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mt = mat(1.0);
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(&m, "left", 0, 0.0).unwrap();
        c.dirichlet_tag(&m, "left", 1, 0.0).unwrap();
        c.dirichlet_tag(&m, "right", 1, 0.3).unwrap();
        let d: Vec<f64> = (0..m.element_count()).map(|e| (e as f64 * 0.13).fract()).collect();
        let opts = EquilibriumOptions::default();
        let e = |load: f64| {
            let s = solve_displacement(&m, &kin, &d, &c, load, &mt, None, &opts).unwrap();
            strain_energy(&m, &element_strains(&m, &kin, &s.u), &d, &mt)
        };
        let (e1, e3) = (e(1.0), e(3.0));
        assert!((e3 - 9.0 * e1).abs() < 1e-10 * e3);
    }

    #[test]
    fn missing_constraints_are_singular() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(&m, "top", 1, 1.0).unwrap();
        let d = vec![0.0; m.element_count()];
        let r = solve_displacement(&m, &kin, &d, &c, 1.0, &mat(1.0), None, &EquilibriumOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn asymmetric_tension_matches_symmetric() {
        let m = square();
        let kin = Kinematics::new(&m);
        let c = boundary_affine(&m, [[0.02, 0.0], [0.0, 0.01]], [0.0, 0.0]);
        // pull the interior away from affine by damage heterogeneity
        let d: Vec<f64> = (0..m.element_count()).map(|e| if e % 3 == 0 { 0.6 } else { 0.1 }).collect();
        let opts = EquilibriumOptions::default();
        let a = solve_displacement(&m, &kin, &d, &c, 1.0, &mat(0.0), None, &opts).unwrap();
        let b = solve_displacement(&m, &kin, &d, &c, 1.0, &mat(1.0), None, &opts).unwrap();
        let strains = element_strains(&m, &kin, &b.u);
        assert!(strains.iter().all(|e| e.eigenvalues()[0] > 0.0));
        for (x, y) in a.u.iter().zip(&b.u) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn compression_recovers_undamaged_solution() {
        let m = square();
        let kin = Kinematics::new(&m);
        let c = boundary_affine(&m, [[-0.02, 0.0], [0.0, -0.01]], [0.0, 0.0]);
        let opts = EquilibriumOptions::default();
        let ones = vec![1.0; m.element_count()];
        let zeros = vec![0.0; m.element_count()];
        let a = solve_displacement(&m, &kin, &ones, &c, 1.0, &mat(0.0), None, &opts).unwrap();
        let b = solve_displacement(&m, &kin, &zeros, &c, 1.0, &mat(0.0), None, &opts).unwrap();
        for (x, y) in a.u.iter().zip(&b.u) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_link_rotation() {
        let m = square();
        let kin = Kinematics::new(&m);
        let mut c = ConstraintSet::new();
        c.rigid_link(&m, "bottom", [0.5, 0.0], [Param::Prescribed(0.0), Param::Prescribed(0.0), Param::Prescribed(0.0)])
            .unwrap();
        c.rigid_link(&m, "top", [0.5, 1.0], [Param::Prescribed(0.0), Param::Prescribed(0.01), Param::Free])
            .unwrap();
        c.validate(&m).unwrap();
        let d = vec![0.0; m.element_count()];
        let s = solve_displacement(&m, &kin, &d, &c, 1.0, &mat(1.0), None, &EquilibriumOptions::default()).unwrap();
        for n in m.nodes_with_tag(meshgen::TOP) {
            let p = m.nodes()[n];
            let th = s.link_params[1][2];
            assert!((s.u[2 * n] + th * (p[1] - 1.0)).abs() < 1e-12);
            assert!((s.u[2 * n + 1] - 0.01 - th * (p[0] - 0.5)).abs() < 1e-12);
        }
        // symmetric loading: no rotation
        assert!(s.link_params[1][2].abs() < 1e-12);
    }

    #[test]
    fn double_constraint_rejected() {
        let m = square();
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(&m, "bottom", 1, 0.0).unwrap();
        c.dirichlet_tag(&m, "left", 1, 1.0).unwrap();
        assert!(matches!(c.validate(&m), Err(EquilibriumError::DoubleConstraint { .. })));
    }

    fn stretch(m: &FeMesh) -> ConstraintSet {
        let mut c = ConstraintSet::new();
        c.dirichlet_tag(m, "bottom", 0, 0.0).unwrap();
        c.dirichlet_tag(m, "bottom", 1, 0.0).unwrap();
        c.dirichlet_tag(m, "top", 1, 0.05).unwrap();
        c.dirichlet_tag(m, "top", 0, 0.02).unwrap();
        c
    }

    #[test]
    fn fully_tied_halves_match_solid_strip() {
        let mt = mat(1.0);
        let split = meshgen::split_strip(2.0, 0.5, [8, 2]).unwrap();
        let solid = meshgen::solid_strip(2.0, 0.5, [8, 2]).unwrap();
        let mut c = stretch(&split);
        c.tie_tags(&split, "crack_upper", "crack_lower", [0.0, 0.0]).unwrap();
        c.validate(&split).unwrap();
        assert_eq!(c.ties.len(), 9);
        let opts = EquilibriumOptions::default();
        let energy = |m: &FeMesh, c: &ConstraintSet| {
            let kin = Kinematics::new(m);
            let d: Vec<f64> = m.centroids().iter().map(|p| 0.3 * p[0] / 2.0).collect();
            let s = solve_displacement(m, &kin, &d, c, 1.0, &mt, None, &opts).unwrap();
            strain_energy(m, &element_strains(m, &kin, &s.u), &d, &mt)
        };
        let e_split = energy(&split, &c);
        let e_solid = energy(&solid, &stretch(&solid));
        assert!((e_split - e_solid).abs() < 1e-12 * e_solid, "{e_split} {e_solid}");
        c.ties.iter_mut().for_each(|t| t.active = false);
        // fully released: both halves carry no load from the top
        assert!(energy(&split, &c) < 1e-20 || energy(&split, &c) < e_solid);
    }

    #[test]
    fn release_rate_positive_and_energy_decreasing() {
        let mt = MaterialParams::new(3500.0, 0.32, 1.0, 1.0, 0.0, 1.0, 1e-6).unwrap();
        let m = meshgen::split_strip(20.0, 2.0, [40, 4]).unwrap();
        let (c, path) = two_half_constraints(
            &m,
            ["crack_upper", "crack_lower"],
            [0.0, 0.0],
            ("left_upper", [0.0, 1.0]),
            ("left_lower", [0.0, -1.0]),
        )
        .unwrap();
        assert!((path.spacing - 0.5).abs() < 1e-12);
        let rows = griffith_critical_curves(&m, &c, &path, &mt, 0.5, "left_upper").unwrap();
        assert_eq!(rows.len(), 40 - 1);
        for w in rows.windows(2) {
            assert!(w[1].e1 < w[0].e1);
            assert!(w[1].u_c > 0.0 && w[1].g1 > 0.0);
        }
        let kin = Kinematics::new(&m);
        let g = griffith_release_rate(&m, &kin, &c, &path, 10, &mt, "left_upper").unwrap();
        assert!((g - rows[9].g1).abs() < 1e-10 * g);
        assert!(griffith_release_rate(&m, &kin, &c, &path, 0, &mt, "left_upper").is_err());
        // slender cantilever pair: e ∝ 1/a³ gives G ≈ 3e/a away from the ends
        let r = &rows[15];
        assert!((r.g1 * r.a / (3.0 * r.e1) - 1.0).abs() < 0.35, "{}", r.g1 * r.a / (3.0 * r.e1));
    }

    #[test]
    fn gc_from_toughness() {
        let mt = MaterialParams::new(3500.0, 0.32, 1.0, 1.0, 0.0, 1.0, 1e-6).unwrap();
        let gc = gc_from_kic(&mt, 1.4);
        assert!((gc - 0.502656).abs() < 1e-6);
    }
}
