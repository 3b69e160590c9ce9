//! Convex minimization under norm-ball and box constraints.
//!
//! Solves `min F(x)` subject to `‖A_j x + c_j‖ ≤ r_j` for every constraint
//! block `j` (rows of `A_j` are sparse, one or two rows per block) and
//! `lo_i ≤ x_i ≤ hi_i`. The method is an augmented Lagrangian on the
//! constraint sets with a semismooth Newton inner solve: the squared
//! distance to a ball or an interval is C¹ with a piecewise-smooth gradient,
//! whose generalized Hessian keeps the Newton systems symmetric positive
//! definite when `F` is strictly convex.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("no convergence after {iterations} outer iterations (infeasibility {infeasibility:.3e}, stationarity {stationarity:.3e})")]
    NoConvergence {
        iterations: usize,
        infeasibility: f64,
        stationarity: f64,
    },
    #[error("Newton system could not be factorized: {0}")]
    Factorization(String),
}

/// A convex, twice differentiable objective with sparse Hessian.
pub trait Objective {
    fn dimension(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Pushes Hessian entries `(row, col, value)`; both triangles, duplicates summed.
    fn hessian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>);
}

/// One sparse row: `(variable, coefficient)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// `‖A x + c‖ ≤ r` with one or two rows.
#[derive(Debug, Clone)]
pub struct NormBound {
    pub rows: Vec<SparseRow>,
    pub offset: Vec<f64>,
    pub radius: f64,
}

impl NormBound {
    fn eval(&self, x: &[f64]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (k, row) in self.rows.iter().enumerate() {
            v[k] = self.offset[k] + row.iter().map(|&(i, a)| a * x[i]).sum::<f64>();
        }
        v
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Target on constraint violation and on the primal ALM residual.
    pub tol_feas: f64,
    /// Target on the Lagrangian gradient, relative to the objective's mean
    /// Hessian diagonal.
    pub tol_grad: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-11,
            tol_grad: 1e-11,
            max_outer: 60,
            max_newton: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub infeasibility: f64,
    pub stationarity: f64,
    pub penalty: f64,
}

pub struct Problem<'a, F: Objective> {
    pub objective: &'a F,
    pub bounds: &'a [NormBound],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

struct State {
    /// multipliers of the norm bounds, two slots per block
    y_norm: Vec<[f64; 2]>,
    y_box: Vec<f64>,
    rho: f64,
}

fn project_ball(w: [f64; 2], dim: usize, r: f64) -> [f64; 2] {
    let n = if dim == 1 { w[0].abs() } else { w[0].hypot(w[1]) };
    if n <= r {
        w
    } else {
        let s = r / n;
        [w[0] * s, w[1] * s]
    }
}

impl<F: Objective> Problem<'_, F> {
    fn shifted(&self, st: &State, j: usize, x: &[f64]) -> [f64; 2] {
        let b = &self.bounds[j];
        let v = b.eval(x);
        [v[0] + st.y_norm[j][0] / st.rho, v[1] + st.y_norm[j][1] / st.rho]
    }

    fn merit(&self, st: &State, x: &[f64]) -> f64 {
        let mut m = self.objective.value(x);
        for (j, b) in self.bounds.iter().enumerate() {
            let w = self.shifted(st, j, x);
            let p = project_ball(w, b.dim(), b.radius);
            m += 0.5 * st.rho * ((w[0] - p[0]).powi(2) + (w[1] - p[1]).powi(2));
        }
        for i in 0..x.len() {
            let w = x[i] + st.y_box[i] / st.rho;
            let p = w.clamp(self.lower[i], self.upper[i]);
            m += 0.5 * st.rho * (w - p).powi(2);
        }
        m
    }

    fn merit_gradient(&self, st: &State, x: &[f64], g: &mut [f64]) {
        self.objective.gradient(x, g);
        for (j, b) in self.bounds.iter().enumerate() {
            let w = self.shifted(st, j, x);
            let p = project_ball(w, b.dim(), b.radius);
            for (k, row) in b.rows.iter().enumerate() {
                let f = st.rho * (w[k] - p[k]);
                if f != 0.0 {
                    for &(i, a) in row {
                        g[i] += f * a;
                    }
                }
            }
        }
        for i in 0..x.len() {
            let w = x[i] + st.y_box[i] / st.rho;
            g[i] += st.rho * (w - w.clamp(self.lower[i], self.upper[i]));
        }
    }

    fn newton_matrix(&self, st: &State, x: &[f64], trip: &mut Vec<(usize, usize, f64)>) {
        trip.clear();
        self.objective.hessian(x, trip);
        for (j, b) in self.bounds.iter().enumerate() {
            let w = self.shifted(st, j, x);
            let dim = b.dim();
            let n = if dim == 1 { w[0].abs() } else { w[0].hypot(w[1]) };
            if n <= b.radius {
                continue;
            }
            // generalized Hessian of ½ dist² to the ball
            let mut gm = [[0.0; 2]; 2];
            if dim == 1 {
                gm[0][0] = 1.0;
            } else {
                let t = b.radius / n;
                let u = [w[0] / n, w[1] / n];
                for a in 0..2 {
                    for c in 0..2 {
                        gm[a][c] = t * u[a] * u[c] + if a == c { 1.0 - t } else { 0.0 };
                    }
                }
            }
            for a in 0..dim {
                for c in 0..dim {
                    let s = st.rho * gm[a][c];
                    if s == 0.0 {
                        continue;
                    }
                    for &(p, ap) in &b.rows[a] {
                        for &(q, aq) in &b.rows[c] {
                            trip.push((p, q, s * ap * aq));
                        }
                    }
                }
            }
        }
        for i in 0..x.len() {
            let w = x[i] + st.y_box[i] / st.rho;
            if w < self.lower[i] || w > self.upper[i] {
                trip.push((i, i, st.rho));
            }
        }
    }

    /// Violation of the original constraints at `x`.
    fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for b in self.bounds {
            let v = b.eval(x);
            let n = if b.dim() == 1 { v[0].abs() } else { v[0].hypot(v[1]) };
            worst = worst.max(n - b.radius);
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }
}

fn solve_sparse(n: usize, trip: &[(usize, usize, f64)], rhs: &[f64], shift: f64) -> Result<Vec<f64>, SolverError> {
    let mut t: Vec<Triplet<usize, usize, f64>> = trip.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    for i in 0..n {
        t.push(Triplet::new(i, i, shift));
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
        .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
    let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
    let x = match a.sp_cholesky(Side::Lower) {
        Ok(llt) => llt.solve(&b),
        Err(_) => a
            .sp_lu()
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?
            .solve(&b),
    };
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Factorization("non-finite Newton step".into()));
    }
    Ok(out)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the problem from `x` (modified in place).
pub fn minimize<F: Objective>(
    problem: &Problem<'_, F>,
    x: &mut [f64],
    opts: &SolverOptions,
) -> Result<SolverReport, SolverError> {
    let n = problem.objective.dimension();
    assert_eq!(x.len(), n);
    let mut report = SolverReport {
        outer_iterations: 0,
        newton_iterations: 0,
        infeasibility: 0.0,
        stationarity: 0.0,
        penalty: 0.0,
    };
    if n == 0 {
        return Ok(report);
    }

    let mut trip = Vec::new();
    problem.objective.hessian(x, &mut trip);
    let mut diag = vec![0.0; n];
    for &(r, c, v) in &trip {
        if r == c {
            diag[r] += v;
        }
    }
    let scale = (diag.iter().sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let shift = 1e-14 * scale;
    let grad_tol = opts.tol_grad * scale;

    let mut st = State {
        y_norm: vec![[0.0; 2]; problem.bounds.len()],
        y_box: vec![0.0; n],
        rho: scale,
    };
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut prev_residual = f64::INFINITY;

    for outer in 0..opts.max_outer {
        report.outer_iterations = outer + 1;
        // inner semismooth Newton
        let mut stationarity = f64::INFINITY;
        // set when the line search can no longer decrease the merit
        let mut stalled = false;
        for _ in 0..opts.max_newton {
            problem.merit_gradient(&st, x, &mut g);
            stationarity = inf_norm(&g);
            if stationarity <= grad_tol {
                break;
            }
            report.newton_iterations += 1;
            problem.newton_matrix(&st, x, &mut trip);
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let step = solve_sparse(n, &trip, &rhs, shift)?;
            let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
            let m0 = problem.merit(&st, x);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..n {
                    trial[i] = x[i] + t * step[i];
                }
                let m1 = problem.merit(&st, &trial);
                if m1 <= m0 + 1e-4 * t * slope {
                    accepted = true;
                    break;
                }
                if (m1 - m0).abs() <= 1e-15 * m0.abs().max(1.0) {
                    accepted = true;
                    stalled = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                stalled = true;
                break;
            }
            x.copy_from_slice(&trial);
            if stalled || inf_norm(&step) * t <= 1e-15 * (1.0 + inf_norm(x)) {
                stalled = true;
                break;
            }
        }

        // multiplier update and primal residual ‖v - Π(v + y/ρ)‖
        let mut residual: f64 = 0.0;
        for (j, b) in problem.bounds.iter().enumerate() {
            let v = b.eval(x);
            let w = problem.shifted(&st, j, x);
            let p = project_ball(w, b.dim(), b.radius);
            for k in 0..b.dim() {
                residual = residual.max((v[k] - p[k]).abs());
                st.y_norm[j][k] = st.rho * (w[k] - p[k]);
            }
        }
        for i in 0..n {
            let w = x[i] + st.y_box[i] / st.rho;
            let p = w.clamp(problem.lower[i], problem.upper[i]);
            residual = residual.max((x[i] - p).abs());
            st.y_box[i] = st.rho * (w - p);
        }
        let infeasibility = problem.infeasibility(x);
        log::trace!(
            "outer {outer}: rho {:.3e} residual {residual:.3e} stationarity {stationarity:.3e} (target {grad_tol:.3e})",
            st.rho
        );
        report.infeasibility = infeasibility;
        report.stationarity = stationarity;
        report.penalty = st.rho;
        if residual <= opts.tol_feas && (stationarity <= grad_tol.max(1e-300) * 10.0 || stalled) {
            return Ok(report);
        }
        if residual > opts.tol_feas && residual > 0.25 * prev_residual {
            if st.rho > 1e16 * scale {
                break;
            }
            st.rho *= 10.0;
        }
        prev_residual = residual;
    }
    Err(SolverError::NoConvergence {
        iterations: opts.max_outer,
        infeasibility: report.infeasibility,
        stationarity: report.stationarity,
    })
}

/// `Σ_i w_i f_i(x_i)` for scalar convex `f_i`, given per-variable value,
/// slope and curvature.
pub struct Separable<G: Fn(usize, f64) -> (f64, f64, f64)> {
    pub n: usize,
    pub eval: G,
}

impl<G: Fn(usize, f64) -> (f64, f64, f64)> Objective for Separable<G> {
    fn dimension(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| (self.eval)(i, x[i]).0).sum()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for i in 0..self.n {
            g[i] = (self.eval)(i, x[i]).1;
        }
    }

    fn hessian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        for i in 0..self.n {
            out.push((i, i, (self.eval)(i, x[i]).2));
        }
    }
}

/// `½ (x - t)ᵀ M (x - t) + bᵀx` with a fixed sparse symmetric `M`.
pub struct Quadratic {
    pub n: usize,
    /// both triangles
    pub matrix: Vec<(usize, usize, f64)>,
    pub target: Vec<f64>,
    pub linear: Vec<f64>,
}

impl Quadratic {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, a) in &self.matrix {
            out[r] += a * v[c];
        }
        out
    }
}

impl Objective for Quadratic {
    fn dimension(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let e: Vec<f64> = x.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let me = self.apply(&e);
        0.5 * e.iter().zip(&me).map(|(a, b)| a * b).sum::<f64>()
            + self.linear.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let e: Vec<f64> = x.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let me = self.apply(&e);
        for i in 0..self.n {
            g[i] = me[i] + self.linear[i];
        }
    }

    fn hessian(&self, _x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        out.extend_from_slice(&self.matrix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squares(target: Vec<f64>) -> Separable<impl Fn(usize, f64) -> (f64, f64, f64)> {
        let n = target.len();
        Separable {
            n,
            eval: move |i, x| (0.5 * (x - target[i]).powi(2), x - target[i], 1.0),
        }
    }

    #[test]
    fn unconstrained_minimum_is_exact() {
        let f = squares(vec![0.3, -0.2]);
        let p = Problem {
            objective: &f,
            bounds: &[],
            lower: &[-1.0, -1.0],
            upper: &[1.0, 1.0],
        };
        let mut x = vec![0.0, 0.0];
        minimize(&p, &mut x, &SolverOptions::default()).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn box_is_active() {
        let f = squares(vec![2.0, -3.0]);
        let p = Problem {
            objective: &f,
            bounds: &[],
            lower: &[0.0, -1.0],
            upper: &[1.0, 1.0],
        };
        let mut x = vec![0.5, 0.5];
        minimize(&p, &mut x, &SolverOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn disc_projection() {
        // nearest point of the unit disc to (3, 4) is (0.6, 0.8)
        let f = squares(vec![3.0, 4.0]);
        let b = NormBound {
            rows: vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            offset: vec![0.0, 0.0],
            radius: 1.0,
        };
        let p = Problem {
            objective: &f,
            bounds: std::slice::from_ref(&b),
            lower: &[f64::NEG_INFINITY; 2],
            upper: &[f64::INFINITY; 2],
        };
        let mut x = vec![0.0, 0.0];
        minimize(&p, &mut x, &SolverOptions::default()).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-9 && (x[1] - 0.8).abs() < 1e-9, "{x:?}");
    }

    #[test]
    fn difference_bound() {
        // |x0 - x1| <= 0.1 pulling toward (1, 0): solution (0.55, 0.45)
        let f = squares(vec![1.0, 0.0]);
        let b = NormBound {
            rows: vec![vec![(0, 1.0), (1, -1.0)]],
            offset: vec![0.0],
            radius: 0.1,
        };
        let p = Problem {
            objective: &f,
            bounds: std::slice::from_ref(&b),
            lower: &[0.0, 0.0],
            upper: &[1.0, 1.0],
        };
        let mut x = vec![0.0, 0.0];
        minimize(&p, &mut x, &SolverOptions::default()).unwrap();
        assert!((x[0] - 0.55).abs() < 1e-9 && (x[1] - 0.45).abs() < 1e-9, "{x:?}");
    }

    #[test]
    fn quadratic_objective_gradient() {
        let q = Quadratic {
            n: 2,
            matrix: vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)],
            target: vec![1.0, 0.0],
            linear: vec![0.0, 0.5],
        };
        let x = [0.3, 0.7];
        let mut g = [0.0; 2];
        q.gradient(&x, &mut g);
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (q.value(&xp) - q.value(&xm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
