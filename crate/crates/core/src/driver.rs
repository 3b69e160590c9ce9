//! Load stepping and the staggered displacement/damage iteration.

use std::path::PathBuf;

use log::{debug, info};

use crate::equilibrium::{
    element_strains, internal_forces, reaction_force, solve_displacement, ConstraintSet, EquilibriumError,
    EquilibriumOptions, Kinematics, Solution,
};
use crate::lipfield::{damage_step, max_abs_diff, validate_damage_step, DamageOptions, LipError, ValidationReport};
use crate::material::{free_energy, MaterialError, MaterialParams, Strain2D};
use crate::mesh::{build_lip_mesh, distance, edge_graph, read_mesh, EdgeGraph, FeMesh, LipMesh, MeshError, Point};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Damage(#[from] LipError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("staggered iteration did not converge at load {load} after {iterations} iterations (last damage change {last_change:.3e})")]
    NoConvergence {
        load: f64,
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Displacement condition `u_c = coef × load` on every node of a boundary
/// tag, or on the node nearest to `at` when given.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundaryCondition {
    pub tag: String,
    /// 0 = x, 1 = y
    pub component: usize,
    pub coef: f64,
    pub at: Option<Point>,
}

impl BoundaryCondition {
    pub fn tag(tag: &str, component: usize, coef: f64) -> Self {
        Self {
            tag: tag.to_string(),
            component,
            coef,
            at: None,
        }
    }

    pub fn point(at: Point, component: usize, coef: f64) -> Self {
        Self {
            tag: String::new(),
            component,
            coef,
            at: Some(at),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SimulationConfig {
    pub mesh: PathBuf,
    pub material: MaterialParams,
    /// imposed displacement factors, one per step
    pub loads: Vec<f64>,
    pub boundary: Vec<BoundaryCondition>,
    /// tag whose reaction is reported
    pub reaction_tag: String,
    /// ∞-norm on the damage change between staggered iterations
    pub tol_d: f64,
    /// relative change of the incremental potential that also stops the iteration
    pub tol_f: f64,
    pub max_stagger: usize,
    #[serde(skip)]
    pub equilibrium: EquilibriumOptions,
    #[serde(skip)]
    pub damage: DamageOptions,
    pub out_dir: Option<PathBuf>,
    /// write fields every `output_every` steps (the last step is always written)
    pub output_every: usize,
    pub validate: bool,
    /// polyline along which the crack length is measured
    pub crack_path: Vec<Point>,
    pub crack_threshold: f64,
}

impl SimulationConfig {
    pub fn new(mesh: impl Into<PathBuf>, material: MaterialParams) -> Self {
        Self {
            mesh: mesh.into(),
            material,
            loads: Vec::new(),
            boundary: Vec::new(),
            reaction_tag: String::new(),
            tol_d: 1e-4,
            tol_f: 1e-8,
            max_stagger: 200,
            equilibrium: EquilibriumOptions::default(),
            damage: DamageOptions::default(),
            out_dir: None,
            output_every: 1,
            validate: false,
            crack_path: Vec::new(),
            crack_threshold: 0.99,
        }
    }

    /// Uniform load program `u_max · k / steps`, k = 1..=steps.
    pub fn uniform_loads(mut self, u_max: f64, steps: usize) -> Self {
        self.loads = (1..=steps).map(|k| u_max * k as f64 / steps as f64).collect();
        self
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        self.material.validate()?;
        if let Some(x) = self.loads.iter().find(|x| !x.is_finite()) {
            return Err(DriverError::Config(format!("non-finite load factor {x}")));
        }
        for (name, v) in [("tol_d", self.tol_d), ("tol_f", self.tol_f)] {
            if !(v > 0.0) {
                return Err(DriverError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_stagger == 0 {
            return Err(DriverError::Config("max_stagger must be at least 1".into()));
        }
        if self.boundary.iter().any(|b| b.component > 1) {
            return Err(DriverError::Config("boundary component must be x or y".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub load: f64,
    /// reaction on the reported tag, N/mm
    pub reaction: [f64; 2],
    pub iterations: usize,
    /// Σ A φ, N·mm/mm
    pub free_energy: f64,
    /// Σ A Yc h(d), N·mm/mm
    pub dissipation: f64,
    /// work of the imposed displacements since the start, N·mm/mm
    pub external_work: f64,
    /// mm
    pub crack_length: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// incremental potential after each half-step
    pub potential_history: Vec<f64>,
    /// vertices in the constrained solve at the last iteration
    pub active_vertices: usize,
    pub validation: Option<ValidationReport>,
}

fn dissipation(areas: &[f64], d: &[f64], yc: f64) -> f64 {
    areas.iter().zip(d).map(|(a, &x)| a * yc * (2.0 * x + 3.0 * x * x)).sum()
}

fn free_energy_total(areas: &[f64], strains: &[Strain2D], d: &[f64], mat: &MaterialParams) -> f64 {
    areas
        .iter()
        .zip(strains)
        .zip(d)
        .map(|((a, e), &x)| a * free_energy(e, x, mat))
        .sum()
}

/// Simulation state between load steps.
pub struct Simulation {
    pub config: SimulationConfig,
    pub mesh: FeMesh,
    pub lip: LipMesh,
    pub graph: EdgeGraph,
    pub constraints: ConstraintSet,
    kin: Kinematics,
    /// converged displacement of the last step
    pub solution: Solution,
    /// converged damage of the last step, one value per element
    pub damage: Vec<f64>,
    steps: usize,
    load: f64,
    power: f64,
    work: f64,
}

impl Simulation {
    pub fn new(config: SimulationConfig) -> Result<Self, DriverError> {
        let mesh = read_mesh(&config.mesh)?;
        Self::with_mesh(config, mesh)
    }

    pub fn with_mesh(config: SimulationConfig, mesh: FeMesh) -> Result<Self, DriverError> {
        config.validate()?;
        let lip = build_lip_mesh(&mesh)?;
        let graph = edge_graph(&lip);
        let mut constraints = ConstraintSet::new();
        for bc in &config.boundary {
            match bc.at {
                Some(p) => {
                    constraints.dirichlet_point(&mesh, p, bc.component, bc.coef);
                }
                None => {
                    constraints.dirichlet_tag(&mesh, &bc.tag, bc.component, bc.coef)?;
                }
            }
        }
        constraints.validate(&mesh)?;
        if mesh.resolve_tag(&config.reaction_tag).is_none() {
            return Err(DriverError::Config(format!("unknown reaction tag '{}'", config.reaction_tag)));
        }
        let kin = Kinematics::new(&mesh);
        let solution = Solution::zeros(&mesh, &constraints);
        let damage = vec![0.0; mesh.element_count()];
        info!(
            "mesh: {} nodes, {} elements; lip-mesh: {} triangles, {} edges",
            mesh.node_count(),
            mesh.element_count(),
            lip.triangle_count(),
            lip.edges().len()
        );
        Ok(Self {
            config,
            mesh,
            lip,
            graph,
            constraints,
            kin,
            solution,
            damage,
            steps: 0,
            load: 0.0,
            power: 0.0,
            work: 0.0,
        })
    }

    pub fn strains(&self) -> Vec<Strain2D> {
        element_strains(&self.mesh, &self.kin, &self.solution.u)
    }

    fn potential(&self, strains: &[Strain2D], d: &[f64]) -> f64 {
        let mat = &self.config.material;
        free_energy_total(self.mesh.areas(), strains, d, mat) + dissipation(self.mesh.areas(), d, mat.yc)
    }

    fn load_power(&self, fint: &[f64]) -> f64 {
        self.constraints
            .dirichlet
            .iter()
            .map(|bc| fint[2 * bc.node + bc.component] * bc.coef)
            .sum()
    }

    /// Solves one load step from the current state.
    pub fn step(&mut self, load: f64) -> Result<StepRecord, DriverError> {
        let mat = self.config.material;
        let d_n = self.damage.clone();
        let mut d = d_n.clone();
        let mut sol = self.solution.clone();
        let mut history = Vec::new();
        let mut validation = None;
        let mut last_change = f64::INFINITY;
        let mut active = 0;
        let mut converged = None;
        for k in 0..self.config.max_stagger {
            sol = solve_displacement(
                &self.mesh,
                &self.kin,
                &d,
                &self.constraints,
                load,
                &mat,
                Some(&sol),
                &self.config.equilibrium,
            )?;
            let strains = element_strains(&self.mesh, &self.kin, &sol.u);
            let f_u = self.potential(&strains, &d);
            history.push(f_u);
            let ds = damage_step(
                &strains,
                self.mesh.areas(),
                &d_n,
                Some(&d),
                &self.lip,
                &self.graph,
                &mat,
                &self.config.damage,
            )?;
            if self.config.validate {
                let report = validate_damage_step(
                    &strains,
                    self.mesh.areas(),
                    &d_n,
                    &ds,
                    &self.lip,
                    &self.graph,
                    &mat,
                    &self.config.damage,
                )?;
                info!(
                    "validation: bounds discrepancy {:.3e}, patch vs full {:.3e}",
                    report.bounds_discrepancy, report.oracle_discrepancy
                );
                validation = Some(match validation {
                    Some(ValidationReport {
                        bounds_discrepancy,
                        oracle_discrepancy,
                    }) => ValidationReport {
                        bounds_discrepancy: report.bounds_discrepancy.max(bounds_discrepancy),
                        oracle_discrepancy: report.oracle_discrepancy.max(oracle_discrepancy),
                    },
                    None => report,
                });
            }
            active = ds.active;
            last_change = max_abs_diff(&ds.d, &d);
            d = ds.d;
            let f_d = self.potential(&strains, &d);
            history.push(f_d);
            debug!("load {load}: iteration {} |Δd| = {last_change:.3e}, F = {f_u:.12e} -> {f_d:.12e}", k + 1);
            let f_small = (f_u - f_d).abs() <= self.config.tol_f * f_u.abs().max(f64::MIN_POSITIVE);
            if last_change <= self.config.tol_d || (k > 0 && f_small && last_change <= 1e3 * self.config.tol_d) {
                converged = Some(k + 1);
                break;
            }
        }
        let Some(iterations) = converged else {
            return Err(DriverError::NoConvergence {
                load,
                iterations: self.config.max_stagger,
                last_change,
                history,
            });
        };
        // displacement consistent with the final damage
        if last_change > 0.0 {
            sol = solve_displacement(
                &self.mesh,
                &self.kin,
                &d,
                &self.constraints,
                load,
                &mat,
                Some(&sol),
                &self.config.equilibrium,
            )?;
        }
        let strains = element_strains(&self.mesh, &self.kin, &sol.u);
        let fint = internal_forces(&self.mesh, &self.kin, &strains, &d, &mat);
        let reaction = reaction_force(&self.mesh, &fint, &self.config.reaction_tag)?;
        let power = self.load_power(&fint);
        self.work += 0.5 * (power + self.power) * (load - self.load);
        self.power = power;
        self.load = load;
        let free = free_energy_total(self.mesh.areas(), &strains, &d, &mat);
        let diss = dissipation(self.mesh.areas(), &d, mat.yc);
        history.push(free + diss);
        self.solution = sol;
        self.damage = d;
        self.steps += 1;
        let record = StepRecord {
            step: self.steps,
            load,
            reaction,
            iterations,
            free_energy: free,
            dissipation: diss,
            external_work: self.work,
            crack_length: crack_length(&self.damage, &self.lip, self.config.crack_threshold, &self.config.crack_path),
            d_min: self.damage.iter().copied().fold(f64::INFINITY, f64::min),
            d_max: self.damage.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            potential_history: history,
            active_vertices: active,
            validation,
        };
        info!(
            "step {} load {:.6e}: reaction ({:.6e}, {:.6e}), {} iterations, d_max {:.4}",
            record.step, load, reaction[0], reaction[1], iterations, record.d_max
        );
        Ok(record)
    }
}

/// Runs the load program of `config`, calling `observer` after every step.
pub fn run_simulation<F>(config: SimulationConfig, observer: F) -> Result<Vec<StepRecord>, DriverError>
where
    F: FnMut(&Simulation, &StepRecord) -> Result<(), DriverError>,
{
    let mesh = read_mesh(&config.mesh)?;
    run_with_mesh(config, mesh, observer)
}

pub fn run_with_mesh<F>(config: SimulationConfig, mesh: FeMesh, mut observer: F) -> Result<Vec<StepRecord>, DriverError>
where
    F: FnMut(&Simulation, &StepRecord) -> Result<(), DriverError>,
{
    let loads = config.loads.clone();
    let mut sim = Simulation::with_mesh(config, mesh)?;
    let mut records = Vec::with_capacity(loads.len());
    for load in loads {
        let record = sim.step(load)?;
        observer(&sim, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Arc length from the start of `path` to its farthest point that has a Lip
/// vertex with `d ≥ threshold` within one local edge length; 0 when there is
/// none. The neighbourhood matters because Lip vertices sit at element
/// centroids, off any path drawn along mesh lines.
pub fn crack_length(d: &[f64], lip: &LipMesh, threshold: f64, path: &[Point]) -> f64 {
    if path.len() < 2 {
        return 0.0;
    }
    let spacing = lip
        .edges()
        .iter()
        .map(|e| e.length)
        .fold(f64::INFINITY, f64::min)
        .max(f64::MIN_POSITIVE);
    let vertices = lip.vertices();
    let broken_near = |p: Point| -> bool {
        let v = lip.nearest_vertex(p);
        let mut near: Vec<usize> = lip.star(v).iter().flat_map(|&t| lip.triangles()[t]).collect();
        near.sort_unstable();
        near.dedup();
        let reach = near.iter().map(|&w| distance(vertices[v], vertices[w])).fold(0.0, f64::max);
        near.iter().any(|&w| d[w] >= threshold && distance(p, vertices[w]) <= reach)
    };
    let mut best = 0.0;
    let mut start = 0.0;
    for w in path.windows(2) {
        let len = distance(w[0], w[1]);
        let samples = ((len / (0.25 * spacing)).ceil() as usize).clamp(1, 100_000);
        for k in 0..=samples {
            let t = k as f64 / samples as f64;
            let p = [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
            if broken_near(p) {
                best = start + t * len;
            }
        }
        start += len;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::{notched_strip, rectangle, Diagonals};

    fn bar_config(u_max: f64, steps: usize) -> SimulationConfig {
        let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 1e-6).unwrap();
        let mut c = SimulationConfig::new("unused.msh", mat).uniform_loads(u_max, steps);
        c.boundary = vec![
            BoundaryCondition::tag("bottom", 1, 0.0),
            BoundaryCondition::tag("left", 0, 0.0),
            BoundaryCondition::tag("top", 1, 1.0),
        ];
        c.reaction_tag = "top".into();
        c
    }

    #[test]
    fn below_onset_stays_undamaged() {
        let mesh = rectangle([0.0, 0.0], [1.0, 1.0], [6, 6], Diagonals::Checkerboard).unwrap();
        let records = run_with_mesh(bar_config(0.5, 3), mesh, |_, _| Ok(())).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!(r.iterations, 1);
            assert_eq!(r.d_max, 0.0);
            assert_eq!(r.dissipation, 0.0);
        }
        // uniaxial stress state: E' ε per unit width with ν-free lateral edge
        assert!(records[2].reaction[1] > 0.0);
        let r = &records[2];
        assert!((r.external_work - r.free_energy).abs() < 1e-10 * r.free_energy);
    }

    #[test]
    fn empty_program_produces_nothing() {
        let mesh = rectangle([0.0, 0.0], [1.0, 1.0], [4, 4], Diagonals::Uniform).unwrap();
        let mut calls = 0;
        let r = run_with_mesh(bar_config(1.0, 0), mesh, |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert!(r.is_empty());
        assert_eq!(calls, 0);
    }

    #[test]
    fn repeated_load_is_a_fixed_point() {
        let mesh = notched_strip(1.0, 1.0, 0.2, [10, 10]).unwrap();
        let mut cfg = bar_config(0.0, 0);
        cfg.boundary[2] = BoundaryCondition::tag("right", 0, 1.0);
        cfg.reaction_tag = "right".into();
        cfg.loads = vec![0.6, 0.9, 0.9];
        cfg.tol_d = 1e-8;
        cfg.tol_f = 1e-15;
        let records = run_with_mesh(cfg, mesh, |_, _| Ok(())).unwrap();
        assert!(records[1].d_max > 0.0, "{:?}", records[1]);
        let (a, b) = (&records[1], &records[2]);
        assert!((a.reaction[0] - b.reaction[0]).abs() < 1e-6 * a.reaction[0].abs(), "{a:?}\n{b:?}");
        assert!((a.dissipation - b.dissipation).abs() < 1e-6 * a.dissipation, "{a:?}\n{b:?}");
        assert!(b.iterations <= 2, "{}", b.iterations);
        for r in &records {
            for w in r.potential_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "{:?}", r.potential_history);
            }
        }
        for w in records.windows(2) {
            assert!(w[1].dissipation >= w[0].dissipation);
        }
    }

    #[test]
    fn crack_length_on_synthetic_field() {
        let mesh = rectangle([0.0, 0.0], [40.0, 4.0], [40, 4], Diagonals::Uniform).unwrap();
        let lip = build_lip_mesh(&mesh).unwrap();
        let path = [[0.0, 2.0], [40.0, 2.0]];
        let zero = vec![0.0; mesh.element_count()];
        assert_eq!(crack_length(&zero, &lip, 0.99, &path), 0.0);
        let d: Vec<f64> = lip.vertices().iter().map(|p| if p[0] < 10.0 { 1.0 } else { 0.0 }).collect();
        let a = crack_length(&d, &lip, 0.99, &path);
        // resolved to within one Lip edge
        assert!((a - 10.0).abs() <= 1.5, "{a}");
        // a single broken row of centroids just below the path still counts
        let d: Vec<f64> = lip
            .vertices()
            .iter()
            .map(|p| if p[0] < 20.0 && (p[1] - 1.75).abs() < 0.2 { 1.0 } else { 0.0 })
            .collect();
        assert!(d.iter().any(|&x| x == 1.0));
        let a = crack_length(&d, &lip, 0.99, &path);
        assert!((a - 20.0).abs() <= 1.5, "{a}");
    }

    #[test]
    fn bad_config_rejected() {
        let mesh = rectangle([0.0, 0.0], [1.0, 1.0], [2, 2], Diagonals::Uniform).unwrap();
        let mut c = bar_config(1.0, 2);
        c.tol_d = 0.0;
        assert!(matches!(Simulation::with_mesh(c, mesh.clone()), Err(DriverError::Config(_))));
        let mut c = bar_config(1.0, 2);
        c.reaction_tag = "nowhere".into();
        assert!(Simulation::with_mesh(c, mesh.clone()).is_err());
        let mut c = bar_config(1.0, 2);
        c.boundary[0].tag = "nowhere".into();
        assert!(Simulation::with_mesh(c, mesh).is_err());
    }
}
