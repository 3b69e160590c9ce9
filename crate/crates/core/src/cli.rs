//! Command implementations, configuration files and output writers.
//!
//! Configuration files are flat `key = value` lines; `#` starts a comment.
//! Keys `fix`, `load` and `pin` may repeat. Relative paths are resolved against the
//! directory of the configuration file. Output goes to `out_dir`, placed
//! under `$LIPFIELD_OUT` when that variable is set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use serde::Serialize;

use crate::conic::SolverOptions;
use crate::driver::{BoundaryCondition, DriverError, Simulation, SimulationConfig, StepRecord};
use crate::equilibrium::{gc_from_kic, griffith_critical_curves, two_half_constraints, GriffithRow};
use crate::lipfield::{cone_projection, LipError, LipSet};
use crate::material::MaterialParams;
use crate::mesh::{build_lip_mesh, edge_graph, read_mesh, FeMesh, LipMesh, Point};
use crate::meshgen;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Solver(format!("{}: {e}", path.display()))
}

/// Parsed `key = value` file.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    entries: Vec<(String, String)>,
    dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    pub fn parse(text: &str, dir: PathBuf) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value", k + 1)));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", k + 1)));
            }
            entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(Self { entries, dir })
    }

    /// Rejects keys outside `allowed` and repeated single-valued keys.
    fn check_keys(&self, allowed: &[&str], repeatable: &[&str]) -> Result<(), CliError> {
        let mut seen = BTreeMap::new();
        for (key, _) in &self.entries {
            if !allowed.contains(&key.as_str()) && !repeatable.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown key '{key}'")));
            }
            *seen.entry(key.as_str()).or_insert(0) += 1;
        }
        if let Some((k, _)) = seen.iter().find(|(k, &n)| n > 1 && !repeatable.contains(k)) {
            return Err(CliError::Config(format!("key '{k}' given more than once")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }

    fn number(key: &str, v: &str) -> Result<f64, CliError> {
        v.parse::<f64>()
            .map_err(|_| CliError::Config(format!("key '{key}': '{v}' is not a number")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        self.get(key).map_or(Ok(default), |v| Self::number(key, v))
    }

    pub fn f64_req(&self, key: &str) -> Result<f64, CliError> {
        Self::number(key, self.require(key)?)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        self.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| CliError::Config(format!("key '{key}': '{v}' is not a non-negative integer")))
        })
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::Config(format!("key '{key}': '{v}' is not a boolean"))),
        }
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(key)
            .map(|v| {
                v.split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| Self::number(key, s))
                    .collect()
            })
            .transpose()
    }

    pub fn point(&self, key: &str) -> Result<Option<Point>, CliError> {
        match self.list_f64(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some([v[0], v[1]])),
            Some(_) => Err(CliError::Config(format!("key '{key}' expects two numbers"))),
        }
    }

    /// `x y; x y; ...`
    pub fn polyline(&self, key: &str) -> Result<Vec<Point>, CliError> {
        let Some(v) = self.get(key) else { return Ok(Vec::new()) };
        v.split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|p| {
                let xy: Vec<f64> = p
                    .split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| Self::number(key, s))
                    .collect::<Result<_, _>>()?;
                match xy[..] {
                    [x, y] => Ok([x, y]),
                    _ => Err(CliError::Config(format!("key '{key}': point '{}' needs two numbers", p.trim()))),
                }
            })
            .collect()
    }

    pub fn path(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        if p.is_absolute() {
            p
        } else {
            self.dir.join(p)
        }
    }

    pub fn echo(&self) -> BTreeMap<String, Vec<String>> {
        let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (k, v) in &self.entries {
            m.entry(k.clone()).or_default().push(v.clone());
        }
        m
    }

    /// Output directory: `out_dir` (default `default`). When `$LIPFIELD_OUT`
    /// is set it becomes the root: relative `out_dir` is placed under it and
    /// an absolute one keeps only its last component.
    pub fn output_dir(&self, default: &str) -> PathBuf {
        let base = Path::new(self.get("out_dir").unwrap_or(default));
        match std::env::var_os("LIPFIELD_OUT") {
            Some(root) if base.is_absolute() => PathBuf::from(root).join(base.file_name().unwrap_or_default()),
            Some(root) => PathBuf::from(root).join(base),
            None => base.to_path_buf(),
        }
    }

    pub fn material(&self, beta_default: f64) -> Result<MaterialParams, CliError> {
        MaterialParams::new(
            self.f64_req("E")?,
            self.f64_req("nu")?,
            self.f64_req("Yc")?,
            self.f64_req("l")?,
            self.f64_req("eta")?,
            self.f64_or("beta", beta_default)?,
            self.f64_or("k_res", 1e-6)?,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

fn component(key: &str, s: &str) -> Result<usize, CliError> {
    match s {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        _ => Err(CliError::Config(format!("key '{key}': component '{s}' is not x or y"))),
    }
}

/// `tag component [coef]`
fn boundary_condition(key: &str, value: &str, default_coef: f64) -> Result<BoundaryCondition, CliError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let (tag, comp, coef) = match parts[..] {
        [t, c] => (t, c, default_coef),
        [t, c, k] if key == "load" => (t, c, ConfigFile::number(key, k)?),
        _ => {
            return Err(CliError::Config(format!(
                "key '{key}': expected 'tag component{}'",
                if key == "load" { " [coefficient]" } else { "" }
            )))
        }
    };
    Ok(BoundaryCondition::tag(tag, component(key, comp)?, coef))
}

/// `x y component`: the node nearest to (x, y) held at zero.
fn pin(value: &str) -> Result<BoundaryCondition, CliError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let [x, y, c] = parts[..] else {
        return Err(CliError::Config("key 'pin': expected 'x y component'".into()));
    };
    Ok(BoundaryCondition::point(
        [ConfigFile::number("pin", x)?, ConfigFile::number("pin", y)?],
        component("pin", c)?,
        0.0,
    ))
}

const RUN_KEYS: &[&str] = &[
    "mesh",
    "E",
    "nu",
    "Yc",
    "l",
    "eta",
    "beta",
    "k_res",
    "load_steps",
    "u_max",
    "loads",
    "tol_d",
    "tol_f",
    "max_stagger",
    "out_dir",
    "output_every",
    "validate",
    "reaction",
    "crack_path",
    "crack_threshold",
];

/// Builds a simulation configuration from a parsed file.
pub fn simulation_config(cfg: &ConfigFile) -> Result<SimulationConfig, CliError> {
    cfg.check_keys(RUN_KEYS, &["fix", "load", "pin"])?;
    let mesh = cfg.path(cfg.require("mesh")?);
    let mut sc = SimulationConfig::new(mesh, cfg.material(1.0)?);
    sc.loads = match cfg.list_f64("loads")? {
        Some(l) => l,
        None => {
            let steps = cfg
                .get("load_steps")
                .ok_or_else(|| CliError::Config("missing required key 'load_steps' (or 'loads')".into()))?;
            let steps: usize = steps
                .parse()
                .map_err(|_| CliError::Config(format!("key 'load_steps': '{steps}' is not a non-negative integer")))?;
            let u_max = cfg.f64_req("u_max")?;
            (1..=steps).map(|k| u_max * k as f64 / steps as f64).collect()
        }
    };
    for v in cfg.get_all("fix") {
        sc.boundary.push(boundary_condition("fix", v, 0.0)?);
    }
    for v in cfg.get_all("pin") {
        sc.boundary.push(pin(v)?);
    }
    let mut loaded = Vec::new();
    for v in cfg.get_all("load") {
        let bc = boundary_condition("load", v, 1.0)?;
        loaded.push(bc.tag.clone());
        sc.boundary.push(bc);
    }
    if loaded.is_empty() {
        return Err(CliError::Config("missing required key 'load'".into()));
    }
    sc.reaction_tag = cfg.get("reaction").map(str::to_string).unwrap_or_else(|| loaded[0].clone());
    sc.tol_d = cfg.f64_or("tol_d", sc.tol_d)?;
    sc.tol_f = cfg.f64_or("tol_f", sc.tol_f)?;
    sc.max_stagger = cfg.usize_or("max_stagger", sc.max_stagger)?;
    sc.output_every = cfg.usize_or("output_every", 1)?.max(1);
    sc.validate = cfg.bool_or("validate", false)?;
    sc.crack_path = cfg.polyline("crack_path")?;
    sc.crack_threshold = cfg.f64_or("crack_threshold", sc.crack_threshold)?;
    sc.out_dir = Some(cfg.output_dir("out"));
    sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(sc)
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV writer with a unit-bearing header and 17-digit numbers.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> io::Result<Self> {
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, values: &[f64]) -> io::Result<()> {
        debug_assert_eq!(values.len(), self.columns);
        let line: Vec<String> = values.iter().map(|&v| fmt17(v)).collect();
        writeln!(self.out, "{}", line.join(","))?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub const CURVE_HEADER: &[&str] = &[
    "step [-]",
    "load [mm]",
    "reaction_x [N/mm]",
    "reaction_y [N/mm]",
    "iterations [-]",
    "free_energy [N.mm/mm]",
    "dissipation [N.mm/mm]",
    "external_work [N.mm/mm]",
    "crack_length [mm]",
    "d_min [-]",
    "d_max [-]",
];

pub fn curve_row(r: &StepRecord) -> Vec<f64> {
    vec![
        r.step as f64,
        r.load,
        r.reaction[0],
        r.reaction[1],
        r.iterations as f64,
        r.free_energy,
        r.dissipation,
        r.external_work,
        r.crack_length,
        r.d_min,
        r.d_max,
    ]
}

fn vtk_header(s: &mut String, title: &str, points: &[Point], cells: &[[usize; 3]]) {
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(s, "{} {} 0", fmt17(p[0]), fmt17(p[1]));
    }
    let _ = writeln!(s, "CELLS {} {}", cells.len(), 4 * cells.len());
    for c in cells {
        let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", cells.len());
    for _ in cells {
        s.push_str("5\n");
    }
}

fn vtk_scalars(s: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for &v in values {
        s.push_str(&fmt17(v));
        s.push('\n');
    }
}

/// FE mesh with element damage as cell data and displacement as point data.
pub fn write_fe_vtk<W: Write>(mut w: W, mesh: &FeMesh, damage: &[f64], u: &[f64]) -> io::Result<()> {
    let mut s = String::new();
    vtk_header(&mut s, "lipfield damage on the displacement mesh", mesh.nodes(), mesh.triangles());
    let _ = writeln!(s, "CELL_DATA {}", mesh.element_count());
    vtk_scalars(&mut s, "damage", damage);
    let _ = writeln!(s, "POINT_DATA {}", mesh.node_count());
    let _ = writeln!(s, "VECTORS displacement double");
    for n in 0..mesh.node_count() {
        let _ = writeln!(s, "{} {} 0", fmt17(u[2 * n]), fmt17(u[2 * n + 1]));
    }
    w.write_all(s.as_bytes())
}

/// Lip-mesh with named vertex fields as point data.
pub fn write_lip_vtk<W: Write>(mut w: W, lip: &LipMesh, fields: &[(&str, &[f64])]) -> io::Result<()> {
    let mut s = String::new();
    vtk_header(&mut s, "lipfield damage on the Lip-mesh", lip.vertices(), lip.triangles());
    let _ = writeln!(s, "POINT_DATA {}", lip.vertex_count());
    for (name, values) in fields {
        vtk_scalars(&mut s, name, values);
    }
    w.write_all(s.as_bytes())
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub setup_s: f64,
    pub solve_s: f64,
    pub output_s: f64,
}

#[derive(Debug, Serialize)]
pub struct StepFiles {
    pub step: usize,
    pub load: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_file: String,
    pub config: BTreeMap<String, Vec<String>>,
    pub resolved: C,
    pub status: String,
    pub timings: Timings,
    pub outputs: Vec<String>,
    pub steps: Vec<StepFiles>,
}

impl<C: Serialize> RunManifest<C> {
    fn new(command: &'static str, path: &Path, cfg: &ConfigFile, resolved: C) -> Self {
        Self {
            tool: "lipfield",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_file: path.display().to_string(),
            config: cfg.echo(),
            resolved,
            status: "running".into(),
            timings: Timings::default(),
            outputs: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(solver_err)?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn single_threaded_factorizations() {
    // fixed reduction order keeps repeated runs byte-identical
    faer::set_global_parallelism(faer::Par::Seq);
}

/// `run <config>`: staggered simulation with per-step fields and a load curve.
pub fn cmd_run(config: &Path) -> Result<(), CliError> {
    single_threaded_factorizations();
    let t0 = Instant::now();
    let cfg = ConfigFile::load(config)?;
    let sc = simulation_config(&cfg)?;
    let out = sc.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mesh = read_mesh(&sc.mesh).map_err(|e| CliError::Config(format!("mesh {}: {e}", sc.mesh.display())))?;
    let mut sim = Simulation::with_mesh(sc.clone(), mesh).map_err(|e| match e {
        DriverError::Equilibrium(_) | DriverError::Config(_) | DriverError::Mesh(_) | DriverError::Material(_) => {
            CliError::Config(e.to_string())
        }
        other => solver_err(other),
    })?;
    prepare_dir(&out)?;
    prepare_dir(&out.join("fields"))?;
    let mut manifest = RunManifest::new("run", config, &cfg, &sc);
    manifest.timings.setup_s = t0.elapsed().as_secs_f64();
    let curve_path = out.join("curve.csv");
    let mut curve = CsvWriter::new(create(&curve_path)?, CURVE_HEADER).map_err(|e| io_err(&curve_path, e))?;
    manifest.outputs.push("curve.csv".into());
    manifest.write(&out)?;
    let steps = sc.loads.len();
    let mut failure = None;
    for (k, &load) in sc.loads.iter().enumerate() {
        let ts = Instant::now();
        let record = match sim.step(load) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(solver_err(format!("step {} (load {load}): {e}", k + 1)));
                break;
            }
        };
        manifest.timings.solve_s += ts.elapsed().as_secs_f64();
        let to = Instant::now();
        curve.row(&curve_row(&record)).map_err(|e| io_err(&curve_path, e))?;
        let mut files = Vec::new();
        if (k + 1) % sc.output_every == 0 || k + 1 == steps {
            let fe = format!("fields/fe_{:04}.vtk", record.step);
            let lip = format!("fields/lip_{:04}.vtk", record.step);
            let mut w = create(&out.join(&fe))?;
            write_fe_vtk(&mut w, &sim.mesh, &sim.damage, &sim.solution.u)
                .and_then(|_| w.flush())
                .map_err(|e| io_err(&out.join(&fe), e))?;
            let mut w = create(&out.join(&lip))?;
            write_lip_vtk(&mut w, &sim.lip, &[("damage", &sim.damage)])
                .and_then(|_| w.flush())
                .map_err(|e| io_err(&out.join(&lip), e))?;
            files = vec![fe, lip];
        }
        if let Some(v) = &record.validation {
            info!(
                "step {}: bounds vs brute force {:.3e}, patched vs full-domain {:.3e}",
                record.step, v.bounds_discrepancy, v.oracle_discrepancy
            );
        }
        manifest.steps.push(StepFiles {
            step: record.step,
            load,
            files,
        });
        manifest.timings.output_s += to.elapsed().as_secs_f64();
        manifest.write(&out)?;
    }
    manifest.status = match &failure {
        Some(e) => format!("failed: {e}"),
        None => "ok".into(),
    };
    manifest.write(&out)?;
    match failure {
        Some(e) => Err(e),
        None => {
            info!("wrote {} steps to {}", manifest.steps.len(), out.display());
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct ProjectSettings {
    side: f64,
    l: f64,
    l_bar: f64,
    resolutions: Vec<usize>,
    set: &'static str,
}

/// `project <config>`: L² Lipschitz projection of a cone on refined meshes.
pub fn cmd_project(config: &Path) -> Result<(), CliError> {
    single_threaded_factorizations();
    let t0 = Instant::now();
    let cfg = ConfigFile::load(config)?;
    cfg.check_keys(&["side", "l", "l_bar", "resolutions", "set", "out_dir"], &[])?;
    let set = match cfg.get("set").unwrap_or("lh") {
        "lh" => LipSet::Lh,
        "lh_plus" => LipSet::LhPlus,
        s => return Err(CliError::Config(format!("key 'set': '{s}' is not lh or lh_plus"))),
    };
    let resolutions: Vec<usize> = match cfg.list_f64("resolutions")? {
        Some(v) => v
            .into_iter()
            .map(|x| {
                if x >= 2.0 && x.fract() == 0.0 && (x as usize) % 2 == 0 {
                    Ok(x as usize)
                } else {
                    Err(CliError::Config(format!("key 'resolutions': {x} is not an even integer ≥ 2")))
                }
            })
            .collect::<Result<_, _>>()?,
        None => vec![8, 16, 32],
    };
    let settings = ProjectSettings {
        side: cfg.f64_or("side", 1.0)?,
        l: cfg.f64_or("l", 1.0)?,
        l_bar: cfg.f64_or("l_bar", 0.25)?,
        resolutions,
        set: if set == LipSet::Lh { "lh" } else { "lh_plus" },
    };
    if !(settings.side > 0.0 && settings.l > 0.0 && settings.l_bar > 0.0) {
        return Err(CliError::Config("side, l and l_bar must be positive".into()));
    }
    if settings.l_bar >= settings.l {
        return Err(CliError::Config(format!(
            "degenerate benchmark: l_bar = {} ≥ l = {}, the input is already Lipschitz",
            settings.l_bar, settings.l
        )));
    }
    let out = cfg.output_dir("projection");
    prepare_dir(&out)?;
    let mut manifest = RunManifest::new("project", config, &cfg, &settings);
    manifest.timings.setup_s = t0.elapsed().as_secs_f64();
    let csv_path = out.join("projection.csv");
    let mut csv = CsvWriter::new(
        create(&csv_path)?,
        &["L_over_h [-]", "h_over_L [-]", "rel_l2_error [-]", "peak [-]", "exact_peak [-]"],
    )
    .map_err(|e| io_err(&csv_path, e))?;
    manifest.outputs.push("projection.csv".into());
    for (k, &cells) in settings.resolutions.iter().enumerate() {
        let ts = Instant::now();
        let r = cone_projection(settings.side, settings.l, settings.l_bar, cells, set, &SolverOptions::default())
            .map_err(|e| match e {
                LipError::Degenerate(m) => CliError::Config(format!("degenerate benchmark: {m}")),
                other => solver_err(other),
            })?;
        manifest.timings.solve_s += ts.elapsed().as_secs_f64();
        let to = Instant::now();
        info!("L/h = {cells}: relative L2 error {:.6e}, peak {:.6}", r.rel_error, r.peak);
        csv.row(&[cells as f64, r.h_over_side, r.rel_error, r.peak, r.exact_peak])
            .map_err(|e| io_err(&csv_path, e))?;
        let name = format!("projection_{cells:03}.vtk");
        let lip = r.mesh.as_ref().expect("benchmark keeps its mesh");
        let exact: Vec<f64> = lip
            .vertices()
            .iter()
            .map(|p| (r.exact_peak - (p[0] * p[0] + p[1] * p[1]).sqrt() / settings.l).max(0.0))
            .collect();
        let mut w = create(&out.join(&name))?;
        write_lip_vtk(&mut w, lip, &[("input", &r.input), ("projected", &r.projected), ("exact", &exact)])
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&out.join(&name), e))?;
        manifest.steps.push(StepFiles {
            step: k + 1,
            load: cells as f64,
            files: vec![name],
        });
        manifest.timings.output_s += to.elapsed().as_secs_f64();
    }
    manifest.status = "ok".into();
    manifest.write(&out)
}

#[derive(Debug, Serialize)]
struct GriffithSettings {
    mesh: String,
    material: MaterialParams,
    k_ic: Option<f64>,
    gc: f64,
    crack: [String; 2],
    origin: Point,
    grips: [(String, Point); 2],
}

pub const GRIFFITH_HEADER: &[&str] = &[
    "a [mm]",
    "e1 [N.mm/mm at unit opening]",
    "G1 [N/mm at unit opening]",
    "u_c [mm]",
    "F_c [N/mm]",
];

pub fn griffith_row(r: &GriffithRow) -> Vec<f64> {
    vec![r.a, r.e1, r.g1, r.u_c, r.f_c]
}

/// `griffith <config>`: critical opening and force versus crack length.
pub fn cmd_griffith(config: &Path) -> Result<(), CliError> {
    single_threaded_factorizations();
    let t0 = Instant::now();
    let cfg = ConfigFile::load(config)?;
    cfg.check_keys(
        &[
            "mesh",
            "strip",
            "E",
            "nu",
            "K_Ic",
            "Gc",
            "crack_upper",
            "crack_lower",
            "crack_origin",
            "grip_upper",
            "grip_upper_center",
            "grip_lower",
            "grip_lower_center",
            "out_dir",
        ],
        &[],
    )?;
    let (mesh, mesh_name) = match (cfg.get("mesh"), cfg.list_f64("strip")?) {
        (Some(m), None) => {
            let p = cfg.path(m);
            let mesh = read_mesh(&p).map_err(|e| CliError::Config(format!("mesh {}: {e}", p.display())))?;
            (mesh, p.display().to_string())
        }
        (None, Some(v)) => {
            let [len, half, nx, ny] = v[..] else {
                return Err(CliError::Config("key 'strip' expects: length half_height nx ny".into()));
            };
            let mesh = meshgen::split_strip(len, half, [nx as usize, ny as usize]).map_err(|e| CliError::Config(e.to_string()))?;
            (mesh, format!("split strip {len} x {} ({nx} x {ny} cells per half)", 2.0 * half))
        }
        (Some(_), Some(_)) => return Err(CliError::Config("give either 'mesh' or 'strip', not both".into())),
        (None, None) => return Err(CliError::Config("missing required key 'mesh' (or 'strip')".into())),
    };
    let young = cfg.f64_req("E")?;
    let poisson = cfg.f64_req("nu")?;
    let material = MaterialParams::new(young, poisson, 1.0, 1.0, 0.0, 1.0, 1e-6).map_err(|e| CliError::Config(e.to_string()))?;
    let k_ic = cfg.get("K_Ic").map(|v| ConfigFile::number("K_Ic", v)).transpose()?;
    let gc = match (k_ic, cfg.get("Gc")) {
        (Some(k), None) => gc_from_kic(&material, k),
        (None, Some(g)) => ConfigFile::number("Gc", g)?,
        (Some(_), Some(_)) => return Err(CliError::Config("give either 'K_Ic' or 'Gc', not both".into())),
        (None, None) => return Err(CliError::Config("missing required key 'K_Ic' (or 'Gc')".into())),
    };
    if !(gc > 0.0) {
        return Err(CliError::Config(format!("critical release rate must be positive, got {gc}")));
    }
    let (lo, hi) = mesh.bounding_box();
    let settings = GriffithSettings {
        mesh: mesh_name,
        material,
        k_ic,
        gc,
        crack: [
            cfg.get("crack_upper").unwrap_or("crack_upper").to_string(),
            cfg.get("crack_lower").unwrap_or("crack_lower").to_string(),
        ],
        origin: cfg.point("crack_origin")?.unwrap_or([lo[0], 0.5 * (lo[1] + hi[1])]),
        grips: [
            (
                cfg.get("grip_upper").unwrap_or("left_upper").to_string(),
                cfg.point("grip_upper_center")?.unwrap_or([lo[0], hi[1]]),
            ),
            (
                cfg.get("grip_lower").unwrap_or("left_lower").to_string(),
                cfg.point("grip_lower_center")?.unwrap_or([lo[0], lo[1]]),
            ),
        ],
    };
    let (constraints, path) = two_half_constraints(
        &mesh,
        [&settings.crack[0], &settings.crack[1]],
        settings.origin,
        (&settings.grips[0].0, settings.grips[0].1),
        (&settings.grips[1].0, settings.grips[1].1),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let out = cfg.output_dir("griffith");
    prepare_dir(&out)?;
    let mut manifest = RunManifest::new("griffith", config, &cfg, &settings);
    manifest.timings.setup_s = t0.elapsed().as_secs_f64();
    let ts = Instant::now();
    let rows = griffith_critical_curves(&mesh, &constraints, &path, &material, gc, &settings.grips[0].0).map_err(solver_err)?;
    manifest.timings.solve_s = ts.elapsed().as_secs_f64();
    let csv_path = out.join("griffith.csv");
    let mut csv = CsvWriter::new(create(&csv_path)?, GRIFFITH_HEADER).map_err(|e| io_err(&csv_path, e))?;
    for r in &rows {
        csv.row(&griffith_row(r)).map_err(|e| io_err(&csv_path, e))?;
    }
    manifest.outputs.push("griffith.csv".into());
    info!("Gc = {gc:.6e} N/mm; {} crack lengths written to {}", rows.len(), csv_path.display());
    manifest.status = "ok".into();
    manifest.write(&out)
}

/// Human-readable mesh summary.
pub fn mesh_summary(mesh: &FeMesh) -> String {
    let mut s = String::new();
    let (lo, hi) = mesh.bounding_box();
    let _ = writeln!(s, "nodes        {}", mesh.node_count());
    let _ = writeln!(s, "elements     {}", mesh.element_count());
    let _ = writeln!(s, "area         {:.9e}", mesh.total_area());
    let _ = writeln!(s, "bounding box [{}, {}] x [{}, {}]", lo[0], hi[0], lo[1], hi[1]);
    let _ = writeln!(
        s,
        "boundaries   {} loops, {} holes",
        mesh.boundary_loops().len(),
        mesh.hole_loops().count()
    );
    let mut tags: BTreeMap<i32, usize> = BTreeMap::new();
    for e in mesh.boundary_edges() {
        *tags.entry(e.tag).or_default() += 1;
    }
    for (tag, count) in tags {
        let name = mesh.physical_names().get(&tag).map(String::as_str).unwrap_or("-");
        let _ = writeln!(s, "  tag {tag:>4} {name:<16} {count} edges, {} nodes", mesh.nodes_with_tag(tag).len());
    }
    let sizes: Vec<f64> = mesh.areas().iter().map(|a| (2.0 * a).sqrt()).collect();
    let hmin = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let hmax = sizes.iter().copied().fold(0.0, f64::max);
    let _ = writeln!(s, "element size {hmin:.4e} .. {hmax:.4e} (sqrt of twice the area)");
    match build_lip_mesh(mesh) {
        Ok(lip) => {
            let g = edge_graph(&lip);
            let _ = writeln!(
                s,
                "lip-mesh     {} vertices, {} triangles, {} edges",
                lip.vertex_count(),
                lip.triangle_count(),
                g.edge_count()
            );
        }
        Err(e) => {
            let _ = writeln!(s, "lip-mesh     unavailable: {e}");
        }
    }
    s
}

/// `mesh-info <mesh>`
pub fn cmd_mesh_info(path: &Path) -> Result<String, CliError> {
    let mesh = read_mesh(path).map_err(|e| CliError::Config(format!("mesh {}: {e}", path.display())))?;
    Ok(mesh_summary(&mesh))
}

/// Runs a command and maps the outcome to an exit code, printing a
/// one-line diagnosis on failure.
pub fn exit_code(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            eprintln!("lipfield: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_repeats() {
        let c = ConfigFile::parse("# header\nE = 1 # modulus\nfix = left x\nfix = bottom y\n\n", PathBuf::from("/tmp")).unwrap();
        assert_eq!(c.get("E"), Some("1"));
        assert_eq!(c.get_all("fix"), vec!["left x", "bottom y"]);
        assert_eq!(c.path("m.msh"), PathBuf::from("/tmp/m.msh"));
        assert!(ConfigFile::parse("novalue\n", PathBuf::new()).is_err());
    }

    #[test]
    fn missing_mesh_names_key() {
        let c = ConfigFile::parse("E = 1\nnu = 0.2\nYc = 1\nl = 0.2\neta = 0.1\n", PathBuf::new()).unwrap();
        let e = simulation_config(&c).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        assert!(e.to_string().contains("'mesh'"), "{e}");
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let c = ConfigFile::parse("mesh = a\nmesh = b\n", PathBuf::new()).unwrap();
        assert!(simulation_config(&c).unwrap_err().to_string().contains("more than once"));
        let c = ConfigFile::parse("meshh = a\n", PathBuf::new()).unwrap();
        assert!(simulation_config(&c).unwrap_err().to_string().contains("unknown key"));
    }

    #[test]
    fn full_run_config() {
        let text = "mesh = plate.msh\nE = 1\nnu = 0.2\nYc = 1\nl = 0.2\neta = 0.1\nload_steps = 4\nu_max = 0.2\n\
                    fix = left x\npin = -1 0 y\nload = right x\ncrack_path = 0 0; 1 0\nvalidate = true\n";
        let c = ConfigFile::parse(text, PathBuf::from("/data")).unwrap();
        let sc = simulation_config(&c).unwrap();
        assert_eq!(sc.loads.len(), 4);
        assert!((sc.loads[3] - 0.2).abs() < 1e-15);
        assert_eq!(sc.boundary.len(), 3);
        assert_eq!(sc.boundary[1].at, Some([-1.0, 0.0]));
        assert_eq!(sc.boundary[2].coef, 1.0);
        assert_eq!(sc.reaction_tag, "right");
        assert_eq!(sc.mesh, PathBuf::from("/data/plate.msh"));
        assert_eq!(sc.crack_path, vec![[0.0, 0.0], [1.0, 0.0]]);
        assert!(sc.validate);
    }

    #[test]
    fn number_format_has_17_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(-2.0), "-2.0000000000000000e0");
        let back: f64 = fmt17(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut w = CsvWriter::new(Vec::new(), &["a [mm]", "b [-]"]).unwrap();
        w.row(&[1.0, 0.5]).unwrap();
        let s = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(s, "a [mm],b [-]\n1.0000000000000000e0,5.0000000000000000e-1\n");
    }

    #[test]
    fn vtk_counts() {
        let m = meshgen::rectangle([0.0, 0.0], [1.0, 1.0], [2, 2], meshgen::Diagonals::Uniform).unwrap();
        let mut buf = Vec::new();
        write_fe_vtk(&mut buf, &m, &vec![0.5; 8], &vec![0.0; 18]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert!(s.contains("CELL_DATA 8"));
        assert!(s.contains("POINT_DATA 9"));
        let lip = build_lip_mesh(&m).unwrap();
        let mut buf = Vec::new();
        write_lip_vtk(&mut buf, &lip, &[("damage", &vec![0.0; 8])]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains(&format!("POINTS {} double", lip.vertex_count())));
        assert!(s.contains("SCALARS damage double 1"));
    }
}
