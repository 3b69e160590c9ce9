//! Square plate with a central hole pulled along x until it breaks. Prints
//! the load-displacement curve; pass a mesh size to change the resolution.

use lipfield::driver::{BoundaryCondition, Simulation, SimulationConfig};
use lipfield::material::MaterialParams;
use lipfield::meshgen::plate_with_hole;

fn main() -> anyhow::Result<()> {
    let h: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.055);
    let mesh = plate_with_hole(2.0, 0.2, h)?;
    println!("{} nodes, {} elements", mesh.node_count(), mesh.element_count());
    let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.2, 0.1, 1.0, 1e-6)?;
    let mut cfg = SimulationConfig::new("plate_hole.msh", mat).uniform_loads(2.4, 120);
    cfg.boundary = vec![
        BoundaryCondition::tag("left", 0, 0.0),
        BoundaryCondition::point([-1.0, 0.0], 1, 0.0),
        BoundaryCondition::tag("right", 0, 1.0),
    ];
    cfg.reaction_tag = "right".into();
    cfg.max_stagger = 5000;
    let loads = cfg.loads.clone();
    let mut sim = Simulation::with_mesh(cfg, mesh)?;
    let mut peak: f64 = 0.0;
    println!("{:>8} {:>12} {:>8} {:>6}", "u [mm]", "F [N/mm]", "d max", "iters");
    for load in loads {
        let r = sim.step(load)?;
        println!("{:>8.3} {:>12.5e} {:>8.4} {:>6}", r.load, r.reaction[0], r.d_max, r.iterations);
        peak = peak.max(r.reaction[0]);
        if r.reaction[0] < 0.05 * peak {
            break;
        }
    }
    Ok(())
}
