//! Notched strip broken in tension. Compares the energy dissipated per unit
//! crack advance with 4 Yc l, the dissipation of the triangular profile.

use lipfield::driver::{BoundaryCondition, Simulation, SimulationConfig};
use lipfield::material::{dissipation_h, MaterialParams};
use lipfield::meshgen::notched_strip;

fn main() -> anyhow::Result<()> {
    let (width, height, notch, l) = (1.2, 1.5, 0.3, 0.2);
    let mesh = notched_strip(width, height, notch, [30, 36])?;
    let mut cfg = SimulationConfig::new("notched_strip.msh", MaterialParams::new(1.0, 0.2, 1.0, l, 0.1, 1.0, 1e-6)?);
    cfg.boundary = vec![
        BoundaryCondition::tag("left", 0, 0.0),
        BoundaryCondition::point([0.0, 0.0], 1, 0.0),
        BoundaryCondition::tag("right", 0, 1.0),
    ];
    cfg.reaction_tag = "right".into();
    cfg.max_stagger = 5000;
    cfg.crack_path = vec![[0.5 * width, notch], [0.5 * width, height]];
    let mut sim = Simulation::with_mesh(cfg, mesh)?;
    let mut peak: f64 = 0.0;
    for k in 1..=400 {
        let r = sim.step(0.02 * k as f64)?;
        peak = peak.max(r.reaction[0]);
        println!(
            "u {:.2}  F {:.4e}  crack {:.3}  dissipated {:.4e}",
            r.load, r.reaction[0], r.crack_length, r.dissipation
        );
        if r.reaction[0] < 0.01 * peak {
            break;
        }
    }
    let (y0, y1) = (notch + 2.0 * l, height - l);
    let slab: f64 = sim
        .lip
        .vertices()
        .iter()
        .zip(sim.mesh.areas())
        .zip(&sim.damage)
        .filter(|((p, _), _)| p[1] > y0 && p[1] < y1)
        .map(|((_, a), &d)| a * dissipation_h(d).unwrap())
        .sum();
    println!("dissipated per unit advance {:.4} vs 4 Yc l = {:.4}", slab / (y1 - y0), 4.0 * l);
    Ok(())
}
