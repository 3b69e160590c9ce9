//! Node-release analysis of a split strip opened at its left end: strain
//! energy, release rate and critical opening for each crack length.

use lipfield::equilibrium::{gc_from_kic, griffith_critical_curves, two_half_constraints};
use lipfield::material::MaterialParams;
use lipfield::meshgen::split_strip;

fn main() -> anyhow::Result<()> {
    let mat = MaterialParams::new(3500.0, 0.32, 1.0, 1.0, 0.1, 1.0, 1e-6)?;
    let gc = gc_from_kic(&mat, 1.4);
    let mesh = split_strip(20.0, 2.0, [80, 8])?;
    let (constraints, path) = two_half_constraints(
        &mesh,
        ["crack_upper", "crack_lower"],
        [0.0, 0.0],
        ("left_upper", [0.0, 1.0]),
        ("left_lower", [0.0, -1.0]),
    )?;
    println!("Gc {gc:.6} N/mm, {} tied pairs, spacing {} mm", constraints.ties.len(), path.spacing);
    println!("{:>8} {:>14} {:>14} {:>12} {:>12}", "a [mm]", "e1 [N/mm]", "G1", "u_c [mm]", "F_c [N/mm]");
    for r in griffith_critical_curves(&mesh, &constraints, &path, &mat, gc, "left_upper")?.iter().step_by(4) {
        println!("{:>8.2} {:>14.6e} {:>14.6e} {:>12.6e} {:>12.6e}", r.a, r.e1, r.g1, r.u_c, r.f_c);
    }
    Ok(())
}
