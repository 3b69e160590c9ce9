//! Pointwise damage under monotonic uniaxial strain: where it starts, where
//! it saturates, and the softening of the stress in between.

use lipfield::material::{local_damage_update, onset_strain, saturation_strain, stress, MaterialParams, Strain2D};

fn main() -> anyhow::Result<()> {
    let eta: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.1);
    let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.2, eta, 1.0, 1e-6)?;
    let (onset, saturation) = (onset_strain(&mat), saturation_strain(&mat)?);
    println!("onset {onset:.6}  saturation {saturation:.6}");
    println!("{:>10} {:>12} {:>14}", "strain", "damage", "stress xx");
    let mut d = 0.0;
    let top = 1.1 * saturation;
    let steps = 40;
    for k in 0..=steps {
        let eps = top * k as f64 / steps as f64;
        let e = Strain2D::uniaxial(eps);
        d = local_damage_update(&e, d, &mat, 1e-12);
        println!("{eps:>10.4} {d:>12.6} {:>14.6e}", stress(&e, d, &mat)[0]);
    }
    Ok(())
}
