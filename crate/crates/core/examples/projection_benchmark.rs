//! L² projection of a steep cone onto the 1/l-Lipschitz set, on refined
//! structured meshes.

use lipfield::conic::SolverOptions;
use lipfield::lipfield::{cone_projection, LipSet};

fn main() -> anyhow::Result<()> {
    let (side, l, l_bar) = (1.0, 1.0, 0.25);
    println!("{:>6} {:>12} {:>14} {:>10}", "L/h", "peak", "rel L2 error", "ratio");
    let mut previous: Option<f64> = None;
    for cells in [8, 16, 32, 64] {
        for set in [LipSet::Lh] {
            let r = cone_projection(side, l, l_bar, cells, set, &SolverOptions::default())?;
            let ratio = previous.map(|p| p / r.rel_error).unwrap_or(f64::NAN);
            println!("{:>6} {:>12.6} {:>14.6e} {:>10.3}", cells, r.peak, r.rel_error, ratio);
            previous = Some(r.rel_error);
        }
    }
    println!("exact peak {:.6}", (l_bar / l).powf(2.0 / 3.0));
    Ok(())
}
