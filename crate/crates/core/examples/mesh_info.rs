//! Reads an MSH 2.2 mesh, prints its summary and the longest edge of the
//! Lip-mesh built on its element centroids.

use lipfield::cli::mesh_summary;
use lipfield::mesh::{build_lip_mesh, read_mesh};

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/plate_hole.msh".into());
    let mesh = read_mesh(&path)?;
    print!("{}", mesh_summary(&mesh));
    let lip = build_lip_mesh(&mesh)?;
    let longest = lip.edges().iter().map(|e| e.length).fold(0.0, f64::max);
    println!("longest lip edge {longest:.4}");
    Ok(())
}
