//! Writes the fixture meshes used by the sample configurations as MSH 2.2
//! files: the plate with a hole, a notched strip and a split strip.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use lipfield::meshgen::{notched_strip, plate_with_hole, split_strip};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let h: f64 = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(0.055);
    std::fs::create_dir_all(&dir)?;
    let meshes = [
        ("plate_hole.msh", plate_with_hole(2.0, 0.2, h)?),
        ("notched_strip.msh", notched_strip(2.0, 1.0, 0.3, [60, 30])?),
        ("split_strip.msh", split_strip(40.0, 4.0, [80, 8])?),
    ];
    for (name, mesh) in meshes {
        let path = dir.join(name);
        mesh.write_msh(BufWriter::new(File::create(&path)?))?;
        println!("{}: {} nodes, {} elements", path.display(), mesh.node_count(), mesh.element_count());
    }
    Ok(())
}
