//! Lipschitz envelopes of a spiky local damage field and the patch of
//! vertices left to the constrained solve.

use lipfield::lipfield::{bruteforce_bounds, dijkstra_bounds, extract_patch, lipschitz_check, max_abs_diff, LipSet};
use lipfield::mesh::{build_lip_mesh, edge_graph};
use lipfield::meshgen::{rectangle, Diagonals};

fn main() -> anyhow::Result<()> {
    let mesh = rectangle([0.0, 0.0], [1.0, 1.0], [12, 12], Diagonals::Checkerboard)?;
    let lip = build_lip_mesh(&mesh)?;
    let graph = edge_graph(&lip);
    let l = 0.15;
    // two spikes over a flat background
    let spikes = [lip.nearest_vertex([0.3, 0.3]), lip.nearest_vertex([0.7, 0.6])];
    let mut d_loc = vec![0.05; lip.vertex_count()];
    d_loc[spikes[0]] = 1.0;
    d_loc[spikes[1]] = 0.6;
    let d_n = vec![0.0; lip.vertex_count()];

    let bounds = dijkstra_bounds(&d_loc, &graph, l);
    let brute = bruteforce_bounds(&d_loc, &graph, l);
    println!(
        "{} vertices, dijkstra vs all-pairs: {:.1e}",
        lip.vertex_count(),
        max_abs_diff(&bounds.upper, &brute.upper).max(max_abs_diff(&bounds.lower, &brute.lower))
    );
    println!(
        "edge slope excess: lower {:.1e}, upper {:.1e}",
        lipschitz_check(&bounds.lower, &lip, l, LipSet::LhPlus),
        lipschitz_check(&bounds.upper, &lip, l, LipSet::LhPlus)
    );
    let patch = extract_patch(&bounds, &d_loc, &d_n, 1e-9);
    println!(
        "active vertices {} of {}, active triangles {}",
        patch.active_count(),
        lip.vertex_count(),
        patch.active_triangles(&lip).len()
    );
    for (name, v) in [("first spike", spikes[0]), ("second spike", spikes[1])] {
        println!("{name}: d_loc {:.3} lower {:.3} upper {:.3}", d_loc[v], bounds.lower[v], bounds.upper[v]);
    }
    Ok(())
}
