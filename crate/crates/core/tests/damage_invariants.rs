//! Invariants of the damage update on small random problems.

use lipfield::lipfield::{damage_step, full_domain_minimize, lipschitz_check, max_abs_diff, DamageOptions, LipSet};
use lipfield::material::{local_objective_f, MaterialParams, Strain2D};
use lipfield::mesh::{build_lip_mesh, edge_graph};
use lipfield::meshgen::{self, Diagonals};
use proptest::prelude::*;

fn objective(strains: &[Strain2D], areas: &[f64], d: &[f64], mat: &MaterialParams) -> f64 {
    (0..d.len()).map(|i| areas[i] * local_objective_f(&strains[i], d[i], mat)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn damage_step_is_admissible_and_optimal(
        cells in 4usize..9,
        l in 0.1..0.4f64,
        beta in 0.0..1.0f64,
        peak in 1.0..10.0f64,
        center in (0.2..0.8f64, 0.2..0.8f64),
        angle in 0.0..3.2f64,
        prestrain in 0.3..0.9f64,
    ) {
        let mesh = meshgen::rectangle([0.0, 0.0], [1.0, 1.0], [cells, cells], Diagonals::Checkerboard).unwrap();
        let lip = build_lip_mesh(&mesh).unwrap();
        let graph = edge_graph(&lip);
        let mat = MaterialParams::new(1.0, 0.2, 1.0, l, 0.1, beta, 1e-6).unwrap();
        let areas = mesh.areas().to_vec();
        let field = |s: f64| -> Vec<Strain2D> {
            lip.vertices()
                .iter()
                .map(|p| {
                    let r2 = (p[0] - center.0).powi(2) + (p[1] - center.1).powi(2);
                    Strain2D::uniaxial(s * peak * (-r2 / 0.05).exp()).rotated(angle)
                })
                .collect()
        };
        let opts = DamageOptions::default();
        let zero = vec![0.0; lip.vertex_count()];
        let d_n = damage_step(&field(prestrain), &areas, &zero, None, &lip, &graph, &mat, &opts).unwrap().d;
        let strains = field(1.0);
        let step = damage_step(&strains, &areas, &d_n, None, &lip, &graph, &mat, &opts).unwrap();

        for v in 0..d_n.len() {
            prop_assert!(step.d[v] >= d_n[v] - 1e-12);
            prop_assert!(step.d[v] <= 1.0);
        }
        prop_assert!(lipschitz_check(&step.d, &lip, l, LipSet::Lh) <= 1e-8);
        let f_n = objective(&strains, &areas, &d_n, &mat);
        let f = objective(&strains, &areas, &step.d, &mat);
        prop_assert!(f <= f_n + 1e-10 * f_n.abs());

        let full = full_domain_minimize(&strains, &areas, &d_n, &step.d_loc, &lip, &mat, LipSet::Lh, &opts.solver).unwrap();
        prop_assert!(max_abs_diff(&full, &step.d) <= 1e-6);
    }

    #[test]
    fn unloaded_step_keeps_previous_damage(cells in 3usize..7, level in 0.0..1.0f64) {
        let mesh = meshgen::rectangle([0.0, 0.0], [1.0, 1.0], [cells, cells], Diagonals::Uniform).unwrap();
        let lip = build_lip_mesh(&mesh).unwrap();
        let graph = edge_graph(&lip);
        let mat = MaterialParams::new(1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 1e-6).unwrap();
        let d_n = vec![level; lip.vertex_count()];
        let strains = vec![Strain2D::new(0.0, 0.0, 0.0); lip.vertex_count()];
        let step = damage_step(&strains, mesh.areas(), &d_n, None, &lip, &graph, &mat, &DamageOptions::default()).unwrap();
        prop_assert_eq!(step.solves, 0);
        prop_assert_eq!(step.d, d_n);
    }
}
