//! Property-based invariants on randomized inputs.

use num_complex::Complex64;
use proptest::prelude::*;

use topocrystal::bloch::{assemble_fiber, hermitian_deviation};
use topocrystal::crystal::{lattice_zd, toblerone};
use topocrystal::graph::{
    dirichlet_form, inner_product, laplacian_apply, GridFunction, Vertex,
};
use topocrystal::perturbation::{hub_example, PerturbedGraph};
use topocrystal::tail::power_tail;

fn grid_function_1d(entries: &[(i64, f64, f64)]) -> GridFunction {
    let mut f = GridFunction::new();
    for &(cell, re, im) in entries {
        f.add_to(Vertex::new(0, vec![cell]), Complex64::new(re, im));
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fiber_matrices_are_hermitian(
        xi0 in 0.0f64..1.0,
        xi1 in 0.0f64..1.0,
        weight in 0.1f64..10.0,
    ) {
        let mut q = lattice_zd(2).quotient().clone();
        q.edges[0].weight = weight;
        let crystal = topocrystal::crystal::TopologicalCrystal::new(q).unwrap();
        let fiber = assemble_fiber(crystal.quotient(), &[xi0, xi1]);
        prop_assert!(hermitian_deviation(&fiber.matrix) <= 1e-13);

        let fiber_t = assemble_fiber(toblerone().quotient(), &[xi0]);
        prop_assert!(hermitian_deviation(&fiber_t.matrix) <= 1e-13);
    }

    #[test]
    fn power_tail_encloses_the_true_remainder(
        p in -5.0f64..-1.2,
        r in 1i64..50,
    ) {
        // compare against a long partial sum plus a crude remainder bound
        let far = 2_000_000i64;
        let mut sum = 0.0;
        for k in (r + 1)..=far {
            sum += (k as f64).powf(p);
        }
        let bound = power_tail(r as f64, p);
        // the enumerated sum is a lower bound for the true tail
        prop_assert!(sum <= bound.hi + 1e-12);
        // and misses at most the integral beyond the enumeration horizon
        let missed = (far as f64).powf(p + 1.0) / (-p - 1.0);
        prop_assert!(sum + missed >= bound.lo - 1e-12);
    }

    #[test]
    fn laplacian_is_negative_semidefinite(
        entries in proptest::collection::vec((-8i64..8, -1.0f64..1.0, -1.0f64..1.0), 1..8),
    ) {
        let pg = hub_example(1, -3.0, 1.0).unwrap().with_enum_radius(24);
        let f = grid_function_1d(&entries);
        let lf = laplacian_apply(&pg, &f);
        let quad = -inner_product(&pg, &lf, &f).re;
        let form = dirichlet_form(&pg, &f);
        // <-Delta f, f> equals the Dirichlet form and is nonnegative
        prop_assert!((quad - form).abs() <= 1e-9 * (1.0 + form.abs()));
        prop_assert!(quad >= -1e-10);
    }

    #[test]
    fn j_preserves_norms_under_random_measures(
        m0 in 0.2f64..5.0,
        m1 in 0.2f64..5.0,
        entries in proptest::collection::vec((-6i64..6, -1.0f64..1.0, -1.0f64..1.0), 1..8),
    ) {
        let mut pg = PerturbedGraph::unperturbed(lattice_zd(1));
        pg.vertex_measure_overrides.insert(Vertex::new(0, vec![0]), m0);
        pg.vertex_measure_overrides.insert(Vertex::new(0, vec![3]), m1);
        let f = grid_function_1d(&entries);
        let base = PerturbedGraph::unperturbed(lattice_zd(1));
        let n0 = topocrystal::graph::norm(&base, &f);
        let n1 = topocrystal::graph::norm(&pg, &pg.j_apply(&f));
        prop_assert!((n0 - n1).abs() <= 1e-12 * (1.0 + n0));
    }

    #[test]
    fn h0_commutes_with_translations(
        entries in proptest::collection::vec((-6i64..6, -1.0f64..1.0, -1.0f64..1.0), 1..8),
        shift in -5i64..5,
    ) {
        use topocrystal::crystal::CrystalOperator;
        use topocrystal::graph::schrodinger_apply;
        let crystal = toblerone();
        let op = CrystalOperator { crystal: &crystal };
        let mut f = GridFunction::new();
        for &(cell, re, im) in &entries {
            f.add_to(Vertex::new((cell.unsigned_abs() % 3) as usize, vec![cell]),
                     Complex64::new(re, im));
        }
        let shifted = {
            let mut g = GridFunction::new();
            for (x, v) in f.iter() {
                g.add_to(x.translated(&[shift]), *v);
            }
            g
        };
        let a = schrodinger_apply(&op, &shifted);
        let b = {
            let hf = schrodinger_apply(&op, &f);
            let mut g = GridFunction::new();
            for (x, v) in hf.iter() {
                g.add_to(x.translated(&[shift]), *v);
            }
            g
        };
        let dev = a.sub(&b).iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
        prop_assert!(dev <= 1e-14);
    }
}
