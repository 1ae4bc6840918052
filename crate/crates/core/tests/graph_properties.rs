mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use transgp::graph::*;
use transgp::Error;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..12, any::<u64>(), 0.1f64..0.9).prop_map(|(n, seed, p)| common::random_graph(&mut common::rng(seed), n, p))
}

proptest! {
    #![proptest_config(common::fixed_cases(64))]

    #[test]
    fn degrees_are_row_sums(g in graph_strategy()) {
        for i in 0..g.n() {
            let row: f64 = g.adjacency().row(i).sum();
            prop_assert_eq!(g.degrees()[i], row);
        }
    }

    #[test]
    fn laplacian_is_symmetric_psd_with_bounded_spectrum(g in graph_strategy()) {
        let l = normalized_laplacian(&g);
        prop_assert_eq!(&l, &l.transpose());
        let sd = spectral_decompose(&l).unwrap();
        for w in sd.eigenvalues.as_slice().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for &v in sd.eigenvalues.iter() {
            prop_assert!((0.0..=2.0 + 1e-8).contains(&v), "eigenvalue {}", v);
        }
        let n = g.n();
        let gram = sd.eigenvectors.transpose() * &sd.eigenvectors;
        prop_assert!(common::max_abs_diff(&gram, &DMatrix::identity(n, n)) < 1e-8);
        prop_assert!(common::max_abs_diff(&sd.reconstruct(), &l) < 1e-8);
    }

    #[test]
    fn knn_graph_is_symmetric_unweighted_loop_free(seed in any::<u64>(), n in 3usize..30, k in 1usize..4) {
        prop_assume!(k < n);
        let x = common::random_points(&mut common::rng(seed), n, 2);
        let g = build_knn_graph(&x, k).unwrap();
        let a = g.adjacency();
        for i in 0..n {
            prop_assert_eq!(a[(i, i)], 0.0);
            let mut out_degree = 0;
            for j in 0..n {
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                prop_assert!(a[(i, j)] == 0.0 || a[(i, j)] == 1.0);
                out_degree += (a[(i, j)] > 0.0) as usize;
            }
            prop_assert!(out_degree >= k);
        }
    }

    #[test]
    fn homophily_is_a_fraction(g in graph_strategy(), seed in any::<u64>()) {
        prop_assume!(g.edge_count() > 0);
        let labels: Vec<usize> = (0..g.n()).map(|i| (seed as usize).wrapping_add(i * 7) % 3).collect();
        let h = homophily_ratio(&g, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn symmetrize_is_idempotent(seed in any::<u64>(), n in 1usize..8) {
        let a = common::random_points(&mut common::rng(seed), n, n);
        let s = symmetrize_adjacency(&a).unwrap();
        prop_assert_eq!(symmetrize_adjacency(&s).unwrap(), s.clone());
        prop_assert_eq!(&s, &s.transpose());
    }
}

#[test]
fn triangle_spectrum_matches_direct_eigensolve() {
    let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
    let l = normalized_laplacian(&g);
    let mut oracle: Vec<f64> = l.clone().symmetric_eigenvalues().iter().copied().collect();
    oracle.sort_by(f64::total_cmp);
    let sd = spectral_decompose(&l).unwrap();
    for (a, b) in sd.eigenvalues.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in sd.eigenvalues.iter().zip([0.0, 1.5, 1.5]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn random_six_node_reconstruction() {
    let g = common::random_graph(&mut common::rng(6), 6, 0.6);
    let l = normalized_laplacian(&g);
    let sd = spectral_decompose(&l).unwrap();
    assert!(common::max_abs_diff(&sd.reconstruct(), &l) < 1e-8);
}

#[test]
fn identity_decomposes_to_unit_spectrum() {
    let sd = spectral_decompose(&DMatrix::identity(4, 4)).unwrap();
    assert!(sd.eigenvalues.iter().all(|v| (v - 1.0).abs() < 1e-14));
    assert!(common::max_abs_diff(&sd.reconstruct(), &DMatrix::identity(4, 4)) < 1e-12);
}

#[test]
fn non_symmetric_input_is_rejected() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(matches!(spectral_decompose(&m), Err(Error::Symmetry { .. })));
}

#[test]
fn knn_with_k_equal_n_minus_one_is_complete() {
    let x = common::random_points(&mut common::rng(1), 7, 3);
    let g = build_knn_graph(&x, 6).unwrap();
    assert_eq!(g.edge_count(), 21);
    assert!(matches!(build_knn_graph(&x, 7), Err(Error::Parameter(_))));
}

#[test]
fn edgeless_homophily_is_undefined() {
    let g = Graph::from_adjacency(DMatrix::zeros(3, 3)).unwrap();
    assert!(matches!(homophily_ratio(&g, &[0, 1, 2]), Err(Error::EdgelessGraph)));
}
