use std::collections::VecDeque;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use serial_consensus::graph::{make_family, DirectedWeightedGraph, GraphFamily};
use serial_consensus::linalg::inf_norm;
use serial_consensus::random::{random_digraph, seeded};
use serial_consensus::sparsity::{
    boolean_product, check_product_lemma, check_sum_lemma, hop_mask, in_class, random_masked_feedback, support,
    FeedbackClassSpec, Operand,
};
use serial_consensus::Error;

fn family() -> impl Strategy<Value = GraphFamily> {
    prop_oneof![
        Just(GraphFamily::DirectedCycle),
        Just(GraphFamily::LeaderChain),
        Just(GraphFamily::Path),
        Just(GraphFamily::Complete),
    ]
}

/// Digraph from a seed, so shrinking stays meaningful.
fn digraph(seed: u64, n: usize, density: f64) -> DirectedWeightedGraph {
    random_digraph(&mut seeded(seed), n, density)
}

/// BFS hop distances from `source` along arcs `j → i` (W[i][j] > 0).
fn hop_distances(g: &DirectedWeightedGraph, source: usize) -> Vec<Option<usize>> {
    let n = g.n_nodes();
    let mut dist = vec![None; n];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if g.weights()[(i, j)] > 0.0 && dist[i].is_none() {
                dist[i] = Some(dist[j].unwrap() + 1);
                queue.push_back(i);
            }
        }
    }
    dist
}

/// Spanning-tree oracle: some root reaches everyone in the transitive
/// closure `(I + W)^N` over the booleans.
fn closure_has_root(g: &DirectedWeightedGraph) -> bool {
    let n = g.n_nodes();
    let step = DMatrix::from_fn(n, n, |i, j| i == j || g.weights()[(i, j)] > 0.0);
    let mut reach = step.clone();
    for _ in 0..n {
        reach = boolean_product(&step, &reach);
    }
    (0..n).any(|root| (0..n).all(|i| reach[(i, root)]))
}

#[test]
fn cycle_of_four_laplacian() {
    let l = make_family(GraphFamily::DirectedCycle, 4).unwrap().laplacian();
    let expected = DMatrix::from_row_slice(
        4,
        4,
        &[1., 0., 0., -1., -1., 1., 0., 0., 0., -1., 1., 0., 0., 0., -1., 1.],
    );
    assert_eq!(l.matrix(), &expected);
}

#[test]
fn leader_chain_of_five_has_spanning_tree() {
    let g = make_family(GraphFamily::LeaderChain, 5).unwrap();
    assert!(g.has_connected_spanning_tree());
    assert!(hop_distances(&g, 0).iter().all(Option::is_some));
}

#[test]
fn isolated_vertex_breaks_spanning_tree() {
    let mut w = make_family(GraphFamily::Complete, 5).unwrap().weights().clone();
    w.row_mut(4).fill(0.0);
    w.column_mut(4).fill(0.0);
    assert!(!DirectedWeightedGraph::new(w).unwrap().has_connected_spanning_tree());
    assert!(!DirectedWeightedGraph::empty(2).unwrap().has_connected_spanning_tree());
}

#[test]
fn invalid_graphs_are_rejected() {
    let mut w = DMatrix::zeros(3, 3);
    w[(0, 1)] = -1.0;
    assert!(matches!(DirectedWeightedGraph::new(w), Err(Error::NegativeWeight { .. })));
    let mut w = DMatrix::zeros(3, 3);
    w[(2, 2)] = 1.0;
    assert!(matches!(DirectedWeightedGraph::new(w), Err(Error::SelfLoop { .. })));
    assert!("ring".parse::<GraphFamily>().is_err());
}

#[test]
fn cycle_hop_masks() {
    let g = make_family(GraphFamily::DirectedCycle, 4).unwrap();
    let one = hop_mask(&g, 1);
    let expected = DMatrix::from_fn(4, 4, |i, j| i == j || (i + 4 - j) % 4 == 1);
    assert_eq!(one.reach(), &expected);
    assert!(hop_mask(&g, 4).is_full());
    assert!(!hop_mask(&g, 2).is_full());
}

#[test]
fn dense_projector_fails_product_precondition() {
    let g = make_family(GraphFamily::Path, 6).unwrap();
    let p = DMatrix::identity(6, 6) - DMatrix::from_element(6, 6, 1.0 / 6.0);
    let l = g.laplacian().into_matrix();
    let err = check_product_lemma(
        Operand { matrix: &p, q: 1, c: 2.0 },
        Operand { matrix: &l, q: 1, c: inf_norm(&l) },
        &g,
    )
    .unwrap_err();
    assert!(matches!(err, Error::LemmaPrecondition { operand: 1, .. }));
}

#[test]
fn sum_with_square_and_zero() {
    let g = make_family(GraphFamily::LeaderChain, 6).unwrap();
    let l = g.laplacian().into_matrix();
    let c = inf_norm(&l);
    let l2 = &l * &l;
    let check = check_sum_lemma(
        Operand { matrix: &l, q: 1, c },
        Operand { matrix: &l2, q: 2, c: c * c },
        &g,
    )
    .unwrap();
    assert!(check.holds && check.q == 2);
    let zero = DMatrix::zeros(6, 6);
    let check = check_sum_lemma(Operand { matrix: &l, q: 1, c }, Operand { matrix: &zero, q: 0, c: 1.0 }, &g).unwrap();
    assert!(check.holds && check.q == 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn family_laplacians_have_zero_row_sums(kind in family(), n in 1usize..40) {
        let g = make_family(kind, n).unwrap();
        prop_assert_eq!(&g, &make_family(kind, n).unwrap());
        let l = g.laplacian();
        for row in l.matrix().row_iter() {
            prop_assert!(row.sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn spanning_tree_matches_closure_oracle(seed in any::<u64>(), n in 1usize..10, density in 0.0f64..0.5) {
        let g = digraph(seed, n, density);
        prop_assert_eq!(g.has_connected_spanning_tree(), closure_has_root(&g));
    }

    #[test]
    fn graph_json_round_trips(seed in any::<u64>(), n in 1usize..8) {
        let g = digraph(seed, n, 0.4);
        let text = serde_json::to_string(&g).unwrap();
        let back: DirectedWeightedGraph = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(g, back);
    }

    #[test]
    fn hop_mask_matches_bfs_depths(seed in any::<u64>(), n in 1usize..9, q in 0usize..6) {
        let g = digraph(seed, n, 0.25);
        let mask = hop_mask(&g, q);
        for j in 0..n {
            let dist = hop_distances(&g, j);
            for i in 0..n {
                prop_assert_eq!(mask.allows(i, j), dist[i].is_some_and(|d| d <= q));
            }
        }
        prop_assert!(mask.is_subset_of(&hop_mask(&g, q + 1)));
    }

    #[test]
    fn closure_lemmas_hold(seed in any::<u64>(), n in 2usize..9, q1 in 0usize..4, q2 in 0usize..4) {
        let mut rng = seeded(seed);
        let g = random_digraph(&mut rng, n, 0.3);
        let a1 = random_masked_feedback(&mut rng, &g, q1);
        let a2 = random_masked_feedback(&mut rng, &g, q2);
        let c1 = inf_norm(&a1).max(1e-3);
        let c2 = inf_norm(&a2).max(1e-3);
        let op1 = Operand { matrix: &a1, q: q1, c: c1 };
        let op2 = Operand { matrix: &a2, q: q2, c: c2 };
        prop_assert!(check_sum_lemma(op1, op2, &g).unwrap().holds);
        prop_assert!(check_product_lemma(op1, op2, &g).unwrap().holds);
    }

    #[test]
    fn real_support_is_inside_boolean_support(seed in any::<u64>(), n in 1usize..9) {
        // signed entries may cancel, so only containment holds
        let mut rng = seeded(seed);
        let mut draw = || DMatrix::from_fn(n, n, |_, _| {
            if rng.random_bool(0.4) { f64::from(rng.random_range(-2i32..=2)) } else { 0.0 }
        });
        let a = draw();
        let b = draw();
        let real = support(&(&a * &b));
        let symbolic = boolean_product(&support(&a), &support(&b));
        prop_assert!(real.iter().zip(symbolic.iter()).all(|(r, s)| !*r || *s));
    }

    #[test]
    fn laplacians_are_one_step(seed in any::<u64>(), n in 1usize..10) {
        let g = digraph(seed, n, 0.3);
        let l = g.laplacian().into_matrix();
        let spec = FeedbackClassSpec::new(g, 1, inf_norm(&l).max(1e-9)).unwrap();
        prop_assert!(in_class(&l, &spec).unwrap().member);
    }
}
