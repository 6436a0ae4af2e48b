//! Seeded random graph generators for property tests and Monte-Carlo sweeps.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::DirectedWeightedGraph;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-sample seed derived from a root seed (splitmix64 step), so parallel
/// workers draw independent, reproducible streams.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.5..2.0)
}

/// Erdős–Rényi style digraph: each ordered pair is an edge with
/// probability `density`, weights uniform in `[0.5, 2)`.
pub fn random_digraph<R: Rng + ?Sized>(rng: &mut R, n: usize, density: f64) -> DirectedWeightedGraph {
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i != j && rng.random_bool(density) {
            weight(rng)
        } else {
            0.0
        }
    });
    DirectedWeightedGraph::new(w).expect("generated weights are valid")
}

/// Digraph containing a random rooted out-tree plus extra random edges, so
/// it always has a connected spanning tree.
pub fn random_spanning_tree_digraph<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    extra_density: f64,
) -> DirectedWeightedGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut w = DMatrix::zeros(n, n);
    for pos in 1..n {
        let parent = order[rng.random_range(0..pos)];
        let child = order[pos];
        w[(child, parent)] = weight(rng);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && w[(i, j)] == 0.0 && rng.random_bool(extra_density) {
                w[(i, j)] = weight(rng);
            }
        }
    }
    DirectedWeightedGraph::new(w).expect("generated weights are valid")
}

/// Connected undirected graph (random spanning tree plus extra edges) with
/// symmetric weights.
pub fn random_connected_undirected<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    extra_density: f64,
) -> DirectedWeightedGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut w = DMatrix::zeros(n, n);
    for pos in 1..n {
        let a = order[rng.random_range(0..pos)];
        let b = order[pos];
        let v = weight(rng);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] == 0.0 && rng.random_bool(extra_density) {
                let v = weight(rng);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    DirectedWeightedGraph::new(w).expect("generated weights are valid")
}
