//! q-hop locality masks and membership in the class of q-step implementable
//! relative feedback matrices `A^q(W, c)`.
//!
//! A matrix `A` belongs to `A^q(W, c)` when it is supported on the q-hop
//! reachability pattern of `W` (`[Σ_{k≤q} W^k]_ij = 0 ⇒ A_ij = 0`), annihilates
//! the all-ones vector, and has `‖A‖_∞ ≤ c`. Supports are always computed over
//! the boolean semiring so that floating-point cancellation cannot produce
//! false zeros.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::graph::DirectedWeightedGraph;
use crate::linalg::{inf_norm, row_sum_residual};
use crate::{Error, Result};

/// Relative factor for the zero-row-sum test.
pub const ROW_SUM_REL_TOL: f64 = 1e-10;
/// Relative slack on the gain bound.
pub const GAIN_REL_TOL: f64 = 1e-12;

/// Boolean support of a real matrix.
pub fn support(m: &DMatrix<f64>) -> DMatrix<bool> {
    m.map(|v| v != 0.0)
}

/// Matrix product over the boolean semiring (`∨` of `∧`).
pub fn boolean_product(a: &DMatrix<bool>, b: &DMatrix<bool>) -> DMatrix<bool> {
    assert_eq!(a.ncols(), b.nrows(), "boolean product shape mismatch");
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        (0..a.ncols()).any(|k| a[(i, k)] && b[(k, j)])
    })
}

/// Reachability within `q` hops: `reach[(i, j)]` iff there is a walk of
/// length at most `q` from `j` to `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMask {
    reach: DMatrix<bool>,
    q: usize,
}

impl HopMask {
    pub fn reach(&self) -> &DMatrix<bool> {
        &self.reach
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.reach[(i, j)]
    }

    pub fn is_full(&self) -> bool {
        self.reach.iter().all(|&b| b)
    }

    /// Entrywise `self ⇒ other`.
    pub fn is_subset_of(&self, other: &HopMask) -> bool {
        self.reach
            .iter()
            .zip(other.reach.iter())
            .all(|(&a, &b)| !a || b)
    }
}

pub fn hop_mask(graph: &DirectedWeightedGraph, q: usize) -> HopMask {
    let n = graph.n_nodes();
    let adjacency = support(graph.weights());
    let mut reach = DMatrix::from_fn(n, n, |i, j| i == j);
    for _ in 0..q {
        let step = boolean_product(&adjacency, &reach);
        let next = reach.zip_map(&step, |a, b| a || b);
        if next == reach {
            break;
        }
        reach = next;
    }
    HopMask { reach, q }
}

/// Parameters of the class `A^q(W, c)`.
#[derive(Debug, Clone)]
pub struct FeedbackClassSpec {
    graph: DirectedWeightedGraph,
    q: usize,
    c: f64,
    mask: HopMask,
}

impl FeedbackClassSpec {
    pub fn new(graph: DirectedWeightedGraph, q: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || c.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "gain bound c must be positive, got {c}"
            )));
        }
        let mask = hop_mask(&graph, q);
        Ok(Self { graph, q, c, mask })
    }

    pub fn graph(&self) -> &DirectedWeightedGraph {
        &self.graph
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn mask(&self) -> &HopMask {
        &self.mask
    }
}

/// First failing membership condition, checked in order sparsity, row sum,
/// gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Sparsity { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64, limit: f64 },
    Gain { norm: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sparsity { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value:e} lies outside the hop mask")
            }
            Self::RowSum { row, sum, limit } => {
                write!(f, "row {row} sums to {sum:e} (limit {limit:e})")
            }
            Self::Gain { norm, bound } => write!(f, "‖A‖_∞ = {norm} exceeds c = {bound}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassVerdict {
    pub member: bool,
    pub violation: Option<Violation>,
    pub inf_norm: f64,
    pub row_sum_residual: f64,
}

pub fn in_class(a: &DMatrix<f64>, spec: &FeedbackClassSpec) -> Result<ClassVerdict> {
    let n = spec.graph.n_nodes();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if a.nrows() != n { a.nrows() } else { a.ncols() },
            context: "feedback matrix vs graph",
        });
    }
    let norm = inf_norm(a);
    let residual = row_sum_residual(a);
    let verdict = |violation: Option<Violation>| ClassVerdict {
        member: violation.is_none(),
        violation,
        inf_norm: norm,
        row_sum_residual: residual,
    };

    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if v != 0.0 && !spec.mask.allows(i, j) {
                return Ok(verdict(Some(Violation::Sparsity {
                    row: i,
                    col: j,
                    value: v,
                })));
            }
        }
    }
    let limit = ROW_SUM_REL_TOL * norm;
    if residual > limit {
        let (row, sum) = a
            .row_iter()
            .map(|r| r.sum())
            .enumerate()
            .find(|(_, s)| s.abs() > limit)
            .expect("residual exceeds limit on some row");
        return Ok(verdict(Some(Violation::RowSum { row, sum, limit })));
    }
    if norm > spec.c * (1.0 + GAIN_REL_TOL) {
        return Ok(verdict(Some(Violation::Gain {
            norm,
            bound: spec.c,
        })));
    }
    Ok(verdict(None))
}

/// Outcome of a closure-lemma check on one pair of operands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub holds: bool,
    pub q: usize,
    pub c: f64,
    pub violation: Option<Violation>,
}

/// One closure-lemma operand: a matrix claimed to lie in `A^q(W, c)`.
#[derive(Debug, Clone, Copy)]
pub struct Operand<'a> {
    pub matrix: &'a DMatrix<f64>,
    pub q: usize,
    pub c: f64,
}

fn check_operands(
    graph: &DirectedWeightedGraph,
    operands: [&Operand<'_>; 2],
) -> Result<()> {
    for (idx, op) in operands.iter().enumerate() {
        let spec = FeedbackClassSpec::new(graph.clone(), op.q, op.c)?;
        let verdict = in_class(op.matrix, &spec)?;
        if let Some(violation) = verdict.violation {
            return Err(Error::LemmaPrecondition {
                operand: idx + 1,
                violation,
            });
        }
    }
    Ok(())
}

fn lemma_outcome(
    candidate: &DMatrix<f64>,
    graph: &DirectedWeightedGraph,
    q: usize,
    c: f64,
) -> Result<LemmaCheck> {
    let spec = FeedbackClassSpec::new(graph.clone(), q, c)?;
    let verdict = in_class(candidate, &spec)?;
    Ok(LemmaCheck {
        holds: verdict.member,
        q,
        c,
        violation: verdict.violation,
    })
}

/// Checks `A1 + A2 ∈ A^{max(q1,q2)}(W, c1 + c2)`. Operands outside their
/// declared classes yield [`Error::LemmaPrecondition`].
pub fn check_sum_lemma(
    a1: Operand<'_>,
    a2: Operand<'_>,
    graph: &DirectedWeightedGraph,
) -> Result<LemmaCheck> {
    check_operands(graph, [&a1, &a2])?;
    lemma_outcome(&(a1.matrix + a2.matrix), graph, a1.q.max(a2.q), a1.c + a2.c)
}

/// Checks `A1·A2 ∈ A^{q1+q2}(W, c1·c2)`.
pub fn check_product_lemma(
    a1: Operand<'_>,
    a2: Operand<'_>,
    graph: &DirectedWeightedGraph,
) -> Result<LemmaCheck> {
    check_operands(graph, [&a1, &a2])?;
    lemma_outcome(&(a1.matrix * a2.matrix), graph, a1.q + a2.q, a1.c * a2.c)
}

/// Random matrix supported on `hop_mask(W, q)` with zero row sums: random
/// off-diagonal entries inside the mask, diagonal set to minus the row sum.
pub fn random_masked_feedback<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &DirectedWeightedGraph,
    q: usize,
) -> DMatrix<f64> {
    let mask = hop_mask(graph, q);
    let n = graph.n_nodes();
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        if i != j && mask.allows(i, j) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        a[(i, i)] = -s;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureLemma {
    Sum,
    Product,
}

#[derive(Debug, Clone, Default)]
pub struct RefutationReport {
    pub trials: usize,
    pub counterexamples: Vec<(usize, Violation)>,
}

/// Searches for counterexamples to a closure lemma over random graphs of
/// `2..=max_nodes` nodes and random hop counts `0..=max_q`.
pub fn search_counterexamples<R: Rng + ?Sized>(
    rng: &mut R,
    lemma: ClosureLemma,
    trials: usize,
    max_nodes: usize,
    max_q: usize,
) -> Result<RefutationReport> {
    let mut report = RefutationReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let n = rng.random_range(2..=max_nodes.max(2));
        let graph = crate::random::random_digraph(rng, n, 0.3);
        let q1 = rng.random_range(0..=max_q);
        let q2 = rng.random_range(0..=max_q);
        let m1 = random_masked_feedback(rng, &graph, q1);
        let m2 = random_masked_feedback(rng, &graph, q2);
        // c = exact norm; a zero matrix still needs a positive bound
        let bound = |m: &DMatrix<f64>| match inf_norm(m) {
            0.0 => 1.0,
            c => c,
        };
        let (c1, c2) = (bound(&m1), bound(&m2));
        let a1 = Operand { matrix: &m1, q: q1, c: c1 };
        let a2 = Operand { matrix: &m2, q: q2, c: c2 };
        let check = match lemma {
            ClosureLemma::Sum => check_sum_lemma(a1, a2, &graph)?,
            ClosureLemma::Product => check_product_lemma(a1, a2, &graph)?,
        };
        if let Some(v) = check.violation {
            report.counterexamples.push((trial, v));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_family, GraphFamily};

    fn cycle4() -> DirectedWeightedGraph {
        make_family(GraphFamily::DirectedCycle, 4).unwrap()
    }

    #[test]
    fn q_zero_is_identity() {
        let g = make_family(GraphFamily::Complete, 5).unwrap();
        let m = hop_mask(&g, 0);
        assert_eq!(m.reach(), &DMatrix::from_fn(5, 5, |i, j| i == j));
    }

    #[test]
    fn cycle_masks() {
        let m1 = hop_mask(&cycle4(), 1);
        for i in 0..4 {
            for j in 0..4 {
                let expected = i == j || (i + 4 - j) % 4 == 1;
                assert_eq!(m1.allows(i, j), expected, "({i},{j})");
            }
        }
        assert!(!m1.is_full());
        assert!(hop_mask(&cycle4(), 4).is_full());
        // diameter of the 4-cycle is 3
        assert!(hop_mask(&cycle4(), 3).is_full());
        assert!(!hop_mask(&cycle4(), 2).is_full());
    }

    #[test]
    fn laplacian_is_one_step() {
        let g = cycle4();
        let l = g.laplacian();
        let spec = FeedbackClassSpec::new(g, 1, inf_norm(l.matrix())).unwrap();
        let v = in_class(l.matrix(), &spec).unwrap();
        assert!(v.member, "{v:?}");
    }

    #[test]
    fn entry_outside_mask_is_a_sparsity_violation() {
        let g = cycle4();
        let mut a = g.laplacian().into_matrix();
        // 2 -> 0 is two hops away
        a[(0, 2)] = -0.5;
        a[(0, 0)] += 0.5;
        let spec = FeedbackClassSpec::new(g, 1, 10.0).unwrap();
        let v = in_class(&a, &spec).unwrap();
        assert!(!v.member);
        assert!(matches!(v.violation, Some(Violation::Sparsity { row: 0, col: 2, .. })));
    }

    #[test]
    fn row_sum_and_gain_violations() {
        let g = cycle4();
        let mut a = g.laplacian().into_matrix();
        a[(1, 1)] = 2.0;
        let spec = FeedbackClassSpec::new(g.clone(), 1, 10.0).unwrap();
        assert!(matches!(
            in_class(&a, &spec).unwrap().violation,
            Some(Violation::RowSum { row: 1, .. })
        ));
        let l = g.laplacian();
        let spec = FeedbackClassSpec::new(g, 1, 1.5).unwrap();
        assert!(matches!(
            in_class(l.matrix(), &spec).unwrap().violation,
            Some(Violation::Gain { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = FeedbackClassSpec::new(cycle4(), 1, 1.0).unwrap();
        assert!(in_class(&DMatrix::zeros(3, 3), &spec).is_err());
        assert!(FeedbackClassSpec::new(cycle4(), 1, 0.0).is_err());
    }

    #[test]
    fn product_of_two_laplacians_is_two_step() {
        let g = cycle4();
        let l1 = g.laplacian();
        let l2 = l1.scaled(3.0).unwrap();
        let c1 = inf_norm(l1.matrix());
        let c2 = inf_norm(l2.matrix());
        let check = check_product_lemma(
            Operand { matrix: l1.matrix(), q: 1, c: c1 },
            Operand { matrix: l2.matrix(), q: 1, c: c2 },
            &g,
        )
        .unwrap();
        assert!(check.holds);
        assert_eq!((check.q, check.c), (2, c1 * c2));
    }

    #[test]
    fn sum_lemma_examples() {
        let g = make_family(GraphFamily::LeaderChain, 6).unwrap();
        let l = g.laplacian().into_matrix();
        let c = inf_norm(&l);
        let op = Operand { matrix: &l, q: 1, c };
        let doubled = check_sum_lemma(op, op, &g).unwrap();
        assert!(doubled.holds);
        assert_eq!((doubled.q, doubled.c), (1, 2.0 * c));

        let l2 = &l * &l;
        let sq = Operand { matrix: &l2, q: 2, c: inf_norm(&l2) };
        let mixed = check_sum_lemma(op, sq, &g).unwrap();
        assert!(mixed.holds);
        assert_eq!(mixed.q, 2);
        // explicit oracle: in_class on the explicit sum
        let spec = FeedbackClassSpec::new(g.clone(), 2, c + inf_norm(&l2)).unwrap();
        assert!(in_class(&(&l + &l2), &spec).unwrap().member);

        let zero = DMatrix::zeros(6, 6);
        let z = Operand { matrix: &zero, q: 0, c: 1.0 };
        let ident = check_sum_lemma(op, z, &g).unwrap();
        assert!(ident.holds);
        assert_eq!(ident.q, 1);
    }

    #[test]
    fn dense_averaging_operand_fails_precondition() {
        let g = make_family(GraphFamily::Path, 5).unwrap();
        let n = 5;
        let avg = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let l = g.laplacian().into_matrix();
        let err = check_product_lemma(
            Operand { matrix: &avg, q: 2, c: 2.0 },
            Operand { matrix: &l, q: 1, c: 2.0 },
            &g,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::LemmaPrecondition {
                operand: 1,
                violation: Violation::Sparsity { .. }
            }
        ));
    }

    #[test]
    fn boolean_product_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[true, false, true, true]);
        let b = DMatrix::from_row_slice(2, 2, &[false, true, false, false]);
        let p = boolean_product(&a, &b);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[false, true, false, true]));
    }
}
