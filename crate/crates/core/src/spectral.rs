//! Spectra, consensus-stability classification and graph-family sweeps.
//!
//! Consensus closed loops carry `n` structural zero eigenvalues forming a
//! Jordan chain on the block-ones vectors. A general eigensolver smears such
//! a chain into a ring of radius `O(ε^{1/n})`, so when a system is annotated
//! with its [`ConsensusModes`](crate::lti::ConsensusModes) the chain is
//! deflated exactly: the annotation is checked against `A`, the invariant
//! subspace is split off with an orthogonal change of basis, and only the
//! quotient block goes to the eigensolver. Unannotated systems fall back to
//! magnitude clustering of the smallest eigenvalues.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::graph::{make_family, DirectedWeightedGraph, GraphFamily};
use crate::linalg::{complete_orthonormal_basis, eigenvalues, inf_norm};
use crate::lti::LtiSystem;
use crate::synthesis::{
    realize_conventional, realize_serial, scaled_serial, ConventionalDesign, SerialDesign,
};
use crate::{Error, Result};

/// Default structural-zero tolerance relative to `‖A‖_∞`.
pub const ZERO_TOL_FACTOR: f64 = 1e-7;
/// Required gap between the structural cluster and the next eigenvalue
/// magnitude in the clustering fallback.
pub const CLUSTER_SEPARATION: f64 = 100.0;
/// Absolute tolerance of the pole-union check.
pub const POLE_UNION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    /// Structural Jordan chain split off exactly.
    Deflated,
    /// Smallest eigenvalues clustered by magnitude.
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    #[serde(serialize_with = "serialize_complex_list")]
    pub eigenvalues: Vec<Complex64>,
    pub expected_structural_zeros: usize,
    pub n_structural_zeros: usize,
    pub max_real_part_excluding_zeros: Option<f64>,
    pub zero_tolerance: f64,
    pub stable: bool,
    pub method: SpectrumMethod,
}

fn serialize_complex_list<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// Classifies the state matrix of `system` as consensus-stable.
///
/// Eigenvalues with `|λ| < zero_tolerance` are structural zeros. The system
/// is stable iff exactly as many structural zeros exist as the annotated
/// consensus order (zero for unannotated systems) and every other eigenvalue
/// has real part below `−zero_tolerance`. The default tolerance is
/// `1e−7 · ‖A‖_∞`.
pub fn spectrum(system: &LtiSystem, zero_tolerance: Option<f64>) -> Result<SpectrumReport> {
    let a = system.a();
    let scale = inf_norm(a);
    let tol = zero_tolerance.unwrap_or(ZERO_TOL_FACTOR * if scale > 0.0 { scale } else { 1.0 });
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "zero tolerance must be positive, got {tol}"
        )));
    }
    let expected = system.consensus().map_or(0, |m| m.order);
    if let Some(modes) = system.consensus() {
        if modes.chain_residual(a) <= 1e-9 * scale.max(1.0) {
            return deflated(a, &modes.basis, tol);
        }
    }
    clustered(a, expected, tol, scale)
}

fn classify(
    mut eigs: Vec<Complex64>,
    structural: usize,
    expected: usize,
    tol: f64,
    method: SpectrumMethod,
    rest_start: usize,
) -> SpectrumReport {
    // eigs[..rest_start] are already-identified structural zeros
    let mut zeros = structural;
    let mut max_re: Option<f64> = None;
    for z in &eigs[rest_start..] {
        if z.norm() < tol {
            zeros += 1;
        } else {
            max_re = Some(max_re.map_or(z.re, |m| m.max(z.re)));
        }
    }
    let stable = zeros == expected && max_re.is_none_or(|m| m < -tol);
    eigs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    SpectrumReport {
        eigenvalues: eigs,
        expected_structural_zeros: expected,
        n_structural_zeros: zeros,
        max_real_part_excluding_zeros: max_re,
        zero_tolerance: tol,
        stable,
        method,
    }
}

fn deflated(a: &DMatrix<f64>, basis: &DMatrix<f64>, tol: f64) -> Result<SpectrumReport> {
    let dim = a.nrows();
    let order = basis.ncols();
    let q = complete_orthonormal_basis(basis);
    let t = q.transpose() * a * &q;
    let quotient = t.view((order, order), (dim - order, dim - order)).into_owned();
    let mut eigs = vec![Complex64::new(0.0, 0.0); order];
    eigs.extend(eigenvalues(&quotient)?);
    Ok(classify(eigs, order, order, tol, SpectrumMethod::Deflated, order))
}

fn clustered(a: &DMatrix<f64>, expected: usize, tol: f64, scale: f64) -> Result<SpectrumReport> {
    let mut eigs = eigenvalues(a)?;
    eigs.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    if expected == 0 || eigs.len() < expected {
        return Ok(classify(eigs, 0, expected, tol, SpectrumMethod::Clustered, 0));
    }
    // A size-m Jordan block perturbs to radius ~ (ε‖A‖)^{1/m} ‖A‖^{1-1/m}.
    let radius = eigs[expected - 1].norm();
    let jordan_tol = scale.max(1.0) * (ZERO_TOL_FACTOR).powf(1.0 / expected as f64);
    let separated = eigs
        .get(expected)
        .is_none_or(|next| next.norm() >= CLUSTER_SEPARATION * radius);
    if radius < jordan_tol && separated {
        for z in eigs.iter_mut().take(expected) {
            *z = Complex64::new(0.0, 0.0);
        }
        Ok(classify(eigs, expected, expected, tol, SpectrumMethod::Clustered, expected))
    } else {
        Ok(classify(eigs, 0, expected, tol, SpectrumMethod::Clustered, 0))
    }
}

/// Maximum distance of a greedy nearest-neighbour pairing of two equally
/// sized eigenvalue multisets, visiting `a` in `(Re, Im)` order.
pub fn greedy_match_distance(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
            context: "eigenvalue multisets",
        });
    }
    let mut order: Vec<Complex64> = a.to_vec();
    order.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in order {
        let (idx, dist) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, w)| (i, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("equal lengths leave a candidate");
        used[idx] = true;
        worst = worst.max(dist);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleUnionReport {
    pub max_distance: f64,
    pub matched: bool,
}

/// Compares the closed-loop poles of the serial realization with the union
/// of the spectra of `−L_k`.
pub fn verify_pole_union(design: &SerialDesign, tolerance: Option<f64>) -> Result<PoleUnionReport> {
    let tol = tolerance.unwrap_or(POLE_UNION_TOL);
    let closed = spectrum(&realize_serial(design, false), None)?.eigenvalues;
    let mut union = Vec::with_capacity(closed.len());
    for l in design.laplacians() {
        union.extend(eigenvalues(&(-l.matrix()))?);
    }
    let max_distance = greedy_match_distance(&union, &closed)?;
    Ok(PoleUnionReport {
        max_distance,
        matched: max_distance < tol,
    })
}

/// Closed form of the directed-cycle Laplacian eigenvalue with second
/// smallest real part: `1 − cos(2π/N) − i·sin(2π/N)`.
pub fn cycle_lambda2(n: usize) -> Result<Complex64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "cycle_lambda2 needs N >= 2, got {n}"
        )));
    }
    let theta = 2.0 * PI / n as f64;
    Ok(Complex64::new(1.0 - theta.cos(), -theta.sin()))
}

/// Maps a graph to a closed loop with N-independent gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignRule {
    /// Serial design with `L_k = scales[k−1] · L`.
    Serial { scales: Vec<f64> },
    /// Conventional design with `A_k = gains[k] · L` on `x^{(k)}`.
    Conventional { gains: Vec<f64> },
}

impl DesignRule {
    pub fn order(&self) -> usize {
        match self {
            Self::Serial { scales } => scales.len(),
            Self::Conventional { gains } => gains.len(),
        }
    }

    pub fn realize(&self, graph: &DirectedWeightedGraph) -> Result<LtiSystem> {
        let l = graph.laplacian();
        match self {
            Self::Serial { scales } => Ok(realize_serial(&scaled_serial(&l, scales)?, true)),
            Self::Conventional { gains } => {
                Ok(realize_conventional(&ConventionalDesign::uniform(&l, gains)?))
            }
        }
    }
}

impl fmt::Display for DesignRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, values) = match self {
            Self::Serial { scales } => ("serial", scales),
            Self::Conventional { gains } => ("conventional", gains),
        };
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        write!(f, "{name}[{}]", joined.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub n_agents: usize,
    pub max_re_excl_zeros: Option<f64>,
    pub stable: bool,
    pub n_structural_zeros: usize,
    #[serde(serialize_with = "serialize_complex_list")]
    pub eigenvalues: Vec<Complex64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub family: String,
    pub rule: String,
    pub entries: Vec<SweepEntry>,
    /// Smallest swept N whose closed loop is not consensus-stable.
    pub critical_n: Option<usize>,
}

impl SweepResult {
    pub fn entry(&self, n: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.n_agents == n)
    }

    /// CSV with columns `N,max_re_excl_zeros,stable`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "N,max_re_excl_zeros,stable")?;
        for e in &self.entries {
            let re = e.max_re_excl_zeros.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(out, "{},{},{}", e.n_agents, re, e.stable)?;
        }
        Ok(())
    }

    /// JSON summary; per-N spectra are included only with `full_spectra`.
    pub fn to_json(&self, full_spectra: bool) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("sweep result serializes");
        if !full_spectra {
            for e in v["entries"].as_array_mut().expect("entries array") {
                e.as_object_mut().expect("entry object").remove("eigenvalues");
            }
        }
        v
    }
}

fn sweep_one(family: GraphFamily, rule: &DesignRule, n: usize) -> SweepEntry {
    let outcome = make_family(family, n)
        .and_then(|g| rule.realize(&g))
        .and_then(|sys| spectrum(&sys, None));
    match outcome {
        Ok(report) => SweepEntry {
            n_agents: n,
            max_re_excl_zeros: report.max_real_part_excluding_zeros,
            stable: report.stable,
            n_structural_zeros: report.n_structural_zeros,
            eigenvalues: report.eigenvalues,
            error: None,
        },
        Err(e) => SweepEntry {
            n_agents: n,
            max_re_excl_zeros: None,
            stable: false,
            n_structural_zeros: 0,
            eigenvalues: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Classifies the closed loop produced by `rule` on every family member with
/// `N` in `sizes`. Work is spread over `jobs` threads (default: all cores);
/// results are ordered by N regardless of scheduling.
pub fn stability_sweep(
    family: GraphFamily,
    rule: &DesignRule,
    sizes: std::ops::RangeInclusive<usize>,
    jobs: Option<usize>,
) -> Result<SweepResult> {
    let sizes: Vec<usize> = sizes.collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> =
        pool.install(|| sizes.par_iter().map(|&n| sweep_one(family, rule, n)).collect());
    let critical_n = entries.iter().find(|e| !e.stable).map(|e| e.n_agents);
    Ok(SweepResult {
        family: family.to_string(),
        rule: rule.to_string(),
        entries,
        critical_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Laplacian;
    use crate::synthesis::expand_serial;

    fn two_cycle() -> Laplacian {
        Laplacian::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap()
    }

    #[test]
    fn serial_two_cycle_spectrum() {
        let l = two_cycle();
        let d = expand_serial(vec![l.clone(), l]).unwrap();
        let r = spectrum(&realize_serial(&d, true), None).unwrap();
        assert_eq!(r.method, SpectrumMethod::Deflated);
        assert!(r.stable);
        assert_eq!(r.n_structural_zeros, 2);
        // oracle: eigenvalues of L are {0, 2}
        let expected = [-2.0, -2.0, 0.0, 0.0];
        for (z, e) in r.eigenvalues.iter().zip(expected) {
            assert!((z - Complex64::new(e, 0.0)).norm() < 1e-7, "{z}");
        }
    }

    #[test]
    fn disconnected_graph_is_not_stable() {
        let g = DirectedWeightedGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        for order in 1..=3 {
            let rule = DesignRule::Serial {
                scales: vec![1.0; order],
            };
            let r = spectrum(&rule.realize(&g).unwrap(), None).unwrap();
            assert!(!r.stable, "order {order}: {r:?}");
        }
        let r = spectrum(&DesignRule::Serial { scales: vec![1.0] }.realize(&g).unwrap(), None).unwrap();
        assert!(r.n_structural_zeros > 1);
    }

    #[test]
    fn hurwitz_system_without_annotation() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 0),
        )
        .unwrap();
        let r = spectrum(&sys, None).unwrap();
        assert!(r.stable);
        assert_eq!(r.n_structural_zeros, 0);
        assert!((r.max_real_part_excluding_zeros.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn clustered_fallback_agrees_with_deflation() {
        // Routh–Hurwitz: s³ + 6λs² + 4λs + 2λ is stable iff λ > 1/12; the
        // leader chain's λ₂ crosses 1/12 between N = 5 and N = 6.
        let rule = DesignRule::Conventional {
            gains: vec![2.0, 4.0, 6.0],
        };
        for (n, expect) in [(5, true), (6, false)] {
            let g = make_family(GraphFamily::LeaderChain, n).unwrap();
            let sys = rule.realize(&g).unwrap();
            let deflated = spectrum(&sys, None).unwrap();
            let mut plain = spectrum(&sys.clone().without_consensus(), None).unwrap();
            assert_eq!(plain.method, SpectrumMethod::Clustered);
            assert_eq!(deflated.stable, expect, "N={n}");
            // unannotated systems expect no structural zeros; re-run the
            // fallback with the order supplied via the annotation path
            plain.expected_structural_zeros = 3;
            let with_order = clustered(sys.a(), 3, deflated.zero_tolerance, inf_norm(sys.a())).unwrap();
            assert_eq!(with_order.stable, expect, "N={n} clustered");
        }
    }

    #[test]
    fn greedy_matching() {
        let a = [Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0), Complex64::new(-3.0, 0.0)];
        let b = [Complex64::new(-3.0, 1e-9), Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)];
        assert!(greedy_match_distance(&a, &b).unwrap() < 2e-9);
        assert!(greedy_match_distance(&a, &b[..2]).is_err());
    }

    #[test]
    fn first_order_pole_union_is_exact() {
        let l = make_family(GraphFamily::DirectedCycle, 6).unwrap().laplacian();
        let report = verify_pole_union(&expand_serial(vec![l]).unwrap(), None).unwrap();
        assert!(report.matched);
        assert!(report.max_distance < 1e-12);
    }

    #[test]
    fn cycle_lambda2_values() {
        assert!((cycle_lambda2(2).unwrap() - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        assert!((cycle_lambda2(4).unwrap() - Complex64::new(1.0, -1.0)).norm() < 1e-15);
        assert!(cycle_lambda2(1).is_err());
        let n = 10_000;
        let approx = Complex64::new(0.0, -2.0 * PI / n as f64);
        let theta = 2.0 * PI / n as f64;
        assert!((cycle_lambda2(n).unwrap() - approx).norm() < theta * theta);
    }

    #[test]
    fn sweep_is_ordered_and_serializes() {
        let rule = DesignRule::Serial {
            scales: vec![1.0, 2.0],
        };
        let r = stability_sweep(GraphFamily::DirectedCycle, &rule, 2..=6, Some(2)).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.n_agents).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
        assert_eq!(r.critical_n, None);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("N,max_re_excl_zeros,stable\n2,"));
        assert!(r.to_json(false)["entries"][0].get("eigenvalues").is_none());
        assert_eq!(r.to_json(true)["entries"][0]["eigenvalues"].as_array().unwrap().len(), 4);
    }
}
