//! H∞ factors, small-gain margins and perturbed closed-loop assembly for
//! serial consensus.
//!
//! Additive mode perturbs `(sI + L)ⁿ X = U + Σ_k Δ_k sᵏ Lⁿ⁻ᵏ X`; the signals
//! `sᵏ Lⁿ⁻ᵏ X` are read off the nominal chain state, never differentiated.
//! Multiplicative mode perturbs each factor, `sI + (I + Δ_k) L_k`, and the
//! last factor additionally by `s Δ₀`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::Laplacian;
use crate::linalg::{eigenvalues, is_symmetric, max_singular_value, set_block, spectral_norm};
use crate::lti::{ConsensusModes, LtiSystem, StateBlock};
use crate::random::{derive_seed, seeded};
use crate::simulation::{consensus_verdict, simulate, ReferenceSignal, DEFAULT_EPSILON};
use crate::spectral::spectrum;
use crate::synthesis::{realize_serial, serial_derivative_maps, SerialDesign};
use crate::{Error, Result};

pub const GRID_POINTS: usize = 2000;
pub const GRID_MIN: f64 = 1e-4;
pub const GRID_MAX: f64 = 1e4;
/// Relative accuracy target of [`hinf_norm`].
pub const HINF_RELATIVE_ACCURACY: f64 = 1e-4;
/// Slack allowed between a declared norm and the computed one.
pub const DECLARED_NORM_SLACK: f64 = 1e-8;

/// `max_ω |ωᵏ λⁿ⁻ᵏ / (jω + λ)ⁿ|`, independent of `λ > 0`:
/// `√(kᵏ (n−k)ⁿ⁻ᵏ / nⁿ)` for `0 < k < n`, else 1.
pub fn analytic_factor(n: usize, k: usize) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "analytic factor needs 0 <= k <= n, n >= 1 (got n = {n}, k = {k})"
        )));
    }
    if k == 0 || k == n {
        return Ok(1.0);
    }
    let (n, k) = (n as f64, k as f64);
    // logs avoid overflow of kᵏ for large orders
    let log = k * k.ln() + (n - k) * (n - k).ln() - n * n.ln();
    Ok((0.5 * log).exp())
}

/// Peak of `f` over `ω ∈ {0} ∪ [1e−4, 1e4]`: a 2000-point log grid, then a
/// golden-section search between the neighbours of the best grid point.
/// Returns `(ω, f(ω))`.
pub fn peak_gain<F: Fn(f64) -> f64>(f: F) -> (f64, f64) {
    let (lo, hi) = (GRID_MIN.ln(), GRID_MAX.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let at = |i: usize| (lo + step * i as f64).exp();
    let mut best = (0.0, f(0.0));
    let mut best_idx = None;
    for i in 0..GRID_POINTS {
        let w = at(i);
        let v = f(w);
        if v > best.1 {
            best = (w, v);
            best_idx = Some(i);
        }
    }
    if let Some(i) = best_idx {
        let mut a = (lo + step * i.saturating_sub(1) as f64).max(lo);
        let mut b = (lo + step * (i + 1) as f64).min(hi);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let g = |x: f64| f(x.exp());
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (g(c), g(d));
        for _ in 0..80 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = g(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = g(d);
            }
        }
        let x = 0.5 * (a + b);
        let v = g(x);
        if v > best.1 {
            best = (x.exp(), v);
        }
    }
    best
}

/// H∞ norm of a stable system: the peak of `σ_max(G(jω))` (see
/// [`peak_gain`]) together with the high-frequency gain `σ_max(D)`.
/// Memoryless systems return `σ_max(D)`.
pub fn hinf_norm(system: &LtiSystem) -> Result<f64> {
    let feedthrough = spectral_norm(system.d());
    if system.is_static() {
        return Ok(feedthrough);
    }
    let abscissa = eigenvalues(system.a())?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(Error::Unstable { abscissa });
    }
    let (_, peak) = peak_gain(|w| {
        system
            .frequency_response(Complex64::new(0.0, w))
            .map(|g| max_singular_value(&g))
            .unwrap_or(f64::INFINITY)
    });
    Ok(peak.max(feedthrough))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PerturbationRole {
    pub index: usize,
    pub mode: PerturbationMode,
}

impl PerturbationRole {
    pub fn additive(index: usize) -> Self {
        Self {
            index,
            mode: PerturbationMode::Additive,
        }
    }

    pub fn multiplicative(index: usize) -> Self {
        Self {
            index,
            mode: PerturbationMode::Multiplicative,
        }
    }
}

/// A stable square LTI uncertainty `Δ_k` with a norm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBlock {
    realization: LtiSystem,
    declared_norm: f64,
    role: PerturbationRole,
}

impl PerturbationBlock {
    /// Checks stability, squareness and `declared_norm ≥ ‖Δ‖∞ − 1e−8`.
    pub fn new(realization: LtiSystem, declared_norm: f64, role: PerturbationRole) -> Result<Self> {
        if realization.n_inputs() != realization.n_outputs() {
            return Err(Error::DimensionMismatch {
                expected: realization.n_inputs(),
                found: realization.n_outputs(),
                context: "perturbation outputs vs inputs",
            });
        }
        let computed = hinf_norm(&realization)?;
        if !(declared_norm >= computed - DECLARED_NORM_SLACK) {
            return Err(Error::InvalidParameter(format!(
                "declared norm {declared_norm} is below the computed H-infinity norm {computed}"
            )));
        }
        Ok(Self {
            realization,
            declared_norm,
            role,
        })
    }

    /// Declared norm set to the computed H∞ norm.
    pub fn from_system(realization: LtiSystem, role: PerturbationRole) -> Result<Self> {
        let norm = hinf_norm(&realization)?;
        Self::new(realization, norm, role)
    }

    pub fn static_gain(d: DMatrix<f64>, role: PerturbationRole) -> Result<Self> {
        Self::from_system(LtiSystem::static_gain(d)?, role)
    }

    pub fn zero(agents: usize, role: PerturbationRole) -> Self {
        Self::static_gain(DMatrix::zeros(agents, agents), role).expect("zero block is valid")
    }

    /// Diagonal bank `k_i / (T_i s + 1)`, realized as `ż = −z/T + (k/T) u`,
    /// `y = z`. Its norm is `max |k_i|`.
    pub fn lag_bank(gains: &[f64], time_constants: &[f64], role: PerturbationRole) -> Result<Self> {
        if gains.len() != time_constants.len() {
            return Err(Error::DimensionMismatch {
                expected: gains.len(),
                found: time_constants.len(),
                context: "lag time constants vs gains",
            });
        }
        if let Some(t) = time_constants.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "lag time constants must be positive, got {t}"
            )));
        }
        let n = gains.len();
        let a = DMatrix::from_diagonal(&DVector::from_iterator(n, time_constants.iter().map(|t| -1.0 / t)));
        let b = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            gains.iter().zip(time_constants).map(|(k, t)| k / t),
        ));
        let sys = LtiSystem::new(a, b, DMatrix::identity(n, n), DMatrix::zeros(n, n))?;
        let declared = gains.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        Self::new(sys, declared, role)
    }

    pub fn realization(&self) -> &LtiSystem {
        &self.realization
    }

    pub fn declared_norm(&self) -> f64 {
        self.declared_norm
    }

    pub fn role(&self) -> PerturbationRole {
        self.role
    }

    pub fn agents(&self) -> usize {
        self.realization.n_inputs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub mode: PerturbationMode,
    pub order: usize,
    /// `‖Δ_0‖ … ‖Δ_n‖`.
    pub norms: Vec<f64>,
    /// Weight of each norm in `total`.
    pub factors: Vec<f64>,
    pub terms: Vec<f64>,
    /// Additive: `Σ factor_k ‖Δ_k‖`. Multiplicative: `‖Δ₀‖ + ‖Δ_n‖`.
    pub total: f64,
    pub satisfied: bool,
    pub requires_symmetric_laplacians: bool,
    pub hinf_relative_accuracy: f64,
}

fn check_norms(norms: &[f64]) -> Result<()> {
    if norms.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need norms for Δ_0..Δ_n with n >= 1, got {} values",
            norms.len()
        )));
    }
    if let Some(v) = norms.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "perturbation norms must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// Sufficient condition for the additively perturbed loop (symmetric `L`,
/// `L_k = L`): `‖Δ₀‖ + ‖Δ_n‖ + Σ_{0<k<n} ‖Δ_k‖ · analytic_factor(n, k) < 1`.
pub fn additive_margin(n: usize, norms: &[f64]) -> Result<MarginReport> {
    if norms.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            found: norms.len(),
            context: "additive margin norms",
        });
    }
    check_norms(norms)?;
    let factors = (0..=n).map(|k| analytic_factor(n, k)).collect::<Result<Vec<_>>>()?;
    let terms: Vec<f64> = norms.iter().zip(&factors).map(|(a, b)| a * b).collect();
    let total: f64 = terms.iter().sum();
    Ok(MarginReport {
        mode: PerturbationMode::Additive,
        order: n,
        norms: norms.to_vec(),
        factors,
        terms,
        total,
        satisfied: total < 1.0,
        requires_symmetric_laplacians: true,
        hinf_relative_accuracy: HINF_RELATIVE_ACCURACY,
    })
}

/// Sufficient condition for the multiplicatively perturbed loop (symmetric
/// `L_k`): every `‖Δ_k‖ < 1` and `‖Δ₀‖ + ‖Δ_n‖ < 1`.
pub fn multiplicative_margin(norms: &[f64]) -> Result<MarginReport> {
    check_norms(norms)?;
    let n = norms.len() - 1;
    let mut factors = vec![0.0; n + 1];
    factors[0] = 1.0;
    factors[n] = 1.0;
    let terms: Vec<f64> = norms.iter().zip(&factors).map(|(a, b)| a * b).collect();
    let total = norms[0] + norms[n];
    Ok(MarginReport {
        mode: PerturbationMode::Multiplicative,
        order: n,
        norms: norms.to_vec(),
        factors,
        terms,
        total,
        satisfied: total < 1.0 && norms.iter().all(|v| *v < 1.0),
        requires_symmetric_laplacians: true,
        hinf_relative_accuracy: HINF_RELATIVE_ACCURACY,
    })
}

/// Margin from the declared norms of a block set `Δ_0..Δ_n`.
pub fn margin_of_blocks(mode: PerturbationMode, blocks: &[PerturbationBlock]) -> Result<MarginReport> {
    let norms: Vec<f64> = blocks.iter().map(|b| b.declared_norm()).collect();
    match mode {
        PerturbationMode::Additive => additive_margin(norms.len().saturating_sub(1), &norms),
        PerturbationMode::Multiplicative => multiplicative_margin(&norms),
    }
}

fn check_blocks(blocks: &[PerturbationBlock], order: usize, agents: usize) -> Result<()> {
    if blocks.len() != order + 1 {
        return Err(Error::DimensionMismatch {
            expected: order + 1,
            found: blocks.len(),
            context: "perturbation blocks Δ_0..Δ_n",
        });
    }
    for b in blocks {
        if b.agents() != agents {
            return Err(Error::DimensionMismatch {
                expected: agents,
                found: b.agents(),
                context: "perturbation block size vs agents",
            });
        }
    }
    Ok(())
}

fn same_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    (a - b).amax() <= 1e-12 * a.amax().max(1.0)
}

/// Block offsets `(row/col start, len)` of `Δ_0..Δ_n` states after `base`.
fn delta_layout(blocks: &[PerturbationBlock], base: usize) -> Vec<(usize, usize)> {
    let mut offset = base;
    blocks
        .iter()
        .map(|b| {
            let here = (offset, b.realization().state_dim());
            offset += here.1;
            here
        })
        .collect()
}

fn finish(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    order: usize,
    agents: usize,
    blocks: &[PerturbationBlock],
) -> Result<LtiSystem> {
    let dim = a.nrows();
    let mut c = DMatrix::zeros(agents, dim);
    set_block(&mut c, 0, 0, &DMatrix::identity(agents, agents));
    let mut labels: Vec<StateBlock> = (1..=order).map(|k| StateBlock::new(format!("xi{k}"), agents)).collect();
    labels.extend(
        blocks
            .iter()
            .enumerate()
            .map(|(k, blk)| StateBlock::new(format!("delta{k}"), blk.realization().state_dim())),
    );
    LtiSystem::new(a, b, c, DMatrix::zeros(agents, agents))?
        .with_blocks(labels)?
        .with_consensus(ConsensusModes::leading_blocks(order, agents, dim))
}

/// Realizes `(sI + L)ⁿ X = U + Σ_k Δ_k sᵏ Lⁿ⁻ᵏ X` over the state
/// `(ξ_1..ξ_n, z_0..z_n)`.
///
/// `Δ_k` for `k < n` is driven by `Lⁿ⁻ᵏ x^{(k)} = Lⁿ⁻ᵏ M_k ξ`; `Δ_n` by
/// `x^{(n)} = M_n ξ + u_tot`, where `u_tot` is the total input of the last
/// integrator. The resulting algebraic loop is solved with `(I − D_n)⁻¹`.
pub fn assemble_perturbed_additive(design: &SerialDesign, blocks: &[PerturbationBlock]) -> Result<LtiSystem> {
    let order = design.order();
    let agents = design.agents();
    let l = design.laplacians()[0].matrix();
    if design.laplacians().iter().any(|lk| !same_matrix(l, lk.matrix())) {
        return Err(Error::Precondition(
            "additive robustness needs identical factors L_k = L".into(),
        ));
    }
    if !is_symmetric(l, 1e-12) {
        return Err(Error::Precondition("additive robustness needs a symmetric L".into()));
    }
    if !design.laplacians()[0].graph().has_connected_spanning_tree() {
        return Err(Error::Precondition("additive robustness needs a connected graph".into()));
    }
    check_blocks(blocks, order, agents)?;

    let nominal = realize_serial(design, true);
    let nx = nominal.state_dim();
    let layout = delta_layout(blocks, nx);
    let dim = layout.last().map_or(nx, |(o, s)| o + s);

    let maps = serial_derivative_maps(design);
    let mut drive: Vec<DMatrix<f64>> = Vec::with_capacity(order + 1);
    for (k, m) in maps.iter().enumerate() {
        let mut r = m.clone();
        for _ in k..order {
            r = l * r;
        }
        drive.push(r);
    }

    let d_n = blocks[order].realization().d();
    let gain = (DMatrix::identity(agents, agents) - d_n)
        .try_inverse()
        .ok_or(Error::IllPosedLoop("I - D_n is singular"))?;
    // u_tot = G (u + Σ C_k z_k + Σ D_k R_k ξ)
    let mut u_xi = DMatrix::zeros(agents, nx);
    for (blk, r) in blocks.iter().zip(&drive) {
        u_xi += blk.realization().d() * r;
    }
    let u_xi = &gain * u_xi;
    let mut u_total = DMatrix::zeros(agents, dim);
    set_block(&mut u_total, 0, 0, &u_xi);
    for (blk, &(off, len)) in blocks.iter().zip(&layout) {
        if len > 0 {
            set_block(&mut u_total, 0, off, &(&gain * blk.realization().c()));
        }
    }

    let mut a = DMatrix::zeros(dim, dim);
    set_block(&mut a, 0, 0, nominal.a());
    let into_last = nominal.b();
    {
        let mut rows = a.view_mut((0, 0), (nx, dim));
        rows += into_last * &u_total;
    }
    let mut b = DMatrix::zeros(dim, agents);
    set_block(&mut b, 0, 0, &(into_last * &gain));

    for (k, (blk, &(off, len))) in blocks.iter().zip(&layout).enumerate() {
        if len == 0 {
            continue;
        }
        let sys = blk.realization();
        set_block(&mut a, off, off, sys.a());
        if k < order {
            set_block(&mut a, off, 0, &(sys.b() * &drive[k]));
        } else {
            // r_n = M_n ξ + u_tot
            let mut r = u_total.clone();
            let mut head = r.view_mut((0, 0), (agents, nx));
            head += &drive[order];
            let contribution = sys.b() * r;
            let mut rows = a.view_mut((off, 0), (len, dim));
            rows += contribution;
            set_block(&mut b, off, 0, &(sys.b() * &gain));
        }
    }
    finish(a, b, order, agents, blocks)
}

/// Realizes `(sI + sΔ₀ + (I + Δ_n) L_n) Π_{k<n} (sI + (I + Δ_k) L_k) X = U`
/// as the cascade `ξ̇_k = −L_k ξ_k − Δ_k(L_k ξ_k) + ξ_{k+1}`, with the last
/// factor solved for `v = ξ̇_n` from `(I + D_0) v = −L_n ξ_n − Δ_n(L_n ξ_n)
/// − C_0 z_0 + u`.
pub fn assemble_perturbed_multiplicative(
    laplacians: &[Laplacian],
    blocks: &[PerturbationBlock],
) -> Result<LtiSystem> {
    let order = laplacians.len();
    if order == 0 {
        return Err(Error::OrderOutOfRange(0));
    }
    let agents = laplacians[0].dim();
    if let Some(l) = laplacians.iter().find(|l| l.dim() != agents) {
        return Err(Error::DimensionMismatch {
            expected: agents,
            found: l.dim(),
            context: "Laplacian sizes",
        });
    }
    if laplacians.iter().any(|l| !l.is_symmetric()) {
        return Err(Error::Precondition(
            "multiplicative robustness needs symmetric L_k".into(),
        ));
    }
    check_blocks(blocks, order, agents)?;

    let nx = agents * order;
    let layout = delta_layout(blocks, nx);
    let dim = layout.last().map_or(nx, |(o, s)| o + s);
    let eye = DMatrix::<f64>::identity(agents, agents);
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, agents);

    // factors 1..n−1 and the Δ_k states they drive
    for k in 1..order {
        let lk = laplacians[k - 1].matrix();
        let row = (k - 1) * agents;
        let sys = blocks[k].realization();
        set_block(&mut a, row, row, &(-(&eye + sys.d()) * lk));
        set_block(&mut a, row, row + agents, &eye);
        let (off, len) = layout[k];
        if len > 0 {
            set_block(&mut a, row, off, &(-sys.c()));
            set_block(&mut a, off, off, sys.a());
            set_block(&mut a, off, row, &(sys.b() * lk));
        }
    }

    // last factor
    let ln = laplacians[order - 1].matrix();
    let row = (order - 1) * agents;
    let d0 = blocks[0].realization();
    let dn = blocks[order].realization();
    let h = (&eye + d0.d())
        .try_inverse()
        .ok_or(Error::IllPosedLoop("I + D_0 is singular"))?;
    // v = H (−(I + D_n) L_n ξ_n − C_n z_n − C_0 z_0 + u)
    let mut v = DMatrix::zeros(agents, dim);
    set_block(&mut v, 0, row, &(-(&h * (&eye + dn.d()) * ln)));
    let (off_n, len_n) = layout[order];
    if len_n > 0 {
        set_block(&mut v, 0, off_n, &(-(&h * dn.c())));
        set_block(&mut a, off_n, off_n, dn.a());
        set_block(&mut a, off_n, row, &(dn.b() * ln));
    }
    let (off_0, len_0) = layout[0];
    if len_0 > 0 {
        let mut cols = v.view_mut((0, off_0), (agents, len_0));
        cols -= &h * d0.c();
    }
    {
        let mut rows = a.view_mut((row, 0), (agents, dim));
        rows += &v;
    }
    set_block(&mut b, row, 0, &h);
    if len_0 > 0 {
        // ż_0 = A_0 z_0 + B_0 v
        let mut rows = a.view_mut((off_0, 0), (len_0, dim));
        rows += d0.b() * &v;
        let mut own = a.view_mut((off_0, off_0), (len_0, len_0));
        own += d0.a();
        set_block(&mut b, off_0, 0, &(d0.b() * &h));
    }
    finish(a, b, order, agents, blocks)
}

/// Diagonal lags `k_i / (T_i s + 1)` with `T_i ∈ [0.1, 10]`, `k_i` uniform
/// in `(−norm, norm)` and rescaled so `max |k_i| = norm`.
pub fn random_lag_bank<R: Rng + ?Sized>(
    rng: &mut R,
    agents: usize,
    norm: f64,
    role: PerturbationRole,
) -> Result<PerturbationBlock> {
    let mut gains: Vec<f64> = (0..agents).map(|_| rng.random_range(-1.0..1.0)).collect();
    let peak = gains.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    if peak > 0.0 {
        gains.iter_mut().for_each(|k| *k *= norm / peak);
    }
    let taus: Vec<f64> = (0..agents).map(|_| rng.random_range(0.1..=10.0)).collect();
    PerturbationBlock::lag_bank(&gains, &taus, role)
}

/// Static symmetric matrix with spectral norm `norm`.
pub fn random_static_symmetric<R: Rng + ?Sized>(
    rng: &mut R,
    agents: usize,
    norm: f64,
    role: PerturbationRole,
) -> Result<PerturbationBlock> {
    let raw = DMatrix::from_fn(agents, agents, |_, _| rng.random_range(-1.0..1.0));
    let sym = (&raw + raw.transpose()) * 0.5;
    let s = spectral_norm(&sym);
    let scaled = if s > 0.0 { sym * (norm / s) } else { sym };
    PerturbationBlock::static_gain(scaled, role)
}

/// Either block shape with equal probability.
pub fn random_block<R: Rng + ?Sized>(
    rng: &mut R,
    agents: usize,
    norm: f64,
    role: PerturbationRole,
) -> Result<PerturbationBlock> {
    if rng.random_bool(0.5) {
        random_lag_bank(rng, agents, norm, role)
    } else {
        random_static_symmetric(rng, agents, norm, role)
    }
}

/// Blocks `Δ_0..Δ_n` whose additive margin total equals `total`, with the
/// budget split at random between the terms.
pub fn random_additive_set<R: Rng + ?Sized>(
    rng: &mut R,
    order: usize,
    agents: usize,
    total: f64,
) -> Result<Vec<PerturbationBlock>> {
    let shares: Vec<f64> = (0..=order).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = shares.iter().sum();
    (0..=order)
        .map(|k| {
            let norm = total * shares[k] / sum / analytic_factor(order, k)?;
            random_block(rng, agents, norm, PerturbationRole::additive(k))
        })
        .collect()
}

/// Blocks with `‖Δ₀‖ + ‖Δ_n‖ = budget` and intermediate norms uniform in
/// `[0, budget)`; `budget < 1` satisfies the multiplicative margin.
pub fn random_multiplicative_set<R: Rng + ?Sized>(
    rng: &mut R,
    order: usize,
    agents: usize,
    budget: f64,
) -> Result<Vec<PerturbationBlock>> {
    let split = rng.random_range(0.0..1.0);
    (0..=order)
        .map(|k| {
            let norm = if k == 0 {
                budget * split
            } else if k == order {
                budget * (1.0 - split)
            } else {
                rng.random_range(0.0..budget)
            };
            random_block(rng, agents, norm, PerturbationRole::multiplicative(k))
        })
        .collect()
}

/// Random state with zero-mean chain blocks; a component along the
/// block-ones vectors would only shift the agreement trajectories.
pub fn random_initial_state<R: Rng + ?Sized>(rng: &mut R, system: &LtiSystem) -> DVector<f64> {
    let mut x = DVector::from_fn(system.state_dim(), |_, _| rng.random_range(-1.0..1.0));
    if let Some(modes) = system.consensus() {
        for k in 0..modes.order {
            let mut block = x.rows_mut(k * modes.agents, modes.agents);
            let mean = block.mean();
            block.add_scalar_mut(-mean);
        }
    }
    x
}

/// Horizon long enough for modes decaying at `decay` to shrink by ~e⁻³⁰.
pub fn settling_horizon(decay: f64) -> f64 {
    30.0 / decay
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessSample {
    pub sample_id: usize,
    pub total_margin: f64,
    pub satisfied: bool,
    pub stable: bool,
    pub consensus: bool,
    pub min_settling_time: Option<f64>,
}

/// Draws `samples` perturbation sets (additive: margin total `budget`;
/// multiplicative: `‖Δ₀‖ + ‖Δ_n‖ = budget`), assembles each loop around
/// `design`, classifies its spectrum and, when stable, simulates it from a
/// random state. Sample `i` uses the seed `derive_seed(seed, i)`.
pub fn robustness_sweep(
    design: &SerialDesign,
    mode: PerturbationMode,
    budget: f64,
    samples: usize,
    seed: u64,
    jobs: Option<usize>,
) -> Result<Vec<RobustnessSample>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..samples)
            .into_par_iter()
            .map(|id| robustness_sample(design, mode, budget, id, derive_seed(seed, id as u64)))
            .collect()
    })
}

fn robustness_sample(
    design: &SerialDesign,
    mode: PerturbationMode,
    budget: f64,
    sample_id: usize,
    seed: u64,
) -> Result<RobustnessSample> {
    let mut rng = seeded(seed);
    let (order, agents) = (design.order(), design.agents());
    let (blocks, system) = match mode {
        PerturbationMode::Additive => {
            let blocks = random_additive_set(&mut rng, order, agents, budget)?;
            let sys = assemble_perturbed_additive(design, &blocks)?;
            (blocks, sys)
        }
        PerturbationMode::Multiplicative => {
            let blocks = random_multiplicative_set(&mut rng, order, agents, budget)?;
            let sys = assemble_perturbed_multiplicative(design.laplacians(), &blocks)?;
            (blocks, sys)
        }
    };
    let margin = margin_of_blocks(mode, &blocks)?;
    let report = spectrum(&system, None)?;
    let mut consensus = false;
    let mut min_settling_time = None;
    if report.stable {
        let decay = report.max_real_part_excluding_zeros.map_or(1.0, |m| -m);
        let horizon = settling_horizon(decay);
        let x0 = random_initial_state(&mut rng, &system);
        let trace = simulate(&system, &x0, &ReferenceSignal::Zero, horizon, horizon / 2000.0)?;
        let verdict = consensus_verdict(&trace, DEFAULT_EPSILON, None)?;
        consensus = verdict.achieved;
        min_settling_time = verdict
            .settling_times
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min);
    }
    Ok(RobustnessSample {
        sample_id,
        total_margin: margin.total,
        satisfied: margin.satisfied,
        stable: report.stable,
        consensus,
        min_settling_time,
    })
}

/// CSV with columns `sample_id,total_margin,stable,min_settling_time`.
pub fn write_robustness_csv<W: Write>(samples: &[RobustnessSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "sample_id,total_margin,stable,min_settling_time")?;
    for s in samples {
        let settle = s.min_settling_time.map(|t| format!("{t:e}")).unwrap_or_default();
        writeln!(out, "{},{:e},{},{}", s.sample_id, s.total_margin, s.stable, settle)?;
    }
    Ok(())
}
