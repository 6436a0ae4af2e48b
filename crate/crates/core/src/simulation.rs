//! Closed-loop trajectories by exact discretization, derivative
//! reconstruction and nth-order consensus verdicts.
//!
//! Inputs are piecewise polynomials. Each piece is generated by a chain of
//! integrators appended to the state, so one matrix exponential of the
//! augmented system propagates state and input together with no truncation
//! error. Breakpoints split the step that contains them.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::set_block;
use crate::lti::LtiSystem;
use crate::synthesis::{serial_derivative_maps, SerialDesign};
use crate::{Error, Result};

/// State norm above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Default verdict window as a fraction of the horizon.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.1;

/// One polynomial input piece, active from `start` until the next piece.
/// `derivatives[p]` is `u^{(p)}(start)`, one entry per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialPiece {
    pub start: f64,
    pub derivatives: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSignal {
    Zero,
    /// `u = v δ(t)`, applied as the jump `x(0⁺) = x(0) + B v`.
    ImpulseEquivalentInitialState { impulse: Vec<f64> },
    /// Leader moving with constant acceleration: initial acceleration plus
    /// the input that keeps it constant on the leader's integrator chain.
    LeaderConstantAcceleration { leader: usize, acceleration: f64 },
    PiecewisePolynomial { pieces: Vec<PolynomialPiece> },
}

impl ReferenceSignal {
    /// Initial-state jump and the polynomial pieces this signal reduces to.
    fn prepare(&self, system: &LtiSystem) -> Result<(DVector<f64>, Vec<PolynomialPiece>)> {
        let dim = system.state_dim();
        let m = system.n_inputs();
        match self {
            Self::Zero => Ok((DVector::zeros(dim), Vec::new())),
            Self::ImpulseEquivalentInitialState { impulse } => {
                if impulse.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: impulse.len(),
                        context: "impulse weights vs inputs",
                    });
                }
                Ok((system.b() * DVector::from_column_slice(impulse), Vec::new()))
            }
            Self::LeaderConstantAcceleration {
                leader,
                acceleration,
            } => {
                let (order, agents) = agent_layout(system);
                if *leader >= agents || m != agents {
                    return Err(Error::Precondition(format!(
                        "leader {leader} needs one input per agent ({agents} agents, {m} inputs)"
                    )));
                }
                let mut unit = vec![0.0; m];
                unit[*leader] = *acceleration;
                let zero = vec![0.0; m];
                let (offset, derivatives) = match order {
                    1 => (DVector::zeros(dim), vec![zero, unit]),
                    2 => (DVector::zeros(dim), vec![unit]),
                    _ => {
                        let mut d = vec![DVector::zeros(agents); order];
                        d[2][*leader] = *acceleration;
                        (state_from_derivatives(system, &d)?, Vec::new())
                    }
                };
                let pieces = if derivatives.is_empty() {
                    Vec::new()
                } else {
                    vec![PolynomialPiece {
                        start: 0.0,
                        derivatives,
                    }]
                };
                Ok((offset, pieces))
            }
            Self::PiecewisePolynomial { pieces } => {
                for (idx, p) in pieces.iter().enumerate() {
                    if !p.start.is_finite() || idx > 0 && p.start <= pieces[idx - 1].start {
                        return Err(Error::InvalidParameter(
                            "polynomial pieces need finite, strictly increasing starts".into(),
                        ));
                    }
                    if let Some(bad) = p.derivatives.iter().find(|v| v.len() != m) {
                        return Err(Error::DimensionMismatch {
                            expected: m,
                            found: bad.len(),
                            context: "polynomial coefficients vs inputs",
                        });
                    }
                }
                Ok((DVector::zeros(dim), pieces.clone()))
            }
        }
    }
}

/// `(order, agents)` from the consensus annotation, else `(1, outputs)`.
fn agent_layout(system: &LtiSystem) -> (usize, usize) {
    system
        .consensus()
        .map_or((1, system.n_outputs()), |m| (m.order, m.agents))
}

/// State whose outputs `x^{(0)}, …, x^{(n−1)}` equal `derivatives` (one
/// vector per order). Requires a square, invertible derivative map.
pub fn state_from_derivatives(system: &LtiSystem, derivatives: &[DVector<f64>]) -> Result<DVector<f64>> {
    let order = derivatives.len();
    let map = system.output_derivative_map(order);
    if map.nrows() != map.ncols() {
        return Err(Error::Precondition(format!(
            "derivatives up to order {} do not determine a {}-dimensional state",
            order.saturating_sub(1),
            system.state_dim()
        )));
    }
    let mut rhs = DVector::zeros(map.nrows());
    let p = system.n_outputs();
    for (k, d) in derivatives.iter().enumerate() {
        if d.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: d.len(),
                context: "derivative vector vs outputs",
            });
        }
        rhs.rows_mut(k * p, p).copy_from(d);
    }
    map.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("derivative map is singular".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub time: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub order: usize,
    pub agents: usize,
    /// Per step, `agents × order`; column k holds `x^{(k)}`.
    pub derivatives: Vec<DMatrix<f64>>,
    /// Per step, per k: `max_{i,j} |x_i^{(k)} − x_j^{(k)}|`.
    pub spreads: Vec<Vec<f64>>,
    /// First grid point with a non-finite state or norm above
    /// [`DIVERGENCE_NORM`]; the trace stops there.
    pub divergence: Option<Divergence>,
}

impl SimulationTrace {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trace has at least the initial point")
    }

    /// Mean over agents of `x^{(k)}` at every step.
    pub fn agreement(&self, k: usize) -> Vec<f64> {
        self.derivatives.iter().map(|d| d.column(k).mean()).collect()
    }

    /// CSV with columns `t,agent,k,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,agent,k,value")?;
        for (t, d) in self.time.iter().zip(&self.derivatives) {
            for agent in 0..self.agents {
                for k in 0..self.order {
                    writeln!(out, "{t},{agent},{k},{:e}", d[(agent, k)])?;
                }
            }
        }
        Ok(())
    }

    /// CSV with columns `t,k,spread`.
    pub fn write_spreads_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,k,spread")?;
        for (t, s) in self.time.iter().zip(&self.spreads) {
            for (k, v) in s.iter().enumerate() {
                writeln!(out, "{t},{k},{v:e}")?;
            }
        }
        Ok(())
    }
}

fn spreads_of(d: &DMatrix<f64>) -> Vec<f64> {
    d.column_iter().map(|c| c.max() - c.min()).collect()
}

/// Augmented generator: state, then `g` stacked input derivatives, with
/// `ż_p = z_{p+1}` and `u = z_0`.
fn augmented(system: &LtiSystem, g: usize) -> DMatrix<f64> {
    let nx = system.state_dim();
    let m = system.n_inputs();
    let dim = nx + m * g;
    let mut a = DMatrix::zeros(dim, dim);
    set_block(&mut a, 0, 0, system.a());
    if g > 0 {
        set_block(&mut a, 0, nx, system.b());
        let eye = DMatrix::identity(m, m);
        for p in 0..g.saturating_sub(1) {
            set_block(&mut a, nx + p * m, nx + (p + 1) * m, &eye);
        }
    }
    a
}

/// Propagates `system` from `x0` under `u` on the grid `0, dt, 2dt, …,
/// horizon` (the last step is shortened to land on `horizon`).
pub fn simulate(
    system: &LtiSystem,
    x0: &DVector<f64>,
    u: &ReferenceSignal,
    horizon: f64,
    dt: f64,
) -> Result<SimulationTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be finite and at least dt = {dt}"
        )));
    }
    let nx = system.state_dim();
    if x0.len() != nx {
        return Err(Error::DimensionMismatch {
            expected: nx,
            found: x0.len(),
            context: "initial state",
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state is not finite".into()));
    }
    let (jump, pieces) = u.prepare(system)?;
    let (order, agents) = agent_layout(system);
    let derivative_map = system.output_derivative_map(order);
    let m = system.n_inputs();
    let g = pieces.iter().map(|p| p.derivatives.len()).max().unwrap_or(0);
    let a_aug = augmented(system, g);
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut propagator = |h: f64| -> DMatrix<f64> {
        cache
            .entry(h.to_bits())
            .or_insert_with(|| (&a_aug * h).exp())
            .clone()
    };
    let load = |w: &mut DVector<f64>, piece: Option<&PolynomialPiece>| {
        w.rows_mut(nx, m * g).fill(0.0);
        if let Some(p) = piece {
            for (q, v) in p.derivatives.iter().enumerate() {
                w.rows_mut(nx + q * m, m).copy_from_slice(v);
            }
        }
    };
    // piece active at time t (pieces are sorted by start)
    let active = |t: f64| pieces.iter().rposition(|p| p.start <= t);

    let mut w = DVector::zeros(nx + m * g);
    w.rows_mut(0, nx).copy_from(&(x0 + jump));
    let mut current = active(0.0);
    load(&mut w, current.map(|i| &pieces[i]));
    if let Some(i) = current {
        if pieces[i].start < 0.0 {
            // advance the generator to t = 0
            let lead = -pieces[i].start;
            let mut gen = DVector::zeros(nx + m * g);
            load(&mut gen, Some(&pieces[i]));
            let advanced = propagator(lead) * gen;
            w.rows_mut(nx, m * g).copy_from(&advanced.rows(nx, m * g));
        }
    }

    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let record = |w: &DVector<f64>| {
        let x = w.rows(0, nx).into_owned();
        let flat = &derivative_map * &x;
        let d = DMatrix::from_fn(agents, order, |i, k| flat[k * agents + i]);
        (x, d)
    };
    let mut time = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivatives = Vec::with_capacity(steps + 1);
    let mut spreads = Vec::with_capacity(steps + 1);
    let (x, d) = record(&w);
    time.push(0.0);
    spreads.push(spreads_of(&d));
    states.push(x);
    derivatives.push(d);
    let mut divergence = None;
    let mut t = 0.0;
    for j in 1..=steps {
        let t_next = if j == steps { horizon } else { j as f64 * dt };
        while t < t_next {
            let next_break = pieces
                .iter()
                .map(|p| p.start)
                .find(|&s| s > t && s < t_next);
            let stop = next_break.unwrap_or(t_next);
            w = propagator(stop - t) * &w;
            t = stop;
            // also catches a piece starting exactly on a grid point
            let now = active(t);
            if now != current {
                current = now;
                load(&mut w, current.map(|i| &pieces[i]));
            }
        }
        let (x, d) = record(&w);
        let bad = x.iter().any(|v| !v.is_finite()) || x.norm() > DIVERGENCE_NORM;
        if bad {
            divergence = Some(Divergence { step: j, time: t });
            break;
        }
        time.push(t);
        spreads.push(spreads_of(&d));
        states.push(x);
        derivatives.push(d);
    }
    Ok(SimulationTrace {
        time,
        states,
        order,
        agents,
        derivatives,
        spreads,
        divergence,
    })
}

/// `x^{(0..n−1)}` from serial states `ξ`, one `N × n` matrix per state,
/// using the bidiagonal chain structure rather than differentiation.
pub fn derivatives_from_serial_state(
    design: &SerialDesign,
    states: &[DVector<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let n = design.agents();
    let order = design.order();
    let maps = serial_derivative_maps(design);
    states
        .iter()
        .map(|xi| {
            if xi.len() != n * order {
                return Err(Error::DimensionMismatch {
                    expected: n * order,
                    found: xi.len(),
                    context: "serial state",
                });
            }
            let mut out = DMatrix::zeros(n, order);
            for k in 0..order {
                out.set_column(k, &(&maps[k] * xi));
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusVerdict {
    pub achieved: bool,
    /// Per k, first grid time after which the spread stays below epsilon;
    /// `None` if it is still above at the end.
    pub settling_times: Vec<Option<f64>>,
    pub divergence: Option<Divergence>,
    pub epsilon: f64,
    pub window: f64,
}

/// nth-order consensus holds when every spread stays below `epsilon` over
/// the final `window` seconds (default: 10% of the simulated span).
pub fn consensus_verdict(
    trace: &SimulationTrace,
    epsilon: f64,
    window: Option<f64>,
) -> Result<ConsensusVerdict> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let t0 = trace.time[0];
    let t_end = *trace.time.last().expect("non-empty trace");
    let window = window.unwrap_or(DEFAULT_WINDOW_FRACTION * (t_end - t0));
    if !(window >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "window must be nonnegative, got {window}"
        )));
    }
    let mut settling_times = Vec::with_capacity(trace.order);
    for k in 0..trace.order {
        let last_bad = trace.spreads.iter().rposition(|s| !(s[k] < epsilon));
        settling_times.push(match last_bad {
            None => Some(t0),
            Some(i) if i + 1 < trace.time.len() => Some(trace.time[i + 1]),
            Some(_) => None,
        });
    }
    let achieved = trace.divergence.is_none()
        && settling_times
            .iter()
            .all(|s| s.is_some_and(|ts| ts <= t_end - window));
    Ok(ConsensusVerdict {
        achieved,
        settling_times: if trace.divergence.is_some() {
            vec![None; trace.order]
        } else {
            settling_times
        },
        divergence: trace.divergence,
        epsilon,
        window,
    })
}
