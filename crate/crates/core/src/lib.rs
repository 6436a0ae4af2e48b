//! Serial consensus for networks of nth-order integrators.
//!
//! A serial consensus closed loop factors as a product of first-order
//! consensus operators, `(sI + L_1)(sI + L_2)...(sI + L_n) X = U_ref`.
//! This crate builds such designs from weighted directed graphs, expands
//! them into local relative-state feedback gains, realizes closed loops as
//! state-space systems, and analyzes them:
//!
//! - [`graph`]: weighted digraphs, Laplacians, spanning-tree test, families.
//! - [`sparsity`]: q-hop masks and membership in the class of q-step
//!   implementable relative feedback matrices.
//! - [`synthesis`]: coefficient expansion, gain bounds, realizations.
//! - [`spectral`]: consensus-stability classification and size sweeps.
//! - [`simulation`]: exact-discretization trajectories and consensus verdicts.
//! - [`robustness`]: H-infinity factors, small-gain margins, perturbed loops.
//!
//! Matrices are dense `nalgebra::DMatrix<f64>`; desk scale (a few hundred
//! agents at most) is assumed throughout.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod linalg;
pub mod lti;
pub mod random;
pub mod robustness;
pub mod simulation;
pub mod sparsity;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};
pub use graph::{DirectedWeightedGraph, GraphFamily, Laplacian};
pub use lti::{ConsensusModes, LtiSystem, StateBlock};
pub use robustness::{MarginReport, PerturbationBlock, PerturbationMode, PerturbationRole};
pub use simulation::{ConsensusVerdict, ReferenceSignal, SimulationTrace};
pub use sparsity::{FeedbackClassSpec, HopMask};
pub use spectral::{DesignRule, SpectrumReport, SweepResult};
pub use synthesis::{ConventionalDesign, SerialDesign};
