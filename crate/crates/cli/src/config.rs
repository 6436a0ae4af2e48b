//! Experiment configuration. A config file holds one subcommand's parameters
//! plus the seed; the runner writes the effective config next to its outputs
//! so a run can be repeated byte for byte.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serial_consensus::graph::{make_family, GraphJson};
use serial_consensus::simulation::DEFAULT_EPSILON;
use serial_consensus::{DesignRule, DirectedWeightedGraph, GraphFamily, PerturbationMode, ReferenceSignal};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub command: CommandConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandConfig {
    Synthesize(SynthesizeConfig),
    Sweep(SweepConfig),
    Simulate(SimulateConfig),
    Margin(MarginConfig),
    Spectrum(SpectrumConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synthesize(_) => "synthesize",
            Self::Sweep(_) => "sweep",
            Self::Simulate(_) => "simulate",
            Self::Margin(_) => "margin",
            Self::Spectrum(_) => "spectrum",
        }
    }
}

/// A family member, a graph file, or an inline `{"n", "edges"}` graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Family { family: String, n: usize },
    File { file: PathBuf },
    Inline(GraphJson),
}

impl GraphSource {
    pub fn load(&self) -> Result<DirectedWeightedGraph, CliError> {
        match self {
            Self::Family { family, n } => Ok(make_family(parse_family(family)?, *n)?),
            Self::File { file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| CliError::Config(format!("cannot read graph {}: {e}", file.display())))?;
                let json: GraphJson = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("bad graph file {}: {e}", file.display())))?;
                Ok(DirectedWeightedGraph::try_from(json)?)
            }
            Self::Inline(json) => Ok(DirectedWeightedGraph::try_from(json.clone())?),
        }
    }
}

pub fn parse_family(name: &str) -> Result<GraphFamily, CliError> {
    name.parse()
        .map_err(|_| CliError::Config(format!("unknown graph family '{name}' (directed_cycle, leader_chain, path, complete)")))
}

/// Serial design `L_k = scales[k-1] · L(graph)` with its locality report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub graph: GraphSource,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRule {
    /// Output file stem.
    pub name: String,
    pub rule: DesignRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: String,
    pub n_min: usize,
    pub n_max: usize,
    pub rules: Vec<NamedRule>,
    #[serde(default)]
    pub full_spectra: bool,
}

/// Initial state of the realization (serial: `ξ_1..ξ_n`; conventional:
/// `x, ẋ, …`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Zero,
    /// Entries uniform in `[-scale, scale]`, drawn from the seed.
    Uniform { scale: f64 },
    Values { values: Vec<f64> },
}

fn default_signal() -> ReferenceSignal {
    ReferenceSignal::Zero
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub graph: GraphSource,
    pub rule: DesignRule,
    #[serde(default = "default_signal")]
    pub signal: ReferenceSignal,
    #[serde(default)]
    pub initial_state: InitialState,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Verdict window; defaults to a tenth of the horizon.
    #[serde(default)]
    pub window: Option<f64>,
}

/// One perturbation block; its position in the list is its index k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockConfig {
    Zero,
    /// Row-major static gain.
    Static { matrix: Vec<Vec<f64>> },
    Diagonal { values: Vec<f64> },
    /// `k_i / (T_i s + 1)` per agent.
    LagBank { gains: Vec<f64>, time_constants: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub graph: GraphSource,
    /// `L_k = scales[k-1] · L`; one entry per order.
    pub scales: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    pub mode: PerturbationMode,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<ClosedLoopConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<DesignRule>,
    /// Serial design JSON as written by `synthesize`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_file: Option<PathBuf>,
}
