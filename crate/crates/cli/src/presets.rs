//! Built-in experiment configs, looked up by subcommand and name.

use serial_consensus::{DesignRule, PerturbationMode, ReferenceSignal};

use crate::config::{
    BlockConfig, ClosedLoopConfig, CommandConfig, GraphSource, InitialState, MarginConfig, MonteCarloConfig,
    NamedRule, SimulateConfig, SpectrumConfig, SweepConfig, SynthesizeConfig,
};

pub const SYNTHESIZE: &[&str] = &["fig4"];
pub const SWEEP: &[&str] = &["fig4", "cycle-2nd-order"];
pub const SIMULATE: &[&str] = &["serial-n12", "serial-n13", "conventional-n12", "conventional-n13"];
pub const MARGIN: &[&str] = &[
    "additive-example",
    "lag-bank",
    "multiplicative-lag",
    "additive-monte-carlo",
    "multiplicative-monte-carlo",
];
pub const SPECTRUM: &[&str] = &["fig4-serial-n13", "fig4-conventional-n13"];

pub fn names(command: &str) -> &'static [&'static str] {
    match command {
        "synthesize" => SYNTHESIZE,
        "sweep" => SWEEP,
        "simulate" => SIMULATE,
        "margin" => MARGIN,
        "spectrum" => SPECTRUM,
        _ => &[],
    }
}

fn family(name: &str, n: usize) -> GraphSource {
    GraphSource::Family {
        family: name.to_string(),
        n,
    }
}

fn serial_246() -> DesignRule {
    DesignRule::Serial {
        scales: vec![2.0, 4.0, 6.0],
    }
}

fn conventional_246() -> DesignRule {
    DesignRule::Conventional {
        gains: vec![2.0, 4.0, 6.0],
    }
}

/// Heterogeneous lags with `max |k_i| = kappa`, signs alternating and time
/// constants spread over `[0.1, 10]`.
pub fn lag_bank(agents: usize, kappa: f64) -> BlockConfig {
    let gains = (0..agents)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * kappa * (1.0 - 0.1 * (i % 3) as f64)
        })
        .collect();
    let time_constants = (0..agents)
        .map(|i| 0.1 + 9.9 * i as f64 / (agents.max(2) - 1) as f64)
        .collect();
    BlockConfig::LagBank { gains, time_constants }
}

pub fn preset(command: &str, name: &str) -> Option<CommandConfig> {
    let cfg = match (command, name) {
        ("synthesize", "fig4") => CommandConfig::Synthesize(SynthesizeConfig {
            graph: family("leader_chain", 12),
            scales: vec![2.0, 4.0, 6.0],
        }),
        ("sweep", "fig4") => CommandConfig::Sweep(SweepConfig {
            family: "leader_chain".into(),
            n_min: 3,
            n_max: 30,
            rules: vec![
                NamedRule {
                    name: "conventional".into(),
                    rule: conventional_246(),
                },
                NamedRule {
                    name: "serial".into(),
                    rule: serial_246(),
                },
            ],
            full_spectra: false,
        }),
        ("sweep", "cycle-2nd-order") => CommandConfig::Sweep(SweepConfig {
            family: "directed_cycle".into(),
            n_min: 3,
            n_max: 60,
            rules: vec![
                NamedRule {
                    name: "conventional".into(),
                    rule: DesignRule::Conventional { gains: vec![1.0, 2.0] },
                },
                NamedRule {
                    name: "serial".into(),
                    rule: DesignRule::Serial { scales: vec![1.0, 1.0] },
                },
            ],
            full_spectra: false,
        }),
        ("simulate", _) => {
            let (rule, n) = match name {
                "serial-n12" => (serial_246(), 12),
                "serial-n13" => (serial_246(), 13),
                "conventional-n12" => (conventional_246(), 12),
                "conventional-n13" => (conventional_246(), 13),
                _ => return None,
            };
            CommandConfig::Simulate(SimulateConfig {
                graph: family("leader_chain", n),
                rule,
                signal: ReferenceSignal::LeaderConstantAcceleration {
                    leader: 0,
                    acceleration: 1.0,
                },
                initial_state: InitialState::Zero,
                horizon: 900.0,
                dt: 0.5,
                epsilon: 1e-6,
                window: None,
            })
        }
        ("margin", "additive-example") => CommandConfig::Margin(MarginConfig {
            mode: PerturbationMode::Additive,
            order: 2,
            norms: Some(vec![0.3, 0.5, 0.3]),
            blocks: None,
            closed_loop: None,
            monte_carlo: None,
        }),
        ("margin", "lag-bank") => CommandConfig::Margin(MarginConfig {
            mode: PerturbationMode::Additive,
            order: 2,
            norms: None,
            blocks: Some(vec![BlockConfig::Zero, BlockConfig::Zero, lag_bank(10, 0.9)]),
            closed_loop: Some(ClosedLoopConfig {
                graph: family("path", 10),
                scales: vec![1.0, 1.0],
                epsilon: 1e-6,
            }),
            monte_carlo: None,
        }),
        ("margin", "multiplicative-lag") => CommandConfig::Margin(MarginConfig {
            mode: PerturbationMode::Multiplicative,
            order: 2,
            norms: None,
            blocks: Some(vec![
                BlockConfig::Zero,
                BlockConfig::LagBank {
                    gains: vec![0.5, -0.5, 0.3, 0.1, -0.2, 0.4],
                    time_constants: vec![0.2, 1.0, 3.0, 5.0, 9.0, 0.5],
                },
                BlockConfig::Zero,
            ]),
            closed_loop: Some(ClosedLoopConfig {
                graph: family("path", 6),
                scales: vec![1.0, 2.0],
                epsilon: 1e-6,
            }),
            monte_carlo: None,
        }),
        ("margin", "additive-monte-carlo") | ("margin", "multiplicative-monte-carlo") => {
            let mode = if name.starts_with("additive") {
                PerturbationMode::Additive
            } else {
                PerturbationMode::Multiplicative
            };
            CommandConfig::Margin(MarginConfig {
                mode,
                order: 2,
                norms: None,
                blocks: None,
                closed_loop: Some(ClosedLoopConfig {
                    graph: family("path", 6),
                    scales: vec![1.0, 1.0],
                    epsilon: 1e-6,
                }),
                monte_carlo: Some(MonteCarloConfig {
                    samples: 100,
                    budget: 0.99,
                }),
            })
        }
        ("spectrum", "fig4-serial-n13") => CommandConfig::Spectrum(SpectrumConfig {
            graph: Some(family("leader_chain", 13)),
            rule: Some(serial_246()),
            design_file: None,
        }),
        ("spectrum", "fig4-conventional-n13") => CommandConfig::Spectrum(SpectrumConfig {
            graph: Some(family("leader_chain", 13)),
            rule: Some(conventional_246()),
            design_file: None,
        }),
        _ => return None,
    };
    Some(cfg)
}
