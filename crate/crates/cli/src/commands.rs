use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use serial_consensus::graph::{make_family, Laplacian};
use serial_consensus::linalg::inf_norm;
use serial_consensus::random::seeded;
use serial_consensus::robustness::{
    additive_margin, assemble_perturbed_additive, assemble_perturbed_multiplicative, margin_of_blocks,
    multiplicative_margin, random_initial_state, robustness_sweep, settling_horizon, write_robustness_csv,
};
use serial_consensus::simulation::{consensus_verdict, simulate};
use serial_consensus::sparsity::in_class;
use serial_consensus::spectral::{spectrum, stability_sweep};
use serial_consensus::synthesis::{gain_bound, realize_serial, scaled_serial, DesignJson};
use serial_consensus::{
    FeedbackClassSpec, LtiSystem, PerturbationBlock, PerturbationMode, PerturbationRole, SerialDesign,
};

use crate::config::{
    parse_family, BlockConfig, InitialState, MarginConfig, SimulateConfig, SpectrumConfig, SweepConfig,
    SynthesizeConfig,
};
use crate::error::CliError;

pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        let file = File::create(&path)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config("static block matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn synthesize(cfg: &SynthesizeConfig, ctx: &Context) -> Result<(), CliError> {
    let graph = cfg.graph.load()?;
    let design = scaled_serial(&graph.laplacian(), &cfg.scales)?;
    let order = design.order();
    let c = design.laplacians().iter().map(|l| inf_norm(l.matrix())).fold(0.0, f64::max);
    if c <= 0.0 {
        return Err(CliError::Precondition("all Laplacians are zero; the graph has no edges".into()));
    }
    let bound = gain_bound(order, c);
    let spec = FeedbackClassSpec::new(graph, order, bound)?;
    let mut verdicts = Vec::with_capacity(order);
    let mut all_member = true;
    for (k, a) in design.coefficients().iter().enumerate() {
        let v = in_class(a, &spec)?;
        all_member &= v.member;
        verdicts.push(json!({
            "k": k,
            "member": v.member,
            "violation": v.violation.map(|x| x.to_string()),
            "inf_norm": v.inf_norm,
            "row_sum_residual": v.row_sum_residual,
        }));
    }
    ctx.write_json("design.json", &design.to_json())?;
    ctx.write_json(
        "locality.json",
        &json!({
            "order": order,
            "hops": order,
            "c": c,
            "gain_bound": bound,
            "all_member": all_member,
            "coefficients": verdicts,
        }),
    )?;
    println!("order {order}, c = {c}, gain bound c' = {bound}");
    if all_member {
        println!("all coefficients are {order}-step implementable");
        Ok(())
    } else {
        Err(CliError::Precondition("some coefficient is outside the feedback class".into()))
    }
}

fn valid_stem(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn sweep(cfg: &SweepConfig, ctx: &Context) -> Result<(), CliError> {
    let family = parse_family(&cfg.family)?;
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max {
        return Err(CliError::Config(format!("bad N range [{}, {}]", cfg.n_min, cfg.n_max)));
    }
    if cfg.rules.is_empty() {
        return Err(CliError::Config("sweep needs at least one rule".into()));
    }
    for (i, r) in cfg.rules.iter().enumerate() {
        if !valid_stem(&r.name) || cfg.rules[..i].iter().any(|o| o.name == r.name) {
            return Err(CliError::Config(format!("rule names must be unique file stems, got '{}'", r.name)));
        }
    }
    // surfaces bad gains as config errors before any per-N work
    let smallest = make_family(family, cfg.n_min)?;
    for r in &cfg.rules {
        r.rule.realize(&smallest)?;
    }
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for r in &cfg.rules {
        let result = stability_sweep(family, &r.rule, cfg.n_min..=cfg.n_max, ctx.jobs)?;
        ctx.write_with(&format!("{}.csv", r.name), |w| result.write_csv(w))?;
        if cfg.full_spectra {
            ctx.write_json(&format!("{}.json", r.name), &result.to_json(true))?;
        }
        for e in result.entries.iter().filter(|e| e.error.is_some()) {
            failures.push(format!("{} N={}: {}", r.name, e.n_agents, e.error.as_deref().unwrap_or("")));
        }
        let critical = result.critical_n.map_or("none".to_string(), |n| n.to_string());
        println!("{}: {} on {}, critical N = {critical}", r.name, result.rule, result.family);
        summary.push(json!({
            "name": r.name,
            "family": result.family,
            "rule": result.rule,
            "critical_n": result.critical_n,
        }));
    }
    ctx.write_json("summary.json", &summary)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(failures.join("; ")))
    }
}

fn initial_state(init: &InitialState, dim: usize, seed: u64) -> Result<DVector<f64>, CliError> {
    match init {
        InitialState::Zero => Ok(DVector::zeros(dim)),
        InitialState::Uniform { scale } => {
            if !(*scale >= 0.0 && scale.is_finite()) {
                return Err(CliError::Config(format!("initial state scale must be nonnegative, got {scale}")));
            }
            let mut rng = seeded(seed);
            Ok(DVector::from_fn(dim, |_, _| scale * rng.random_range(-1.0..=1.0)))
        }
        InitialState::Values { values } => {
            if values.len() != dim {
                return Err(CliError::Config(format!(
                    "initial state has {} values, the realization has {dim} states",
                    values.len()
                )));
            }
            Ok(DVector::from_column_slice(values))
        }
    }
}

pub fn simulate_cmd(cfg: &SimulateConfig, ctx: &Context) -> Result<(), CliError> {
    let graph = cfg.graph.load()?;
    let system = cfg.rule.realize(&graph)?;
    let x0 = initial_state(&cfg.initial_state, system.state_dim(), ctx.seed)?;
    let trace = simulate(&system, &x0, &cfg.signal, cfg.horizon, cfg.dt)?;
    let verdict = consensus_verdict(&trace, cfg.epsilon, cfg.window)?;
    ctx.write_with("trace.csv", |w| trace.write_csv(w))?;
    ctx.write_with("spreads.csv", |w| trace.write_spreads_csv(w))?;
    ctx.write_json(
        "verdict.json",
        &json!({
            "rule": cfg.rule.to_string(),
            "agents": trace.agents,
            "order": trace.order,
            "final_time": trace.time.last(),
            "final_spreads": trace.spreads.last(),
            "verdict": verdict,
        }),
    )?;
    match &verdict.divergence {
        Some(d) => println!("diverged at t = {} (step {}); consensus: false", d.time, d.step),
        None => println!("consensus: {}", verdict.achieved),
    }
    Ok(())
}

fn build_blocks(
    specs: &[BlockConfig],
    mode: PerturbationMode,
    agents: Option<usize>,
) -> Result<Vec<PerturbationBlock>, CliError> {
    let inferred = specs.iter().find_map(|b| match b {
        BlockConfig::Zero => None,
        BlockConfig::Static { matrix } => Some(matrix.len()),
        BlockConfig::Diagonal { values } => Some(values.len()),
        BlockConfig::LagBank { gains, .. } => Some(gains.len()),
    });
    let agents = agents.or(inferred).unwrap_or(1);
    specs
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let role = match mode {
                PerturbationMode::Additive => PerturbationRole::additive(k),
                PerturbationMode::Multiplicative => PerturbationRole::multiplicative(k),
            };
            let block = match b {
                BlockConfig::Zero => PerturbationBlock::zero(agents, role),
                BlockConfig::Static { matrix } => PerturbationBlock::static_gain(rows_to_matrix(matrix)?, role)?,
                BlockConfig::Diagonal { values } => {
                    PerturbationBlock::static_gain(DMatrix::from_diagonal(&DVector::from_column_slice(values)), role)?
                }
                BlockConfig::LagBank { gains, time_constants } => {
                    PerturbationBlock::lag_bank(gains, time_constants, role)?
                }
            };
            if block.agents() != agents {
                return Err(CliError::Config(format!(
                    "block {k} acts on {} agents, expected {agents}",
                    block.agents()
                )));
            }
            Ok(block)
        })
        .collect()
}

fn closed_loop_design(cfg: &MarginConfig) -> Result<Option<(SerialDesign, f64)>, CliError> {
    let Some(cl) = &cfg.closed_loop else {
        return Ok(None);
    };
    if cl.scales.len() != cfg.order {
        return Err(CliError::Config(format!(
            "closed loop needs {} scales, got {}",
            cfg.order,
            cl.scales.len()
        )));
    }
    let l: Laplacian = cl.graph.load()?.laplacian();
    if !l.is_symmetric() {
        return Err(CliError::Precondition(
            "the robustness margins assume a symmetric Laplacian".into(),
        ));
    }
    Ok(Some((scaled_serial(&l, &cl.scales)?, cl.epsilon)))
}

pub fn margin(cfg: &MarginConfig, ctx: &Context) -> Result<(), CliError> {
    if cfg.order == 0 {
        return Err(CliError::Config("order must be at least 1".into()));
    }
    if cfg.norms.is_some() && cfg.blocks.is_some() {
        return Err(CliError::Config("give either norms or blocks, not both".into()));
    }
    if cfg.norms.is_none() && cfg.blocks.is_none() && cfg.monte_carlo.is_none() {
        return Err(CliError::Config("margin needs norms, blocks or a monte_carlo section".into()));
    }
    let closed = closed_loop_design(cfg)?;
    if cfg.monte_carlo.is_some() && closed.is_none() {
        return Err(CliError::Config("monte_carlo needs a closed_loop section".into()));
    }
    let report = if let Some(norms) = &cfg.norms {
        if norms.len() != cfg.order + 1 {
            return Err(CliError::Config(format!(
                "need {} norms for Δ_0..Δ_{}, got {}",
                cfg.order + 1,
                cfg.order,
                norms.len()
            )));
        }
        Some(match cfg.mode {
            PerturbationMode::Additive => additive_margin(cfg.order, norms)?,
            PerturbationMode::Multiplicative => multiplicative_margin(norms)?,
        })
    } else {
        None
    };
    let blocks = match &cfg.blocks {
        Some(specs) => {
            if specs.len() != cfg.order + 1 {
                return Err(CliError::Config(format!(
                    "need {} blocks for Δ_0..Δ_{}, got {}",
                    cfg.order + 1,
                    cfg.order,
                    specs.len()
                )));
            }
            Some(build_blocks(specs, cfg.mode, closed.as_ref().map(|(d, _)| d.agents()))?)
        }
        None => None,
    };
    let report = match (&report, &blocks) {
        (Some(r), _) => Some(r.clone()),
        (None, Some(b)) => Some(margin_of_blocks(cfg.mode, b)?),
        (None, None) => None,
    };
    if let Some(r) = &report {
        ctx.write_json("margin.json", r)?;
        println!("margin total {} (satisfied: {})", r.total, r.satisfied);
    }

    if let (Some((design, epsilon)), Some(blocks)) = (&closed, &blocks) {
        let system = match cfg.mode {
            PerturbationMode::Additive => assemble_perturbed_additive(design, blocks)?,
            PerturbationMode::Multiplicative => assemble_perturbed_multiplicative(design.laplacians(), blocks)?,
        };
        closed_loop_check(&system, *epsilon, ctx)?;
    }

    if let (Some((design, _)), Some(mc)) = (&closed, &cfg.monte_carlo) {
        if !(mc.budget >= 0.0 && mc.budget.is_finite()) {
            return Err(CliError::Config(format!("budget must be nonnegative, got {}", mc.budget)));
        }
        let samples = robustness_sweep(design, cfg.mode, mc.budget, mc.samples, ctx.seed, ctx.jobs)?;
        ctx.write_with("robustness.csv", |w| write_robustness_csv(&samples, w))?;
        let stable = samples.iter().filter(|s| s.stable).count();
        let consensus = samples.iter().filter(|s| s.consensus).count();
        println!(
            "{} samples: {stable} consensus-stable, {consensus} simulation verdicts true",
            samples.len()
        );
    }
    Ok(())
}

/// Spectrum of the perturbed loop plus, when stable, a simulated verdict
/// from a seeded zero-mean initial state.
fn closed_loop_check(system: &LtiSystem, epsilon: f64, ctx: &Context) -> Result<(), CliError> {
    let report = spectrum(system, None)?;
    ctx.write_json("spectrum.json", &report)?;
    let mut result = json!({
        "stable": report.stable,
        "max_real_part_excluding_zeros": report.max_real_part_excluding_zeros,
        "horizon": null,
        "verdict": null,
    });
    if report.stable {
        let decay = report.max_real_part_excluding_zeros.map_or(1.0, |m| -m);
        let horizon = settling_horizon(decay);
        let x0 = random_initial_state(&mut seeded(ctx.seed), system);
        let trace = simulate(system, &x0, &serial_consensus::ReferenceSignal::Zero, horizon, horizon / 2000.0)?;
        let verdict = consensus_verdict(&trace, epsilon, None)?;
        println!("perturbed loop stable; consensus: {}", verdict.achieved);
        result["horizon"] = json!(horizon);
        result["verdict"] = serde_json::to_value(&verdict).map_err(|e| CliError::Config(e.to_string()))?;
    } else {
        println!("perturbed loop is not consensus-stable");
    }
    ctx.write_json("closed_loop.json", &result)
}

fn load_design(path: &Path) -> Result<SerialDesign, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read design {}: {e}", path.display())))?;
    let json: DesignJson = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad design file {}: {e}", path.display())))?;
    Ok(SerialDesign::try_from(json)?)
}

pub fn spectrum_cmd(cfg: &SpectrumConfig, ctx: &Context) -> Result<(), CliError> {
    let system = match (&cfg.graph, &cfg.rule, &cfg.design_file) {
        (Some(g), Some(rule), None) => rule.realize(&g.load()?)?,
        (None, None, Some(path)) => realize_serial(&load_design(path)?, true),
        _ => {
            return Err(CliError::Config(
                "spectrum needs either graph and rule, or design_file".into(),
            ))
        }
    };
    let report = spectrum(&system, None)?;
    ctx.write_json("spectrum.json", &report)?;
    match report.max_real_part_excluding_zeros {
        Some(m) => println!("stable: {} (max Re excluding zeros {m:e})", report.stable),
        None => println!("stable: {}", report.stable),
    }
    Ok(())
}
