//! Scenario files.
//!
//! A scenario is a TOML document with a `format = 1` guard and the sections
//! `[graph]`, `[reference_model]`, `[consensus]`, `[agent_defaults]`,
//! `[agents.<i>]` and `[sim]`. Matrices are lists of rows; column vectors
//! (`B`, generator `N`) and row vectors (`output`, generator `psi`) are flat
//! lists. Agent keys are the zero-based indices `0..N`. Any agent field may be
//! given once under `[agent_defaults]` instead.
//!
//! ```toml
//! format = 1
//! name = "two_agents"
//!
//! [graph]
//! weights = [[0, 1], [1, 0]]
//!
//! [reference_model]
//! A = [[0, -1], [1, 0]]
//! B = [0, 1]
//! output = [1, 0]
//!
//! [consensus]
//! lambda = 0.5
//! g = [1, 1]
//! eta_i = [0.01, 0.01]
//! eta = 0.01
//! phi = 0.01
//!
//! [agent_defaults]
//! model = "benchmark"
//! w = [0.2]
//! z0 = [0.0, 0.0]
//! x0 = [0.1]
//! kappa = { linear = [30.0], cubic = [1.0] }
//! sigma = { c = 0.99, gamma0 = 40.0 }
//!
//! [agents.0]
//! v0 = [1.0, 0.0]
//!
//! [agents.1]
//! v0 = [0.0, 1.0]
//!
//! [sim]
//! horizon = 1.0
//! ```
//!
//! `model = "none"` declares a reference model without a regulated plant.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::consensus::{design_consensus, DesignError, DesignInputs, ReferenceModelSpec};
use crate::graph::{DirectedGraph, GraphError, GraphSpectra};
use crate::numerics::{Matrix, NumericsError, Vector};
use crate::regulation::{
    benchmark_generator_spec, build_generator, AgentModel, BenchmarkAgent, CubicFeedback, GeneratorSpec,
    LinearGain, LinearOutput, OutputMap, RegulationError, RegulationPlant,
};
use crate::sim::{randomize_initial_conditions, AgentSetup, Scenario, SimError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error{}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("numerical failure in `{field}`: {source}")]
    Numerics {
        field: String,
        #[source]
        source: NumericsError,
    },
}

impl ConfigError {
    fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    fn from_graph(e: GraphError) -> Self {
        match e {
            GraphError::Numerics(source) => ConfigError::Numerics {
                field: "graph".into(),
                source,
            },
            GraphError::NotStronglyConnected => {
                ConfigError::validation("graph.weights", "graph must be strongly connected")
            }
            other => ConfigError::validation("graph.weights", other.to_string()),
        }
    }

    fn from_design(e: DesignError, field: &str) -> Self {
        match e {
            DesignError::Numerics(source) => ConfigError::Numerics {
                field: field.into(),
                source,
            },
            other => ConfigError::validation(field, other.to_string()),
        }
    }

    fn from_regulation(e: RegulationError, field: String) -> Self {
        match e {
            RegulationError::Numerics(source) => ConfigError::Numerics { field, source },
            other => ConfigError::validation(field, other.to_string()),
        }
    }
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub unchecked: bool,
}

/// Settings that affect output but not dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// Write every `output_stride`-th trajectory sample.
    pub output_stride: usize,
    pub seed: Option<u64>,
    pub randomize: bool,
}

/// A parsed and fully validated scenario file.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scenario: Scenario,
    pub inputs: DesignInputs,
    pub settings: RunSettings,
}

type RegistryEntry = (Arc<dyn AgentModel>, Option<Vec<GeneratorSpec>>);

/// Agent plants that scenario files may refer to by name.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("benchmark", Arc::new(BenchmarkAgent), Some(vec![benchmark_generator_spec()]));
        r
    }
}

impl ModelRegistry {
    /// Register a model and, optionally, the generator used when the
    /// scenario gives none.
    pub fn register(
        &mut self,
        name: &str,
        model: Arc<dyn AgentModel>,
        default_generator: Option<Vec<GeneratorSpec>>,
    ) {
        self.entries.insert(name.to_string(), (model, default_generator));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    format: u32,
    name: Option<String>,
    graph: RawGraph,
    reference_model: RawModel,
    consensus: RawConsensus,
    #[serde(default)]
    agent_defaults: RawAgent,
    agents: BTreeMap<String, RawAgent>,
    sim: RawSim,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConsensus {
    lambda: f64,
    beta: Option<f64>,
    g: Vec<f64>,
    eta_i: Vec<f64>,
    eta: f64,
    phi: f64,
    #[serde(default)]
    unchecked: bool,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    model: Option<String>,
    w: Option<Vec<f64>>,
    v0: Option<Vec<f64>>,
    z0: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    eta0: Option<Vec<Vec<f64>>>,
    kappa: Option<RawKappa>,
    sigma: Option<RawSigma>,
    generator: Option<Vec<RawBlock>>,
}

impl RawAgent {
    fn merged(self, d: &RawAgent) -> RawAgent {
        RawAgent {
            model: self.model.or_else(|| d.model.clone()),
            w: self.w.or_else(|| d.w.clone()),
            v0: self.v0.or_else(|| d.v0.clone()),
            z0: self.z0.or_else(|| d.z0.clone()),
            x0: self.x0.or_else(|| d.x0.clone()),
            eta0: self.eta0.or_else(|| d.eta0.clone()),
            kappa: self.kappa.or_else(|| d.kappa.clone()),
            sigma: self.sigma.or_else(|| d.sigma.clone()),
            generator: self.generator.or_else(|| d.generator.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKappa {
    linear: Vec<f64>,
    cubic: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSigma {
    c: f64,
    gamma0: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBlock {
    psi: Vec<f64>,
    phi: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    n: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    horizon: f64,
    step: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    randomize: bool,
    #[serde(default = "default_random_scale")]
    random_scale: f64,
    #[serde(default = "default_stride")]
    output_stride: usize,
}

fn default_random_scale() -> f64 {
    1.0
}

fn default_stride() -> usize {
    1
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(ConfigError::validation(field, "matrix must be non-empty"));
    }
    if let Some(k) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ConfigError::validation(
            field,
            format!("row {k} has {} entries, row 0 has {ncols}", rows[k].len()),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(ConfigError::validation(field, "non-finite entry"));
    }
    Ok(Matrix::from_row_slice(nrows, ncols, &flat))
}

fn required<T: Clone>(v: &Option<T>, field: String) -> Result<T, ConfigError> {
    v.clone()
        .ok_or_else(|| ConfigError::validation(field, "missing (set it here or under [agent_defaults])"))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Largest step of the form `d·10^k` (one significant digit) not above `b/4`.
pub fn default_step(b: f64) -> f64 {
    let limit = b / 4.0;
    let unit = 10f64.powf(limit.log10().floor());
    ((limit / unit).floor() * unit).min(limit)
}

/// Parse a scenario with the built-in model registry.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    parse_config_with(text, overrides, &ModelRegistry::default())
}

/// Parse and validate a scenario, resolving model names in `registry`.
pub fn parse_config_with(
    text: &str,
    overrides: &Overrides,
    registry: &ModelRegistry,
) -> Result<LoadedConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = message
            .split('`')
            .nth(1)
            .map(str::to_string);
        ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            field,
            message,
        }
    })?;
    if raw.format != FORMAT_VERSION {
        return Err(ConfigError::validation(
            "format",
            format!("unsupported format {} (expected {FORMAT_VERSION})", raw.format),
        ));
    }

    let graph = DirectedGraph::new(matrix(&raw.graph.weights, "graph.weights")?).map_err(ConfigError::from_graph)?;
    let spectra = GraphSpectra::compute(&graph).map_err(ConfigError::from_graph)?;
    let n = graph.agent_count();

    let a = matrix(&raw.reference_model.a, "reference_model.A")?;
    let b = Matrix::from_column_slice(raw.reference_model.b.len(), 1, &raw.reference_model.b);
    let model = ReferenceModelSpec::new(a, b).map_err(|e| ConfigError::from_design(e, "reference_model"))?;
    let q = model.state_dim();
    if raw.reference_model.output.len() != q {
        return Err(ConfigError::validation(
            "reference_model.output",
            format!("expected {q} entries, got {}", raw.reference_model.output.len()),
        ));
    }
    let output: Arc<dyn OutputMap> = Arc::new(LinearOutput::new(raw.reference_model.output.clone()));

    let c = &raw.consensus;
    let inputs = DesignInputs {
        lambda: c.lambda,
        beta: c.beta,
        g: c.g.clone(),
        eta_i: c.eta_i.clone(),
        eta: c.eta,
        phi: c.phi,
        unchecked: c.unchecked || overrides.unchecked,
    };
    let design = design_consensus(&model, &spectra, &inputs).map_err(|e| ConfigError::from_design(e, "consensus"))?;

    let expected: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let found: Vec<&String> = raw.agents.keys().collect();
    for key in &found {
        if !expected.contains(key) {
            return Err(ConfigError::validation(
                format!("agents.{key}"),
                format!("agent keys must be the indices 0..{n}"),
            ));
        }
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let key = i.to_string();
        let raw_agent = raw
            .agents
            .get(&key)
            .cloned()
            .ok_or_else(|| ConfigError::validation(format!("agents.{i}"), "missing agent section"))?
            .merged(&raw.agent_defaults);
        agents.push(build_agent(i, raw_agent, q, &output, registry)?);
    }

    let horizon = overrides.horizon.unwrap_or(raw.sim.horizon);
    let step = overrides.step.or(raw.sim.step).unwrap_or_else(|| default_step(design.b));
    if raw.sim.output_stride == 0 {
        return Err(ConfigError::validation("sim.output_stride", "must be at least 1"));
    }
    let mut scenario = Scenario {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        graph,
        spectra,
        model,
        output,
        design,
        agents,
        horizon,
        step,
    };
    if raw.sim.randomize {
        let seed = raw
            .sim
            .seed
            .ok_or_else(|| ConfigError::validation("sim.seed", "randomize = true requires a seed"))?;
        randomize_initial_conditions(&mut scenario, seed, raw.sim.random_scale);
    }
    scenario.validate().map_err(|e| match e {
        SimError::Invalid(m) => ConfigError::validation("sim", m),
        other => ConfigError::validation("sim", other.to_string()),
    })?;
    Ok(LoadedConfig {
        scenario,
        inputs,
        settings: RunSettings {
            output_stride: raw.sim.output_stride,
            seed: raw.sim.seed,
            randomize: raw.sim.randomize,
        },
    })
}

fn build_agent(
    i: usize,
    raw: RawAgent,
    q: usize,
    output: &Arc<dyn OutputMap>,
    registry: &ModelRegistry,
) -> Result<AgentSetup, ConfigError> {
    let f = |name: &str| format!("agents.{i}.{name}");
    let v0 = required(&raw.v0, f("v0"))?;
    if v0.len() != q {
        return Err(ConfigError::validation(f("v0"), format!("expected {q} entries, got {}", v0.len())));
    }
    let v0 = Vector::from_vec(v0);
    let model_name = required(&raw.model, f("model"))?;
    if model_name == "none" {
        return Ok(AgentSetup {
            v0,
            plant: None,
            plant0: vec![],
        });
    }
    let (model, default_gen) = registry.entries.get(&model_name).cloned().ok_or_else(|| {
        ConfigError::validation(
            f("model"),
            format!(
                "unknown model `{model_name}` (known: none, {})",
                registry.names().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    let r = model.relative_degree();
    let w = raw.w.clone().unwrap_or_default();

    let specs = match &raw.generator {
        Some(blocks) => blocks
            .iter()
            .enumerate()
            .map(|(j, blk)| {
                let field = f(&format!("generator[{j}]"));
                Ok(GeneratorSpec {
                    psi: Matrix::from_row_slice(1, blk.psi.len(), &blk.psi),
                    phi: matrix(&blk.phi, &format!("{field}.phi"))?,
                    m: matrix(&blk.m, &format!("{field}.m"))?,
                    n: Matrix::from_column_slice(blk.n.len(), 1, &blk.n),
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?,
        None => default_gen.ok_or_else(|| ConfigError::validation(f("generator"), "model has no default generator"))?,
    };
    let generator = build_generator(&specs).map_err(|e| ConfigError::from_regulation(e, f("generator")))?;

    let kappa = required(&raw.kappa, f("kappa"))?;
    if kappa.linear.len() != r || kappa.cubic.len() != r {
        return Err(ConfigError::validation(
            f("kappa"),
            format!("linear and cubic need {r} entries (one per stage)"),
        ));
    }
    let sigma = required(&raw.sigma, f("sigma"))?;
    let sigma = LinearGain::new(sigma.c, sigma.gamma0).map_err(|e| ConfigError::from_regulation(e, f("sigma")))?;
    let plant = RegulationPlant::new(
        model.clone(),
        w,
        generator,
        Arc::new(CubicFeedback {
            linear: kappa.linear,
            cubic: kappa.cubic,
        }),
        Arc::new(sigma),
        output.clone(),
    )
    .map_err(|e| ConfigError::from_regulation(e, f("model")))?;

    let z0 = required(&raw.z0, f("z0"))?;
    if z0.len() != model.z_dim() {
        return Err(ConfigError::validation(f("z0"), format!("expected {} entries", model.z_dim())));
    }
    let x0 = required(&raw.x0, f("x0"))?;
    if x0.len() != r {
        return Err(ConfigError::validation(f("x0"), format!("expected {r} entries")));
    }
    let eta0 = match raw.eta0 {
        Some(e) => e,
        None => plant.generator.blocks.iter().map(|b| vec![0.0; b.dim()]).collect(),
    };
    if eta0.len() != r {
        return Err(ConfigError::validation(f("eta0"), format!("expected {r} blocks")));
    }
    let mut plant0 = z0;
    plant0.extend(x0);
    for (j, (e, blk)) in eta0.into_iter().zip(&plant.generator.blocks).enumerate() {
        if e.len() != blk.dim() {
            return Err(ConfigError::validation(
                f(&format!("eta0[{j}]")),
                format!("expected {} entries", blk.dim()),
            ));
        }
        plant0.extend(e);
    }
    Ok(AgentSetup {
        v0,
        plant: Some(plant),
        plant0,
    })
}

/// Scenario files shipped with the library, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("benchmark", include_str!("../scenarios/benchmark.toml")),
    ("benchmark_checked", include_str!("../scenarios/benchmark_checked.toml")),
    ("consensus_only", include_str!("../scenarios/consensus_only.toml")),
];

/// Text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            let cfg = parse_config(text, &Overrides::default()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.scenario.agent_count(), 4, "{name}");
        }
        let cfg = parse_config(bundled("benchmark").unwrap(), &Overrides::default()).unwrap();
        assert!(cfg.inputs.unchecked);
        assert!(cfg.scenario.step <= cfg.scenario.design.b / 4.0);
    }

    #[test]
    fn self_loop_rejected() {
        let text = bundled("benchmark")
            .unwrap()
            .replace("weights = [[0, 0, 0, 1]", "weights = [[1, 0, 0, 1]");
        assert!(matches!(
            parse_config(&text, &Overrides::default()),
            Err(ConfigError::Validation { .. })
        ));
    }

    #[test]
    fn lambda_out_of_range_in_checked_mode() {
        let text = bundled("benchmark_checked")
            .unwrap()
            .replace("lambda = 0.1", "lambda = 0.3");
        let err = parse_config(&text, &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.125"), "{msg}");
        assert!(matches!(err, ConfigError::Validation { .. }));
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_config("format = 1\n[graph]\nweights = [[0, 1], [1, 0]\n", &Overrides::default()).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert!(line.is_some()),
            other => panic!("unexpected {other}"),
        }
        let err = parse_config("format = 1\nbogus = 3\n", &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let text = bundled("benchmark")
            .unwrap()
            .replace("[0, 0, 1, 0]]", "[0, 0, 0, 0]]");
        let msg = parse_config(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(msg.contains("strongly connected"), "{msg}");
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides {
            horizon: Some(0.5),
            step: Some(1e-4),
            unchecked: false,
        };
        let cfg = parse_config(bundled("benchmark_checked").unwrap(), &o).unwrap();
        assert_eq!((cfg.scenario.horizon, cfg.scenario.step), (0.5, 1e-4));
    }

    #[test]
    fn default_step_examples() {
        assert!((default_step(0.002428) - 6e-4).abs() < 1e-18);
        assert!(default_step(0.0004) <= 1e-4);
        for b in [0.00507, 0.0123, 0.4, 3.0] {
            let h = default_step(b);
            assert!(h > 0.0 && h <= b / 4.0, "b = {b}, h = {h}");
        }
    }
}
