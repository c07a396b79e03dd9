//! Experiment configuration: the JSON file a run is described by, and its
//! validation into a ready-to-run [`Plan`].

use std::path::{Path, PathBuf};

use openham::acceptance::Tolerances;
use openham::covariance::Engine;
use openham::io::{ModelDocument, NoiseSpec};
use openham::model::{harmonic_chain, lattice_cube, random_model, LatticeCouplings};
use openham::{Model, Noise};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_SCHEMA: &str = "openham-manifest/1.0";
pub const DEFAULT_OUT: &str = "openham-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Analyze,
    Covariance,
    Simulate,
    Thermo,
    GibbsTest,
    Validate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Analyze => "analyze",
            Task::Covariance => "covariance",
            Task::Simulate => "simulate",
            Task::Thermo => "thermo",
            Task::GibbsTest => "gibbs-test",
            Task::Validate => "validate",
        }
    }
}

/// Where the model comes from. Generators are expanded and files are read
/// during validation, so the echoed config always carries the model inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Path to a model document, relative to the config file.
    File(PathBuf),
    Inline(ModelDocument),
    Chain {
        n: usize,
        omega0: f64,
        omega1: f64,
        #[serde(default = "one")]
        m: usize,
        #[serde(default = "unit")]
        alpha: f64,
    },
    Lattice {
        d: usize,
        half_width: usize,
        onsite: f64,
        bond: f64,
        #[serde(default = "one")]
        m: usize,
        #[serde(default = "unit")]
        alpha: f64,
    },
    Random {
        n: usize,
        #[serde(default = "one")]
        m: usize,
        #[serde(default = "unit")]
        alpha: f64,
        seed: u64,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    #[default]
    Exact,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpec {
    #[default]
    Zero,
    /// Draw from the Gibbs law at the temperature white forcing would set.
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub step: f64,
    /// Recorded window; the burn-in is added on top.
    pub horizon: f64,
    pub ensemble: usize,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub batches_per_member: Option<usize>,
    #[serde(default = "zero_lag")]
    pub lags: Vec<f64>,
    /// Write every `path_stride`-th state of member 0 (white noise only).
    #[serde(default)]
    pub path_stride: Option<usize>,
}

fn zero_lag() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowingSpec {
    pub onsite: f64,
    pub bond: f64,
    pub half_widths: Vec<usize>,
    /// Pair of sites relative to the centre of the segment.
    pub target: (i64, i64),
    #[serde(default = "unit")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ThermoSpec {
    /// Boundary distances for the remainder; empty picks one automatically.
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub growing: Option<GrowingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub eps: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSpec {
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Subset of criteria to run; empty runs all.
    #[serde(default)]
    pub criteria: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// One engine, a comma-separated list, or `all`.
    #[serde(default)]
    pub engine: Option<String>,
    /// Extra lags for the time-domain engine.
    #[serde(default)]
    pub lags: Vec<f64>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub thermo: Option<ThermoSpec>,
    #[serde(default)]
    pub analyze: Option<AnalyzeSpec>,
    #[serde(default)]
    pub validate: Option<ValidateSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub engine: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// `OPENHAM_OUT`, which beats both flag and file.
    pub env_out: Option<PathBuf>,
}

/// A validated run: everything a task needs, plus the effective config to
/// echo into the manifest.
#[derive(Debug, Clone)]
pub struct Plan {
    pub task: Task,
    pub config: ExperimentConfig,
    pub model: Option<Model>,
    pub noise: Option<Noise>,
    pub engines: Vec<Engine>,
    pub out: PathBuf,
    pub workers: usize,
}

impl Plan {
    pub fn model(&self) -> &Model {
        self.model.as_ref().expect("validated plan has a model")
    }

    pub fn noise(&self) -> &Noise {
        self.noise.as_ref().expect("validated plan has noise")
    }

    pub fn parallel(&self) -> bool {
        self.workers > 1
    }
}

/// Reads a config file. A manifest written by an earlier run is accepted
/// too; its config echo is replayed.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("config::load", format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config("config::parse", e.to_string()))?;
    let is_manifest = value
        .get("schema")
        .and_then(|s| s.as_str())
        .is_some_and(|s| s.starts_with("openham-manifest/"));
    let value = if is_manifest {
        value
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::config("config::parse", "manifest without a config echo"))?
    } else {
        value
    };
    let mut config: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| CliError::config("config::parse", e.to_string()))?;
    if let Some(ModelSpec::File(rel)) = &config.model {
        let base = path.parent().unwrap_or(Path::new("."));
        config.model = Some(ModelSpec::File(base.join(rel)));
    }
    Ok(config)
}

fn build_model(spec: &ModelSpec) -> Result<Model, CliError> {
    let op = "model::build_model";
    let model = match spec {
        ModelSpec::File(path) => openham::io::read_model(path),
        ModelSpec::Inline(doc) => doc.to_model(),
        ModelSpec::Chain {
            n,
            omega0,
            omega1,
            m,
            alpha,
        } => harmonic_chain(*n, *omega0, *omega1, *m, *alpha),
        ModelSpec::Lattice {
            d,
            half_width,
            onsite,
            bond,
            m,
            alpha,
        } => lattice_cube(
            *d,
            *half_width,
            LatticeCouplings {
                onsite: *onsite,
                bond: *bond,
            },
            *m,
            *alpha,
        ),
        ModelSpec::Random { n, m, alpha, seed } => random_model(*n, *m, *alpha, *seed),
    };
    model.map_err(|e| CliError::config(op, e.to_string()))
}

/// Parses an engine selection: a name, a comma-separated list, or `all`.
pub fn parse_engines(selection: &str, noise: Option<&Noise>) -> Result<Vec<Engine>, CliError> {
    let selection = selection.trim();
    if selection == "all" {
        let white = noise.is_some_and(Noise::is_white);
        return Ok(Engine::ANALYTIC
            .into_iter()
            .filter(|&e| white || e != Engine::Lyapunov)
            .collect());
    }
    let mut out = Vec::new();
    for name in selection.split(',') {
        let engine: Engine = name
            .trim()
            .parse()
            .map_err(|e: openham::Error| CliError::config("config::engine", e.to_string()))?;
        if !out.contains(&engine) {
            out.push(engine);
        }
    }
    if out.is_empty() {
        return Err(CliError::config("config::engine", "empty engine selection"));
    }
    Ok(out)
}

/// Applies overrides and checks that the task has what it needs. Nothing is
/// written to disk before this succeeds.
pub fn validate(
    task: Option<Task>,
    mut config: ExperimentConfig,
    ov: Overrides,
) -> Result<Plan, CliError> {
    let task = match (task, config.task) {
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => return Err(CliError::config("config::validate", "no task given")),
    };
    config.task = Some(task);
    if let Some(e) = ov.engine {
        config.engine = Some(e);
    }
    if let Some(s) = ov.seed {
        config.seed = s;
    }
    if let Some(w) = ov.workers {
        config.workers = Some(w);
    }
    if let Some(o) = ov.out {
        config.out = Some(o);
    }
    let out = ov
        .env_out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let workers = config.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::config(
            "config::validate",
            "workers must be at least 1",
        ));
    }

    let needs_model = task != Task::Validate;
    let needs_noise = matches!(
        task,
        Task::Covariance | Task::Simulate | Task::Thermo | Task::GibbsTest
    );
    let model = match (&config.model, needs_model) {
        (Some(spec), true) => {
            let model = build_model(spec)?;
            config.model = Some(ModelSpec::Inline(ModelDocument::from_model(&model)));
            Some(model)
        }
        (None, true) => {
            return Err(CliError::config(
                "config::validate",
                format!("task {} needs a model", task.name()),
            ))
        }
        _ => None,
    };
    let noise = match (&config.noise, needs_noise) {
        (Some(spec), true) => Some(
            spec.build()
                .map_err(|e| CliError::config("noise::build", e.to_string()))?,
        ),
        (None, true) => {
            return Err(CliError::config(
                "config::validate",
                format!("task {} needs a noise spec", task.name()),
            ))
        }
        _ => None,
    };

    let default_engine = match task {
        Task::Covariance | Task::GibbsTest if noise.as_ref().is_some_and(Noise::is_white) => {
            "lyapunov"
        }
        _ => "q_block",
    };
    let engines = parse_engines(
        config.engine.as_deref().unwrap_or(default_engine),
        noise.as_ref(),
    )?;
    if engines.contains(&Engine::MonteCarlo) && task != Task::Simulate {
        return Err(CliError::config(
            "config::engine",
            "the monte_carlo engine is only available through the simulate task",
        ));
    }
    if let Some(lag) = config.lags.iter().find(|l| !l.is_finite()) {
        return Err(CliError::config(
            "config::validate",
            format!("bad lag {lag}"),
        ));
    }

    match task {
        Task::Simulate => {
            let sim = config.simulation.as_ref().ok_or_else(|| {
                CliError::config(
                    "config::validate",
                    "task simulate needs a simulation section",
                )
            })?;
            if !(sim.step > 0.0 && sim.horizon > 0.0) || sim.ensemble < 2 {
                return Err(CliError::config(
                    "config::validate",
                    "simulation needs step > 0, horizon > 0 and ensemble >= 2",
                ));
            }
        }
        Task::Thermo => {
            if let Some(g) = config.thermo.as_ref().and_then(|t| t.growing.as_ref()) {
                if g.half_widths.is_empty() {
                    return Err(CliError::config(
                        "config::validate",
                        "growing.half_widths is empty",
                    ));
                }
            }
        }
        Task::Validate => {
            if let Some(v) = &config.validate {
                if let Some(bad) = v.criteria.iter().find(|&&c| !(1..=9).contains(&c)) {
                    return Err(CliError::config(
                        "config::validate",
                        format!("no acceptance criterion {bad}"),
                    ));
                }
            }
        }
        _ => {}
    }

    Ok(Plan {
        task,
        config,
        model,
        noise,
        engines,
        out,
        workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn chain_config_validates_and_inlines_model() {
        let cfg = parse(
            r#"{"model": {"chain": {"n": 3, "omega0": 1, "omega1": 0.5}},
                "noise": {"kind": "ou", "c": 1, "mu": 2}}"#,
        );
        let plan = validate(Some(Task::Covariance), cfg, Overrides::default()).unwrap();
        assert_eq!(plan.model().n(), 3);
        assert_eq!(plan.engines, vec![Engine::QBlock]);
        assert!(matches!(plan.config.model, Some(ModelSpec::Inline(_))));
        assert_eq!(plan.config.task, Some(Task::Covariance));
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = parse(
            r#"{"task": "analyze", "model": {"random": {"n": 3, "seed": 1}},
                "out": "from-file", "seed": 5, "engine": "spectral"}"#,
        );
        let ov = Overrides {
            engine: Some("time_domain".into()),
            out: Some("from-flag".into()),
            seed: Some(9),
            workers: Some(2),
            env_out: None,
        };
        let plan = validate(None, cfg.clone(), ov.clone()).unwrap();
        assert_eq!(plan.out, PathBuf::from("from-flag"));
        assert_eq!(plan.config.seed, 9);
        assert_eq!(plan.engines, vec![Engine::TimeDomain]);
        assert!(plan.parallel());
        let env = Overrides {
            env_out: Some("from-env".into()),
            ..ov
        };
        assert_eq!(
            validate(None, cfg, env).unwrap().out,
            PathBuf::from("from-env")
        );
    }

    #[test]
    fn all_engines_depend_on_noise() {
        let white = openham::noise::make_white(1.0).unwrap();
        let ou = openham::noise::make_ou(1.0, 1.0).unwrap();
        assert_eq!(parse_engines("all", Some(&white)).unwrap().len(), 4);
        assert!(!parse_engines("all", Some(&ou))
            .unwrap()
            .contains(&Engine::Lyapunov));
        assert_eq!(
            parse_engines("qblock, spectral,qblock", None).unwrap(),
            vec![Engine::QBlock, Engine::Spectral]
        );
        assert!(parse_engines("fourier", None).is_err());
    }

    #[test]
    fn missing_pieces_are_config_errors() {
        let no_noise = parse(r#"{"model": {"random": {"n": 2, "seed": 1}}}"#);
        assert!(validate(Some(Task::Covariance), no_noise, Overrides::default()).is_err());
        assert!(validate(None, ExperimentConfig::default(), Overrides::default()).is_err());
        let sim = parse(
            r#"{"model": {"random": {"n": 2, "seed": 1}}, "noise": {"kind": "white", "sigma2": 1}}"#,
        );
        assert!(validate(Some(Task::Simulate), sim, Overrides::default()).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle": {}}"#).is_err());
    }

    #[test]
    fn invalid_model_is_a_config_error() {
        let cfg = parse(
            r#"{"model": {"inline": {"format": "openham-model/1", "n": 2, "m": 1, "alpha": 1,
                "edges": [[0, 1]], "v": [1, 2, 2, 1]}}}"#,
        );
        let err = validate(Some(Task::Analyze), cfg, Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
