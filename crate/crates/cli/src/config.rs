//! Experiment configuration: a TOML document whose leaf keys can each be
//! overridden from the command line.

use std::fmt;
use std::path::{Path, PathBuf};

use polybrud_core::{
    Capacity, DatasetKind, DatasetSpec, DistanceKind, GameSpec, GradientMode, LearnConfig,
    PjapConfig, Polynomial2, TwinPeaksParams,
};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing field `{0}`")]
    Missing(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown experiment `{name}`; valid names: {}", Experiment::NAMES.join(", "))]
    UnknownExperiment { name: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
}

fn invalid(field: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    OnlineBufferSweep,
    OfflineUniform,
    TwinPeaksVarianceSweep,
    PjapComparison,
    Analyze,
}

impl Experiment {
    pub const NAMES: [&'static str; 5] = [
        "OnlineBufferSweep",
        "OfflineUniform",
        "TwinPeaksVarianceSweep",
        "PjapComparison",
        "Analyze",
    ];

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "OnlineBufferSweep" => Self::OnlineBufferSweep,
            "OfflineUniform" => Self::OfflineUniform,
            "TwinPeaksVarianceSweep" => Self::TwinPeaksVarianceSweep,
            "PjapComparison" => Self::PjapComparison,
            "Analyze" => Self::Analyze,
            _ => {
                return Err(ConfigError::UnknownExperiment {
                    name: name.to_string(),
                })
            }
        })
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    pub fn needs_dataset(self) -> bool {
        self != Self::OnlineBufferSweep
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub capacities: Vec<Capacity>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeConfig {
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_n: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub game: GameSpec,
    pub dataset: Option<DatasetSpec>,
    pub learn: LearnConfig,
    pub pjap: Option<PjapConfig>,
    pub seeds: Vec<u64>,
    pub initial_policies: Vec<(f64, f64)>,
    pub output_dir: PathBuf,
    pub sweep: SweepConfig,
    pub analyze: AnalyzeConfig,
    /// The merged input document, echoed into the manifest.
    pub source: toml::Table,
}

/// One overridable leaf key.
pub struct LeafKey {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

impl LeafKey {
    /// `pjap.refresh_fraction` becomes `pjap-refresh-fraction`.
    pub fn flag(&self) -> String {
        self.key.replace(['.', '_'], "-")
    }
}

macro_rules! leaf {
    ($key:literal, $default:literal, $help:literal) => {
        LeafKey {
            key: $key,
            default: $default,
            help: $help,
        }
    };
}

pub const LEAF_KEYS: &[LeafKey] = &[
    leaf!("experiment", "required", "OnlineBufferSweep | OfflineUniform | TwinPeaksVarianceSweep | PjapComparison | Analyze"),
    leaf!("seeds", "[$POLYBRUD_SEED] or [0]", "training seeds, e.g. [0,1,2]"),
    leaf!("initial_policies", "[[0.0,0.0]]", "starting (theta_x, theta_y) pairs"),
    leaf!("output_dir", "out", "directory for CSVs and manifest.json"),
    leaf!("game.kind", "required", "Decoupled | SignAgreement | ActionAgreement | TwinPeaks | Custom"),
    leaf!("game.a", "1.0", "twin-peaks A"),
    leaf!("game.b", "4.0", "twin-peaks B"),
    leaf!("game.c", "5.0", "twin-peaks C"),
    leaf!("game.terms", "none", "custom game terms [[i,j,coeff],...]"),
    leaf!("dataset.kind", "required for offline", "uniform | gaussian"),
    leaf!("dataset.size", "1000", "number of joint actions"),
    leaf!("dataset.seed", "0", "dataset generation seed"),
    leaf!("dataset.low", "-1.0", "uniform lower bound"),
    leaf!("dataset.high", "1.0", "uniform upper bound"),
    leaf!("dataset.center", "[0.0,0.0]", "gaussian centre"),
    leaf!("dataset.sigma", "0.5", "gaussian std for both agents"),
    leaf!("dataset.sigma_x", "dataset.sigma", "gaussian std for agent x"),
    leaf!("dataset.sigma_y", "dataset.sigma", "gaussian std for agent y"),
    leaf!("learn.learning_rate", "0.01", "gradient ascent step size"),
    leaf!("learn.batch_size", "64", "minibatch size"),
    leaf!("learn.steps", "50000", "number of updates"),
    leaf!("learn.gradient_mode", "exact", "exact | minibatch (offline only)"),
    leaf!("learn.exploration_noise_sigma", "0.3", "online exploration noise std"),
    leaf!("learn.param_clamp", "none", "clamp parameters to [low, high]"),
    leaf!("pjap.alpha", "5.0", "priority sharpness"),
    leaf!("pjap.epsilon", "0.01", "priority floor"),
    leaf!("pjap.refresh_fraction", "0.1", "fraction of priorities refreshed per step"),
    leaf!("pjap.distance", "joint", "joint | trajectory"),
    leaf!("sweep.capacities", "[64,640,6400,\"unbounded\"]", "buffer capacities for OnlineBufferSweep"),
    leaf!("sweep.sigmas", "[0.0,0.25,0.5]", "dataset stds for TwinPeaksVarianceSweep"),
    leaf!("analyze.grid_low", "-1.0", "field grid lower bound"),
    leaf!("analyze.grid_high", "1.0", "field grid upper bound"),
    leaf!("analyze.grid_n", "21", "field grid points per axis"),
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<String>,
    seeds: Option<Vec<u64>>,
    initial_policies: Option<Vec<[f64; 2]>>,
    output_dir: Option<PathBuf>,
    game: Option<RawGame>,
    dataset: Option<RawDataset>,
    learn: Option<RawLearn>,
    pjap: Option<RawPjap>,
    sweep: Option<RawSweep>,
    analyze: Option<RawAnalyze>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGame {
    kind: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    terms: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    kind: Option<String>,
    size: Option<usize>,
    seed: Option<u64>,
    low: Option<f64>,
    high: Option<f64>,
    center: Option<[f64; 2]>,
    sigma: Option<f64>,
    sigma_x: Option<f64>,
    sigma_y: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearn {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    gradient_mode: Option<String>,
    exploration_noise_sigma: Option<f64>,
    param_clamp: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPjap {
    alpha: Option<f64>,
    epsilon: Option<f64>,
    refresh_fraction: Option<f64>,
    distance: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    capacities: Option<Vec<RawCapacity>>,
    sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCapacity {
    Size(usize),
    Named(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalyze {
    grid_low: Option<f64>,
    grid_high: Option<f64>,
    grid_n: Option<usize>,
}

/// Parses a command-line value as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Writes `value` at a dotted key path, creating tables as needed.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| invalid(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn load_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Merges the optional file with `key=value` overrides (later wins) and
/// validates the result.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    default_seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut table = match path {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_dotted(&mut table, k, parse_value(v))?;
    }
    from_table(table, default_seed)
}

pub fn from_table(table: toml::Table, default_seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = table
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;

    let experiment = Experiment::parse(
        raw.experiment
            .as_deref()
            .ok_or_else(|| ConfigError::Missing("experiment".into()))?,
    )?;
    let game = resolve_game(raw.game.ok_or_else(|| ConfigError::Missing("game".into()))?)?;
    let dataset = raw.dataset.map(resolve_dataset).transpose()?;
    if experiment.needs_dataset() && dataset.is_none() {
        return Err(ConfigError::Missing("dataset".into()));
    }
    let learn = resolve_learn(raw.learn.unwrap_or_default())?;
    let pjap = match (raw.pjap, experiment) {
        (Some(p), _) => Some(resolve_pjap(p)?),
        (None, Experiment::PjapComparison) => Some(PjapConfig::default()),
        (None, _) => None,
    };

    let seeds = raw.seeds.unwrap_or_else(|| vec![default_seed.unwrap_or(0)]);
    if seeds.is_empty() {
        return Err(invalid("seeds", "must not be empty"));
    }
    let initial_policies: Vec<(f64, f64)> = raw
        .initial_policies
        .unwrap_or_else(|| vec![[0.0, 0.0]])
        .into_iter()
        .map(|[x, y]| (x, y))
        .collect();
    if initial_policies.is_empty() {
        return Err(invalid("initial_policies", "must not be empty"));
    }
    if initial_policies.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(invalid("initial_policies", "values must be finite"));
    }

    let sweep = resolve_sweep(raw.sweep.unwrap_or_default())?;
    if experiment == Experiment::OnlineBufferSweep {
        if let Some(c) = sweep.capacities.iter().find(|c| matches!(c, Capacity::Bounded(n) if *n < learn.batch_size)) {
            return Err(invalid(
                "sweep.capacities",
                format!("capacity {c} is smaller than learn.batch_size {}", learn.batch_size),
            ));
        }
    }
    if experiment == Experiment::TwinPeaksVarianceSweep {
        if !matches!(game, GameSpec::TwinPeaks(_)) {
            return Err(invalid("game.kind", "TwinPeaksVarianceSweep needs TwinPeaks"));
        }
        if !matches!(dataset.map(|d| d.kind), Some(DatasetKind::GaussianCentered { .. })) {
            return Err(invalid("dataset.kind", "TwinPeaksVarianceSweep needs a gaussian dataset"));
        }
    }

    let a = raw.analyze.unwrap_or_default();
    let analyze = AnalyzeConfig {
        grid_low: a.grid_low.unwrap_or(-1.0),
        grid_high: a.grid_high.unwrap_or(1.0),
        grid_n: a.grid_n.unwrap_or(21),
    };
    if !analyze.grid_low.is_finite() || !analyze.grid_high.is_finite() || analyze.grid_low >= analyze.grid_high {
        return Err(invalid("analyze.grid_low", "must be below analyze.grid_high"));
    }
    if analyze.grid_n == 0 {
        return Err(invalid("analyze.grid_n", "must be at least 1"));
    }

    Ok(ExperimentConfig {
        experiment,
        game,
        dataset,
        learn,
        pjap,
        seeds,
        initial_policies,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        sweep,
        analyze,
        source: table,
    })
}

fn resolve_game(g: RawGame) -> Result<GameSpec, ConfigError> {
    let kind = g.kind.ok_or_else(|| ConfigError::Missing("game.kind".into()))?;
    Ok(match kind.as_str() {
        "Decoupled" => GameSpec::Decoupled,
        "SignAgreement" => GameSpec::SignAgreement,
        "ActionAgreement" => GameSpec::ActionAgreement,
        "TwinPeaks" => {
            let d = TwinPeaksParams::default();
            let p = TwinPeaksParams {
                a: g.a.unwrap_or(d.a),
                b: g.b.unwrap_or(d.b),
                c: g.c.unwrap_or(d.c),
            };
            p.validate().map_err(|e| invalid("game", e))?;
            GameSpec::TwinPeaks(p)
        }
        "Custom" => {
            let terms = g.terms.ok_or_else(|| ConfigError::Missing("game.terms".into()))?;
            GameSpec::Custom(Polynomial2::from_terms(&terms).map_err(|e| invalid("game.terms", e))?)
        }
        other => {
            return Err(invalid(
                "game.kind",
                format!("`{other}` is not one of Decoupled, SignAgreement, ActionAgreement, TwinPeaks, Custom"),
            ))
        }
    })
}

fn resolve_dataset(d: RawDataset) -> Result<DatasetSpec, ConfigError> {
    let kind = d.kind.ok_or_else(|| ConfigError::Missing("dataset.kind".into()))?;
    let kind = match kind.as_str() {
        "uniform" => {
            let (lo, hi) = (d.low.unwrap_or(-1.0), d.high.unwrap_or(1.0));
            DatasetKind::UniformBox { x: (lo, hi), y: (lo, hi) }
        }
        "gaussian" => {
            let s = d.sigma.unwrap_or(0.5);
            let c = d.center.unwrap_or([0.0, 0.0]);
            DatasetKind::GaussianCentered {
                center: (c[0], c[1]),
                sigma: (d.sigma_x.unwrap_or(s), d.sigma_y.unwrap_or(s)),
            }
        }
        other => return Err(invalid("dataset.kind", format!("`{other}` is not one of uniform, gaussian"))),
    };
    let spec = DatasetSpec {
        kind,
        size: d.size.unwrap_or(1000),
        seed: d.seed.unwrap_or(0),
    };
    spec.validate().map_err(|e| invalid("dataset", e))?;
    Ok(spec)
}

fn resolve_learn(l: RawLearn) -> Result<LearnConfig, ConfigError> {
    let d = LearnConfig::default();
    let gradient_mode = match l.gradient_mode.as_deref() {
        None | Some("exact") => GradientMode::ExactMoments,
        Some("minibatch") => GradientMode::Minibatch,
        Some(other) => {
            return Err(invalid("learn.gradient_mode", format!("`{other}` is not one of exact, minibatch")))
        }
    };
    let cfg = LearnConfig {
        learning_rate: l.learning_rate.unwrap_or(d.learning_rate),
        batch_size: l.batch_size.unwrap_or(d.batch_size),
        steps: l.steps.unwrap_or(d.steps),
        gradient_mode,
        exploration_noise_sigma: l.exploration_noise_sigma.unwrap_or(d.exploration_noise_sigma),
        param_clamp: l.param_clamp.map(|[lo, hi]| (lo, hi)),
    };
    cfg.validate().map_err(|e| invalid("learn", e))?;
    Ok(cfg)
}

fn resolve_pjap(p: RawPjap) -> Result<PjapConfig, ConfigError> {
    let d = PjapConfig::default();
    let distance = match p.distance.as_deref() {
        None | Some("joint") => DistanceKind::JointActionL1,
        Some("trajectory") => DistanceKind::TrajectoryMeanL1,
        Some(other) => return Err(invalid("pjap.distance", format!("`{other}` is not one of joint, trajectory"))),
    };
    let cfg = PjapConfig {
        alpha: p.alpha.unwrap_or(d.alpha),
        epsilon: p.epsilon.unwrap_or(d.epsilon),
        refresh_fraction: p.refresh_fraction.unwrap_or(d.refresh_fraction),
        distance,
    };
    cfg.validate().map_err(|e| invalid("pjap", e))?;
    Ok(cfg)
}

fn resolve_sweep(s: RawSweep) -> Result<SweepConfig, ConfigError> {
    let capacities = match s.capacities {
        None => vec![
            Capacity::Bounded(64),
            Capacity::Bounded(640),
            Capacity::Bounded(6400),
            Capacity::Unbounded,
        ],
        Some(v) => v
            .into_iter()
            .map(|c| match c {
                RawCapacity::Size(0) => Err(invalid("sweep.capacities", "capacity must be at least 1")),
                RawCapacity::Size(n) => Ok(Capacity::Bounded(n)),
                RawCapacity::Named(s) if s == "unbounded" => Ok(Capacity::Unbounded),
                RawCapacity::Named(s) => Err(invalid(
                    "sweep.capacities",
                    format!("`{s}` is neither a size nor \"unbounded\""),
                )),
            })
            .collect::<Result<_, _>>()?,
    };
    let sigmas = s.sigmas.unwrap_or_else(|| vec![0.0, 0.25, 0.5]);
    if let Some(bad) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(invalid("sweep.sigmas", format!("{bad} is not a valid std")));
    }
    Ok(SweepConfig { capacities, sigmas })
}
