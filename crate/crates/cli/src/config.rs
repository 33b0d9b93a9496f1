//! TOML run configuration. Every table and key is optional except the asset
//! list; unknown keys are rejected.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use leadlag::eval::{ExperimentSettings, Method, SplitRatio};
use leadlag::ingest::{AlignSpec, NormScope, WindowSpec};
use leadlag::nn::{Activation, Architecture, Optimizer, TrainConfig};
use leadlag::{Execution, FeatureMethod, LagDirection};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSource {
    pub id: String,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub target: String,
    pub start: String,
    pub end: String,
    pub timestep_hours: i64,
    pub max_gap: usize,
    pub norm_scope: NormScope,
    pub assets: Vec<AssetSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            target: "BTC".into(),
            start: "2018-06-01T00:00:00Z".into(),
            end: "2020-05-01T00:00:00Z".into(),
            timestep_hours: 4,
            max_gap: 2,
            norm_scope: NormScope::All,
            assets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Any of raw, syn, asyn.
    pub methods: Vec<String>,
    pub lvk_n: usize,
    pub lag_direction: LagDirection,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            methods: vec!["raw".into(), "syn".into(), "asyn".into()],
            lvk_n: 4,
            lag_direction: LagDirection::AssetLeads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architectures: Vec<String>,
    pub hidden_dim: usize,
    pub layers: usize,
    pub mlp_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architectures: vec!["birnn".into(), "bilstm".into(), "bigru".into()],
            hidden_dim: 32,
            layers: 2,
            mlp_activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    /// adam or sgd
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 2000,
            learning_rate: 0.01,
            optimizer: "adam".into(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSource {
    pub name: String,
    pub split: SplitRatio,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub splits: Vec<SplitRatio>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 means one per cell, capped at available cores.
    pub parallelism: usize,
    pub sweep_n: Vec<usize>,
    pub sweep_split: SplitRatio,
    pub sweep_architecture: String,
    pub external: Vec<ExternalSource>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            splits: SplitRatio::ALL.to_vec(),
            seeds: (0..5).collect(),
            parallelism: 0,
            sweep_n: vec![1, 2, 3, 4, 6, 8],
            sweep_split: SplitRatio::R82,
            sweep_architecture: "birnn".into(),
            external: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub window: WindowSpec,
    pub features: FeaturesConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn parse_time(key: &str, s: &str) -> Result<i64, ConfigError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc).timestamp_millis())
        .map_err(|e| bad(format!("data.{key}: {s:?} is not an RFC 3339 timestamp ({e})")))
}

/// A config after validation, with paths resolved and names parsed.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub raw: RunConfig,
    pub assets: Vec<AssetSource>,
    pub align: AlignSpec,
    pub methods: Vec<FeatureMethod>,
    pub architectures: Vec<Architecture>,
    pub sweep_architecture: Architecture,
    pub externals: Vec<ExternalSource>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.train.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            _ => Optimizer::Adam {
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
            },
        };
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            seed: 0,
            optimizer,
            clip: self.train.clip,
        }
    }

    pub fn settings(&self, exec: Execution) -> ExperimentSettings {
        ExperimentSettings {
            window: self.window,
            direction: self.features.lag_direction,
            hidden_dim: self.model.hidden_dim,
            layers: self.model.layers,
            mlp_activation: self.model.mlp_activation,
            train: self.train_config(),
            exec,
        }
    }

    /// Check every field and resolve relative paths against `base`.
    pub fn resolve(self, base: &Path) -> Result<Resolved, ConfigError> {
        let d = &self.data;
        if d.assets.is_empty() {
            return Err(bad("data.assets: at least the target and one related asset are required"));
        }
        let target_pos = d
            .assets
            .iter()
            .position(|a| a.id == d.target)
            .ok_or_else(|| bad(format!("data.target {:?} is not among data.assets", d.target)))?;
        if d.assets.len() < 2 {
            return Err(bad("data.assets: need at least one related asset besides the target"));
        }
        for (i, a) in d.assets.iter().enumerate() {
            if d.assets[..i].iter().any(|b| b.id == a.id) {
                return Err(bad(format!("data.assets: duplicate id {:?}", a.id)));
            }
        }
        if d.timestep_hours <= 0 {
            return Err(bad("data.timestep_hours must be positive"));
        }
        let timestep_ms = d.timestep_hours * 3_600_000;
        let start = parse_time("start", &d.start)?;
        let end = parse_time("end", &d.end)?;
        if end < start {
            return Err(bad("data.end is before data.start"));
        }
        if start.rem_euclid(timestep_ms) != 0 || end.rem_euclid(timestep_ms) != 0 {
            return Err(bad("data.start and data.end must lie on the timestep grid"));
        }

        let w = self.window;
        if w.input == 0 || w.output == 0 || w.stride == 0 {
            return Err(bad("window.input, window.output and window.stride must be positive"));
        }
        if w.output > w.input {
            return Err(bad("window.output must not exceed window.input"));
        }
        let rows = ((end - start) / timestep_ms + 1) as usize;
        if w.window_count(rows) < 2 {
            return Err(bad(format!("date range has {rows} timesteps, too few for two windows")));
        }

        let mut methods = Vec::new();
        for label in &self.features.methods {
            let m = FeatureMethod::parse(label, self.features.lvk_n)
                .ok_or_else(|| bad(format!("features.methods: unknown method {label:?} (raw, syn, asyn)")))?;
            m.validate(w.input).map_err(|e| bad(format!("features: {e}")))?;
            methods.push(m);
        }
        if methods.is_empty() {
            return Err(bad("features.methods is empty"));
        }
        if !self.features.methods.iter().any(|m| m.starts_with("asyn")) {
            FeatureMethod::Asyn { n: self.features.lvk_n }
                .validate(w.input)
                .map_err(|e| bad(format!("features.lvk_n: {e}")))?;
        }

        let arch = |s: &str, key: &str| {
            Architecture::parse(s).ok_or_else(|| bad(format!("{key}: unknown architecture {s:?}")))
        };
        let architectures = self
            .model
            .architectures
            .iter()
            .map(|s| arch(s, "model.architectures"))
            .collect::<Result<Vec<_>, _>>()?;
        if architectures.is_empty() {
            return Err(bad("model.architectures is empty"));
        }
        let sweep_architecture = arch(&self.experiment.sweep_architecture, "experiment.sweep_architecture")?;
        if self.model.hidden_dim == 0 || self.model.layers == 0 {
            return Err(bad("model.hidden_dim and model.layers must be positive"));
        }
        if !matches!(self.train.optimizer.as_str(), "adam" | "sgd") {
            return Err(bad(format!("train.optimizer: unknown optimizer {:?} (adam, sgd)", self.train.optimizer)));
        }
        self.train_config().validate().map_err(|e| bad(format!("train: {e}")))?;

        let e = &self.experiment;
        if e.splits.is_empty() || e.seeds.is_empty() {
            return Err(bad("experiment.splits and experiment.seeds must be non-empty"));
        }
        if e.sweep_n.is_empty() {
            return Err(bad("experiment.sweep_n is empty"));
        }
        for &n in &e.sweep_n {
            FeatureMethod::Asyn { n }
                .validate(w.input)
                .map_err(|err| bad(format!("experiment.sweep_n: {err}")))?;
        }

        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut assets = d.assets.clone();
        let target = assets.remove(target_pos);
        assets.insert(0, target);
        for a in &mut assets {
            a.path = resolve(&a.path);
        }
        let externals = e
            .external
            .iter()
            .map(|x| ExternalSource {
                path: resolve(&x.path),
                ..x.clone()
            })
            .collect();
        let out_dir = resolve(&self.output.dir);
        Ok(Resolved {
            assets,
            align: AlignSpec {
                start,
                end,
                timestep_ms,
                max_gap: d.max_gap,
            },
            methods,
            architectures,
            sweep_architecture,
            externals,
            out_dir,
            raw: self,
        })
    }
}

impl Resolved {
    /// Model methods of the run matrix, architectures outermost.
    pub fn model_methods(&self) -> Vec<Method> {
        self.architectures
            .iter()
            .flat_map(|&a| self.methods.iter().map(move |&f| Method::model(a, f)))
            .collect()
    }
}
