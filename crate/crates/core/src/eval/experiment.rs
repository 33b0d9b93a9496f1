use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::split::{split_windows, SplitRatio};
use crate::c2rm::{featurize, FeatureMethod, LagDirection};
use crate::error::Result;
use crate::exec::Execution;
use crate::ingest::{segment_windows, MarketFrame, Window, WindowSpec};
use crate::nn::{loss_mse, train, Activation, Architecture, Forecast, ModelParams, ModelSpec, TrainConfig};

/// What produces the predictions of an experiment cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    NaiveRepeat,
    Model { arch: Architecture, features: FeatureMethodKey },
    /// Predictions imported from a file (e.g. a tree-ensemble baseline).
    External { name: String },
}

/// [`FeatureMethod`] with a total order, for sorting report rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMethodKey {
    Raw,
    Syn,
    Asyn(usize),
}

impl From<FeatureMethod> for FeatureMethodKey {
    fn from(m: FeatureMethod) -> Self {
        match m {
            FeatureMethod::Raw => FeatureMethodKey::Raw,
            FeatureMethod::Syn => FeatureMethodKey::Syn,
            FeatureMethod::Asyn { n } => FeatureMethodKey::Asyn(n),
        }
    }
}

impl From<FeatureMethodKey> for FeatureMethod {
    fn from(k: FeatureMethodKey) -> Self {
        match k {
            FeatureMethodKey::Raw => FeatureMethod::Raw,
            FeatureMethodKey::Syn => FeatureMethod::Syn,
            FeatureMethodKey::Asyn(n) => FeatureMethod::Asyn { n },
        }
    }
}

impl Method {
    pub fn model(arch: Architecture, features: FeatureMethod) -> Method {
        Method::Model {
            arch,
            features: features.into(),
        }
    }

    /// Stable identifier: `naive_repeat`, `birnn`, `birnn-syn`, `bigru-asyn4`, or the external name.
    pub fn id(&self) -> String {
        match self {
            Method::NaiveRepeat => "naive_repeat".into(),
            Method::Model { arch, features } => match FeatureMethod::from(*features) {
                FeatureMethod::Raw => arch.name().into(),
                other => format!("{}-{}", arch.name(), other.label()),
            },
            Method::External { name } => name.clone(),
        }
    }

    pub fn parse_id(id: &str) -> Method {
        if id == "naive_repeat" {
            return Method::NaiveRepeat;
        }
        let (arch, feat) = id.split_once('-').unwrap_or((id, "raw"));
        match (Architecture::parse(arch), FeatureMethod::parse(feat, 4)) {
            (Some(arch), Some(features)) => Method::model(arch, features),
            _ => Method::External { name: id.to_owned() },
        }
    }

    pub fn is_model(&self) -> bool {
        !matches!(self, Method::NaiveRepeat)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Everything besides (method, split, seed) that determines a cell's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub window: WindowSpec,
    pub direction: LagDirection,
    pub hidden_dim: usize,
    pub layers: usize,
    pub mlp_activation: Activation,
    /// The seed field is replaced by each cell's seed.
    pub train: TrainConfig,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            window: WindowSpec::default(),
            direction: LagDirection::default(),
            hidden_dim: 32,
            layers: 2,
            mlp_activation: Activation::Relu,
            train: TrainConfig::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub window: usize,
    pub step: usize,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub method: Method,
    pub split: SplitRatio,
    pub seed: u64,
    pub config_hash: String,
    /// Optimizer name, or `none` for parameter-free methods.
    pub optimizer: String,
    /// Normalized units.
    pub test_mse: f64,
    /// Naive-repeat MSE on the same test windows.
    pub naive_mse: f64,
    pub final_train_loss: Option<f64>,
    pub predictions: Vec<WindowPrediction>,
}

/// Repeat the last observed target value over the label horizon.
pub fn naive_repeat(window: &Window) -> Forecast {
    let last = *window.target_context.last().expect("windows have input");
    Forecast {
        predictions: vec![last; window.label.len()],
    }
}

fn frame_fingerprint(frame: &MarketFrame) -> String {
    let bits: Vec<u64> = frame.prices().iter().map(|v| v.to_bits()).collect();
    crate::config_hash(&(frame.asset_ids(), frame.timestamps(), bits))
}

/// Hash identifying one cell's inputs: frame contents, settings, method, split and seed.
pub fn cell_config_hash(
    frame: &MarketFrame,
    method: &Method,
    split: SplitRatio,
    seed: u64,
    settings: &ExperimentSettings,
) -> String {
    crate::config_hash(&(frame_fingerprint(frame), settings, method, split, seed))
}

fn collect(windows: &[Window], forecasts: &[Forecast]) -> (f64, Vec<WindowPrediction>) {
    let mut total = 0.0;
    let mut preds = Vec::new();
    for (w, f) in windows.iter().zip(forecasts) {
        total += loss_mse(&f.predictions, &w.label).expect("forecast length equals label length");
        for (step, (&p, &y)) in f.predictions.iter().zip(&w.label).enumerate() {
            preds.push(WindowPrediction {
                window: w.index,
                step,
                predicted: p,
                actual: y,
            });
        }
    }
    (total / windows.len() as f64, preds)
}

pub(crate) fn naive_mse(test: &[Window]) -> f64 {
    let forecasts: Vec<Forecast> = test.iter().map(naive_repeat).collect();
    collect(test, &forecasts).0
}

/// Train (when needed) and evaluate one (method, split, seed) cell.
///
/// Returns the trained parameters for model methods. External methods are not
/// run here; see [`super::import_external`].
pub fn run_experiment(
    frame: &MarketFrame,
    method: &Method,
    split: SplitRatio,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<(ExperimentResult, Option<ModelParams>)> {
    let windows = segment_windows(frame, settings.window)?;
    let (train_w, test_w) = split_windows(&windows, split)?;
    let config_hash = cell_config_hash(frame, method, split, seed, settings);
    let naive = naive_mse(test_w);

    let (forecasts, optimizer, train_loss, params) = match method {
        Method::NaiveRepeat => (test_w.iter().map(naive_repeat).collect(), "none".to_string(), None, None),
        Method::Model { arch, features } => {
            let features = FeatureMethod::from(*features);
            let factors = featurize(&windows, features, settings.direction, settings.exec)?;
            let inputs: Vec<Array2<f64>> = factors.into_iter().map(|f| f.features).collect();
            let (train_x, test_x) = inputs.split_at(train_w.len());
            let train_y: Vec<Vec<f64>> = train_w.iter().map(|w| w.label.clone()).collect();
            let spec = ModelSpec {
                arch: *arch,
                input_dim: features.width(frame.related_count()),
                hidden_dim: settings.hidden_dim,
                layers: settings.layers,
                seq_len: settings.window.input,
                output_len: settings.window.output,
                mlp_activation: settings.mlp_activation,
            };
            let config = TrainConfig {
                seed,
                ..settings.train
            };
            let init = ModelParams::init(spec, seed)?;
            let outcome = train(init, train_x, &train_y, &config, settings.exec)?;
            let forecasts = outcome.params.predict(test_x)?;
            (
                forecasts,
                config.optimizer.name().to_string(),
                outcome.history.last().copied(),
                Some(outcome.params),
            )
        }
        Method::External { name } => {
            return Err(super::EvalError::External(format!("{name} must be imported from a prediction file")).into())
        }
    };
    let (test_mse, predictions) = collect(test_w, &forecasts);
    Ok((
        ExperimentResult {
            method: method.clone(),
            split,
            seed,
            config_hash,
            optimizer,
            test_mse,
            naive_mse: naive,
            final_train_loss: train_loss,
            predictions,
        },
        params,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    /// Per-seed test MSE, in seed order.
    pub mses: Vec<f64>,
    pub naive_mse: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean test MSE of `arch` on asynchronous features for every `n`, over `seeds`.
pub fn lvk_sweep(
    frame: &MarketFrame,
    n_values: &[usize],
    seeds: &[u64],
    arch: Architecture,
    split: SplitRatio,
    settings: &ExperimentSettings,
) -> Result<Vec<SweepRow>> {
    for &n in n_values {
        FeatureMethod::Asyn { n }.validate(settings.window.input)?;
    }
    if seeds.is_empty() {
        return Err(crate::nn::NnError::InvalidConfig("sweep needs at least one seed".into()).into());
    }
    let cells: Vec<(usize, u64)> = n_values.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let results = settings.exec.try_map(&cells, |&(n, seed)| {
        run_experiment(frame, &Method::model(arch, FeatureMethod::Asyn { n }), split, seed, settings).map(|(r, _)| r)
    })?;
    Ok(n_values
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let chunk = &results[k * seeds.len()..(k + 1) * seeds.len()];
            let mses: Vec<f64> = chunk.iter().map(|r| r.test_mse).collect();
            let (mean_mse, std_mse) = mean_std(&mses);
            SweepRow {
                n,
                mean_mse,
                std_mse,
                mses,
                naive_mse: chunk[0].naive_mse,
            }
        })
        .collect())
}
