//! Cross-asset relationship mining: DTW-weighted synchronous impact factors
//! and lead-lag kernels aggregated into asynchronous impact factors.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtw::dtw_distance;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::Window;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum C2rmError {
    #[error("{n} subwindows do not evenly divide a {len}-step window")]
    BadPartition { n: usize, len: usize },
    #[error("asset index {index} out of range for {count} related assets")]
    AssetOutOfRange { index: usize, count: usize },
}

/// Which side of a kernel entry is allowed to come first in time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagDirection {
    /// `w_ij = DTW(target sub i, asset sub j)` for `i >= j`: the asset leads.
    #[default]
    AssetLeads,
    /// `w_ij = DTW(asset sub i, target sub j)` for `i >= j`: the target leads.
    TargetLeads,
}

/// `n` equal, contiguous, ordered subwindows covering `[0, len)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwindowPartition {
    n: usize,
    sub_len: usize,
}

impl SubwindowPartition {
    pub fn new(window_len: usize, n: usize) -> Result<Self, C2rmError> {
        if n == 0 || window_len == 0 || !window_len.is_multiple_of(n) {
            return Err(C2rmError::BadPartition { n, len: window_len });
        }
        Ok(SubwindowPartition {
            n,
            sub_len: window_len / n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sub_len(&self) -> usize {
        self.sub_len
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        k * self.sub_len..(k + 1) * self.sub_len
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.n).map(|k| self.range(k))
    }
}

/// Lower-triangular `n x n` matrix of subwindow DTW distances for one related asset.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadLagKernel {
    pub asset_index: usize,
    pub entries: Array2<f64>,
}

impl LeadLagKernel {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Row-major, structural zeros included, length `n²`.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().copied().collect()
    }
}

pub fn flatten_lvk(kernel: &LeadLagKernel) -> Vec<f64> {
    kernel.flatten()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactKind {
    Raw,
    Synchronous,
    Asynchronous,
}

/// Model input for one window: `input_len x F`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpactFactor {
    pub kind: ImpactKind,
    pub features: Array2<f64>,
}

impl ImpactFactor {
    pub fn width(&self) -> usize {
        self.features.ncols()
    }
}

/// How a window becomes model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum FeatureMethod {
    /// Related-asset prices as they are.
    Raw,
    /// Each related column scaled by its full-window DTW weight.
    Syn,
    /// Prices times the stacked flattened kernels, `n` subwindows.
    Asyn { n: usize },
}

impl FeatureMethod {
    /// Feature width for `m` related assets.
    pub fn width(&self, m: usize) -> usize {
        match *self {
            FeatureMethod::Raw | FeatureMethod::Syn => m,
            FeatureMethod::Asyn { n } => n * n,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            FeatureMethod::Raw => "raw".into(),
            FeatureMethod::Syn => "syn".into(),
            FeatureMethod::Asyn { n } => format!("asyn{n}"),
        }
    }

    pub fn parse(label: &str, n: usize) -> Option<FeatureMethod> {
        match label {
            "raw" => Some(FeatureMethod::Raw),
            "syn" => Some(FeatureMethod::Syn),
            "asyn" => Some(FeatureMethod::Asyn { n }),
            other => other
                .strip_prefix("asyn")
                .and_then(|d| d.parse().ok())
                .map(|n| FeatureMethod::Asyn { n }),
        }
    }

    pub fn validate(&self, window_len: usize) -> Result<(), C2rmError> {
        if let FeatureMethod::Asyn { n } = *self {
            SubwindowPartition::new(window_len, n)?;
        }
        Ok(())
    }
}

fn check_asset(window: &Window, a: usize) -> Result<(), C2rmError> {
    if a >= window.related_count() {
        Err(C2rmError::AssetOutOfRange {
            index: a,
            count: window.related_count(),
        })
    } else {
        Ok(())
    }
}

fn dtw_views(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let x: Vec<f64> = x.to_vec();
    let y: Vec<f64> = y.to_vec();
    dtw_distance(&x, &y).expect("window segments are never empty")
}

/// DTW distance between the target history and related asset `a` over the whole window.
pub fn sync_weight(window: &Window, a: usize) -> Result<f64, C2rmError> {
    check_asset(window, a)?;
    let asset: Vec<f64> = window.input.column(a).to_vec();
    Ok(dtw_distance(&window.target_context, &asset).expect("window segments are never empty"))
}

pub fn sync_impact(window: &Window) -> ImpactFactor {
    let mut features = window.input.clone();
    for (a, mut col) in features.columns_mut().into_iter().enumerate() {
        let w = sync_weight(window, a).expect("index within range");
        col.mapv_inplace(|p| w * p);
    }
    ImpactFactor {
        kind: ImpactKind::Synchronous,
        features,
    }
}

pub fn build_lvk(window: &Window, a: usize, n: usize, direction: LagDirection) -> Result<LeadLagKernel, C2rmError> {
    check_asset(window, a)?;
    let part = SubwindowPartition::new(window.input_len(), n)?;
    let target = ArrayView1::from(&window.target_context[..]);
    let asset = window.input.column(a);
    let (later, earlier) = match direction {
        LagDirection::AssetLeads => (target, asset),
        LagDirection::TargetLeads => (asset, target),
    };
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        let later_sub = later.slice(ndarray::s![part.range(i)]);
        for j in 0..=i {
            entries[[i, j]] = dtw_views(later_sub, earlier.slice(ndarray::s![part.range(j)]));
        }
    }
    Ok(LeadLagKernel { asset_index: a, entries })
}

/// The `m x n²` matrix of flattened kernels, one row per related asset.
pub fn stacked_kernels(window: &Window, n: usize, direction: LagDirection) -> Result<Array2<f64>, C2rmError> {
    let m = window.related_count();
    let mut stacked = Array2::zeros((m, n * n));
    for a in 0..m {
        let kernel = build_lvk(window, a, n, direction)?;
        stacked.row_mut(a).assign(&ArrayView1::from(kernel.entries.as_slice().expect("standard layout")));
    }
    Ok(stacked)
}

pub fn asyn_impact(window: &Window, n: usize, direction: LagDirection) -> Result<ImpactFactor, C2rmError> {
    let stacked = stacked_kernels(window, n, direction)?;
    Ok(ImpactFactor {
        kind: ImpactKind::Asynchronous,
        features: window.input.dot(&stacked),
    })
}

pub fn raw_impact(window: &Window) -> ImpactFactor {
    ImpactFactor {
        kind: ImpactKind::Raw,
        features: window.input.clone(),
    }
}

pub fn impact(window: &Window, method: FeatureMethod, direction: LagDirection) -> Result<ImpactFactor, C2rmError> {
    match method {
        FeatureMethod::Raw => Ok(raw_impact(window)),
        FeatureMethod::Syn => Ok(sync_impact(window)),
        FeatureMethod::Asyn { n } => asyn_impact(window, n, direction),
    }
}

/// Features for every window. Each window fills its own output slot, so the
/// execution strategy never affects the result.
pub fn featurize(
    windows: &[Window],
    method: FeatureMethod,
    direction: LagDirection,
    exec: Execution,
) -> Result<Vec<ImpactFactor>, C2rmError> {
    if let Some(first) = windows.first() {
        method.validate(first.input_len())?;
    }
    exec.try_map(windows, |w| impact(w, method, direction))
}

/// Header of a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureHeader {
    pub method: FeatureMethod,
    pub direction: LagDirection,
    pub assets: Vec<String>,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub header: FeatureHeader,
    /// Window ordinals, aligned with `factors`.
    pub windows: Vec<usize>,
    pub factors: Vec<ImpactFactor>,
}

fn kind_of(method: FeatureMethod) -> ImpactKind {
    match method {
        FeatureMethod::Raw => ImpactKind::Raw,
        FeatureMethod::Syn => ImpactKind::Synchronous,
        FeatureMethod::Asyn { .. } => ImpactKind::Asynchronous,
    }
}

/// One row per (window, timestep), `F` feature columns, shortest round-trip float text.
pub fn write_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let h = &set.header;
    let n = match h.method {
        FeatureMethod::Asyn { n } => n,
        _ => 0,
    };
    let width = h.method.width(h.assets.len());
    let mut text = String::new();
    writeln!(
        text,
        "# features method={} n={} m={} width={} direction={} config_hash={}",
        h.method.label(),
        n,
        h.assets.len(),
        width,
        serde_json::to_value(h.direction).unwrap().as_str().unwrap(),
        h.config_hash
    )
    .unwrap();
    writeln!(text, "# assets={}", h.assets.join(",")).unwrap();
    text.push_str("window,step");
    for f in 0..width {
        write!(text, ",f{f}").unwrap();
    }
    text.push('\n');
    for (w, factor) in set.windows.iter().zip(&set.factors) {
        for (step, row) in factor.features.rows().into_iter().enumerate() {
            write!(text, "{w},{step}").unwrap();
            for v in row {
                write!(text, ",{v}").unwrap();
            }
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::format(path, msg);
    let mut lines = text.lines();
    let meta_line = lines.next().and_then(|l| l.strip_prefix("# features ")).ok_or_else(|| bad("missing feature header".into()))?;
    let mut label = None;
    let mut n = 0usize;
    let mut direction = LagDirection::AssetLeads;
    let mut config_hash = String::new();
    for kv in meta_line.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad header field {kv:?}")))?;
        match k {
            "method" => label = Some(v.to_owned()),
            "n" => n = v.parse().map_err(|_| bad(format!("bad n {v:?}")))?,
            "direction" => {
                direction = serde_json::from_value(serde_json::Value::String(v.to_owned()))
                    .map_err(|_| bad(format!("bad direction {v:?}")))?
            }
            "config_hash" => config_hash = v.to_owned(),
            _ => {}
        }
    }
    let label = label.ok_or_else(|| bad("header lacks method".into()))?;
    let method = FeatureMethod::parse(&label, n).ok_or_else(|| bad(format!("unknown method {label:?}")))?;
    let assets: Vec<String> = lines
        .next()
        .and_then(|l| l.strip_prefix("# assets="))
        .ok_or_else(|| bad("missing asset line".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let width = method.width(assets.len());
    lines.next(); // column names

    let mut windows: Vec<usize> = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (row_no, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let w: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad(format!("row {row_no}: bad window")))?;
        fields.next();
        if windows.last() != Some(&w) {
            windows.push(w);
            blocks.push(Vec::new());
        }
        let block = blocks.last_mut().expect("pushed above");
        let before = block.len();
        for f in fields {
            block.push(f.parse().map_err(|_| bad(format!("row {row_no}: bad value {f:?}")))?);
        }
        if block.len() - before != width {
            return Err(bad(format!("row {row_no}: expected {width} features")));
        }
    }
    let kind = kind_of(method);
    let factors = blocks
        .into_iter()
        .map(|b| {
            let rows = b.len() / width.max(1);
            Array2::from_shape_vec((rows, width), b)
                .map(|features| ImpactFactor { kind, features })
                .map_err(|e| bad(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        header: FeatureHeader {
            method,
            direction,
            assets,
            config_hash,
        },
        windows,
        factors,
    })
}
