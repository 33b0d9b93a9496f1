//! Kline parsing, grid alignment, joint min-max normalization and
//! segmentation into disjoint input/label windows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const FOUR_HOURS_MS: i64 = 4 * 60 * 60 * 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{path}:{line}: malformed kline row: {reason}")]
    MalformedRow {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: open_time {time} does not increase")]
    NonMonotonicTime { path: String, line: usize, time: i64 },
    #[error("{path}: no kline rows")]
    EmptyFile { path: String },
    #[error("asset {asset}: {missing} consecutive bars missing before {time}, max_gap is {max_gap}")]
    GapTooLarge {
        asset: String,
        time: i64,
        missing: usize,
        max_gap: usize,
    },
    #[error("asset {asset}: data covers [{first}, {last}], requested [{start}, {end}]")]
    RangeUncovered {
        asset: String,
        first: i64,
        last: i64,
        start: i64,
        end: i64,
    },
    #[error("price range is degenerate (min == max == {value})")]
    DegenerateRange { value: f64 },
    #[error("series of {len} steps is shorter than input+output = {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid ingest request: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlineRecord {
    pub open_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// Which columns contribute to the shared (min, max).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Target and related assets together.
    #[default]
    All,
    /// Related assets only; the target is mapped with the same affine transform
    /// and may fall outside [0, 1].
    Related,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub global_min: f64,
    pub global_max: f64,
}

impl NormParams {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.global_min) / (self.global_max - self.global_min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.global_max - self.global_min) + self.global_min
    }

    /// USD-scale factor for squared errors measured in normalized units.
    pub fn span(&self) -> f64 {
        self.global_max - self.global_min
    }
}

/// Aligned raw close prices, column 0 is the target asset.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPrices {
    pub asset_ids: Vec<String>,
    pub timestamps: Vec<i64>,
    pub prices: Array2<f64>,
}

/// Time-aligned, jointly normalized close prices. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketFrame {
    asset_ids: Vec<String>,
    timestamps: Vec<i64>,
    prices: Array2<f64>,
    norm: NormParams,
    scope: NormScope,
}

impl MarketFrame {
    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    /// Ids of the related assets, in column order.
    pub fn related_ids(&self) -> &[String] {
        &self.asset_ids[1..]
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// `T x (m+1)` normalized prices.
    pub fn prices(&self) -> &Array2<f64> {
        &self.prices
    }

    pub fn target(&self) -> ArrayView1<'_, f64> {
        self.prices.column(0)
    }

    pub fn norm_params(&self) -> NormParams {
        self.norm
    }

    pub fn norm_scope(&self) -> NormScope {
        self.scope
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Number of related assets.
    pub fn related_count(&self) -> usize {
        self.asset_ids.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub input: usize,
    pub output: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            input: 24,
            output: 3,
            stride: 24,
        }
    }
}

impl WindowSpec {
    /// `floor((T - input - output) / stride) + 1`, or 0 when too short.
    pub fn window_count(&self, len: usize) -> usize {
        let needed = self.input + self.output;
        if len < needed {
            0
        } else {
            (len - needed) / self.stride + 1
        }
    }
}

/// One sample: related-asset inputs, target history used for DTW weights, and the label.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub index: usize,
    /// Row of the frame where the input block starts.
    pub start: usize,
    /// `input_len x m`, related assets only.
    pub input: Array2<f64>,
    pub target_context: Vec<f64>,
    pub label: Vec<f64>,
}

impl Window {
    pub fn input_len(&self) -> usize {
        self.input.nrows()
    }

    pub fn related_count(&self) -> usize {
        self.input.ncols()
    }

    /// Frame rows covered by the label.
    pub fn label_rows(&self) -> std::ops::Range<usize> {
        let first = self.start + self.input_len();
        first..first + self.label.len()
    }
}

fn parse_field(path: &str, line: usize, name: &str, raw: Option<&str>) -> Result<f64, IngestError> {
    let raw = raw.ok_or_else(|| IngestError::MalformedRow {
        path: path.to_owned(),
        line,
        reason: format!("missing {name} field"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| IngestError::MalformedRow {
        path: path.to_owned(),
        line,
        reason: format!("{name} field {raw:?} is not a number"),
    })
}

/// Parse Binance-order kline CSV text. `origin` only labels errors.
///
/// Rows whose open time is off the `timestep_ms` grid are dropped; trailing
/// columns beyond volume are ignored. A leading header row naming `open_time`
/// is tolerated.
pub fn parse_klines_str(text: &str, origin: &str, timestep_ms: i64) -> Result<Vec<KlineRecord>, IngestError> {
    let mut out: Vec<KlineRecord> = Vec::new();
    let mut last_time: Option<i64> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("open_time")) {
            continue;
        }
        let mut fields = line.split(',');
        let time_raw = fields.next().unwrap_or_default().trim();
        let open_time: i64 = time_raw.parse().map_err(|_| IngestError::MalformedRow {
            path: origin.to_owned(),
            line: line_no,
            reason: format!("open_time {time_raw:?} is not an integer"),
        })?;
        let open = parse_field(origin, line_no, "open", fields.next())?;
        let high = parse_field(origin, line_no, "high", fields.next())?;
        let low = parse_field(origin, line_no, "low", fields.next())?;
        let close = parse_field(origin, line_no, "close", fields.next())?;
        let volume = parse_field(origin, line_no, "volume", fields.next())?;

        if let Some(prev) = last_time {
            if open_time <= prev {
                return Err(IngestError::NonMonotonicTime {
                    path: origin.to_owned(),
                    line: line_no,
                    time: open_time,
                });
            }
        }
        last_time = Some(open_time);

        if !(open > 0.0 && high > 0.0 && low > 0.0 && close > 0.0) {
            return Err(IngestError::MalformedRow {
                path: origin.to_owned(),
                line: line_no,
                reason: "prices must be positive".into(),
            });
        }
        if close < low || close > high {
            return Err(IngestError::MalformedRow {
                path: origin.to_owned(),
                line: line_no,
                reason: format!("close {close} outside [{low}, {high}]"),
            });
        }
        if open_time.rem_euclid(timestep_ms) != 0 {
            continue;
        }
        out.push(KlineRecord {
            open_time,
            open,
            high,
            low,
            close,
            volume,
        });
    }
    if out.is_empty() {
        return Err(IngestError::EmptyFile {
            path: origin.to_owned(),
        });
    }
    Ok(out)
}

pub fn parse_klines(path: &Path, timestep_ms: i64) -> Result<Vec<KlineRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_klines_str(&text, &path.display().to_string(), timestep_ms)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignSpec {
    /// Inclusive first grid timestamp.
    pub start: i64,
    /// Inclusive last grid timestamp.
    pub end: i64,
    pub timestep_ms: i64,
    /// Longest run of missing bars filled by carrying the previous close forward.
    pub max_gap: usize,
}

/// Place every asset on the shared grid `start, start+step, ..., end`.
/// The first series becomes column 0 (the target).
pub fn align_frames(series: &[(String, Vec<KlineRecord>)], spec: AlignSpec) -> Result<RawPrices, IngestError> {
    if series.is_empty() {
        return Err(IngestError::Invalid("no assets given".into()));
    }
    if spec.timestep_ms <= 0 || spec.end < spec.start || (spec.end - spec.start) % spec.timestep_ms != 0 {
        return Err(IngestError::Invalid(format!(
            "range [{}, {}] is not a whole number of {} ms steps",
            spec.start, spec.end, spec.timestep_ms
        )));
    }
    let rows = ((spec.end - spec.start) / spec.timestep_ms) as usize + 1;
    let timestamps: Vec<i64> = (0..rows as i64).map(|k| spec.start + k * spec.timestep_ms).collect();
    let mut prices = Array2::<f64>::zeros((rows, series.len()));

    for (col, (asset, records)) in series.iter().enumerate() {
        let (first, last) = match (records.first(), records.last()) {
            (Some(f), Some(l)) => (f.open_time, l.open_time),
            _ => {
                return Err(IngestError::RangeUncovered {
                    asset: asset.clone(),
                    first: 0,
                    last: 0,
                    start: spec.start,
                    end: spec.end,
                })
            }
        };
        if first > spec.start || last < spec.end {
            return Err(IngestError::RangeUncovered {
                asset: asset.clone(),
                first,
                last,
                start: spec.start,
                end: spec.end,
            });
        }
        let mut cursor = records.partition_point(|r| r.open_time < spec.start);
        let mut carried: Option<f64> = None;
        let mut missing = 0usize;
        for (row, &t) in timestamps.iter().enumerate() {
            while cursor < records.len() && records[cursor].open_time < t {
                cursor += 1;
            }
            let value = if cursor < records.len() && records[cursor].open_time == t {
                missing = 0;
                records[cursor].close
            } else {
                missing += 1;
                if missing > spec.max_gap {
                    return Err(IngestError::GapTooLarge {
                        asset: asset.clone(),
                        time: t,
                        missing,
                        max_gap: spec.max_gap,
                    });
                }
                // Row 0 always exists: the asset starts at or before `start` and
                // every record is on the grid.
                carried.expect("first grid row is covered")
            };
            carried = Some(value);
            prices[[row, col]] = value;
        }
    }

    Ok(RawPrices {
        asset_ids: series.iter().map(|(id, _)| id.clone()).collect(),
        timestamps,
        prices,
    })
}

/// Jointly min-max normalize every cell with one shared (min, max).
pub fn normalize_global(raw: &RawPrices, scope: NormScope) -> Result<MarketFrame, IngestError> {
    let (rows, cols) = raw.prices.dim();
    if rows == 0 || cols == 0 {
        return Err(IngestError::Invalid("empty price matrix".into()));
    }
    if scope == NormScope::Related && cols < 2 {
        return Err(IngestError::Invalid("related-only normalization needs a related asset".into()));
    }
    let first_col = if scope == NormScope::Related { 1 } else { 0 };
    let scoped = raw.prices.slice(s![.., first_col..]);
    let (lo, hi) = scoped
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return Err(IngestError::DegenerateRange { value: lo });
    }
    let norm = NormParams {
        global_min: lo,
        global_max: hi,
    };
    Ok(MarketFrame {
        asset_ids: raw.asset_ids.clone(),
        timestamps: raw.timestamps.clone(),
        prices: raw.prices.mapv(|v| norm.normalize(v)),
        norm,
        scope,
    })
}

impl MarketFrame {
    /// Build a frame from already-normalized values (used by the file reader and
    /// the synthetic generator).
    pub fn from_parts(
        asset_ids: Vec<String>,
        timestamps: Vec<i64>,
        prices: Array2<f64>,
        norm: NormParams,
        scope: NormScope,
    ) -> Result<MarketFrame, IngestError> {
        if prices.nrows() != timestamps.len() || prices.ncols() != asset_ids.len() || asset_ids.is_empty() {
            return Err(IngestError::Invalid(format!(
                "frame shape {:?} does not match {} timestamps and {} assets",
                prices.dim(),
                timestamps.len(),
                asset_ids.len()
            )));
        }
        if prices.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::Invalid("frame contains non-finite prices".into()));
        }
        Ok(MarketFrame {
            asset_ids,
            timestamps,
            prices,
            norm,
            scope,
        })
    }

    pub fn denormalized(&self) -> Array2<f64> {
        self.prices.mapv(|v| self.norm.denormalize(v))
    }
}

/// Cut the frame into disjoint windows of `spec.input` steps followed by `spec.output` label steps.
pub fn segment_windows(frame: &MarketFrame, spec: WindowSpec) -> Result<Vec<Window>, IngestError> {
    if spec.input == 0 || spec.output == 0 || spec.stride == 0 {
        return Err(IngestError::Invalid(format!("window sizes must be positive: {spec:?}")));
    }
    if frame.related_count() == 0 {
        return Err(IngestError::Invalid("frame has no related assets".into()));
    }
    let count = spec.window_count(frame.len());
    if count == 0 {
        return Err(IngestError::SeriesTooShort {
            len: frame.len(),
            needed: spec.input + spec.output,
        });
    }
    let prices = frame.prices();
    Ok((0..count)
        .map(|k| {
            let start = k * spec.stride;
            let split = start + spec.input;
            let end = split + spec.output;
            Window {
                index: k,
                start,
                input: prices.slice(s![start..split, 1..]).to_owned(),
                target_context: prices.slice(s![start..split, 0]).to_vec(),
                label: prices.slice(s![split..end, 0]).to_vec(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub asset_ids: Vec<String>,
    pub norm_params: NormParams,
    pub norm_scope: NormScope,
    pub rows: usize,
    pub config_hash: String,
}

/// Sidecar path next to a frame file: `frame.csv` → `frame.meta.json`.
pub fn meta_path(frame_path: &Path) -> std::path::PathBuf {
    frame_path.with_extension("meta.json")
}

/// Write the frame CSV plus its JSON sidecar. Floats use shortest round-trip formatting.
pub fn write_frame(frame: &MarketFrame, path: &Path, config_hash: &str) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "# frame config_hash={config_hash}").unwrap();
    writeln!(text, "timestamp,{}", frame.asset_ids.join(",")).unwrap();
    for (row, t) in frame.timestamps.iter().enumerate() {
        write!(text, "{t}").unwrap();
        for v in frame.prices.row(row) {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let meta = FrameMeta {
        asset_ids: frame.asset_ids.clone(),
        norm_params: frame.norm,
        norm_scope: frame.scope,
        rows: frame.len(),
        config_hash: config_hash.to_owned(),
    };
    let meta_file = meta_path(path);
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');
    fs::write(&meta_file, json).map_err(|e| Error::io(&meta_file, e))?;
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<MarketFrame> {
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: FrameMeta = serde_json::from_str(&meta_text).map_err(|e| Error::format(&meta_file, e.to_string()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::format(path, "missing header"))?;
    let ids: Vec<String> = header.split(',').skip(1).map(str::to_owned).collect();
    if ids != meta.asset_ids {
        return Err(Error::format(path, "header assets differ from sidecar metadata"));
    }
    let mut timestamps = Vec::with_capacity(meta.rows);
    let mut values = Vec::with_capacity(meta.rows * ids.len());
    for (n, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let t = fields
            .next()
            .and_then(|f| f.parse::<i64>().ok())
            .ok_or_else(|| Error::format(path, format!("row {n}: bad timestamp")))?;
        timestamps.push(t);
        let before = values.len();
        for f in fields {
            values.push(f.parse::<f64>().map_err(|_| Error::format(path, format!("row {n}: bad price {f:?}")))?);
        }
        if values.len() - before != ids.len() {
            return Err(Error::format(path, format!("row {n}: expected {} prices", ids.len())));
        }
    }
    let prices = Array2::from_shape_vec((timestamps.len(), ids.len()), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(MarketFrame::from_parts(ids, timestamps, prices, meta.norm_params, meta.norm_scope)?)
}
