//! Result files, external-prediction import, and the aggregate report.
//!
//! MSE values in the aggregate and sweep tables are scaled by 10³; per-cell
//! files keep raw normalized values so they round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{mean_std, ExperimentResult, Method, SweepRow, WindowPrediction};
use super::split::{split_windows, SplitRatio};
use super::EvalError;
use crate::error::{Error, Result};
use crate::ingest::{segment_windows, MarketFrame, WindowSpec};
use crate::nn::loss_mse;

const SCALE: f64 = 1e3;

pub fn write_result(path: &Path, r: &ExperimentResult) -> Result<()> {
    let mut text = String::new();
    writeln!(
        text,
        "# result method={} split={} seed={} optimizer={} config_hash={}",
        r.method.id(),
        r.split,
        r.seed,
        r.optimizer,
        r.config_hash
    )
    .unwrap();
    let train = r.final_train_loss.map_or("none".to_string(), |v| v.to_string());
    writeln!(text, "# test_mse={} naive_mse={} final_train_loss={train}", r.test_mse, r.naive_mse).unwrap();
    text.push_str("window,step,predicted,actual\n");
    for p in &r.predictions {
        writeln!(text, "{},{},{},{}", p.window, p.step, p.predicted, p.actual).unwrap();
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header_fields(line: &str) -> BTreeMap<&str, &str> {
    line.trim_start_matches('#').split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}

pub fn read_result(path: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut lines = text.lines();
    let first = lines.next().filter(|l| l.starts_with("# result ")).ok_or_else(|| bad("not a result file"))?;
    let second = lines.next().ok_or_else(|| bad("missing metrics line"))?;
    let mut fields = header_fields(first);
    fields.extend(header_fields(second));
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
    lines.next();
    let mut predictions = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(&format!("bad prediction row {line:?}")));
        }
        let parse_err = || bad(&format!("bad prediction row {line:?}"));
        predictions.push(WindowPrediction {
            window: cols[0].parse().map_err(|_| parse_err())?,
            step: cols[1].parse().map_err(|_| parse_err())?,
            predicted: cols[2].parse().map_err(|_| parse_err())?,
            actual: cols[3].parse().map_err(|_| parse_err())?,
        });
    }
    let train = get("final_train_loss")?;
    Ok(ExperimentResult {
        method: Method::parse_id(get("method")?),
        split: get("split")?.parse()?,
        seed: get("seed")?.parse().map_err(|_| bad("bad seed"))?,
        config_hash: get("config_hash")?.to_owned(),
        optimizer: get("optimizer")?.to_owned(),
        test_mse: num("test_mse")?,
        naive_mse: num("naive_mse")?,
        final_train_loss: if train == "none" {
            None
        } else {
            Some(train.parse().map_err(|_| bad("bad final_train_loss"))?)
        },
        predictions,
    })
}

/// Score an external prediction file of `window_index,step,prediction` rows
/// against the test windows of `split`. Every test (window, step) must appear once.
pub fn import_external(
    path: &Path,
    name: &str,
    frame: &MarketFrame,
    window: WindowSpec,
    split: SplitRatio,
    config_hash: &str,
) -> Result<ExperimentResult> {
    let windows = segment_windows(frame, window)?;
    let (_, test) = split_windows(&windows, split)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut given: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("window")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (cols.len() == 3)
            .then(|| Some((cols[0].parse().ok()?, cols[1].parse().ok()?, cols[2].parse::<f64>().ok()?)))
            .flatten();
        let (w, s, p) = parsed.ok_or_else(|| EvalError::External(format!("{}:{}: bad row {line:?}", path.display(), n + 1)))?;
        if given.insert((w, s), p).is_some() {
            return Err(EvalError::External(format!("duplicate prediction for window {w} step {s}")).into());
        }
    }
    let mut predictions = Vec::new();
    let mut total = 0.0;
    for w in test {
        let preds: Vec<f64> = (0..w.label.len())
            .map(|s| {
                given
                    .remove(&(w.index, s))
                    .ok_or_else(|| EvalError::External(format!("missing prediction for window {} step {s}", w.index)))
            })
            .collect::<Result<_, _>>()?;
        total += loss_mse(&preds, &w.label)?;
        predictions.extend(preds.iter().zip(&w.label).enumerate().map(|(step, (&p, &y))| WindowPrediction {
            window: w.index,
            step,
            predicted: p,
            actual: y,
        }));
    }
    if let Some(((w, s), _)) = given.into_iter().next() {
        return Err(EvalError::External(format!("prediction for window {w} step {s} is not a {split} test window")).into());
    }
    let naive = super::experiment::naive_mse(test);
    Ok(ExperimentResult {
        method: Method::External { name: name.to_owned() },
        split,
        seed: 0,
        config_hash: config_hash.to_owned(),
        optimizer: "external".into(),
        test_mse: total / test.len() as f64,
        naive_mse: naive,
        final_train_loss: None,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub split: SplitRatio,
    pub seeds: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub naive_mse: f64,
    pub beats_naive: bool,
    /// Lowest mean MSE of the split, and only if it beats naive repeat.
    pub best: bool,
}

/// Fold results into one row per (method, split), in sorted key order.
pub fn aggregate(results: &[ExperimentResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(SplitRatio, Method), Vec<&ExperimentResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.split, r.method.clone())).or_default().push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((split, method), mut rs)| {
            rs.sort_by_key(|r| r.seed);
            let mses: Vec<f64> = rs.iter().map(|r| r.test_mse).collect();
            let (mean_mse, std_mse) = mean_std(&mses);
            let naive_mse = rs[0].naive_mse;
            AggregateRow {
                beats_naive: method.is_model() && mean_mse < naive_mse,
                method,
                split,
                seeds: rs.len(),
                mean_mse,
                std_mse,
                naive_mse,
                best: false,
            }
        })
        .collect();
    for split in SplitRatio::ALL {
        let best = rows
            .iter_mut()
            .filter(|r| r.split == split && r.method.is_model())
            .min_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse));
        if let Some(row) = best {
            row.best = row.beats_naive;
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub table: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn e3(v: f64) -> String {
    format!("{:.3}", v * SCALE)
}

/// Write `summary.csv` (long form), `table.csv` (methods x splits, MSE x 10³,
/// best cell marked `*`) and one `plot_data_<split>.csv` per split with
/// seed-averaged predictions in USD.
pub fn mse_report(
    results: &[ExperimentResult],
    frame: &MarketFrame,
    window: WindowSpec,
    dir: &Path,
    config_hash: &str,
) -> Result<ReportFiles> {
    if results.is_empty() {
        return Err(EvalError::EmptyReport.into());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = aggregate(results);

    let mut summary = format!("# summary config_hash={config_hash}\n");
    summary.push_str("method,split,seeds,mse_e3_mean,mse_e3_std,naive_mse_e3,beats_naive,best\n");
    for r in &rows {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.split,
            r.seeds,
            e3(r.mean_mse),
            e3(r.std_mse),
            e3(r.naive_mse),
            r.beats_naive,
            r.best
        )
        .unwrap();
    }
    let summary_path = dir.join("summary.csv");
    fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;

    let splits: Vec<SplitRatio> = SplitRatio::ALL.into_iter().filter(|s| rows.iter().any(|r| r.split == *s)).collect();
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut table = format!("# table mse_x1e-3 config_hash={config_hash}\nmethod");
    for s in &splits {
        write!(table, ",{s}").unwrap();
    }
    table.push_str(",mean\n");
    for m in &methods {
        table.push_str(&m.id());
        let mut means = Vec::new();
        for s in &splits {
            match rows.iter().find(|r| &r.method == m && r.split == *s) {
                Some(r) => {
                    means.push(r.mean_mse);
                    write!(table, ",{}{}", e3(r.mean_mse), if r.best { "*" } else { "" }).unwrap();
                }
                None => table.push(','),
            }
        }
        if means.len() == splits.len() {
            writeln!(table, ",{}", e3(means.iter().sum::<f64>() / means.len() as f64)).unwrap();
        } else {
            table.push_str(",\n");
        }
    }
    let table_path = dir.join("table.csv");
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;

    let norm = frame.norm_params();
    let mut plots = Vec::new();
    for s in &splits {
        let mut text = format!("# plot split={s} config_hash={config_hash}\ntimestamp,actual_usd,predicted_usd,method\n");
        for m in &methods {
            let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
            for r in results.iter().filter(|r| &r.method == m && r.split == *s) {
                for p in &r.predictions {
                    let e = acc.entry((p.window, p.step)).or_insert((0.0, p.actual, 0));
                    e.0 += p.predicted;
                    e.2 += 1;
                }
            }
            for ((w, step), (sum, actual, count)) in acc {
                let row = w * window.stride + window.input + step;
                let ts = frame.timestamps().get(row).copied().unwrap_or_default();
                writeln!(
                    text,
                    "{ts},{},{},{m}",
                    norm.denormalize(actual),
                    norm.denormalize(sum / count as f64)
                )
                .unwrap();
            }
        }
        let name = format!("plot_data_{}.csv", s.to_string().replace(':', "-"));
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        plots.push(path);
    }
    Ok(ReportFiles {
        summary: summary_path,
        table: table_path,
        plots,
    })
}

pub fn write_sweep(path: &Path, rows: &[SweepRow], config_hash: &str) -> Result<()> {
    let mut text = format!("# sweep mse_x1e-3 config_hash={config_hash}\nn,mean_mse_e3,std_mse_e3,naive_mse_e3,per_seed_e3\n");
    for r in rows {
        let per_seed: Vec<String> = r.mses.iter().map(|&v| e3(v)).collect();
        writeln!(
            text,
            "{},{},{},{},{}",
            r.n,
            e3(r.mean_mse),
            e3(r.std_mse),
            e3(r.naive_mse),
            per_seed.join(";")
        )
        .unwrap();
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
