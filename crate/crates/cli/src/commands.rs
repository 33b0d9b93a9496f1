use std::fs;
use std::path::{Path, PathBuf};

use leadlag::c2rm::{featurize, write_features, FeatureHeader, FeatureSet};
use leadlag::eval::{
    cell_config_hash, import_external, lvk_sweep, mse_report, read_result, run_experiment, write_result, write_sweep,
    ExperimentResult, Method, SplitRatio,
};
use leadlag::exec::with_threads;
use leadlag::ingest::{align_frames, normalize_global, parse_klines, segment_windows, write_frame};
use leadlag::nn::{read_checkpoint, write_checkpoint};
use leadlag::{config_hash, Execution, MarketFrame};

use crate::config::Resolved;
use crate::CliError;

/// One `key=value` log line on stdout.
macro_rules! log {
    ($event:expr $(, $k:ident = $v:expr)* $(,)?) => {{
        let mut line = format!("event={}", $event);
        $( line.push_str(&format!(" {}={}", stringify!($k), $v)); )*
        println!("{line}");
    }};
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| leadlag::Error::io(dir, e).into())
}

fn run_hash(cfg: &Resolved) -> String {
    config_hash(&cfg.raw)
}

fn data_hash(cfg: &Resolved) -> String {
    config_hash(&(&cfg.raw.data, &cfg.raw.window))
}

pub fn load_frame(cfg: &Resolved) -> Result<MarketFrame, CliError> {
    let mut series = Vec::with_capacity(cfg.assets.len());
    for a in &cfg.assets {
        let records = parse_klines(&a.path, cfg.align.timestep_ms)?;
        series.push((a.id.clone(), records));
    }
    let raw = align_frames(&series, cfg.align)?;
    let frame = normalize_global(&raw, cfg.raw.data.norm_scope)?;
    Ok(frame)
}

pub fn ingest(cfg: &Resolved) -> Result<MarketFrame, CliError> {
    let frame = load_frame(cfg)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("frame.csv");
    write_frame(&frame, &path, &data_hash(cfg))?;
    let norm = frame.norm_params();
    log!(
        "ingest",
        rows = frame.len(),
        assets = frame.asset_ids().len(),
        windows = cfg.raw.window.window_count(frame.len()),
        global_min = norm.global_min,
        global_max = norm.global_max,
        path = path.display(),
    );
    println!("{} windows", cfg.raw.window.window_count(frame.len()));
    Ok(frame)
}

pub fn featurize_cmd(cfg: &Resolved) -> Result<(), CliError> {
    let frame = ingest(cfg)?;
    let windows = segment_windows(&frame, cfg.raw.window)?;
    let dir = cfg.out_dir.join("features");
    create_dir(&dir)?;
    let hash = run_hash(cfg);
    let direction = cfg.raw.features.lag_direction;
    for &method in &cfg.methods {
        let factors = featurize(&windows, method, direction, Execution::Parallel)?;
        let path = dir.join(format!("{}.csv", method.label()));
        let set = FeatureSet {
            header: FeatureHeader {
                method,
                direction,
                assets: frame.related_ids().to_vec(),
                config_hash: hash.clone(),
            },
            windows: windows.iter().map(|w| w.index).collect(),
            factors,
        };
        write_features(&path, &set)?;
        log!(
            "featurize",
            method = method.label(),
            windows = windows.len(),
            width = method.width(frame.related_count()),
            path = path.display(),
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub split: SplitRatio,
    pub seed: u64,
}

impl Cell {
    fn stem(&self) -> String {
        let id = match &self.method {
            Method::External { name } => format!("ext-{name}"),
            m => m.id(),
        };
        format!("{id}_{}_s{}", self.split.to_string().replace(':', "-"), self.seed)
    }
}

/// Naive cells per split, then every (model method, split, seed), then externals.
pub fn plan(cfg: &Resolved, seeds: &[u64]) -> Vec<Cell> {
    let e = &cfg.raw.experiment;
    let mut cells: Vec<Cell> = e
        .splits
        .iter()
        .map(|&split| Cell {
            method: Method::NaiveRepeat,
            split,
            seed: 0,
        })
        .collect();
    for method in cfg.model_methods() {
        for &split in &e.splits {
            for &seed in seeds {
                cells.push(Cell {
                    method: method.clone(),
                    split,
                    seed,
                });
            }
        }
    }
    for x in &cfg.externals {
        cells.push(Cell {
            method: Method::External { name: x.name.clone() },
            split: x.split,
            seed: 0,
        });
    }
    cells
}

fn threads(cfg: &Resolved, cells: usize) -> usize {
    let cap = std::thread::available_parallelism().map_or(1, |n| n.get());
    match cfg.raw.experiment.parallelism {
        0 => cells.clamp(1, cap),
        n => n,
    }
}

fn cell_paths(cfg: &Resolved, cell: &Cell) -> (PathBuf, PathBuf) {
    let stem = cell.stem();
    (
        cfg.out_dir.join("cells").join(format!("{stem}.csv")),
        cfg.out_dir.join("checkpoints").join(format!("{stem}.ckpt")),
    )
}

fn cached(result_path: &Path, ckpt_path: &Path, needs_ckpt: bool, hash: &str) -> Option<ExperimentResult> {
    let r = read_result(result_path).ok()?;
    if r.config_hash != hash {
        return None;
    }
    if needs_ckpt {
        let (header, _) = read_checkpoint(ckpt_path).ok()?;
        if header.config_hash != hash {
            return None;
        }
    }
    Some(r)
}

fn run_cell(cfg: &Resolved, frame: &MarketFrame, cell: &Cell) -> Result<ExperimentResult, CliError> {
    let settings = cfg.raw.settings(Execution::Parallel);
    let (result_path, ckpt_path) = cell_paths(cfg, cell);
    if let Method::External { name } = &cell.method {
        let source = cfg.externals.iter().find(|x| &x.name == name && x.split == cell.split).expect("planned");
        let r = import_external(&source.path, name, frame, cfg.raw.window, cell.split, &run_hash(cfg))?;
        write_result(&result_path, &r)?;
        log!("cell", cell = cell.stem(), status = "imported", test_mse = r.test_mse, naive_mse = r.naive_mse);
        return Ok(r);
    }
    let hash = cell_config_hash(frame, &cell.method, cell.split, cell.seed, &settings);
    let needs_ckpt = matches!(cell.method, Method::Model { .. });
    if let Some(r) = cached(&result_path, &ckpt_path, needs_ckpt, &hash) {
        log!("cell", cell = cell.stem(), status = "skipped", config_hash = hash);
        return Ok(r);
    }
    let (r, params) = run_experiment(frame, &cell.method, cell.split, cell.seed, &settings)?;
    if let Some(p) = params {
        write_checkpoint(&ckpt_path, &p, cell.seed, &hash)?;
    }
    write_result(&result_path, &r)?;
    log!(
        "cell",
        cell = cell.stem(),
        status = "done",
        test_mse = r.test_mse,
        naive_mse = r.naive_mse,
        config_hash = hash,
    );
    Ok(r)
}

pub fn run(cfg: &Resolved, seeds: &[u64], dry_run: bool) -> Result<(), CliError> {
    let cells = plan(cfg, seeds);
    if dry_run {
        for c in &cells {
            let (path, _) = cell_paths(cfg, c);
            log!("plan", cell = c.stem(), method = c.method, split = c.split, seed = c.seed, path = path.display());
        }
        log!("plan", cells = cells.len(), threads = threads(cfg, cells.len()), dry_run = true);
        return Ok(());
    }
    let frame = ingest(cfg)?;
    create_dir(&cfg.out_dir.join("cells"))?;
    create_dir(&cfg.out_dir.join("checkpoints"))?;
    let workers = threads(cfg, cells.len());
    log!("run", cells = cells.len(), threads = workers);
    let results = with_threads(workers, || {
        Execution::Parallel.try_map(&cells, |c| run_cell(cfg, &frame, c))
    })?;
    write_report(cfg, &frame, &results)
}

fn write_report(cfg: &Resolved, frame: &MarketFrame, results: &[ExperimentResult]) -> Result<(), CliError> {
    let files = mse_report(results, frame, cfg.raw.window, &cfg.out_dir.join("report"), &run_hash(cfg))?;
    for row in leadlag::eval::aggregate(results) {
        log!(
            "aggregate",
            method = row.method,
            split = row.split,
            seeds = row.seeds,
            mse_e3 = format!("{:.3}", row.mean_mse * 1e3),
            naive_mse_e3 = format!("{:.3}", row.naive_mse * 1e3),
            beats_naive = row.beats_naive,
            best = row.best,
        );
    }
    log!("report", table = files.table.display(), summary = files.summary.display(), plots = files.plots.len());
    Ok(())
}

pub fn report(cfg: &Resolved, seeds: &[u64]) -> Result<(), CliError> {
    let frame = load_frame(cfg)?;
    let mut results = Vec::new();
    let mut missing = Vec::new();
    for c in plan(cfg, seeds) {
        let (path, _) = cell_paths(cfg, &c);
        match read_result(&path) {
            Ok(r) => results.push(r),
            Err(_) => missing.push(c.stem()),
        }
    }
    if !missing.is_empty() {
        log!("report", missing = missing.len(), first_missing = missing[0]);
    }
    if results.is_empty() {
        return Err(CliError::Config(format!("no completed cells under {}", cfg.out_dir.join("cells").display())));
    }
    write_report(cfg, &frame, &results)
}

pub fn sweep(cfg: &Resolved, seeds: &[u64]) -> Result<(), CliError> {
    let frame = ingest(cfg)?;
    let e = &cfg.raw.experiment;
    let settings = cfg.raw.settings(Execution::Parallel);
    let workers = threads(cfg, e.sweep_n.len() * seeds.len());
    let rows = with_threads(workers, || {
        lvk_sweep(&frame, &e.sweep_n, seeds, cfg.sweep_architecture, e.sweep_split, &settings)
    })?;
    let path = cfg.out_dir.join("sweep.csv");
    write_sweep(&path, &rows, &run_hash(cfg))?;
    for r in &rows {
        log!(
            "sweep",
            n = r.n,
            mse_e3 = format!("{:.3}", r.mean_mse * 1e3),
            std_e3 = format!("{:.3}", r.std_mse * 1e3),
            naive_mse_e3 = format!("{:.3}", r.naive_mse * 1e3),
        );
    }
    log!("sweep", rows = rows.len(), path = path.display());
    Ok(())
}
