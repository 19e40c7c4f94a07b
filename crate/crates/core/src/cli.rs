//! Command-line surface: `synth`, `import`, `train`, `eval`, `predict`,
//! `analyze`, `bench`.
//!
//! Exit codes: 0 success, 2 usage or configuration problem, 3 runtime failure.
//! Results go to stdout; logs go to stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    approx_entropy_default, autocorrelation, import_tia_tsv, make_dataset, patch_aggregate_series,
    spatial_correlation_map, synth_grid, GridSeries, ImportOptions, NormStats, NormalizedGrid, Scenario,
    Split, SplitFractions,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_exports, EvalOptions, Forecaster};
use crate::model::{build_model, preset, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{load_checkpoint, save_checkpoint, write_history_csv, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training(_) | Error::GradCheck(_) => EXIT_RUNTIME,
        Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

const MODEL_ALIASES: [&str; 7] = ["b", "a", "l", "f", "r", "n", "tau"];
const DATA_KEYS: [&str; 8] = [
    "data",
    "feature",
    "train_frac",
    "val_frac",
    "train_stride",
    "val_stride",
    "val_subsample",
    "out",
];

/// Resolved `key=value` run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub feature: Option<String>,
    pub fractions: SplitFractions,
    pub train_stride: usize,
    pub val_stride: usize,
    /// keep every k-th validation sample
    pub val_subsample: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            feature: None,
            fractions: SplitFractions::default(),
            train_stride: 6,
            val_stride: 6,
            val_subsample: 1,
            out: PathBuf::from("run"),
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{raw}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies a preset (wherever it appears) and then every other pair in order.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        if let Some((_, name)) = pairs.iter().rev().find(|(k, _)| k == "preset") {
            c.model = preset(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
            c.preset = Some(name.clone());
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{value}'")))
        };
        let frac = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
        };
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "feature" => self.feature = Some(value.to_string()),
            "train_frac" => self.fractions.train = frac()?,
            "val_frac" => self.fractions.val = frac()?,
            "train_stride" => self.train_stride = num()?,
            "val_stride" => self.val_stride = num()?,
            "val_subsample" => self.val_subsample = num()?,
            "out" => self.out = PathBuf::from(value),
            k if TrainConfig::KEYS.contains(&k) => self.train.set(k, value)?,
            k if ModelConfig::KEYS.contains(&k) || MODEL_ALIASES.contains(&k) => self.model.set(k, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let f = self.fractions;
        if !(f.train > 0.0 && f.val > 0.0 && f.train + f.val < 1.0) {
            return Err(Error::Config(format!(
                "split fractions train={} val={} must be positive and leave a test span",
                f.train, f.val
            )));
        }
        if self.train_stride == 0 || self.val_stride == 0 || self.val_subsample == 0 {
            return Err(Error::Config("strides and val_subsample must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(p) = &self.preset {
            lines.push(format!("preset={p}"));
        }
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            lines.push(format!("{k}={v}"));
        }
        if let Some(d) = &self.data {
            lines.push(format!("data={}", d.display()));
        }
        if let Some(f) = &self.feature {
            lines.push(format!("feature={f}"));
        }
        lines.push(format!("train_frac={}", self.fractions.train));
        lines.push(format!("val_frac={}", self.fractions.val));
        lines.push(format!("train_stride={}", self.train_stride));
        lines.push(format!("val_stride={}", self.val_stride));
        lines.push(format!("val_subsample={}", self.val_subsample));
        lines.push(format!("out={}", self.out.display()));
        lines.join("\n") + "\n"
    }

    pub fn keys() -> Vec<&'static str> {
        let mut k = vec!["preset"];
        k.extend(ModelConfig::KEYS);
        k.extend(MODEL_ALIASES);
        k.extend(TrainConfig::KEYS);
        k.extend(DATA_KEYS);
        k
    }
}

#[derive(Parser, Debug)]
#[command(name = "stn", version, about = "Spatiotemporal grid traffic forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic grid series.
    Synth(SynthArgs),
    /// Build a grid series from telecom activity TSV files.
    Import(ImportArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a grid split.
    Eval(EvalArgs),
    /// Forecast one cell.
    Predict(PredictArgs),
    /// Regularity and correlation statistics of a grid.
    Analyze(AnalyzeArgs),
    /// Parameter/MAC counts and inference latency.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// key=value scenario file
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// scenario override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// TSV file or directory of TSV files
    #[arg(long)]
    pub tsv: PathBuf,
    /// grid size as ROWSxCOLS
    #[arg(long, default_value = "100x100")]
    pub dims: String,
    /// feature name, or "all" for the five activity columns
    #[arg(long, default_value = "internet")]
    pub feature: String,
    #[arg(long, default_value_t = 600)]
    pub interval: u32,
    #[arg(long, default_value_t = 0.01)]
    pub max_malformed: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// continue from a checkpoint; only training keys may be overridden
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// rollout length of the per-step table
    #[arg(long)]
    pub autoregressive: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub max_origins: Option<usize>,
    /// fit normalization on this grid's training span instead of using the checkpoint's
    #[arg(long)]
    pub refit_stats: bool,
    #[arg(long)]
    pub feature: Option<String>,
    /// export directory
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// cell as I,J
    #[arg(long)]
    pub cell: String,
    /// index of the last observed frame
    #[arg(long)]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long)]
    pub refit_stats: bool,
    #[arg(long)]
    pub feature: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// cell as I,J
    #[arg(long)]
    pub cell: String,
    /// neighbourhood radius of the aggregated series
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
    #[arg(long)]
    pub feature: Option<String>,
    /// also write spatial_correlation.csv here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// full-grid size as ROWSxCOLS
    #[arg(long, default_value = "100x100")]
    pub grid: String,
}

fn parse_cell(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("cell must be I,J, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("dims must be ROWSxCOLS, got '{s}'"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let d = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if d.0 == 0 || d.1 == 0 {
        return Err(bad());
    }
    Ok(d)
}

fn split_set(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("{}: file not found", path.display())),
        _ => Error::Io(e),
    })
}

fn load_grid(path: &Path) -> Result<GridSeries> {
    if !path.exists() {
        return Err(Error::Config(format!("{}: file not found", path.display())));
    }
    GridSeries::load(path)
}

fn feature_of(grid: &GridSeries, name: Option<&str>) -> Result<usize> {
    match name {
        Some(n) => grid.feature_index(n),
        None => Ok(grid.feature_index("internet").unwrap_or(0)),
    }
}

fn check_cell(grid: &GridSeries, (i, j): (usize, usize)) -> Result<()> {
    let (_, ni, nj, _) = grid.dims();
    if i >= ni || j >= nj {
        return Err(Error::Range(format!("cell ({i},{j}) outside {ni}×{nj} grid")));
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let mut s = Scenario::default();
    let mut pairs = match &a.scenario {
        Some(p) => parse_pairs(&read_text(p)?)?,
        None => Vec::new(),
    };
    for kv in &a.sets {
        pairs.push(split_set(kv)?);
    }
    for (k, v) in &pairs {
        s.set(k, v)?;
    }
    let grid = synth_grid(&s, a.seed)?;
    grid.save(&a.out)?;
    let (t, i, j, f) = grid.dims();
    Ok(format!("T={t} I={i} J={j} F={f}\n"))
}

pub fn cmd_import(a: &ImportArgs) -> Result<String> {
    let (rows, cols) = parse_dims(&a.dims)?;
    let opts = ImportOptions {
        rows,
        cols,
        interval: a.interval,
        feature: (!a.feature.eq_ignore_ascii_case("all")).then(|| a.feature.clone()),
        max_malformed: a.max_malformed,
    };
    if !a.tsv.exists() {
        return Err(Error::Ingest(format!("{}: no such file or directory", a.tsv.display())));
    }
    let (grid, rep) = import_tia_tsv(&a.tsv, &opts)?;
    grid.save(&a.out)?;
    let (t, i, j, f) = grid.dims();
    Ok(format!(
        "T={t} I={i} J={j} F={f}\nfiles={} rows={} dropped={} populated_cells={}\n",
        rep.files, rep.rows, rep.dropped, rep.populated_cells
    ))
}

/// Outcome of `train` as printed lines, or the path of the last good
/// checkpoint when training diverged.
pub fn cmd_train(a: &TrainArgs) -> std::result::Result<String, (Error, Option<PathBuf>)> {
    train_inner(a).map_err(|e| (e, None)).and_then(|r| r)
}

type TrainResult = std::result::Result<String, (Error, Option<PathBuf>)>;

fn train_inner(a: &TrainArgs) -> Result<TrainResult> {
    let mut pairs = match &a.config {
        Some(p) => parse_pairs(&read_text(p)?)?,
        None => Vec::new(),
    };
    for kv in &a.sets {
        pairs.push(split_set(kv)?);
    }

    let (cfg, mut trainer) = match &a.resume {
        Some(ckpt) => {
            let t = load_checkpoint(ckpt)?;
            let text = t
                .meta("run_config")
                .ok_or_else(|| Error::Checkpoint("checkpoint has no run configuration".into()))?
                .replace('\u{1f}', "\n");
            let mut base = parse_pairs(&text)?;
            for (k, v) in &pairs {
                if !TrainConfig::KEYS.contains(&k.as_str()) && k != "out" {
                    return Err(Error::Config(format!("'{k}' cannot change when resuming")));
                }
                base.push((k.clone(), v.clone()));
            }
            let cfg = RunConfig::from_pairs(&base)?;
            let mut t = t;
            t.config = cfg.train.clone();
            (cfg, Some(t))
        }
        None => (RunConfig::from_pairs(&pairs)?, None),
    };

    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("config needs data=<grid file>".into()))?;
    let grid = load_grid(data)?;
    let feature = feature_of(&grid, cfg.feature.as_deref())?;
    let t_len = grid.dims().0;
    let m = &cfg.model;
    let stats = match &trainer {
        Some(t) => t.stats.clone(),
        None => NormStats::fit(&grid, feature, cfg.fractions.range(Split::Train, t_len))?,
    };
    let train_ds = make_dataset(
        &grid,
        feature,
        &stats,
        cfg.fractions,
        Split::Train,
        cfg.train_stride,
        m.radius,
        m.steps,
        m.horizon,
    )?;
    let val_ds = make_dataset(
        &grid,
        feature,
        &stats,
        cfg.fractions,
        Split::Val,
        cfg.val_stride,
        m.radius,
        m.steps,
        m.horizon,
    )?
    .subsample(cfg.val_subsample);

    std::fs::create_dir_all(&cfg.out)?;
    let resolved = cfg.to_text();
    std::fs::write(cfg.out.join("config.resolved"), &resolved)?;

    let mut trainer = match trainer.take() {
        Some(t) => t,
        None => {
            let mut t = Trainer::new(build_model(m, cfg.train.seed)?, cfg.train.clone(), stats)?;
            t.set_meta("feature", grid.feature_names[feature].clone());
            t
        }
    };
    trainer.set_meta("run_config", resolved.trim_end().replace('\n', "\u{1f}"));
    log::info!(
        "{} params={} macs={} train_samples={} val_samples={}",
        m.variant,
        trainer.model.count_params(),
        trainer.model.count_macs(),
        train_ds.len(),
        val_ds.len()
    );

    let out = cfg.out.clone();
    let every = cfg.train.checkpoint_every;
    let history_path = out.join("history.csv");
    let result = trainer.fit(&train_ds, &val_ds, |t| {
        write_history_csv(&history_path, &t.history)?;
        if every > 0 && t.epoch % every == 0 {
            save_checkpoint(t, out.join(format!("epoch_{:03}.stnc", t.epoch)))?;
        }
        save_checkpoint(t, out.join("last.stnc"))
    });
    match result {
        Ok(summary) => {
            write_history_csv(&history_path, &trainer.history)?;
            save_checkpoint(&trainer, out.join("last.stnc"))?;
            if let Some(best) = &summary.best {
                save_checkpoint(best, out.join("best.stnc"))?;
            }
            Ok(Ok(format!(
                "epochs={} best_epoch={} best_val={} final_val={} gap={} stopped_early={}\ncheckpoint={}\n",
                trainer.epoch,
                summary.best_epoch,
                summary.best_val,
                summary.final_val,
                summary.gap,
                summary.stopped_early,
                out.join("last.stnc").display()
            )))
        }
        Err(e @ Error::Training(_)) => {
            let path = out.join("last_good.stnc");
            save_checkpoint(&trainer, &path)?;
            Ok(Err((e, Some(path))))
        }
        Err(e) => Err(e),
    }
}

fn model_stats(ckpt: &Trainer, grid: &GridSeries, feature: usize, refit: bool) -> Result<NormStats> {
    if refit {
        let fractions = SplitFractions::default();
        return NormStats::fit(grid, feature, fractions.range(Split::Train, grid.dims().0));
    }
    ckpt.stats.check_grid(grid).map_err(|e| {
        Error::Config(format!("{e}; pass --refit-stats to normalize with this grid's training span"))
    })?;
    Ok(ckpt.stats.clone())
}

fn checkpoint_feature(ckpt: &Trainer, grid: &GridSeries, explicit: Option<&str>) -> Result<usize> {
    match explicit.or(ckpt.meta("feature")) {
        Some(n) => grid.feature_index(n),
        None => feature_of(grid, None),
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let grid = load_grid(&a.data)?;
    let feature = checkpoint_feature(&ckpt, &grid, a.feature.as_deref())?;
    let stats = model_stats(&ckpt, &grid, feature, a.refit_stats)?;
    let opts = EvalOptions {
        split: a.split.parse()?,
        stride: a.stride,
        max_origins: a.max_origins,
        autoregressive: a.autoregressive,
        ..EvalOptions::default()
    };
    if a.autoregressive == Some(0) {
        return Err(Error::Config("--autoregressive needs at least one step".into()));
    }
    let ev = evaluate(&ckpt.model, &grid, feature, &stats, &opts)?;
    let files = write_exports(&a.out, &ev)?;
    log::info!("wrote {} files to {}", files.len(), a.out.display());
    serde_json::to_string_pretty(&ev.report)
        .map(|s| s + "\n")
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<String> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let grid = load_grid(&a.data)?;
    let cell = parse_cell(&a.cell)?;
    check_cell(&grid, cell)?;
    let feature = checkpoint_feature(&ckpt, &grid, a.feature.as_deref())?;
    let stats = model_stats(&ckpt, &grid, feature, a.refit_stats)?;
    let fc = Forecaster::new(&ckpt.model, &grid, feature, &stats)?;
    let frames = fc.rollout(a.t, a.steps, Some(cell))?;
    let t_len = grid.dims().0;
    let mut out = String::from("step,t,forecast,actual\n");
    for (k, f) in frames.iter().enumerate() {
        let t = a.t + 1 + k;
        let actual = if t < t_len {
            grid.at(t, cell.0, cell.1, feature).to_string()
        } else {
            String::new()
        };
        out.push_str(&format!("{},{t},{},{actual}\n", k + 1, f.get(&[cell.0, cell.1])));
    }
    Ok(out)
}

pub const AUTOCORR_LAGS: [usize; 6] = [1, 6, 36, 72, 144, 1008];

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String> {
    let grid = load_grid(&a.data)?;
    let cell = parse_cell(&a.cell)?;
    check_cell(&grid, cell)?;
    let feature = feature_of(&grid, a.feature.as_deref())?;
    let series: Vec<f64> = grid
        .cell_series(cell.0, cell.1, feature)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let agg = patch_aggregate_series(&grid, feature, cell, a.radius)?;
    let mut out = format!(
        "apen_cell={}\napen_patch={}\n\nlag,autocorrelation\n",
        approx_entropy_default(&series)?,
        approx_entropy_default(&agg)?
    );
    for lag in AUTOCORR_LAGS.iter().filter(|&&l| l < series.len()) {
        out.push_str(&format!("{lag},{}\n", autocorrelation(&series, *lag)));
    }
    let corr = spatial_correlation_map(&grid, feature, cell)?;
    let nj = grid.dims().2;
    let csv: String = corr
        .data()
        .chunks(nj)
        .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("spatial_correlation.csv"), &csv)?;
    }
    out.push_str("\nspatial_correlation\n");
    out.push_str(&csv);
    Ok(out)
}

fn median_ms(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn cmd_bench(a: &BenchArgs) -> Result<String> {
    if a.reps == 0 {
        return Err(Error::Config("--reps must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = &ckpt.model;
    let (rows, cols) = parse_dims(&a.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = model.window_shape(1);
    let window = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
    let norm = NormalizedGrid {
        len: model.config.steps,
        rows,
        cols,
        data: (0..model.config.steps * rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
    };
    let cells: Vec<(usize, usize)> = (0..rows * cols).map(|k| (k / cols, k % cols)).collect();
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<Vec<f64>> {
        f()?;
        (0..a.reps)
            .map(|_| {
                let s = Instant::now();
                f()?;
                Ok(s.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    };
    let cell_ms = time(&mut || model.predict(&window).map(|_| ()))?;
    let grid_ms = time(&mut || {
        Forecaster::predict_cells(&norm, model, model.config.steps - 1, &cells).map(|_| ())
    })?;
    Ok(format!(
        "variant={}\nparams={}\nmacs={}\nreps={}\nper_cell_ms={}\nfull_grid_ms={}\ncells={}\n",
        model.config.variant,
        model.count_params(),
        model.count_macs(),
        a.reps,
        median_ms(cell_ms),
        median_ms(grid_ms),
        rows * cols
    ))
}

/// Runs a parsed command, printing results to stdout; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Import(a) => cmd_import(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => match cmd_train(a) {
            Ok(s) => Ok(s),
            Err((e, Some(path))) => {
                eprintln!("error: {e}");
                eprintln!("last good checkpoint: {}", path.display());
                return EXIT_RUNTIME;
            }
            Err((e, None)) => Err(e),
        },
    };
    match outcome {
        Ok(s) => {
            print!("{s}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trip_and_unknown_keys() {
        let pairs = parse_pairs("# comment\nhidden=16\npreset=table2-best\nlr=0.001\ndata=g.bin\n").unwrap();
        let c = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!(c.model.hidden, 16);
        assert_eq!(c.model.slstm_heads, 4);
        assert_eq!(c.train.lr, 0.001);
        let back = RunConfig::from_pairs(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
        let err = RunConfig::from_pairs(&parse_pairs("colour=red").unwrap()).unwrap_err();
        assert!(err.to_string().contains("colour"));
        assert_eq!(exit_code(&err), EXIT_USAGE);
    }

    #[test]
    fn preset_resolves_to_table_row() {
        let c = RunConfig::from_pairs(&parse_pairs("preset=table2-best").unwrap()).unwrap();
        let m = &c.model;
        assert_eq!(
            (m.hidden, m.stn_blocks, m.slstm_heads, m.slstm_layers, m.fusion_heads),
            (64, 2, 4, 2, 8)
        );
    }

    #[test]
    fn cell_and_dims_parsing() {
        assert_eq!(parse_cell("3, 4").unwrap(), (3, 4));
        assert!(parse_cell("3").is_err());
        assert_eq!(parse_dims("100x80").unwrap(), (100, 80));
        assert!(parse_dims("0x5").is_err());
    }
}
