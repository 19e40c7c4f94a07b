//! Metrics, one-step and autoregressive forecasting, baselines and the
//! error-analysis report.

mod analysis;
mod forecast;
mod metrics;

pub use analysis::{
    error_analysis, quantile_sorted, rank_cells, rank_clusters, skewness, CellScore, ClusterScore,
    DeviationStats, EcdfPoint, HistBin, Quantile, ECDF_POINTS, HISTOGRAM_BINS, QUANTILES,
};
pub use forecast::{
    autoregressive_forecast, baseline_persistence, baseline_seasonal, predict_grid, Forecaster,
};
pub use metrics::{mae, mse, pearson, r2, rmse, ssim, ssim_with, SSIM_WINDOW};

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::{GridSeries, NormStats, Split, SplitFractions};
use crate::error::{Error, Result};
use crate::model::StnModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub split: Split,
    pub fractions: SplitFractions,
    pub stride: usize,
    /// evenly thin the forecast origins down to at most this many
    pub max_origins: Option<usize>,
    /// rollout length for the per-step table
    pub autoregressive: Option<usize>,
    pub limit: f64,
    pub band: f64,
    pub seasonal_period: usize,
    pub cluster_side: usize,
    pub top_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            fractions: SplitFractions::default(),
            stride: 1,
            max_origins: None,
            autoregressive: None,
            limit: 100.0,
            band: 1.2,
            seasonal_period: 144,
            cluster_side: 3,
            top_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the actual values are constant
    pub r2: Option<f64>,
    /// per-frame SSIM averaged over frames; `None` for grids smaller than the window
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedMetrics {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub metrics: Metrics,
    /// median over cells of the per-cell MAE at this step
    pub median_cell_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub variant: String,
    pub split: String,
    pub rows: usize,
    pub cols: usize,
    pub origins: usize,
    pub samples: usize,
    pub aggregate: Metrics,
    pub baselines: Vec<NamedMetrics>,
    pub deviation: DeviationStats,
    pub best_cells: Vec<CellScore>,
    pub worst_cells: Vec<CellScore>,
    pub best_clusters: Vec<ClusterScore>,
    pub worst_clusters: Vec<ClusterScore>,
    pub autoregressive: Vec<StepMetrics>,
    #[serde(skip)]
    pub mae_map: Vec<f64>,
    #[serde(skip)]
    pub mse_map: Vec<f64>,
    /// NaN for cells whose actual values are constant
    #[serde(skip)]
    pub r2_map: Vec<f64>,
}

/// Report plus the paired predictions behind it, `[origin][cell]` flattened.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub origins: Vec<usize>,
    pub preds: Vec<f64>,
    pub actuals: Vec<f64>,
}

/// Forecast origins `t_end` inside the split span that leave room for
/// `n` inputs and `ahead` targets.
pub fn eval_origins(t: usize, opts: &EvalOptions, n: usize, ahead: usize) -> Result<Vec<usize>> {
    let span = opts.fractions.range(opts.split, t);
    if opts.stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if span.len() < n + ahead {
        return Err(Error::Config(format!(
            "{:?} span of {} frames cannot hold {n} inputs + {ahead} targets",
            opts.split,
            span.len()
        )));
    }
    let all: Vec<usize> = (span.start + n - 1..=span.end - 1 - ahead).step_by(opts.stride).collect();
    Ok(match opts.max_origins {
        Some(m) if m > 0 && all.len() > m => (0..m).map(|k| all[k * all.len() / m]).collect(),
        _ => all,
    })
}

fn frame_f64(t: &Tensor<f32>) -> Tensor<f64> {
    t.cast()
}

fn ssim_opt(pred: &Tensor<f32>, actual: &Tensor<f32>) -> Option<f64> {
    let s = actual.shape();
    if s[0] < SSIM_WINDOW || s[1] < SSIM_WINDOW {
        return None;
    }
    ssim(&frame_f64(pred), &frame_f64(actual)).ok()
}

/// Pooled metrics over frames; SSIM averaged per frame.
pub fn frame_metrics(preds: &[Tensor<f32>], actuals: &[Tensor<f32>]) -> Result<Metrics> {
    let p: Vec<f64> = preds.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    let a: Vec<f64> = actuals.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    let ss: Vec<f64> = preds.iter().zip(actuals).filter_map(|(p, a)| ssim_opt(p, a)).collect();
    Ok(Metrics {
        mae: mae(&p, &a)?,
        rmse: rmse(&p, &a)?,
        r2: r2(&p, &a).ok(),
        ssim: if ss.len() == preds.len() && !ss.is_empty() {
            Some(ss.iter().sum::<f64>() / ss.len() as f64)
        } else {
            None
        },
    })
}

fn per_cell(preds: &[Tensor<f32>], actuals: &[Tensor<f32>], cells: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mae_map = vec![0.0; cells];
    let mut mse_map = vec![0.0; cells];
    let mut r2_map = vec![f64::NAN; cells];
    let k = preds.len() as f64;
    for c in 0..cells {
        let p: Vec<f64> = preds.iter().map(|f| f.data()[c] as f64).collect();
        let a: Vec<f64> = actuals.iter().map(|f| f.data()[c] as f64).collect();
        mae_map[c] = p.iter().zip(&a).map(|(x, y)| (y - x).abs()).sum::<f64>() / k;
        mse_map[c] = p.iter().zip(&a).map(|(x, y)| (y - x).powi(2)).sum::<f64>() / k;
        if let Ok(v) = r2(&p, &a) {
            r2_map[c] = v;
        }
    }
    (mae_map, mse_map, r2_map)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// One-step evaluation over the split's forecast origins, the two naive
/// baselines on the same origins, and optionally the autoregressive table.
pub fn evaluate(
    model: &StnModel<f32>,
    grid: &GridSeries,
    feature: usize,
    stats: &NormStats,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let (t, ni, nj, _) = grid.dims();
    let n = model.config.steps;
    let ahead = opts.autoregressive.unwrap_or(1).max(1);
    let origins = eval_origins(t, opts, n, ahead)?;
    let fc = Forecaster::new(model, grid, feature, stats)?;
    let mut preds = Vec::with_capacity(origins.len());
    let mut actuals = Vec::with_capacity(origins.len());
    for &te in &origins {
        preds.push(fc.predict_frame(te)?);
        actuals.push(grid.frame(te + 1, feature));
    }
    let aggregate = frame_metrics(&preds, &actuals)?;

    let mut baselines = vec![NamedMetrics {
        name: "persistence".into(),
        metrics: frame_metrics(
            &origins
                .iter()
                .map(|&te| baseline_persistence(grid, feature, te))
                .collect::<Result<Vec<_>>>()?,
            &actuals,
        )?,
    }];
    if origins.iter().all(|&te| te + 1 >= opts.seasonal_period) {
        baselines.push(NamedMetrics {
            name: format!("seasonal-{}", opts.seasonal_period),
            metrics: frame_metrics(
                &origins
                    .iter()
                    .map(|&te| baseline_seasonal(grid, feature, te, opts.seasonal_period))
                    .collect::<Result<Vec<_>>>()?,
                &actuals,
            )?,
        });
    }

    let flat_p: Vec<f64> = preds.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    let flat_a: Vec<f64> = actuals.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    let deviation = error_analysis(&flat_p, &flat_a, opts.limit, opts.band)?;
    let (mae_map, mse_map, r2_map) = per_cell(&preds, &actuals, ni * nj);
    let (best_cells, worst_cells) = rank_cells(&mae_map, nj, opts.top_k);
    let (best_clusters, worst_clusters) = rank_clusters(&mae_map, ni, nj, opts.cluster_side, opts.top_k);

    let mut autoregressive = Vec::new();
    if let Some(steps) = opts.autoregressive {
        let mut by_step: Vec<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> = vec![(Vec::new(), Vec::new()); steps];
        for &te in &origins {
            let frames = fc.rollout(te, steps, None)?;
            for (k, f) in frames.into_iter().enumerate() {
                by_step[k].0.push(f);
                by_step[k].1.push(grid.frame(te + 1 + k, feature));
            }
        }
        for (k, (p, a)) in by_step.iter().enumerate() {
            let (cell_mae, _, _) = per_cell(p, a, ni * nj);
            autoregressive.push(StepMetrics {
                step: k + 1,
                metrics: frame_metrics(p, a)?,
                median_cell_mae: median(cell_mae),
            });
        }
    }

    let report = EvalReport {
        variant: model.config.variant.to_string(),
        split: format!("{:?}", opts.split).to_lowercase(),
        rows: ni,
        cols: nj,
        origins: origins.len(),
        samples: flat_p.len(),
        aggregate,
        baselines,
        deviation,
        best_cells,
        worst_cells,
        best_clusters,
        worst_clusters,
        autoregressive,
        mae_map,
        mse_map,
        r2_map,
    };
    Ok(Evaluation {
        report,
        origins,
        preds: flat_p,
        actuals: flat_a,
    })
}

const SCATTER_POINTS: usize = 5000;

fn write_matrix(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and the plot-data CSVs into `dir`; returns the file names.
pub fn write_exports(dir: impl AsRef<Path>, ev: &Evaluation) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let r = &ev.report;
    let cells = r.rows * r.cols;
    let mut files = Vec::new();
    let mut out = |name: &str| {
        files.push(name.to_string());
        dir.join(name)
    };

    let json = serde_json::to_string_pretty(r).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out("report.json"), json)?;
    write_matrix(&out("heatmap_mae.csv"), &r.mae_map, r.cols)?;
    let rmse_map: Vec<f64> = r.mse_map.iter().map(|v| v.sqrt()).collect();
    write_matrix(&out("heatmap_rmse.csv"), &rmse_map, r.cols)?;
    write_matrix(&out("heatmap_r2.csv"), &r.r2_map, r.cols)?;
    write_rows(
        &out("ecdf.csv"),
        "deviation,cdf",
        r.deviation.ecdf.iter().map(|p| format!("{},{}", p.deviation, p.cdf)),
    )?;
    write_rows(
        &out("histogram.csv"),
        "lo,hi,count",
        r.deviation.histogram.iter().map(|b| format!("{},{},{}", b.lo, b.hi, b.count)),
    )?;
    let every = ev.preds.len().div_ceil(SCATTER_POINTS).max(1);
    write_rows(
        &out("scatter.csv"),
        "actual,pred",
        ev.preds
            .iter()
            .zip(&ev.actuals)
            .step_by(every)
            .map(|(p, a)| format!("{a},{p}")),
    )?;
    write_matrix(&out("snapshot_actual.csv"), &ev.actuals[..cells], r.cols)?;
    write_matrix(&out("snapshot_pred.csv"), &ev.preds[..cells], r.cols)?;

    let mut series = Vec::new();
    for (role, list) in [("best", &r.best_cells), ("worst", &r.worst_cells)] {
        if let Some(c) = list.first() {
            let k = c.i * r.cols + c.j;
            for (o, &te) in ev.origins.iter().enumerate() {
                series.push(format!(
                    "{role},{},{},{},{},{}",
                    c.i,
                    c.j,
                    te + 1,
                    ev.actuals[o * cells + k],
                    ev.preds[o * cells + k]
                ));
            }
        }
    }
    write_rows(&out("cell_series.csv"), "role,i,j,t,actual,pred", series)?;

    let mut clusters = Vec::new();
    for (role, list) in [("best", &r.best_clusters), ("worst", &r.worst_clusters)] {
        for (rank, c) in list.iter().enumerate() {
            for v in &c.cell_mae {
                clusters.push(format!("{role},{},{},{},{v}", rank + 1, c.i0, c.j0));
            }
        }
    }
    write_rows(&out("clusters.csv"), "role,rank,i0,j0,cell_mae", clusters)?;

    if !r.autoregressive.is_empty() {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        write_rows(
            &out("autoregressive.csv"),
            "step,mae,rmse,r2,ssim,median_cell_mae",
            r.autoregressive.iter().map(|s| {
                format!(
                    "{},{},{},{},{},{}",
                    s.step,
                    s.metrics.mae,
                    s.metrics.rmse,
                    opt(s.metrics.r2),
                    opt(s.metrics.ssim),
                    s.median_cell_mae
                )
            }),
        )?;
    }
    Ok(files)
}
