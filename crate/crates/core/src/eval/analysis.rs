use serde::Serialize;

use super::metrics::pearson;
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;
pub const ECDF_POINTS: usize = 200;
pub const QUANTILES: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantile {
    pub q: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdfPoint {
    pub deviation: f64,
    pub cdf: f64,
}

/// Distribution of deviations `d = actual − pred` (positive = underprediction).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationStats {
    pub count: usize,
    pub limit: f64,
    pub band: f64,
    pub mean: f64,
    pub skewness: f64,
    pub frac_beyond_limit: f64,
    pub frac_within_band: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<Quantile>,
    pub pearson_r: f64,
    pub histogram: Vec<HistBin>,
    pub ecdf: Vec<EcdfPoint>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Population skewness `m3 / m2^{3/2}`; 0 for constant input.
pub fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

pub fn error_analysis(preds: &[f64], actuals: &[f64], limit: f64, band: f64) -> Result<DeviationStats> {
    if preds.len() != actuals.len() {
        return Err(Error::Dimension(format!(
            "error analysis: {} predictions vs {} actuals",
            preds.len(),
            actuals.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("error analysis of an empty sample".into()));
    }
    let d: Vec<f64> = actuals.iter().zip(preds).map(|(a, p)| a - p).collect();
    let n = d.len() as f64;
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let bins = if max > min { HISTOGRAM_BINS } else { 1 };
    let width = (max - min) / bins as f64;
    let mut histogram: Vec<HistBin> = (0..bins)
        .map(|b| HistBin {
            lo: min + b as f64 * width,
            hi: if b + 1 == bins { max } else { min + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in &d {
        let b = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        histogram[b].count += 1;
    }
    let points = sorted.len().min(ECDF_POINTS);
    let ecdf = (0..points)
        .map(|k| {
            let idx = if points == 1 {
                sorted.len() - 1
            } else {
                k * (sorted.len() - 1) / (points - 1)
            };
            EcdfPoint {
                deviation: sorted[idx],
                cdf: (idx + 1) as f64 / n,
            }
        })
        .collect();
    Ok(DeviationStats {
        count: d.len(),
        limit,
        band,
        mean: d.iter().sum::<f64>() / n,
        skewness: skewness(&d),
        frac_beyond_limit: d.iter().filter(|v| v.abs() > limit).count() as f64 / n,
        frac_within_band: d.iter().filter(|v| v.abs() <= band).count() as f64 / n,
        min,
        max,
        quantiles: QUANTILES
            .iter()
            .map(|&q| Quantile {
                q,
                value: quantile_sorted(&sorted, q),
            })
            .collect(),
        pearson_r: pearson(preds, actuals)?,
        histogram,
        ecdf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellScore {
    pub i: usize,
    pub j: usize,
    pub mae: f64,
}

/// Non-overlapping `side × side` block of cells (clipped at the edge).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterScore {
    pub i0: usize,
    pub j0: usize,
    pub mae: f64,
    pub cell_mae: Vec<f64>,
}

/// `k` lowest- and highest-MAE cells of an `[I, J]` map, best first / worst first.
pub fn rank_cells(map: &[f64], cols: usize, k: usize) -> (Vec<CellScore>, Vec<CellScore>) {
    let mut cells: Vec<CellScore> = map
        .iter()
        .enumerate()
        .map(|(c, &mae)| CellScore {
            i: c / cols,
            j: c % cols,
            mae,
        })
        .collect();
    cells.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    let best = cells.iter().take(k).cloned().collect();
    let worst = cells.iter().rev().take(k).cloned().collect();
    (best, worst)
}

pub fn rank_clusters(map: &[f64], rows: usize, cols: usize, side: usize, k: usize) -> (Vec<ClusterScore>, Vec<ClusterScore>) {
    let side = side.max(1);
    let mut out = Vec::new();
    for i0 in (0..rows).step_by(side) {
        for j0 in (0..cols).step_by(side) {
            let cell_mae: Vec<f64> = (i0..(i0 + side).min(rows))
                .flat_map(|i| (j0..(j0 + side).min(cols)).map(move |j| map[i * cols + j]))
                .collect();
            let mae = cell_mae.iter().sum::<f64>() / cell_mae.len() as f64;
            out.push(ClusterScore { i0, j0, mae, cell_mae });
        }
    }
    out.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    let best = out.iter().take(k).cloned().collect();
    let worst = out.iter().rev().take(k).cloned().collect();
    (best, worst)
}
