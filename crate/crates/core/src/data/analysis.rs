use super::GridSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn phi(x: &[f64], m: usize, r: f64) -> f64 {
    let count = x.len() - m + 1;
    let mut total = 0.0;
    for i in 0..count {
        let matches = (0..count)
            .filter(|&j| (0..m).all(|k| (x[i + k] - x[j + k]).abs() <= r))
            .count();
        total += (matches as f64 / count as f64).ln();
    }
    total / count as f64
}

/// Approximate entropy `Φ_m − Φ_{m+1}`, Chebyshev distance, self-matches
/// included, absolute tolerance `r`.
pub fn approx_entropy(x: &[f64], m: usize, r: f64) -> Result<f64> {
    if m == 0 || x.len() <= m + 1 {
        return Err(Error::Range(format!(
            "approximate entropy needs m ≥ 1 and more than m+1 = {} points, got {}",
            m + 1,
            x.len()
        )));
    }
    Ok((phi(x, m, r) - phi(x, m + 1, r)).max(0.0))
}

/// `m = 2`, `r = 0.2·std` (population). Zero-variance series give 0.
pub fn approx_entropy_default(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let e = approx_entropy(x, 2, 0.2 * sd)?;
    Ok(if sd == 0.0 { 0.0 } else { e })
}

/// Sample autocorrelation at `lag` (biased estimator, population variance).
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum();
    cov / var
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Pearson correlation of every cell's series with the `center` series, `[I, J]`.
/// Zero-variance cells map to 0.
pub fn spatial_correlation_map(
    grid: &GridSeries,
    feature: usize,
    center: (usize, usize),
) -> Result<Tensor<f64>> {
    let (t, ni, nj, _) = grid.dims();
    if t < 3 {
        return Err(Error::Range(format!("correlation needs at least 3 frames, got {t}")));
    }
    if center.0 >= ni || center.1 >= nj {
        return Err(Error::Range(format!("cell {center:?} outside {ni}×{nj} grid")));
    }
    let series = |i, j| -> Vec<f64> {
        grid.cell_series(i, j, feature).iter().map(|&v| v as f64).collect()
    };
    let c = series(center.0, center.1);
    Ok(Tensor::from_fn(&[ni, nj], |k| pearson(&series(k / nj, k % nj), &c)))
}

/// Sum over the `(2r+1)²` neighbourhood (clipped at the grid edge) per frame.
pub fn patch_aggregate_series(
    grid: &GridSeries,
    feature: usize,
    center: (usize, usize),
    r: usize,
) -> Result<Vec<f64>> {
    let (t, ni, nj, _) = grid.dims();
    if center.0 >= ni || center.1 >= nj {
        return Err(Error::Range(format!("cell {center:?} outside {ni}×{nj} grid")));
    }
    let (i0, i1) = (center.0.saturating_sub(r), (center.0 + r).min(ni - 1));
    let (j0, j1) = (center.1.saturating_sub(r), (center.1 + r).min(nj - 1));
    Ok((0..t)
        .map(|tt| {
            (i0..=i1)
                .flat_map(|i| (j0..=j1).map(move |j| (i, j)))
                .map(|(i, j)| grid.at(tt, i, j, feature) as f64)
                .sum()
        })
        .collect())
}
