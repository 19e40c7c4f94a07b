use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 7;

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "metric inputs differ in length: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("metric of an empty sample".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (a - p).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    Ok(mse(pred, actual)?.sqrt())
}

/// `1 − SS_res / SS_tot`; undefined for a constant `actual`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Metric("R² undefined: actual values have zero variance".into()));
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation; 1 when the series are identical, 0 when exactly one
/// of them is constant or they are distinct constants.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(if x == y { 1.0 } else { 0.0 });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean SSIM of two `[I, J]` frames over every fully contained
/// `window × window` uniform window, with sample (N−1) covariances,
/// `C1 = (0.01·L)²` and `C2 = (0.03·L)²`.
pub fn ssim_with(a: &Tensor<f64>, b: &Tensor<f64>, window: usize, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::Dimension(format!(
            "ssim needs equal [I, J] frames, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ni, nj) = (a.shape()[0], a.shape()[1]);
    if window < 2 || ni < window || nj < window {
        return Err(Error::Metric(format!(
            "{ni}×{nj} frame is smaller than the {window}×{window} ssim window"
        )));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let np = (window * window) as f64;
    let cov_norm = np / (np - 1.0);
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=ni - window {
        for j0 in 0..=nj - window {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in i0..i0 + window {
                for j in j0..j0 + window {
                    let (p, q) = (x[i * nj + j], y[i * nj + j]);
                    sx += p;
                    sy += q;
                    sxx += p * p;
                    syy += q * q;
                    sxy += p * q;
                }
            }
            let (ux, uy) = (sx / np, sy / np);
            let vx = cov_norm * (sxx / np - ux * ux);
            let vy = cov_norm * (syy / np - uy * uy);
            let vxy = cov_norm * (sxy / np - ux * uy);
            let num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// [`ssim_with`] using a 7×7 window and the data range of `actual`
/// (1 when `actual` is constant).
pub fn ssim(pred: &Tensor<f64>, actual: &Tensor<f64>) -> Result<f64> {
    let (lo, hi) = actual
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    ssim_with(pred, actual, SSIM_WINDOW, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, -4.0]).unwrap(), 3.5);
        assert!((rmse(&[0.0, 0.0], &[3.0, -4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r2(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(r2(&[2.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(r2(&[1.0, 2.0], &[4.0, 4.0]), Err(Error::Metric(_))));
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[9, 8], |_| rng.gen_range(0.0..5.0));
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let (a, b, l) = (2.0, 3.5, 4.0);
        let c1 = (0.01f64 * l).powi(2);
        let s = ssim_with(&Tensor::full(&[7, 7], a), &Tensor::full(&[7, 7], b), 7, l).unwrap();
        assert!((s - (2.0 * a * b + c1) / (a * a + b * b + c1)).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[6, 9]), &Tensor::zeros(&[6, 9])).is_err());
    }
}
