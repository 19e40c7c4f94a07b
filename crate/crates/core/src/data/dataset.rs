use std::sync::Arc;

use super::GridSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviations below this normalize to zero.
pub const NORM_EPS: f64 = 1e-6;

/// `[n, 2r+1, 2r+1]` window ending at `t_end`, out-of-grid positions
/// replicated from the nearest edge cell.
pub fn extract_patch(
    grid: &GridSeries,
    feature: usize,
    i: usize,
    j: usize,
    t_end: usize,
    r: usize,
    n: usize,
) -> Result<Tensor<f32>> {
    let (t, ni, nj, _) = grid.dims();
    check_window(t, ni, nj, i, j, t_end, n)?;
    let side = 2 * r + 1;
    Ok(Tensor::from_fn(&[n, side, side], |k| {
        let (s, rest) = (k / (side * side), k % (side * side));
        let ii = clamp_offset(i, rest / side, r, ni);
        let jj = clamp_offset(j, rest % side, r, nj);
        grid.at(t_end + 1 - n + s, ii, jj, feature)
    }))
}

#[inline]
fn clamp_offset(center: usize, k: usize, r: usize, len: usize) -> usize {
    (center as isize + k as isize - r as isize).clamp(0, len as isize - 1) as usize
}

fn check_window(t: usize, ni: usize, nj: usize, i: usize, j: usize, t_end: usize, n: usize) -> Result<()> {
    if i >= ni || j >= nj {
        return Err(Error::Range(format!("cell ({i},{j}) outside {ni}×{nj} grid")));
    }
    if n == 0 || t_end + 1 < n {
        return Err(Error::Range(format!("t_end {t_end} leaves no room for {n} input steps")));
    }
    if t_end >= t {
        return Err(Error::Range(format!("t_end {t_end} beyond series length {t}")));
    }
    Ok(())
}

/// Per-cell z-score statistics from a training span.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<f32>,
    /// population standard deviation
    pub std: Vec<f32>,
}

impl NormStats {
    /// Statistics over frames `[range.start, range.end)`.
    pub fn fit(grid: &GridSeries, feature: usize, range: std::ops::Range<usize>) -> Result<Self> {
        let (t, ni, nj, _) = grid.dims();
        if range.is_empty() || range.end > t {
            return Err(Error::Range(format!(
                "normalization span {range:?} is empty or beyond length {t}"
            )));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(ni * nj);
        let mut std = Vec::with_capacity(ni * nj);
        for i in 0..ni {
            for j in 0..nj {
                let m = range.clone().map(|tt| grid.at(tt, i, j, feature) as f64).sum::<f64>() / n;
                let v = range
                    .clone()
                    .map(|tt| (grid.at(tt, i, j, feature) as f64 - m).powi(2))
                    .sum::<f64>()
                    / n;
                mean.push(m as f32);
                std.push(v.sqrt() as f32);
            }
        }
        Ok(Self {
            rows: ni,
            cols: nj,
            mean,
            std,
        })
    }

    #[inline]
    pub fn apply(&self, i: usize, j: usize, x: f32) -> f32 {
        let k = i * self.cols + j;
        if (self.std[k] as f64) < NORM_EPS {
            0.0
        } else {
            (x - self.mean[k]) / self.std[k]
        }
    }

    #[inline]
    pub fn invert(&self, i: usize, j: usize, z: f32) -> f32 {
        let k = i * self.cols + j;
        if (self.std[k] as f64) < NORM_EPS {
            self.mean[k]
        } else {
            z * self.std[k] + self.mean[k]
        }
    }

    pub fn check_grid(&self, grid: &GridSeries) -> Result<()> {
        let (_, ni, nj, _) = grid.dims();
        if (ni, nj) != (self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "normalization stats are {}×{}, grid is {ni}×{nj}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// One feature of a grid in normalized units, `[T, I, J]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGrid {
    pub len: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl NormalizedGrid {
    pub fn new(grid: &GridSeries, feature: usize, stats: &NormStats) -> Result<Self> {
        stats.check_grid(grid)?;
        let (t, ni, nj, _) = grid.dims();
        let mut data = Vec::with_capacity(t * ni * nj);
        for tt in 0..t {
            for i in 0..ni {
                for j in 0..nj {
                    data.push(stats.apply(i, j, grid.at(tt, i, j, feature)));
                }
            }
        }
        Ok(Self {
            len: t,
            rows: ni,
            cols: nj,
            data,
        })
    }

    #[inline]
    pub fn at(&self, t: usize, i: usize, j: usize) -> f32 {
        self.data[(t * self.rows + i) * self.cols + j]
    }

    pub fn set(&mut self, t: usize, i: usize, j: usize, v: f32) {
        self.data[(t * self.rows + i) * self.cols + j] = v;
    }

    /// Appends one `[I, J]` frame.
    pub fn push_frame(&mut self, frame: &[f32]) {
        assert_eq!(frame.len(), self.rows * self.cols);
        self.data.extend_from_slice(frame);
        self.len += 1;
    }

    /// Writes the edge-replicated window into `out` (`n·(2r+1)²` values).
    pub fn patch_into(&self, i: usize, j: usize, t_end: usize, r: usize, n: usize, out: &mut [f32]) -> Result<()> {
        check_window(self.len, self.rows, self.cols, i, j, t_end, n)?;
        let side = 2 * r + 1;
        debug_assert_eq!(out.len(), n * side * side);
        let mut k = 0;
        for s in 0..n {
            let t = t_end + 1 - n + s;
            for a in 0..side {
                let ii = clamp_offset(i, a, r, self.rows);
                for b in 0..side {
                    out[k] = self.at(t, ii, clamp_offset(j, b, r, self.cols));
                    k += 1;
                }
            }
        }
        Ok(())
    }

    /// Windows for every `(i, j)` at `t_end`, `[I·J, n, P, P]` in row-major cell order.
    pub fn grid_windows(&self, t_end: usize, r: usize, n: usize) -> Result<Tensor<f32>> {
        let side = 2 * r + 1;
        let per = n * side * side;
        let cells = self.rows * self.cols;
        let mut data = vec![0.0; cells * per];
        for (c, chunk) in data.chunks_mut(per).enumerate() {
            self.patch_into(c / self.cols, c % self.cols, t_end, r, n, chunk)?;
        }
        Tensor::new(&[cells, n, side, side], data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, val, test)"))),
        }
    }
}

/// Chronological split boundaries as fractions of the series length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
        }
    }
}

impl SplitFractions {
    /// Frame range `[start, end)` of `split` in a series of length `t`.
    pub fn range(&self, split: Split, t: usize) -> std::ops::Range<usize> {
        let a = (self.train * t as f64).floor() as usize;
        let b = ((self.train + self.val) * t as f64).floor() as usize;
        match split {
            Split::Train => 0..a,
            Split::Val => a..b.max(a),
            Split::Test => b.max(a)..t,
        }
    }
}

/// Location of one supervised sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub i: usize,
    pub j: usize,
    pub t_end: usize,
}

/// Lazily materialized patch samples over a normalized grid.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    pub grid: Arc<NormalizedGrid>,
    pub samples: Vec<SampleRef>,
    pub radius: usize,
    pub steps: usize,
    pub horizon: usize,
}

/// Every cell yields a sample for each admissible `t_end` of the split span,
/// advancing by `stride`. Inputs and targets both stay inside the span.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    grid: &GridSeries,
    feature: usize,
    stats: &NormStats,
    fractions: SplitFractions,
    split: Split,
    stride: usize,
    r: usize,
    n: usize,
    tau: usize,
) -> Result<PatchDataset> {
    let norm = Arc::new(NormalizedGrid::new(grid, feature, stats)?);
    let span = fractions.range(split, grid.dims().0);
    dataset_over(norm, span, split, stride, r, n, tau)
}

pub(crate) fn dataset_over(
    grid: Arc<NormalizedGrid>,
    span: std::ops::Range<usize>,
    split: Split,
    stride: usize,
    r: usize,
    n: usize,
    tau: usize,
) -> Result<PatchDataset> {
    if stride == 0 || n == 0 || tau == 0 {
        return Err(Error::Config("stride, steps and horizon must be positive".into()));
    }
    if span.len() < n + tau {
        return Err(Error::Config(format!(
            "{split:?} span of {} frames is too short for {n} inputs + {tau} targets",
            span.len()
        )));
    }
    let first = span.start + n - 1;
    let last = span.end - 1 - tau;
    let mut samples = Vec::new();
    for t_end in (first..=last).step_by(stride) {
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                samples.push(SampleRef { i, j, t_end });
            }
        }
    }
    Ok(PatchDataset {
        grid,
        samples,
        radius: r,
        steps: n,
        horizon: tau,
    })
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// `([B, n, P, P], [B, τ])` for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let side = self.side();
        let per = self.steps * side * side;
        let mut x = vec![0.0; indices.len() * per];
        let mut y = Vec::with_capacity(indices.len() * self.horizon);
        for (b, &k) in indices.iter().enumerate() {
            let s = self.samples.get(k).ok_or_else(|| {
                Error::Range(format!("sample {k} outside dataset of {}", self.samples.len()))
            })?;
            self.grid
                .patch_into(s.i, s.j, s.t_end, self.radius, self.steps, &mut x[b * per..(b + 1) * per])?;
            for h in 1..=self.horizon {
                y.push(self.grid.at(s.t_end + h, s.i, s.j));
            }
        }
        Ok((
            Tensor::new(&[indices.len(), self.steps, side, side], x)?,
            Tensor::new(&[indices.len(), self.horizon], y)?,
        ))
    }

    /// Keeps every `k`-th sample.
    pub fn subsample(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.samples = self.samples.iter().copied().step_by(k.max(1)).collect();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(t: usize, ni: usize, nj: usize, f: impl Fn(usize, usize, usize) -> f32) -> GridSeries {
        GridSeries::new(
            Tensor::from_fn(&[t, ni, nj, 1], |k| {
                let (tt, rest) = (k / (ni * nj), k % (ni * nj));
                f(tt, rest / nj, rest % nj)
            }),
            0,
            600,
            vec!["internet".into()],
        )
        .unwrap()
    }

    #[test]
    fn corner_patch_replicates_edges() {
        let g = grid_from(1, 2, 2, |_, i, j| (i * 2 + j + 1) as f32);
        let p = extract_patch(&g, 0, 0, 0, 0, 1, 1).unwrap();
        assert_eq!(p.data(), &[1., 1., 2., 1., 1., 2., 3., 3., 4.]);
    }

    #[test]
    fn interior_patch_is_plain_slice_and_r0_is_history() {
        let g = grid_from(5, 5, 5, |t, i, j| (t * 100 + i * 10 + j) as f32);
        let p = extract_patch(&g, 0, 2, 3, 4, 1, 2).unwrap();
        assert_eq!(p.get(&[0, 0, 0]), 312.0);
        assert_eq!(p.get(&[1, 2, 2]), 434.0);
        let h = extract_patch(&g, 0, 1, 1, 3, 0, 3).unwrap();
        assert_eq!(h.data(), &[111., 211., 311.]);
        assert!(matches!(extract_patch(&g, 0, 0, 0, 1, 1, 3), Err(Error::Range(_))));
    }

    #[test]
    fn normalized_patch_matches_raw_patch() {
        let g = grid_from(8, 3, 4, |t, i, j| ((t * 7 + i * 3 + j) % 5) as f32 + i as f32);
        let stats = NormStats::fit(&g, 0, 0..6).unwrap();
        let norm = NormalizedGrid::new(&g, 0, &stats).unwrap();
        let raw = extract_patch(&g, 0, 0, 3, 7, 2, 3).unwrap();
        let mut z = vec![0.0; raw.numel()];
        norm.patch_into(0, 3, 7, 2, 3, &mut z).unwrap();
        for (k, v) in z.iter().enumerate() {
            let rest = k % 25;
            let ii = (rest / 5).saturating_sub(2).min(2);
            let jj = (3 + rest % 5).saturating_sub(2).min(3);
            assert_eq!(*v, stats.apply(ii, jj, raw.data()[k]));
        }
    }

    #[test]
    fn norm_hand_values() {
        let g = grid_from(3, 1, 2, |t, _, j| if j == 0 { 2.0 + 2.0 * t as f32 } else { 7.0 });
        let s = NormStats::fit(&g, 0, 0..3).unwrap();
        assert_eq!(s.mean[0], 4.0);
        assert!((s.std[0] as f64 - (8.0f64 / 3.0).sqrt()).abs() < 1e-6);
        let z: Vec<f32> = [2.0, 4.0, 6.0].iter().map(|&x| s.apply(0, 0, x)).collect();
        assert!((z[0] + 1.2247).abs() < 1e-4 && z[1] == 0.0 && (z[2] - 1.2247).abs() < 1e-4);
        assert_eq!(s.apply(0, 1, 7.0), 0.0);
        assert_eq!(s.invert(0, 1, 3.0), 7.0);
    }

    #[test]
    fn dataset_index_arithmetic() {
        let g = grid_from(20, 1, 1, |t, _, _| t as f32);
        let stats = NormStats::fit(&g, 0, 0..14).unwrap();
        let d = make_dataset(&g, 0, &stats, SplitFractions::default(), Split::Train, 6, 0, 6, 1).unwrap();
        let ends: Vec<usize> = d.samples.iter().map(|s| s.t_end).collect();
        assert_eq!(ends, vec![5, 11]);
        let d1 = make_dataset(&g, 0, &stats, SplitFractions::default(), Split::Train, 1, 0, 6, 1).unwrap();
        assert_eq!(d1.len(), 8);
        assert!(matches!(
            make_dataset(&g, 0, &stats, SplitFractions::default(), Split::Val, 1, 0, 6, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn splits_are_chronological_and_disjoint() {
        let f = SplitFractions::default();
        let (a, b, c) = (f.range(Split::Train, 2016), f.range(Split::Val, 2016), f.range(Split::Test, 2016));
        assert_eq!((a.start, a.end, b.start, b.end, c.start, c.end), (0, 1411, 1411, 1713, 1713, 2016));
    }

    #[test]
    fn batch_targets_are_next_center_values() {
        let g = grid_from(30, 3, 3, |t, i, j| (t * 9 + i * 3 + j) as f32);
        let stats = NormStats::fit(&g, 0, 0..21).unwrap();
        let d = make_dataset(&g, 0, &stats, SplitFractions::default(), Split::Train, 3, 1, 4, 2).unwrap();
        assert_eq!(d.len(), 9 * d.samples.iter().filter(|s| s.i == 0 && s.j == 0).count());
        let (x, y) = d.batch(&[0, 5]).unwrap();
        assert_eq!(x.shape(), &[2, 4, 3, 3]);
        let s = d.samples[5];
        assert_eq!(y.get(&[1, 1]), stats.apply(s.i, s.j, g.at(s.t_end + 2, s.i, s.j, 0)));
    }
}
