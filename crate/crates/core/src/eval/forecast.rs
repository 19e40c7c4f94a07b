use crate::data::{GridSeries, NormStats, NormalizedGrid};
use crate::error::{Error, Result};
use crate::model::StnModel;
use crate::tensor::Tensor;

const CELLS_PER_BATCH: usize = 512;

/// A trained model bound to one normalized grid.
pub struct Forecaster<'a> {
    pub model: &'a StnModel<f32>,
    pub stats: &'a NormStats,
    pub norm: NormalizedGrid,
}

impl<'a> Forecaster<'a> {
    pub fn new(model: &'a StnModel<f32>, grid: &GridSeries, feature: usize, stats: &'a NormStats) -> Result<Self> {
        Ok(Self {
            model,
            stats,
            norm: NormalizedGrid::new(grid, feature, stats)?,
        })
    }

    /// First-horizon prediction for each `cells` entry, normalized units.
    pub fn predict_cells(norm: &NormalizedGrid, model: &StnModel<f32>, t_end: usize, cells: &[(usize, usize)]) -> Result<Vec<f32>> {
        let (r, n) = (model.config.radius, model.config.steps);
        let side = 2 * r + 1;
        let per = n * side * side;
        let tau = model.config.horizon;
        let mut out = Vec::with_capacity(cells.len());
        for chunk in cells.chunks(CELLS_PER_BATCH) {
            let mut x = vec![0.0f32; chunk.len() * per];
            for (b, &(i, j)) in chunk.iter().enumerate() {
                norm.patch_into(i, j, t_end, r, n, &mut x[b * per..(b + 1) * per])?;
            }
            let pred = model.predict(&Tensor::new(&[chunk.len(), n, side, side], x)?)?;
            out.extend(pred.data().iter().step_by(tau).copied());
        }
        Ok(out)
    }

    fn all_cells(&self) -> Vec<(usize, usize)> {
        let nj = self.norm.cols;
        (0..self.norm.rows * nj).map(|k| (k / nj, k % nj)).collect()
    }

    fn denormalize(&self, z: &[f32], cells: &[(usize, usize)]) -> Vec<f32> {
        z.iter()
            .zip(cells)
            .map(|(&v, &(i, j))| self.stats.invert(i, j, v))
            .collect()
    }

    /// `X̂_{t_end+1}` over the whole grid, original units, `[I, J]`.
    pub fn predict_frame(&self, t_end: usize) -> Result<Tensor<f32>> {
        let cells = self.all_cells();
        let z = Self::predict_cells(&self.norm, self.model, t_end, &cells)?;
        Tensor::new(&[self.norm.rows, self.norm.cols], self.denormalize(&z, &cells))
    }

    /// Frames `t_end+1 ..= t_end+steps` predicted by feeding each prediction
    /// back as input. With `target`, only the cells that can influence that
    /// cell's final prediction are computed; other entries are NaN.
    pub fn rollout(&self, t_end: usize, steps: usize, target: Option<(usize, usize)>) -> Result<Vec<Tensor<f32>>> {
        if steps == 0 {
            return Err(Error::Range("autoregressive rollout needs at least one step".into()));
        }
        let (r, n) = (self.model.config.radius, self.model.config.steps);
        let (ni, nj) = (self.norm.rows, self.norm.cols);
        if let Some((i, j)) = target {
            if i >= ni || j >= nj {
                return Err(Error::Range(format!("cell ({i},{j}) outside {ni}×{nj} grid")));
            }
        }
        if t_end >= self.norm.len || t_end + 1 < n {
            return Err(Error::Range(format!(
                "t_end {t_end} does not admit a {n}-step window in {} frames",
                self.norm.len
            )));
        }
        let frame = ni * nj;
        let mut work = NormalizedGrid {
            len: n,
            rows: ni,
            cols: nj,
            data: self.norm.data[(t_end + 1 - n) * frame..(t_end + 1) * frame].to_vec(),
        };
        let mut frames = Vec::with_capacity(steps);
        for s in 1..=steps {
            let cells: Vec<(usize, usize)> = match target {
                None => self.all_cells(),
                Some((ci, cj)) => {
                    let rho = (steps - s) * r;
                    let (i0, i1) = (ci.saturating_sub(rho), (ci + rho).min(ni - 1));
                    let (j0, j1) = (cj.saturating_sub(rho), (cj + rho).min(nj - 1));
                    (i0..=i1).flat_map(|i| (j0..=j1).map(move |j| (i, j))).collect()
                }
            };
            let z = Self::predict_cells(&work, self.model, work.len - 1, &cells)?;
            let mut next = vec![f32::NAN; frame];
            let mut orig = vec![f32::NAN; frame];
            for (&v, &(i, j)) in z.iter().zip(&cells) {
                next[i * nj + j] = v;
                orig[i * nj + j] = self.stats.invert(i, j, v);
            }
            work.push_frame(&next);
            frames.push(Tensor::new(&[ni, nj], orig)?);
        }
        Ok(frames)
    }
}

/// One-step full-grid prediction in original units.
pub fn predict_grid(
    model: &StnModel<f32>,
    grid: &GridSeries,
    feature: usize,
    stats: &NormStats,
    t_end: usize,
) -> Result<Tensor<f32>> {
    Forecaster::new(model, grid, feature, stats)?.predict_frame(t_end)
}

/// `steps`-ahead forecast for one cell, feeding predictions back as inputs.
pub fn autoregressive_forecast(
    model: &StnModel<f32>,
    grid: &GridSeries,
    feature: usize,
    stats: &NormStats,
    cell: (usize, usize),
    t_end: usize,
    steps: usize,
) -> Result<Vec<f32>> {
    let f = Forecaster::new(model, grid, feature, stats)?;
    Ok(f.rollout(t_end, steps, Some(cell))?
        .iter()
        .map(|fr| fr.get(&[cell.0, cell.1]))
        .collect())
}

/// Last observed frame as the forecast of the next one.
pub fn baseline_persistence(grid: &GridSeries, feature: usize, t_end: usize) -> Result<Tensor<f32>> {
    if t_end >= grid.dims().0 {
        return Err(Error::Range(format!("t_end {t_end} beyond series length {}", grid.dims().0)));
    }
    Ok(grid.frame(t_end, feature))
}

/// Frame one `period` before the forecast target, `X_{t_end+1−period}`.
pub fn baseline_seasonal(grid: &GridSeries, feature: usize, t_end: usize, period: usize) -> Result<Tensor<f32>> {
    if period == 0 || t_end + 1 < period {
        return Err(Error::Range(format!(
            "seasonal baseline with period {period} needs t_end ≥ {}, got {t_end}",
            period.saturating_sub(1)
        )));
    }
    baseline_persistence(grid, feature, t_end + 1 - period)
}
