//! Grid traffic series, their binary file format, patch datasets, the
//! synthetic generator and exploratory statistics.

mod analysis;
mod dataset;
mod synth;
mod tsv;

pub use analysis::{
    approx_entropy, approx_entropy_default, autocorrelation, patch_aggregate_series,
    spatial_correlation_map,
};
pub use dataset::{
    extract_patch, make_dataset, NormStats, NormalizedGrid, PatchDataset, SampleRef, Split,
    SplitFractions, NORM_EPS,
};
pub use synth::{synth_grid, Scenario};
pub use tsv::{import_tia_tsv, ImportOptions, ImportReport};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_MAGIC: &[u8; 4] = b"GRID";
pub const GRID_VERSION: u16 = 1;

/// Column order of the telecom activity records.
pub const TIA_FEATURES: [&str; 5] = ["sms-in", "sms-out", "call-in", "call-out", "internet"];

/// Values on a `T × I × J × F` grid sampled every `interval` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSeries {
    pub values: Tensor<f32>,
    /// epoch seconds of the first frame
    pub start_time: i64,
    pub interval: u32,
    pub feature_names: Vec<String>,
}

/// Names used when a file carries no labels.
pub fn default_feature_names(f: usize) -> Vec<String> {
    match f {
        5 => TIA_FEATURES.iter().map(|s| s.to_string()).collect(),
        1 => vec!["internet".to_string()],
        _ => (0..f).map(|k| format!("f{k}")).collect(),
    }
}

impl GridSeries {
    pub fn new(values: Tensor<f32>, start_time: i64, interval: u32, names: Vec<String>) -> Result<Self> {
        if values.rank() != 4 {
            return Err(Error::Dimension(format!(
                "grid values must be [T,I,J,F], got {:?}",
                values.shape()
            )));
        }
        if interval == 0 {
            return Err(Error::Format("grid interval must be positive".into()));
        }
        if names.len() != values.shape()[3] {
            return Err(Error::Dimension(format!(
                "{} feature names for {} features",
                names.len(),
                values.shape()[3]
            )));
        }
        if let Some(idx) = values.first_non_finite() {
            return Err(Error::Format(format!("non-finite grid value at {idx:?}")));
        }
        Ok(Self {
            values,
            start_time,
            interval,
            feature_names: names,
        })
    }

    /// `(T, I, J, F)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Config(format!(
                    "feature '{name}' not in grid (has {})",
                    self.feature_names.join(", ")
                ))
            })
    }

    #[inline]
    pub fn at(&self, t: usize, i: usize, j: usize, f: usize) -> f32 {
        let (_, ni, nj, nf) = self.dims();
        self.values.data()[((t * ni + i) * nj + j) * nf + f]
    }

    /// `[I, J]` frame of one feature.
    pub fn frame(&self, t: usize, f: usize) -> Tensor<f32> {
        let (_, ni, nj, _) = self.dims();
        Tensor::from_fn(&[ni, nj], |k| self.at(t, k / nj, k % nj, f))
    }

    pub fn cell_series(&self, i: usize, j: usize, f: usize) -> Vec<f32> {
        (0..self.dims().0).map(|t| self.at(t, i, j, f)).collect()
    }

    /// Single-feature copy.
    pub fn select_feature(&self, f: usize) -> Self {
        let (t, ni, nj, _) = self.dims();
        let values = Tensor::from_fn(&[t, ni, nj, 1], |k| {
            let (tt, rest) = (k / (ni * nj), k % (ni * nj));
            self.at(tt, rest / nj, rest % nj, f)
        });
        Self {
            values,
            start_time: self.start_time,
            interval: self.interval,
            feature_names: vec![self.feature_names[f].clone()],
        }
    }

    /// Frames `[from, to)`.
    pub fn slice_time(&self, from: usize, to: usize) -> Result<Self> {
        let (t, ni, nj, nf) = self.dims();
        if from >= to || to > t {
            return Err(Error::Range(format!("time slice {from}..{to} outside 0..{t}")));
        }
        let frame = ni * nj * nf;
        let data = self.values.data()[from * frame..to * frame].to_vec();
        Ok(Self {
            values: Tensor::new(&[to - from, ni, nj, nf], data)?,
            start_time: self.start_time + from as i64 * self.interval as i64,
            interval: self.interval,
            feature_names: self.feature_names.clone(),
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (t, i, j, f) = self.dims();
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        for d in [t, i, j, f] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.start_time.to_le_bytes())?;
        w.write_all(&self.interval.to_le_bytes())?;
        for v in self.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_field(r, &mut magic, "magic")?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format(format!("bad grid magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(r, "version")?);
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let mut dims = [0usize; 4];
        for (d, name) in dims.iter_mut().zip(["T", "I", "J", "F"]) {
            *d = u32::from_le_bytes(read_array(r, name)?) as usize;
            if *d == 0 {
                return Err(Error::Format(format!("grid dimension {name} is zero")));
            }
        }
        let start = i64::from_le_bytes(read_array(r, "start_time")?);
        let interval = u32::from_le_bytes(read_array(r, "interval")?);
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_field(r, &mut bytes, "values")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(
            Tensor::new(&dims, data)?,
            start,
            interval,
            default_feature_names(dims[3]),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub(crate) fn read_field(r: &mut impl Read, buf: &mut [u8], field: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated at field '{field}'")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_array<const N: usize>(r: &mut impl Read, field: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_field(r, &mut b, field)?;
    Ok(b)
}
