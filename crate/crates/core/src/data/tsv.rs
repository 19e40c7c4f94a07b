//! Telecom activity records: tab-separated
//! `square_id, timestamp_ms, country_code, sms_in, sms_out, call_in, call_out, internet`.

use std::path::{Path, PathBuf};

use super::{GridSeries, TIA_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ImportOptions {
    pub rows: usize,
    pub cols: usize,
    pub interval: u32,
    /// `None` keeps all five features.
    pub feature: Option<String>,
    /// Largest tolerated fraction of unparseable rows.
    pub max_malformed: f64,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 100,
            interval: 600,
            feature: Some("internet".into()),
            max_malformed: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub files: usize,
    pub rows: usize,
    pub dropped: usize,
    pub populated_cells: usize,
}

fn parse_row(rec: &csv::StringRecord) -> Parsed {
    let square: usize = rec.get(0)?.trim().parse().ok()?;
    let ts: i64 = rec.get(1)?.trim().parse().ok()?;
    let mut values = [0.0f64; 5];
    for (k, v) in values.iter_mut().enumerate() {
        let field = rec.get(3 + k).map(str::trim).unwrap_or("");
        if !field.is_empty() {
            *v = field.parse().ok()?;
            if !v.is_finite() {
                return None;
            }
        }
    }
    Some((square, ts, values))
}

type Parsed = Option<(usize, i64, [f64; 5])>;

fn for_each_row(
    files: &[PathBuf],
    mut f: impl FnMut(&Path, usize, Parsed) -> Result<()>,
) -> Result<()> {
    for file in files {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .flexible(true)
            .from_path(file)
            .map_err(|e| Error::Ingest(format!("{}: {e}", file.display())))?;
        for (line, rec) in rdr.records().enumerate() {
            f(file, line + 1, rec.ok().as_ref().and_then(parse_row))?;
        }
    }
    Ok(())
}

fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Reads one file or every file of a directory. Rows with the same square
/// and time bucket are summed; empty numeric fields count as 0; timestamps
/// are floored to the interval grid.
pub fn import_tia_tsv(path: impl AsRef<Path>, opts: &ImportOptions) -> Result<(GridSeries, ImportReport)> {
    if opts.rows == 0 || opts.cols == 0 || opts.interval == 0 {
        return Err(Error::Config("import dims and interval must be positive".into()));
    }
    let feature = match &opts.feature {
        Some(name) => Some(
            TIA_FEATURES
                .iter()
                .position(|f| f.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Config(format!("unknown feature '{name}'")))?,
        ),
        None => None,
    };
    let files = input_files(path.as_ref())?;
    if files.is_empty() {
        return Err(Error::Ingest(format!("no input files in {}", path.as_ref().display())));
    }
    let cells = opts.rows * opts.cols;
    let step_ms = opts.interval as i64 * 1000;
    let mut report = ImportReport {
        files: files.len(),
        ..Default::default()
    };
    // pass 1: validate and find the time span; pass 2: accumulate
    let mut span: Option<(i64, i64)> = None;
    for_each_row(&files, |file, line, parsed| {
        report.rows += 1;
        let Some((square, ts, _)) = parsed else {
            report.dropped += 1;
            return Ok(());
        };
        if square == 0 || square > cells {
            return Err(Error::Ingest(format!(
                "{} row {line}: square id {square} outside 1..={cells}",
                file.display()
            )));
        }
        let b = ts.div_euclid(step_ms);
        span = Some(span.map_or((b, b), |(lo, hi)| (lo.min(b), hi.max(b))));
        Ok(())
    })?;
    let Some((first, last)) = span else {
        return Err(Error::Ingest("no usable rows".into()));
    };
    if report.dropped as f64 > opts.max_malformed * report.rows as f64 {
        return Err(Error::Ingest(format!(
            "{} of {} rows malformed (limit {:.1}%)",
            report.dropped,
            report.rows,
            opts.max_malformed * 100.0
        )));
    }
    let t = (last - first + 1) as usize;
    let nf = if feature.is_some() { 1 } else { 5 };
    let mut data = vec![0.0f64; t * cells * nf];
    let mut seen = vec![false; cells];
    for_each_row(&files, |_, _, parsed| {
        let Some((square, ts, values)) = parsed else {
            return Ok(());
        };
        let base = ((ts.div_euclid(step_ms) - first) as usize * cells + square - 1) * nf;
        match feature {
            Some(f) => data[base] += values[f],
            None => {
                for (k, v) in values.iter().enumerate() {
                    data[base + k] += v;
                }
            }
        }
        seen[square - 1] = true;
        Ok(())
    })?;
    report.populated_cells = seen.iter().filter(|&&b| b).count();
    let names = match feature {
        Some(f) => vec![TIA_FEATURES[f].to_string()],
        None => TIA_FEATURES.iter().map(|s| s.to_string()).collect(),
    };
    let grid = GridSeries::new(
        Tensor::new(
            &[t, opts.rows, opts.cols, nf],
            data.into_iter().map(|v| v as f32).collect(),
        )?,
        first * opts.interval as i64,
        opts.interval,
        names,
    )?;
    Ok((grid, report))
}
