//! `STNC` checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "STNC" u16 version
//! u32 len, UTF-8 manifest (key=value lines)
//! u32 rows, u32 cols, f32 mean[rows·cols], f32 std[rows·cols]
//! u32 count, then per parameter: u32 len, name, u64 count, f32 payload
//! u32 count, then per batch-norm buffer: same record layout
//! u64 adam step, u32 count, then records named "adam.m.<param>" / "adam.v.<param>"
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamState, EpochRecord, TrainConfig, Trainer};
use crate::data::{read_array, read_field, NormStats};
use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STNC";
pub const CHECKPOINT_VERSION: u16 = 1;

const MAX_NAME: usize = 1 << 12;
const MAX_MANIFEST: usize = 1 << 26;

fn manifest(t: &Trainer) -> String {
    let mut lines = Vec::new();
    for (k, v) in t.model.config.to_pairs() {
        lines.push(format!("model.{k}={v}"));
    }
    for (k, v) in t.config.to_pairs() {
        lines.push(format!("train.{k}={v}"));
    }
    lines.push(format!("epoch={}", t.epoch));
    lines.push(format!("step={}", t.step));
    lines.push(format!("seed={}", t.config.seed));
    for r in &t.history {
        lines.push(format!("history={},{},{}", r.epoch, r.train_loss, r.val_loss));
    }
    for (k, v) in &t.meta {
        lines.push(format!("meta.{k}={v}"));
    }
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

fn write_record(w: &mut impl Write, name: &str, data: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(t: &Trainer, w: &mut impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let m = manifest(t);
    w.write_all(&(m.len() as u32).to_le_bytes())?;
    w.write_all(m.as_bytes())?;

    w.write_all(&(t.stats.rows as u32).to_le_bytes())?;
    w.write_all(&(t.stats.cols as u32).to_le_bytes())?;
    write_f32s(w, &t.stats.mean)?;
    write_f32s(w, &t.stats.std)?;

    w.write_all(&(t.model.params.len() as u32).to_le_bytes())?;
    for p in t.model.params.iter() {
        write_record(w, &p.name, p.value.data())?;
    }
    let bufs = t.model.running_buffers();
    w.write_all(&(bufs.len() as u32).to_le_bytes())?;
    for (name, v) in &bufs {
        write_record(w, name, v)?;
    }

    w.write_all(&t.adam.t.to_le_bytes())?;
    w.write_all(&(2 * t.model.params.len() as u32).to_le_bytes())?;
    for (kind, buf) in [("m", &t.adam.m), ("v", &t.adam.v)] {
        for (p, b) in t.model.params.iter().zip(buf.iter()) {
            write_record(w, &format!("adam.{kind}.{}", p.name), b.data())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(t, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, field: &str) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r, field)?) as usize)
}

fn read_f32s(r: &mut impl Read, n: usize, field: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_field(r, &mut bytes, field)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads one named record whose payload length must be `expect`.
fn read_record(r: &mut impl Read, section: &str, index: usize, expect: usize) -> Result<(String, Vec<f32>)> {
    let field = format!("{section}[{index}]");
    let len = read_u32(r, &format!("{field}.name_len"))?;
    if len > MAX_NAME {
        return Err(Error::Checkpoint(format!("{field}: name length {len} is implausible")));
    }
    let mut name = vec![0u8; len];
    read_field(r, &mut name, &format!("{field}.name"))?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Checkpoint(format!("{field}: name is not UTF-8")))?;
    let count = u64::from_le_bytes(read_array(r, &format!("{section} '{name}' length"))?) as usize;
    if count != expect {
        return Err(Error::Checkpoint(format!(
            "{section} '{name}' holds {count} values, expected {expect}"
        )));
    }
    let data = read_f32s(r, count, &format!("{section} '{name}' payload"))?;
    Ok((name, data))
}

struct Manifest {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    step: u64,
    history: Vec<EpochRecord>,
    meta: Vec<(String, String)>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |line: &str| Error::Checkpoint(format!("bad manifest line '{line}'"));
    let mut model_pairs = Vec::new();
    let mut train = TrainConfig::default();
    let (mut epoch, mut step, mut seed) = (None, None, None);
    let mut history = Vec::new();
    let mut meta = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
        if let Some(key) = k.strip_prefix("model.") {
            model_pairs.push((key, v));
        } else if let Some(key) = k.strip_prefix("train.") {
            train.set(key, v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        } else if let Some(key) = k.strip_prefix("meta.") {
            meta.push((key.to_string(), v.to_string()));
        } else {
            match k {
                "epoch" => epoch = Some(v.parse().map_err(|_| bad(line))?),
                "step" => step = Some(v.parse().map_err(|_| bad(line))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad(line))?),
                "history" => {
                    let p: Vec<&str> = v.split(',').collect();
                    if p.len() != 3 {
                        return Err(bad(line));
                    }
                    history.push(EpochRecord {
                        epoch: p[0].parse().map_err(|_| bad(line))?,
                        train_loss: p[1].parse().map_err(|_| bad(line))?,
                        val_loss: p[2].parse().map_err(|_| bad(line))?,
                    });
                }
                _ => return Err(Error::Checkpoint(format!("unknown manifest key '{k}'"))),
            }
        }
    }
    let model = ModelConfig::from_pairs(model_pairs).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let missing = |f: &str| Error::Checkpoint(format!("manifest lacks '{f}'"));
    let seed = seed.ok_or_else(|| missing("seed"))?;
    if seed != train.seed {
        return Err(Error::Checkpoint(format!(
            "manifest seed {seed} disagrees with train.seed {}",
            train.seed
        )));
    }
    Ok(Manifest {
        model,
        train,
        epoch: epoch.ok_or_else(|| missing("epoch"))?,
        step: step.ok_or_else(|| missing("step"))?,
        history,
        meta,
    })
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Trainer> {
    let mut magic = [0u8; 4];
    read_field(r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad checkpoint magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_array(r, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = read_u32(r, "manifest length")?;
    if len > MAX_MANIFEST {
        return Err(Error::Checkpoint(format!("manifest length {len} is implausible")));
    }
    let mut text = vec![0u8; len];
    read_field(r, &mut text, "manifest")?;
    let text = String::from_utf8(text).map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let man = parse_manifest(&text)?;

    let rows = read_u32(r, "stats.rows")?;
    let cols = read_u32(r, "stats.cols")?;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 26 {
        return Err(Error::Checkpoint(format!("implausible stats grid {rows}×{cols}")));
    }
    let stats = NormStats {
        rows,
        cols,
        mean: read_f32s(r, rows * cols, "stats.mean")?,
        std: read_f32s(r, rows * cols, "stats.std")?,
    };

    let mut model = build_model::<f32>(&man.model, 0)?;
    let n = read_u32(r, "param count")?;
    if n != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{n} parameters stored, configuration defines {}",
            model.params.len()
        )));
    }
    let shapes: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    let mut named = Vec::with_capacity(n);
    for (k, (want, shape)) in shapes.iter().enumerate() {
        let (name, data) = read_record(r, "param", k, shape.iter().product())?;
        if &name != want {
            return Err(Error::Checkpoint(format!("param[{k}] is '{name}', expected '{want}'")));
        }
        named.push((name, Tensor::new(shape, data)?));
    }
    model.load_named(&named)?;

    let expect_bufs: Vec<(String, usize)> = model
        .running_buffers()
        .into_iter()
        .map(|(n, v)| (n, v.len()))
        .collect();
    let nb = read_u32(r, "buffer count")?;
    if nb != expect_bufs.len() {
        return Err(Error::Checkpoint(format!(
            "{nb} buffers stored, configuration defines {}",
            expect_bufs.len()
        )));
    }
    let mut bufs = Vec::with_capacity(nb);
    for (k, (_, len)) in expect_bufs.iter().enumerate() {
        bufs.push(read_record(r, "buffer", k, *len)?);
    }
    model.load_running_buffers(&bufs)?;

    let t = u64::from_le_bytes(read_array(r, "adam.t")?);
    let na = read_u32(r, "adam count")?;
    if na != 2 * shapes.len() {
        return Err(Error::Checkpoint(format!(
            "{na} optimizer buffers stored, expected {}",
            2 * shapes.len()
        )));
    }
    let mut adam = AdamState::new(&model.params);
    adam.t = t;
    for (kind, dst) in [("m", &mut adam.m), ("v", &mut adam.v)] {
        for (k, (pname, shape)) in shapes.iter().enumerate() {
            let (name, data) = read_record(r, "adam", k, shape.iter().product())?;
            let want = format!("adam.{kind}.{pname}");
            if name != want {
                return Err(Error::Checkpoint(format!("optimizer record '{name}', expected '{want}'")));
            }
            dst[k] = Tensor::new(shape, data)?;
        }
    }

    Ok(Trainer {
        model,
        adam,
        config: man.train,
        stats,
        history: man.history,
        epoch: man.epoch,
        step: man.step,
        meta: man.meta,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
