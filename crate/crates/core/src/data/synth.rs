use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use super::GridSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic city.
///
/// `value(t,i,j) = base·g(i,j)·(1 + daily·sin(2πt/144) + weekly·sin(2πt/1008)) + spikes + noise`,
/// followed by one diffusion pass `v ← (1−δ)·v + δ·mean(4-neighbours)`.
/// `g` is a floor of 0.2 plus Gaussian bumps at seed-drawn hotspot centres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    pub base: f64,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    pub hotspots: usize,
    pub noise_sd: f64,
    pub diffusion: f64,
    /// per-sample probability of a traffic spike
    pub spike_rate: f64,
    /// spike magnitude relative to the local mean level
    pub spike_scale: f64,
    pub start_time: i64,
    pub interval: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            rows: 20,
            cols: 20,
            steps: 2016,
            base: 100.0,
            daily_amp: 0.5,
            weekly_amp: 0.2,
            hotspots: 3,
            noise_sd: 2.0,
            diffusion: 0.3,
            spike_rate: 0.0005,
            spike_scale: 0.5,
            start_time: 1_383_260_400,
            interval: 600,
        }
    }
}

impl Scenario {
    pub const KEYS: [&'static str; 13] = [
        "rows",
        "cols",
        "steps",
        "base",
        "daily_amp",
        "weekly_amp",
        "hotspots",
        "noise_sd",
        "diffusion",
        "spike_rate",
        "spike_scale",
        "start_time",
        "interval",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("scenario key '{key}': cannot parse '{value}'"));
        match key {
            "rows" | "I" => self.rows = v.parse().map_err(|_| bad())?,
            "cols" | "J" => self.cols = v.parse().map_err(|_| bad())?,
            "steps" | "T" => self.steps = v.parse().map_err(|_| bad())?,
            "base" => self.base = v.parse().map_err(|_| bad())?,
            "daily_amp" => self.daily_amp = v.parse().map_err(|_| bad())?,
            "weekly_amp" => self.weekly_amp = v.parse().map_err(|_| bad())?,
            "hotspots" => self.hotspots = v.parse().map_err(|_| bad())?,
            "noise_sd" => self.noise_sd = v.parse().map_err(|_| bad())?,
            "diffusion" => self.diffusion = v.parse().map_err(|_| bad())?,
            "spike_rate" => self.spike_rate = v.parse().map_err(|_| bad())?,
            "spike_scale" => self.spike_scale = v.parse().map_err(|_| bad())?,
            "start_time" => self.start_time = v.parse().map_err(|_| bad())?,
            "interval" => self.interval = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown scenario key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let vals = [
            self.rows.to_string(),
            self.cols.to_string(),
            self.steps.to_string(),
            self.base.to_string(),
            self.daily_amp.to_string(),
            self.weekly_amp.to_string(),
            self.hotspots.to_string(),
            self.noise_sd.to_string(),
            self.diffusion.to_string(),
            self.spike_rate.to_string(),
            self.spike_scale.to_string(),
            self.start_time.to_string(),
            self.interval.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.steps == 0 || self.interval == 0 {
            return Err(Error::Config("scenario dimensions and interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.diffusion) || !(0.0..=1.0).contains(&self.spike_rate) {
            return Err(Error::Config("diffusion and spike_rate must lie in [0, 1]".into()));
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        Ok(())
    }
}

/// Spatial intensity `g(i,j)` and the seeded generator positioned after drawing it.
fn layout(s: &Scenario, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let spots: Vec<(f64, f64, f64, f64)> = (0..s.hotspots)
        .map(|_| {
            let ci = rng.gen_range(0.0..s.rows as f64);
            let cj = rng.gen_range(0.0..s.cols as f64);
            let amp = rng.gen_range(0.5..2.0);
            let width = rng.gen_range(1.0..(s.rows.max(s.cols) as f64 / 4.0).max(1.5));
            (ci, cj, amp, width)
        })
        .collect();
    let mut g = Vec::with_capacity(s.rows * s.cols);
    for i in 0..s.rows {
        for j in 0..s.cols {
            let bump: f64 = spots
                .iter()
                .map(|&(ci, cj, a, w)| {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    a * (-d2 / (2.0 * w * w)).exp()
                })
                .sum();
            g.push(0.2 + bump);
        }
    }
    g
}

/// Deterministic single-feature ("internet") synthetic grid.
pub fn synth_grid(s: &Scenario, seed: u64) -> Result<GridSeries> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = layout(s, &mut rng);
    let noise = Normal::new(0.0, s.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let (ni, nj) = (s.rows, s.cols);
    let mut out = Vec::with_capacity(s.steps * ni * nj);
    let mut frame = vec![0.0f64; ni * nj];
    for t in 0..s.steps {
        let tf = t as f64;
        let season = 1.0
            + s.daily_amp * (2.0 * PI * tf / 144.0).sin()
            + s.weekly_amp * (2.0 * PI * tf / 1008.0).sin();
        for (k, v) in frame.iter_mut().enumerate() {
            let level = s.base * g[k];
            *v = level * season;
            if s.spike_rate > 0.0 && rng.gen_bool(s.spike_rate) {
                let e: f64 = Exp1.sample(&mut rng);
                *v += s.spike_scale * level * e;
            }
            if s.noise_sd > 0.0 {
                *v += noise.sample(&mut rng);
            }
        }
        diffuse(&mut frame, ni, nj, s.diffusion);
        out.extend(frame.iter().map(|&v| v as f32));
    }
    GridSeries::new(
        Tensor::new(&[s.steps, ni, nj, 1], out)?,
        s.start_time,
        s.interval,
        vec!["internet".into()],
    )
}

fn diffuse(frame: &mut [f64], ni: usize, nj: usize, delta: f64) {
    if delta == 0.0 {
        return;
    }
    let src = frame.to_vec();
    for i in 0..ni {
        for j in 0..nj {
            let mut sum = 0.0;
            let mut cnt = 0;
            if i > 0 {
                sum += src[(i - 1) * nj + j];
                cnt += 1;
            }
            if i + 1 < ni {
                sum += src[(i + 1) * nj + j];
                cnt += 1;
            }
            if j > 0 {
                sum += src[i * nj + j - 1];
                cnt += 1;
            }
            if j + 1 < nj {
                sum += src[i * nj + j + 1];
                cnt += 1;
            }
            if cnt > 0 {
                frame[i * nj + j] = (1.0 - delta) * src[i * nj + j] + delta * sum / cnt as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{autocorrelation, spatial_correlation_map};

    fn small() -> Scenario {
        Scenario {
            rows: 6,
            cols: 5,
            steps: 600,
            ..Scenario::default()
        }
    }

    #[test]
    fn flat_scenario_is_constant_in_time() {
        let s = Scenario {
            daily_amp: 0.0,
            weekly_amp: 0.0,
            noise_sd: 0.0,
            spike_rate: 0.0,
            steps: 50,
            ..small()
        };
        let g = synth_grid(&s, 1).unwrap();
        for t in 1..50 {
            assert_eq!(g.frame(t, 0), g.frame(0, 0));
        }
    }

    #[test]
    fn seed_determinism_and_layout_change() {
        let a = synth_grid(&small(), 4).unwrap();
        assert_eq!(a, synth_grid(&small(), 4).unwrap());
        assert_ne!(a.frame(0, 0), synth_grid(&small(), 5).unwrap().frame(0, 0));
    }

    #[test]
    fn daily_cycle_shows_in_autocorrelation() {
        let s = Scenario {
            noise_sd: 0.5,
            ..small()
        };
        let g = synth_grid(&s, 2).unwrap();
        let x: Vec<f64> = g.cell_series(2, 2, 0).iter().map(|&v| v as f64).collect();
        assert!(autocorrelation(&x, 144) > autocorrelation(&x, 100));
    }

    #[test]
    fn diffusion_raises_neighbour_correlation() {
        let base = Scenario {
            daily_amp: 0.0,
            weekly_amp: 0.0,
            spike_rate: 0.0,
            noise_sd: 5.0,
            ..small()
        };
        let mean_nb = |d: f64| {
            let g = synth_grid(&Scenario { diffusion: d, ..base.clone() }, 9).unwrap();
            let c = spatial_correlation_map(&g, 0, (3, 2)).unwrap();
            (c.get(&[2, 2]) + c.get(&[4, 2]) + c.get(&[3, 1]) + c.get(&[3, 3])) / 4.0
        };
        assert!(mean_nb(0.4) > mean_nb(0.0) + 0.1);
    }

    #[test]
    fn keys_round_trip() {
        let mut s = Scenario::default();
        s.set("diffusion", "0.7").unwrap();
        s.set("T", "100").unwrap();
        let mut t = Scenario::default();
        for (k, v) in s.to_pairs() {
            t.set(&k, &v).unwrap();
        }
        assert_eq!(s, t);
        assert!(s.set("colour", "red").is_err());
    }
}
