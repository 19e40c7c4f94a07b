//! One PASS/FAIL line per acceptance criterion. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 4 8`.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use common::*;
use stn::autodiff::{conv3d_forward, Tape};
use stn::cli::{cmd_analyze, cmd_eval, cmd_import, AnalyzeArgs, EvalArgs, ImportArgs};
use stn::data::{extract_patch, make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};
use stn::eval::{evaluate, mae, predict_grid, r2, rmse, ssim, ssim_with, EvalOptions, EvalReport};
use stn::model::{build_model, preset, Mode, ModelConfig, Variant};
use stn::params::ParamStore;
use stn::recurrent::{ConvLstmCell, ConvLstmState, Slstm};
use stn::train::{load_checkpoint, save_checkpoint, write_history_csv, TrainConfig, Trainer};
use stn::Tensor;

const KERNEL_GRAD_TOL: f64 = 1e-4;
const MODEL_GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 120.0;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_CASES: usize = 100;
const SLSTM_TOL: f64 = 1e-8;
const SLSTM_PRE_BOUND: f64 = 20.0;
const SSIM_SYMMETRY_TOL: f64 = 1e-9;
const SSIM_REFERENCE_TOL: f64 = 1e-6;
const MAX_EPOCHS: usize = 10;
const MODEL_BUDGET_S: f64 = 15.0 * 60.0;
const PARAM_RANGE: (usize, usize) = (100_000, 250_000);
const MAC_RATIO_RANGE: (f64, f64) = (2.0, 8.0);

/// Learning-signal run: tiny STN models on the default 20×20, T=2016 city.
const LEARN_SEEDS: [u64; 3] = [0, 1, 2];
const LEARN_VARIANTS: [Variant; 3] = [Variant::Stn, Variant::StnSlstm, Variant::StnSlstmTf];
const LEARN_EPOCHS: usize = 4;
const LEARN_MAX_BATCHES: usize = 150;
const LEARN_LR: f64 = 2e-3;
const LEARN_TRAIN_STRIDE: usize = 6;
const LEARN_VAL_STRIDE: usize = 12;
const LEARN_VAL_SUBSAMPLE: usize = 4;
const EVAL_STRIDE: usize = 6;
const ROLLOUT_STEPS: usize = 6;
const ROLLOUT_STRIDE: usize = 18;

fn learn_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::new(variant, 8, 1, 2, 1, 2);
    c.radius = 2;
    c.steps = 6;
    c
}

struct Outcome {
    pass: bool,
    skipped: bool,
    detail: String,
}

fn pass_if(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        skipped: false,
        detail,
    }
}

struct Learned {
    variant: Variant,
    seed: u64,
    trainer: Trainer,
    report: EvalReport,
    rollout: EvalReport,
    train_s: f64,
    epochs: usize,
}

fn learned() -> &'static Vec<Learned> {
    static CELL: OnceLock<Vec<Learned>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for &seed in &LEARN_SEEDS {
            let grid = synth_grid(&Scenario::default(), seed).unwrap();
            let fr = SplitFractions::default();
            let stats = NormStats::fit(&grid, 0, fr.range(Split::Train, grid.dims().0)).unwrap();
            for &variant in &LEARN_VARIANTS {
                let cfg = learn_config(variant);
                let start = Instant::now();
                let train = make_dataset(&grid, 0, &stats, fr, Split::Train, LEARN_TRAIN_STRIDE, cfg.radius, cfg.steps, 1).unwrap();
                let val = make_dataset(&grid, 0, &stats, fr, Split::Val, LEARN_VAL_STRIDE, cfg.radius, cfg.steps, 1)
                    .unwrap()
                    .subsample(LEARN_VAL_SUBSAMPLE);
                let tc = TrainConfig {
                    epochs: LEARN_EPOCHS,
                    lr: LEARN_LR,
                    seed,
                    max_batches: Some(LEARN_MAX_BATCHES),
                    ..TrainConfig::default()
                };
                let mut trainer = Trainer::new(build_model(&cfg, seed).unwrap(), tc, stats.clone()).unwrap();
                let summary = trainer.fit(&train, &val, |_| Ok(())).unwrap();
                let train_s = start.elapsed().as_secs_f64();
                let best = summary.best.map(|b| *b).unwrap_or_else(|| trainer.clone());
                let one_step = EvalOptions {
                    stride: EVAL_STRIDE,
                    ..EvalOptions::default()
                };
                let report = evaluate(&best.model, &grid, 0, &stats, &one_step).unwrap().report;
                let ar = EvalOptions {
                    stride: ROLLOUT_STRIDE,
                    autoregressive: Some(ROLLOUT_STEPS),
                    ..EvalOptions::default()
                };
                let rollout = evaluate(&best.model, &grid, 0, &stats, &ar).unwrap().report;
                eprintln!(
                    "  trained {variant} seed {seed}: {:.1}s, test MAE {:.3}",
                    train_s, report.aggregate.mae
                );
                out.push(Learned {
                    variant,
                    seed,
                    epochs: trainer.epoch,
                    trainer: best,
                    report,
                    rollout,
                    train_s,
                });
            }
        }
        out
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst_kernel = (0.0f64, String::new());
    for (name, r) in [
        ("conv3d", conv3d_grad_check(1)),
        ("softmax", softmax_grad_check(2)),
        ("layer_norm", layer_norm_grad_check(3)),
        ("batch_norm", batch_norm_grad_check(4)),
        ("slstm_step", slstm_step_grad_check(5)),
        ("cross_attention", cross_attention_grad_check(6)),
    ] {
        if r.max_rel_error >= worst_kernel.0 {
            worst_kernel = (r.max_rel_error, format!("{name} {}", r.worst));
        }
    }
    let mut worst_model = (0.0f64, String::new());
    let mut coords = 0;
    for v in Variant::ALL {
        let r = model_grad_check(&tiny_config(v), Mode::Train, 7, usize::MAX);
        coords += r.coords_checked;
        if r.max_rel_error >= worst_model.0 {
            worst_model = (r.max_rel_error, format!("{v} {}", r.worst));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass_if(
        worst_kernel.0 < KERNEL_GRAD_TOL && worst_model.0 < MODEL_GRAD_TOL && secs < GRAD_BUDGET_S,
        format!(
            "kernels max rel {:.2e} ({}) < {KERNEL_GRAD_TOL:e}; models max rel {:.2e} ({}) < {MODEL_GRAD_TOL:e} over {coords} coords; {secs:.1}s < {GRAD_BUDGET_S}s",
            worst_kernel.0, worst_kernel.1, worst_model.0, worst_model.1
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut g = rng(31);
    let mut conv_err = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let (b, ci, co) = (g.gen_range(1..3), g.gen_range(1..4), g.gen_range(1..4));
        let (kd, kh, kw) = (g.gen_range(1..4), g.gen_range(1..4), g.gen_range(1..4));
        let pad = [g.gen_range(0..kd), g.gen_range(0..kh), g.gen_range(0..kw)];
        let (d, h, w) = (g.gen_range(kd..kd + 3), g.gen_range(kh..kh + 4), g.gen_range(kw..kw + 4));
        let x = uniform(&[b, ci, d, h, w], -2.0, 2.0, &mut g);
        let k = uniform(&[co, ci, kd, kh, kw], -1.0, 1.0, &mut g);
        let bias = uniform(&[co], -1.0, 1.0, &mut g);
        let got = conv3d_forward(&x, &k, &bias, pad).unwrap();
        conv_err = conv_err.max(got.max_abs_diff(&naive_conv3d(&x, &k, &bias, pad)));
    }

    let mut lstm_err = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let (b, ci, hc) = (g.gen_range(1..3), g.gen_range(1..3), g.gen_range(1..4));
        let kernel = [1, 3, 5][g.gen_range(0..3)];
        let (h, w) = (g.gen_range(1..6), g.gen_range(1..6));
        let mut store = ParamStore::<f64>::new();
        let cell = ConvLstmCell::new(&mut store, "c", ci, hc, kernel, &mut g).unwrap();
        *store.get_mut(cell.b) = uniform(&[4 * hc], -1.0, 1.0, &mut g);
        let frame = uniform(&[b, ci, 1, h, w], -2.0, 2.0, &mut g);
        let h0 = uniform(&[b, hc, 1, h, w], -1.0, 1.0, &mut g);
        let c0 = uniform(&[b, hc, 1, h, w], -1.0, 1.0, &mut g);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let state = ConvLstmState {
            hidden: tape.constant(h0.clone()),
            cell: tape.constant(c0.clone()),
        };
        let next = cell.step(&p, tape.constant(frame.clone()), &state).unwrap();
        let (wh, wc) = naive_convlstm_step(store.get(cell.wx), store.get(cell.wh), store.get(cell.b), &frame, &h0, &c0);
        lstm_err = lstm_err.max(next.hidden.value().max_abs_diff(&wh)).max(next.cell.value().max_abs_diff(&wc));
    }

    // predict_grid against patch extraction, normalization, a batch-of-one
    // forward and denormalization composed per cell
    let scen = Scenario {
        rows: 7,
        cols: 6,
        steps: 240,
        ..Scenario::default()
    };
    let grid = synth_grid(&scen, 3).unwrap();
    let stats = NormStats::fit(&grid, 0, 0..168).unwrap();
    let mut mismatched = 0;
    let mut cells = 0;
    for v in [Variant::Stn, Variant::StnSlstmTf] {
        let cfg = tiny_config(v);
        let mut model = build_model::<f32>(&cfg, 4).unwrap();
        for p in model.params.iter_mut() {
            p.value = p.value.map(|_| g.gen_range(-0.5f32..0.5));
        }
        let t_end = 200;
        let frame = predict_grid(&model, &grid, 0, &stats, t_end).unwrap();
        let (r, n, side) = (cfg.radius, cfg.steps, cfg.patch_side());
        for i in 0..scen.rows {
            for j in 0..scen.cols {
                let raw = extract_patch(&grid, 0, i, j, t_end, r, n).unwrap();
                let z = Tensor::from_fn(&[1, n, side, side], |k| {
                    let rest = k % (side * side);
                    let ii = (i as isize + (rest / side) as isize - r as isize).clamp(0, scen.rows as isize - 1) as usize;
                    let jj = (j as isize + (rest % side) as isize - r as isize).clamp(0, scen.cols as isize - 1) as usize;
                    stats.apply(ii, jj, raw.data()[k])
                });
                let want = stats.invert(i, j, model.predict(&z).unwrap().data()[0]);
                cells += 1;
                if frame.get(&[i, j]).to_bits() != want.to_bits() {
                    mismatched += 1;
                }
            }
        }
    }
    pass_if(
        conv_err <= ORACLE_TOL && lstm_err <= ORACLE_TOL && mismatched == 0,
        format!(
            "conv3d max |Δ| {conv_err:.1e}, convlstm max |Δ| {lstm_err:.1e} over {ORACLE_CASES} cases each (≤ {ORACLE_TOL:e}); predict_grid bit-identical on {}/{cells} cells",
            cells - mismatched
        ),
    )
}

fn slstm_stabilization() -> Outcome {
    let mut g = rng(41);
    let (mut worst, mut peak_seen, mut trials) = (0.0f64, 0.0f64, 0);
    while trials < 100 {
        let mut store = ParamStore::<f64>::new();
        let stack = Slstm::new(&mut store, "s", 3, 4, 2, 1, &mut g).unwrap();
        let scale = g.gen_range(0.5..4.0);
        for p in store.iter_mut() {
            p.value = p.value.map(|_| g.gen_range(-scale..scale));
        }
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| g.gen_range(-2.0..2.0)).collect()).collect();
        let l = &stack.layers[0];
        let (want, peak) = naive_slstm(store.get(l.w), store.get(l.r), store.get(l.b), &xs);
        if peak > SLSTM_PRE_BOUND {
            continue;
        }
        trials += 1;
        peak_seen = peak_seen.max(peak);
        let got = library_slstm(&store, &stack, &xs);
        for (a, b) in got.iter().zip(&want) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }

    let mut store = ParamStore::<f64>::new();
    let stack = Slstm::new(&mut store, "s", 2, 4, 2, 1, &mut g).unwrap();
    let l = stack.layers[0].clone();
    *store.get_mut(l.b) = Tensor::from_fn(&[16], |k| if (4..12).contains(&k) { 1000.0 } else { 0.0 });
    let xs: Vec<Vec<f64>> = (0..6).map(|t| vec![(t as f64).sin(), 0.5]).collect();
    let stable = library_slstm(&store, &stack, &xs);
    let bounded = stable.iter().flatten().all(|v| v.is_finite() && v.abs() <= 1.0);
    let (naive, _) = naive_slstm(store.get(l.w), store.get(l.r), store.get(l.b), &xs);
    let overflowed = naive.iter().flatten().any(|v| !v.is_finite());
    pass_if(
        worst < SLSTM_TOL && bounded && overflowed,
        format!(
            "max |Δ| {worst:.1e} < {SLSTM_TOL:e} over {trials} sequences (max |pre| {peak_seen:.1} ≤ {SLSTM_PRE_BOUND}); bias 1000: stabilized finite and |h| ≤ 1 = {bounded}, naive overflows = {overflowed}"
        ),
    )
}

fn metric_suite() -> Outcome {
    let mut g = rng(51);
    let mut rmse_ok = true;
    for _ in 0..500 {
        let n = g.gen_range(1..50);
        let p: Vec<f64> = (0..n).map(|_| g.gen_range(-100.0..100.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| g.gen_range(-100.0..100.0)).collect();
        rmse_ok &= rmse(&p, &a).unwrap() >= mae(&p, &a).unwrap();
    }
    let a: Vec<f64> = (0..40).map(|_| g.gen_range(-10.0..10.0)).collect();
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let r2_perfect = r2(&a, &a).unwrap();
    let r2_mean = r2(&vec![mean; a.len()], &a).unwrap();

    let mut identity = 0.0f64;
    let mut symmetry = 0.0f64;
    for _ in 0..20 {
        let x = uniform(&[12, 10], 0.0, 9.0, &mut g);
        let y = uniform(&[12, 10], 0.0, 9.0, &mut g);
        identity = identity.max((ssim(&x, &x).unwrap() - 1.0).abs());
        symmetry = symmetry.max((ssim_with(&x, &y, 7, 9.0).unwrap() - ssim_with(&y, &x, 7, 9.0).unwrap()).abs());
    }
    let (ca, cb, l) = (3.0, 5.5, 2.0);
    let c1 = (0.01f64 * l).powi(2);
    let closed = (2.0 * ca * cb + c1) / (ca * ca + cb * cb + c1);
    let constant = (ssim_with(&Tensor::full(&[8, 9], ca), &Tensor::full(&[8, 9], cb), 7, l).unwrap() - closed).abs();

    let mut lcg = Lcg::new();
    let mut reference = 0.0f64;
    for want in SSIM_REFERENCE {
        let (actual, pred) = lcg.ssim_pair();
        reference = reference.max((ssim(&pred, &actual).unwrap() - want).abs());
    }
    pass_if(
        rmse_ok && r2_perfect == 1.0 && r2_mean.abs() < 1e-12 && identity < 1e-12 && symmetry <= SSIM_SYMMETRY_TOL && constant < 1e-12 && reference < SSIM_REFERENCE_TOL,
        format!(
            "RMSE ≥ MAE on 500 draws = {rmse_ok}; R² perfect {r2_perfect}, mean {r2_mean:.1e}; SSIM |x,x−1| {identity:.1e}, asymmetry {symmetry:.1e} ≤ {SSIM_SYMMETRY_TOL:e}, constant-frame |Δ| {constant:.1e}; vs scikit-image max |Δ| {reference:.1e} < {SSIM_REFERENCE_TOL:e} on 20 pairs"
        ),
    )
}

fn baseline(report: &EvalReport, prefix: &str) -> f64 {
    report
        .baselines
        .iter()
        .find(|b| b.name.starts_with(prefix))
        .map(|b| b.metrics.mae)
        .unwrap_or(f64::NAN)
}

fn learning_signal() -> Outcome {
    let runs = learned();
    let mut pass = true;
    let mut parts = Vec::new();
    for &v in &LEARN_VARIANTS {
        let mine: Vec<&Learned> = runs.iter().filter(|r| r.variant == v).collect();
        let beats: Vec<bool> = mine
            .iter()
            .map(|r| {
                let m = r.report.aggregate.mae;
                m < baseline(&r.report, "persistence") && m < baseline(&r.report, "seasonal") && r.epochs <= MAX_EPOCHS
            })
            .collect();
        let time = median(mine.iter().map(|r| r.train_s).collect());
        pass &= beats.iter().all(|&b| b) && time < MODEL_BUDGET_S;
        let maes: Vec<String> = mine
            .iter()
            .map(|r| {
                format!(
                    "s{} {:.2}/{:.2}/{:.2}",
                    r.seed,
                    r.report.aggregate.mae,
                    baseline(&r.report, "persistence"),
                    baseline(&r.report, "seasonal")
                )
            })
            .collect();
        parts.push(format!("{v} [{}] median {time:.0}s", maes.join(", ")));
    }
    pass_if(
        pass,
        format!(
            "model/persistence/seasonal test MAE after {LEARN_EPOCHS} epochs: {}",
            parts.join("; ")
        ),
    )
}

fn autoregressive_trend() -> Outcome {
    let runs = learned();
    let mut pass = true;
    let mut parts = Vec::new();
    for &v in &LEARN_VARIANTS {
        let mine: Vec<&Learned> = runs.iter().filter(|r| r.variant == v).collect();
        let curve: Vec<f64> = (0..ROLLOUT_STEPS)
            .map(|k| median(mine.iter().map(|r| r.rollout.autoregressive[k].metrics.mae).collect()))
            .collect();
        let monotone = curve.windows(2).all(|w| w[1] >= w[0]);
        pass &= monotone;
        let text: Vec<String> = curve.iter().map(|m| format!("{m:.2}")).collect();
        parts.push(format!("{v} [{}]", text.join(" ")));
    }
    pass_if(pass, format!("3-seed median MAE by step 1..{ROLLOUT_STEPS}: {}", parts.join("; ")))
}

fn generalization() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let source = learned()
        .iter()
        .find(|r| r.variant == Variant::StnSlstmTf && r.seed == 0)
        .unwrap();
    let ckpt = dir.path().join("region_a.stnc");
    save_checkpoint(&source.trainer, &ckpt).unwrap();
    let region_b = Scenario {
        hotspots: 5,
        ..Scenario::default()
    };
    let b_grid = synth_grid(&region_b, 100).unwrap();
    let b_path = dir.path().join("region_b.grid");
    b_grid.save(&b_path).unwrap();
    let out = dir.path().join("eval_b");
    let args = EvalArgs {
        checkpoint: ckpt,
        data: b_path,
        split: "test".into(),
        autoregressive: Some(ROLLOUT_STEPS),
        stride: ROLLOUT_STRIDE,
        max_origins: None,
        refit_stats: true,
        feature: None,
        out: out.clone(),
    };
    let text = match cmd_eval(&args) {
        Ok(t) => t,
        Err(e) => return pass_if(false, format!("cmd_eval failed: {e}")),
    };
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let fields = [
        "variant", "split", "rows", "cols", "origins", "samples", "aggregate", "baselines", "deviation", "best_cells",
        "worst_cells", "best_clusters", "worst_clusters", "autoregressive",
    ];
    let missing: Vec<&str> = fields.iter().copied().filter(|f| report.get(f).is_none()).collect();
    let files = ["report.json", "heatmap_mae.csv", "ecdf.csv", "histogram.csv", "autoregressive.csv"];
    let absent: Vec<&str> = files.iter().copied().filter(|f| !out.join(f).exists()).collect();
    let a_mae = source.report.aggregate.mae;
    let b_mae = report["aggregate"]["mae"].as_f64().unwrap_or(f64::NAN);
    let b_persist = report["baselines"][0]["metrics"]["mae"].as_f64().unwrap_or(f64::NAN);
    let steps = report["autoregressive"].as_array().map_or(0, |a| a.len());
    pass_if(
        missing.is_empty() && absent.is_empty() && b_mae.is_finite() && steps == ROLLOUT_STEPS,
        format!(
            "region A→B without retraining: MAE {a_mae:.2} on A, {b_mae:.2} on B (persistence {b_persist:.2}); {steps}-row step table; missing fields {missing:?}, missing files {absent:?}"
        ),
    )
}

fn calibration() -> Outcome {
    let best = preset("table2-best").unwrap();
    let params = build_model::<f32>(&best, 0).unwrap().count_params();
    let baseline = build_model::<f32>(&preset("stn-baseline").unwrap(), 0).unwrap().count_macs() as f64;
    let mut ratios = Vec::new();
    for v in [Variant::StnSlstm, Variant::StnSlstmTf] {
        let c = ModelConfig { variant: v, ..best.clone() };
        ratios.push((v, build_model::<f32>(&c, 0).unwrap().count_macs() as f64 / baseline));
    }
    let ok_params = (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&params);
    let ok_ratio = ratios.iter().all(|(_, r)| (MAC_RATIO_RANGE.0..=MAC_RATIO_RANGE.1).contains(r));
    let text: Vec<String> = ratios.iter().map(|(v, r)| format!("{v} {r:.2}×")).collect();
    pass_if(
        ok_params && ok_ratio,
        format!(
            "table2-best params {params} in [{}, {}] (reference 156.2K); MACs vs stn-baseline {} in [{}, {}] (reference ≈4.4×)",
            PARAM_RANGE.0,
            PARAM_RANGE.1,
            text.join(", "),
            MAC_RATIO_RANGE.0,
            MAC_RATIO_RANGE.1
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scen = Scenario {
        rows: 6,
        cols: 6,
        steps: 400,
        ..Scenario::default()
    };
    let grid = synth_grid(&scen, 7).unwrap();
    let fr = SplitFractions::default();
    let stats = NormStats::fit(&grid, 0, fr.range(Split::Train, 400)).unwrap();
    let cfg = {
        let mut c = tiny_config(Variant::StnSlstmTf);
        c.radius = 1;
        c
    };
    let train = make_dataset(&grid, 0, &stats, fr, Split::Train, 6, cfg.radius, cfg.steps, 1).unwrap();
    let val = make_dataset(&grid, 0, &stats, fr, Split::Val, 6, cfg.radius, cfg.steps, 1).unwrap();
    let tc = |epochs| TrainConfig {
        epochs,
        batch_size: 16,
        max_batches: Some(8),
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |epochs| {
        let mut t = Trainer::new(build_model(&cfg, 5).unwrap(), tc(epochs), stats.clone()).unwrap();
        t.fit(&train, &val, |_| Ok(())).unwrap();
        t
    };
    let a = run(3);
    let b = run(3);
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_history_csv(&pa, &a.history).unwrap();
    write_history_csv(&pb, &b.history).unwrap();
    let csv_identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    let ck = dir.path().join("a.stnc");
    save_checkpoint(&a, &ck).unwrap();
    let loaded = load_checkpoint(&ck).unwrap();
    let (x, _) = val.batch(&(0..val.len().min(32)).collect::<Vec<_>>()).unwrap();
    let before = a.model.predict(&x).unwrap();
    let after = loaded.model.predict(&x).unwrap();
    let forward_identical = before.data().iter().zip(after.data()).all(|(p, q)| p.to_bits() == q.to_bits());

    let mut half = run(1);
    let ck1 = dir.path().join("half.stnc");
    save_checkpoint(&half, &ck1).unwrap();
    half = load_checkpoint(&ck1).unwrap();
    half.config = tc(3);
    half.fit(&train, &val, |_| Ok(())).unwrap();
    let resumed = half.model == a.model && half.adam == a.adam && half.history == a.history && half.step == a.step;
    pass_if(
        csv_identical && forward_identical && resumed,
        format!(
            "history CSV byte-identical = {csv_identical}; save→load→forward bit-identical = {forward_identical}; 1+2 resumed epochs equal 3 uninterrupted = {resumed}"
        ),
    )
}

fn tia_dir() -> Option<PathBuf> {
    std::env::var_os("STN_TIA_DIR").map(PathBuf::from).filter(|p| p.exists())
}

fn real_data() -> Outcome {
    let Some(tsv) = tia_dir() else {
        return Outcome {
            pass: true,
            skipped: true,
            detail: "no Telecom Italia TSV data (set STN_TIA_DIR to a directory of daily files)".into(),
        };
    };
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("milan.grid");
    let import = cmd_import(&ImportArgs {
        tsv,
        dims: "100x100".into(),
        feature: "internet".into(),
        interval: 600,
        max_malformed: 0.01,
        out: grid.clone(),
    });
    if let Err(e) = import {
        return pass_if(false, format!("cmd_import failed: {e}"));
    }
    let text = match cmd_analyze(&AnalyzeArgs {
        data: grid,
        cell: "50,50".into(),
        radius: 5,
        feature: None,
        out: None,
    }) {
        Ok(t) => t,
        Err(e) => return pass_if(false, format!("cmd_analyze failed: {e}")),
    };
    let value = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.parse::<f64>().ok())
            .unwrap_or(f64::NAN)
    };
    let (cell, patch) = (value("apen_cell="), value("apen_patch="));
    pass_if(cell > patch, format!("100×100 grid, cell (50,50): ApEn single cell {cell:.3} vs 11×11 aggregate {patch:.3}"))
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient integrity", gradient_integrity),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "sLSTM stabilization", slstm_stabilization),
        (4, "metric suite", metric_suite),
        (5, "learning signal", learning_signal),
        (6, "autoregressive degradation", autoregressive_trend),
        (7, "cross-region evaluation", generalization),
        (8, "calibration targets", calibration),
        (9, "determinism and persistence", determinism),
        (10, "real-data path", real_data),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.skipped {
            "SKIP"
        } else if o.pass {
            "PASS"
        } else {
            "FAIL"
        };
        println!("criterion {n:>2} {name}: {tag} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
