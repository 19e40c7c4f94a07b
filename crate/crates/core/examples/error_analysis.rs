//! Evaluates a briefly trained model and writes the error-analysis exports:
//! report JSON, MAE heatmap, deviation histogram and ECDF.

use stn::data::{make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};
use stn::eval::{evaluate, write_exports, EvalOptions};
use stn::model::{build_model, ModelConfig, Variant};
use stn::train::{TrainConfig, Trainer};

fn main() -> stn::Result<()> {
    let scenario = Scenario {
        rows: 12,
        cols: 12,
        hotspots: 4,
        ..Scenario::default()
    };
    let grid = synth_grid(&scenario, 5)?;
    let fractions = SplitFractions::default();
    let stats = NormStats::fit(&grid, 0, fractions.range(Split::Train, grid.dims().0))?;

    let mut cfg = ModelConfig::new(Variant::Stn, 8, 1, 2, 1, 2);
    cfg.radius = 2;
    let train = make_dataset(&grid, 0, &stats, fractions, Split::Train, 6, cfg.radius, cfg.steps, 1)?;
    let val = make_dataset(&grid, 0, &stats, fractions, Split::Val, 12, cfg.radius, cfg.steps, 1)?;
    let config = TrainConfig {
        epochs: 4,
        lr: 2e-3,
        max_batches: Some(150),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(build_model(&cfg, 5)?, config, stats.clone())?;
    trainer.fit(&train, &val, |_| Ok(()))?;

    let opts = EvalOptions {
        stride: 3,
        ..EvalOptions::default()
    };
    let ev = evaluate(&trainer.model, &grid, 0, &stats, &opts)?;
    let r = &ev.report;
    let d = &r.deviation;
    println!("{} samples, MAE {:.3}, RMSE {:.3}", r.samples, r.aggregate.mae, r.aggregate.rmse);
    println!(
        "deviation mean {:+.3}, skewness {:+.3}, range [{:.2}, {:.2}]",
        d.mean, d.skewness, d.min, d.max
    );
    println!(
        "|d| > {} in {:.2}% of samples, |d| < {} in {:.2}%",
        d.limit,
        100.0 * d.frac_beyond_limit,
        d.band,
        100.0 * d.frac_within_band
    );
    for q in &d.quantiles {
        println!("  q{:<5} {:+.3}", q.q, q.value);
    }
    for (label, cells) in [("best", &r.best_cells), ("worst", &r.worst_cells)] {
        let text: Vec<String> = cells.iter().map(|c| format!("({},{}) {:.2}", c.i, c.j, c.mae)).collect();
        println!("{label} cells: {}", text.join(", "));
    }

    let dir = std::env::temp_dir().join("stn_error_analysis");
    for file in write_exports(&dir, &ev)? {
        println!("wrote {}", dir.join(file).display());
    }
    Ok(())
}
