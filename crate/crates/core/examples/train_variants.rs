//! Trains each architecture briefly on one synthetic city and compares its
//! test MAE with the persistence and seasonal baselines.

use std::time::Instant;

use stn::data::{make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};
use stn::eval::{evaluate, EvalOptions};
use stn::model::{build_model, ModelConfig, Variant};
use stn::train::{TrainConfig, Trainer};

fn main() -> stn::Result<()> {
    let scenario = Scenario {
        rows: 12,
        cols: 12,
        ..Scenario::default()
    };
    let grid = synth_grid(&scenario, 0)?;
    let fractions = SplitFractions::default();
    let stats = NormStats::fit(&grid, 0, fractions.range(Split::Train, grid.dims().0))?;

    for variant in Variant::ALL {
        let mut cfg = ModelConfig::new(variant, 8, 1, 2, 1, 2);
        cfg.radius = 2;
        let train = make_dataset(&grid, 0, &stats, fractions, Split::Train, 6, cfg.radius, cfg.steps, 1)?;
        let val = make_dataset(&grid, 0, &stats, fractions, Split::Val, 12, cfg.radius, cfg.steps, 1)?.subsample(4);
        let config = TrainConfig {
            epochs: 3,
            lr: 2e-3,
            max_batches: Some(80),
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let mut trainer = Trainer::new(build_model(&cfg, 0)?, config, stats.clone())?;
        let summary = trainer.fit(&train, &val, |t| {
            let r = t.history.last().unwrap();
            println!("  {variant} epoch {} train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss);
            Ok(())
        })?;
        let best = summary.best.map(|b| b.model).unwrap_or(trainer.model);
        let opts = EvalOptions {
            stride: 6,
            ..EvalOptions::default()
        };
        let report = evaluate(&best, &grid, 0, &stats, &opts)?.report;
        let baselines: Vec<String> = report
            .baselines
            .iter()
            .map(|b| format!("{} {:.3}", b.name, b.metrics.mae))
            .collect();
        println!(
            "{variant}: {} params, test MAE {:.3} ({}), {:.1}s",
            best.count_params(),
            report.aggregate.mae,
            baselines.join(", "),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
