//! Rolls a trained model forward six steps, feeding predictions back as
//! inputs, and shows how the error grows with the horizon.

use stn::data::{make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};
use stn::eval::{autoregressive_forecast, evaluate, EvalOptions};
use stn::model::{build_model, ModelConfig, Variant};
use stn::train::{TrainConfig, Trainer};

fn main() -> stn::Result<()> {
    let scenario = Scenario {
        rows: 10,
        cols: 10,
        ..Scenario::default()
    };
    let grid = synth_grid(&scenario, 2)?;
    let fractions = SplitFractions::default();
    let t = grid.dims().0;
    let stats = NormStats::fit(&grid, 0, fractions.range(Split::Train, t))?;

    let mut cfg = ModelConfig::new(Variant::StnSlstm, 8, 1, 2, 1, 2);
    cfg.radius = 2;
    let train = make_dataset(&grid, 0, &stats, fractions, Split::Train, 6, cfg.radius, cfg.steps, 1)?;
    let val = make_dataset(&grid, 0, &stats, fractions, Split::Val, 12, cfg.radius, cfg.steps, 1)?;
    let config = TrainConfig {
        epochs: 3,
        lr: 2e-3,
        max_batches: Some(80),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(build_model(&cfg, 2)?, config, stats.clone())?;
    trainer.fit(&train, &val, |_| Ok(()))?;

    let cell = (4, 6);
    let t_end = fractions.range(Split::Test, t).start + 40;
    let path = autoregressive_forecast(&trainer.model, &grid, 0, &stats, cell, t_end, 6)?;
    println!("cell {cell:?} from frame {t_end}:");
    for (k, p) in path.iter().enumerate() {
        let actual = grid.frame(t_end + 1 + k, 0).get(&[cell.0, cell.1]);
        println!("  t+{} predicted {p:8.3} actual {actual:8.3}", k + 1);
    }

    let opts = EvalOptions {
        stride: 12,
        autoregressive: Some(6),
        ..EvalOptions::default()
    };
    let report = evaluate(&trainer.model, &grid, 0, &stats, &opts)?.report;
    println!("test split, {} origins:", report.origins);
    println!("  step      MAE     RMSE  median cell MAE");
    for s in &report.autoregressive {
        println!("  {:>4} {:8.3} {:8.3} {:16.3}", s.step, s.metrics.mae, s.metrics.rmse, s.median_cell_mae);
    }
    Ok(())
}
