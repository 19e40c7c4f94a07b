//! Saves a checkpoint mid-run, reloads it and finishes training; the
//! result matches an uninterrupted run exactly.

use stn::data::{make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};
use stn::model::{build_model, ModelConfig, Variant};
use stn::train::{load_checkpoint, save_checkpoint, write_history_csv, TrainConfig, Trainer};

fn main() -> stn::Result<()> {
    let scenario = Scenario {
        rows: 8,
        cols: 8,
        steps: 1008,
        ..Scenario::default()
    };
    let grid = synth_grid(&scenario, 9)?;
    let fractions = SplitFractions::default();
    let stats = NormStats::fit(&grid, 0, fractions.range(Split::Train, grid.dims().0))?;
    let mut cfg = ModelConfig::new(Variant::StnSlstmTf, 8, 1, 2, 1, 2);
    cfg.radius = 1;
    let train = make_dataset(&grid, 0, &stats, fractions, Split::Train, 6, cfg.radius, cfg.steps, 1)?;
    let val = make_dataset(&grid, 0, &stats, fractions, Split::Val, 6, cfg.radius, cfg.steps, 1)?;
    let config = |epochs| TrainConfig {
        epochs,
        max_batches: Some(20),
        ..TrainConfig::default()
    };

    let mut full = Trainer::new(build_model(&cfg, 9)?, config(4), stats.clone())?;
    full.fit(&train, &val, |_| Ok(()))?;

    let dir = std::env::temp_dir().join("stn_checkpoint_resume");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("epoch2.stnc");
    let mut first = Trainer::new(build_model(&cfg, 9)?, config(2), stats)?;
    first.fit(&train, &val, |_| Ok(()))?;
    save_checkpoint(&first, &path)?;
    println!("saved {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let mut resumed = load_checkpoint(&path)?;
    println!("reloaded state equal: {}", resumed == first);
    resumed.config = config(4);
    resumed.fit(&train, &val, |t| {
        println!("  resumed epoch {}", t.epoch);
        Ok(())
    })?;
    write_history_csv(dir.join("history.csv"), &resumed.history)?;
    for r in &resumed.history {
        println!("epoch {} train {:.5} val {:.5}", r.epoch, r.train_loss, r.val_loss);
    }
    println!("resumed run equals uninterrupted run: {}", resumed == full);
    Ok(())
}
