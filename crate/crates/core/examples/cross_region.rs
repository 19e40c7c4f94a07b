//! Drives the command layer end to end: synthesizes two regions, trains on
//! the first and evaluates the checkpoint on the second without retraining.

use stn::cli::{cmd_eval, cmd_synth, cmd_train, EvalArgs, SynthArgs, TrainArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("stn_cross_region");
    std::fs::create_dir_all(&dir)?;
    let region_a = dir.join("region_a.grid");
    let region_b = dir.join("region_b.grid");
    for (out, seed, hotspots) in [(&region_a, 0, 3), (&region_b, 100, 5)] {
        let head = cmd_synth(&SynthArgs {
            scenario: None,
            out: out.clone(),
            seed,
            sets: vec!["rows=12".into(), "cols=12".into(), format!("hotspots={hotspots}")],
        })?;
        println!("{}: {}", out.display(), head.trim());
    }

    let run = dir.join("run_a");
    let sets = [
        format!("data={}", region_a.display()),
        format!("out={}", run.display()),
        "variant=STN-sLSTM-TF".into(),
        "hidden=8".into(),
        "b=1".into(),
        "a=2".into(),
        "l=1".into(),
        "f=2".into(),
        "r=2".into(),
        "train_stride=6".into(),
        "epochs=4".into(),
        "max_batches=150".into(),
        "lr=0.002".into(),
    ];
    let summary = cmd_train(&TrainArgs {
        config: None,
        sets: sets.to_vec(),
        resume: None,
    })
    .map_err(|(e, _)| e)?;
    println!("{}", summary.trim());

    let report = cmd_eval(&EvalArgs {
        checkpoint: run.join("best.stnc"),
        data: region_b,
        split: "test".into(),
        autoregressive: Some(3),
        stride: 12,
        max_origins: None,
        refit_stats: true,
        feature: None,
        out: dir.join("eval_b"),
    })?;
    let json: serde_json::Value = serde_json::from_str(&report)?;
    println!("region B aggregate: {}", json["aggregate"]);
    for b in json["baselines"].as_array().into_iter().flatten() {
        println!("  baseline {}: MAE {}", b["name"], b["metrics"]["mae"]);
    }
    for s in json["autoregressive"].as_array().into_iter().flatten() {
        println!("  step {}: MAE {}", s["step"], s["metrics"]["mae"]);
    }
    Ok(())
}
