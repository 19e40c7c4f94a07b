//! Parameter and multiply–accumulate counts of the named presets.

use stn::model::{build_model, preset, StnModel, PRESETS};

fn main() -> stn::Result<()> {
    println!("{:<14} {:>14} {:>10} {:>14}", "preset", "variant", "params", "MACs");
    let mut baseline = 0;
    for name in PRESETS {
        let cfg = preset(name).expect("known preset");
        let m: StnModel<f32> = build_model(&cfg, 0)?;
        if name == "stn-baseline" {
            baseline = m.count_macs();
        }
        println!(
            "{:<14} {:>14} {:>10} {:>14}",
            name,
            cfg.variant.to_string(),
            m.count_params(),
            m.count_macs()
        );
    }
    let best: StnModel<f32> = build_model(&preset("table2-best").unwrap(), 0)?;
    println!();
    for (part, macs) in best.mac_breakdown() {
        println!("  {part:<18} {macs:>12}");
    }
    println!(
        "\nMAC ratio table2-best / stn-baseline: {:.2}",
        best.count_macs() as f64 / baseline as f64
    );
    Ok(())
}
