//! Generates a synthetic city, writes it as a grid file and prints the
//! exploratory statistics that motivate patch inputs.

use stn::data::{
    approx_entropy_default, autocorrelation, patch_aggregate_series, spatial_correlation_map, synth_grid,
    GridSeries, Scenario,
};

fn main() -> stn::Result<()> {
    let scenario = Scenario {
        rows: 16,
        cols: 16,
        ..Scenario::default()
    };
    let grid = synth_grid(&scenario, 7)?;
    let path = std::env::temp_dir().join("stn_synth_explore.grid");
    grid.save(&path)?;
    let grid = GridSeries::load(&path)?;
    let (t, rows, cols, f) = grid.dims();
    println!("wrote {} (T={t} I={rows} J={cols} F={f})", path.display());

    let center = (rows / 2, cols / 2);
    let cell = patch_aggregate_series(&grid, 0, center, 0)?;
    println!("cell {center:?}: lag-144 autocorrelation {:.3}", autocorrelation(&cell, 144));
    for r in [0, 1, 2, 5] {
        let series = patch_aggregate_series(&grid, 0, center, r)?;
        println!("  radius {r}: approximate entropy {:.4}", approx_entropy_default(&series)?);
    }

    let corr = spatial_correlation_map(&grid, 0, center)?;
    println!("correlation with {center:?}, row {}:", center.0);
    let row: Vec<String> = (0..cols).map(|j| format!("{:.2}", corr.get(&[center.0, j]))).collect();
    println!("  {}", row.join(" "));
    Ok(())
}
