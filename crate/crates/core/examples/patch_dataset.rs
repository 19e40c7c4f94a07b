//! Builds normalized patch windows for each split and pulls one batch.

use stn::data::{make_dataset, synth_grid, NormStats, Scenario, Split, SplitFractions};

fn main() -> stn::Result<()> {
    let grid = synth_grid(&Scenario::default(), 1)?;
    let (t, ..) = grid.dims();
    let fractions = SplitFractions::default();
    let stats = NormStats::fit(&grid, 0, fractions.range(Split::Train, t))?;
    let (r, n) = (2, 6);

    for split in [Split::Train, Split::Val, Split::Test] {
        let ds = make_dataset(&grid, 0, &stats, fractions, split, 12, r, n, 1)?;
        println!("{split:?}: frames {:?}, {} windows", fractions.range(split, t), ds.len());
    }

    let train = make_dataset(&grid, 0, &stats, fractions, Split::Train, 12, r, n, 1)?;
    let (x, y) = train.batch(&[0, 1, 2, 3])?;
    println!("batch inputs {:?}, targets {:?}", x.shape(), y.shape());
    let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / x.numel() as f64;
    println!("normalized input mean {mean:.3}, first targets {:?}", &y.data()[..4]);
    Ok(())
}
