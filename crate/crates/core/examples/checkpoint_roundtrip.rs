//! Train briefly, save a checkpoint, reload it and compare predictions.

use reservoir_transformer::checkpoint;
use reservoir_transformer::harness::{prepare, run_cell, ExperimentSpec};
use reservoir_transformer::train::predict_rolling;

fn main() -> reservoir_transformer::Result<()> {
    let spec = ExperimentSpec { epochs: 3, ..ExperimentSpec::desk() };
    let p = prepare(&spec)?;
    let cell = run_cell(&spec, &p, "ckpt", 0, spec.horizons[0])?;
    let path = std::env::temp_dir().join("rt_checkpoint.txt");
    checkpoint::save(&cell.model, &path)?;
    let back = checkpoint::load(&path)?;
    let t0 = cell.test_ts[0];
    let a = predict_rolling(&cell.model, &p.raw, t0, 20, 5)?;
    let b = predict_rolling(&back, &p.raw, t0, 20, 5)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.pred.as_slice().iter().zip(y.pred.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits()));
    println!("{} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!("reloaded predictions bit-identical: {same}");
    Ok(())
}
