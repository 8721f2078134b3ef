//! Histogram entropy of the embedding, reservoir readout and fused features
//! of a trained desk model.

use reservoir_transformer::harness::{feature_entropy, prepare, run_cell, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let spec = ExperimentSpec::desk();
    let p = prepare(&spec)?;
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let cell = run_cell(&spec, &p, "entropy", seed, spec.horizons[0])?;
    let e = feature_entropy(&cell, spec.entropy_bins)?;
    println!("entropy (nats, {} bins)", spec.entropy_bins);
    println!("  h_t {:.4}", e.h);
    println!("  z_t {:.4}", e.z);
    println!("  f_t {:.4}", e.f);
    Ok(())
}
