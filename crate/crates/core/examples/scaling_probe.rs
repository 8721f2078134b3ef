//! Reservoir-pass wall time and retained memory as the series length and
//! the reservoir size grow.

use reservoir_transformer::harness::{run_scaling_probe, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let r = run_scaling_probe(&ExperimentSpec::desk())?;
    for ((t, s), b) in r.t_values.iter().zip(&r.t_seconds).zip(&r.t_retained_bytes) {
        println!("T = {t:>7}  {s:.4}s  retained {b} bytes");
    }
    for (n, s) in r.nr_values.iter().zip(&r.nr_seconds) {
        println!("N_r = {n:>4}  {s:.4}s");
    }
    println!("slope in T {:.3}, slope in N_r {:.3}", r.t_slope, r.nr_slope);
    Ok(())
}
