//! Train the desk-scale model on Mackey–Glass and compare it with the
//! transformer-only baseline on the same seed.

use reservoir_transformer::harness::{prepare, run_cell, transformer_only, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let mut spec = ExperimentSpec::desk();
    if let Some(seed) = std::env::args().nth(1) {
        spec.seeds = vec![seed.parse().expect("seed")];
    }
    let p = prepare(&spec)?;
    let seed = spec.seeds[0];
    let h = spec.horizons[0];
    for (arm, s) in [("group", spec.clone()), ("transformer_only", transformer_only(&spec))] {
        let c = run_cell(&s, &p, arm, seed, h)?;
        let r = &c.record;
        println!(
            "{arm:>17}  mse {:.5}  mae {:.5}  kappa {:.3}  train {:.4} -> {:.4}  {:.1}s",
            r.mse, r.mae, r.kappa, r.initial_train_loss, r.final_train_loss, r.wall_time
        );
    }
    Ok(())
}
