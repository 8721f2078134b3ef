//! Test error against the number of reservoirs in the group. The optional
//! argument sets the number of seeds.

use reservoir_transformer::harness::{curve_steps_within_se, run_group_ablation, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let mut spec = ExperimentSpec::desk();
    if let Some(n) = std::env::args().nth(1) {
        spec.seeds = (0..n.parse().expect("seed count")).collect();
    }
    let (curve, out) = run_group_ablation(&spec)?;
    for p in &curve {
        println!("L = {:>2}  median mse {:.6}  {:?}", p.l, p.median_mse, p.mses);
    }
    for (a, b, rise, se, ok) in curve_steps_within_se(&curve) {
        println!("{a:>2} -> {b:>2}  change {rise:+.2e}  se {se:.2e}  {}", if ok { "ok" } else { "rises" });
    }
    for (arm, seed, e) in &out.failures {
        println!("failed {arm} seed {seed}: {e}");
    }
    Ok(())
}
