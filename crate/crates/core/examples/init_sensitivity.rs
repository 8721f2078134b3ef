//! Initialization-scheme sensitivity of a single reservoir against a group.
//! Optional arguments: number of seeds, then `all` to apply the scheme to
//! every member.

use reservoir_transformer::harness::{run_init_sensitivity, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let mut spec = ExperimentSpec::desk();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(n) = args.first() {
        spec.seeds = (0..n.parse().expect("seed count")).collect();
    }
    if let Some(scope) = args.get(1) {
        spec.scheme_scope = scope.clone();
    }
    let t = run_init_sensitivity(&spec)?;
    println!("combined mean {:.6}", t.combined_mean);
    for b in &t.blocks {
        println!("L = {}  variance {:.3e}  p {:.3e}", b.l, b.cross_scheme_variance, b.p_value);
        for r in &b.rows {
            println!("  {:<9} mean {:.6}  p {:.3e}  {:?}", r.scheme, r.mean_mse, r.p_value, r.mses);
        }
    }
    for (arm, seed, e) in &t.outcome_failures {
        println!("failed {arm} seed {seed}: {e}");
    }
    Ok(())
}
