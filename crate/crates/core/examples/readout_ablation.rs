//! Identity, ReLU, tanh and self-attention readouts on the same data and
//! seeds. The optional argument sets the number of seeds.

use reservoir_transformer::harness::{run_readout_ablation, ExperimentSpec};
use reservoir_transformer::stats::median;

fn main() -> reservoir_transformer::Result<()> {
    let mut spec = ExperimentSpec::desk();
    if let Some(n) = std::env::args().nth(1) {
        spec.seeds = (0..n.parse().expect("seed count")).collect();
    }
    let out = run_readout_ablation(&spec)?;
    for arm in &spec.readout_arms {
        let rs: Vec<_> = out.records.iter().filter(|r| &r.arm == arm).collect();
        let mse: Vec<f64> = rs.iter().map(|r| r.mse).collect();
        let mae: Vec<f64> = rs.iter().map(|r| r.mae).collect();
        println!("{arm:<15} median mse {:.6}  median mae {:.6}  control {}", median(&mse), median(&mae), &rs[0].control_hash[..12]);
    }
    Ok(())
}
