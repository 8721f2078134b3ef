//! Write Mackey–Glass and Lorenz series with their metadata sidecars.

use reservoir_transformer::harness::{run_gen_data, ExperimentSpec};

fn main() -> reservoir_transformer::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "generated".into());
    for dataset in ["mackey_glass", "lorenz"] {
        let spec = ExperimentSpec { dataset: dataset.into(), ..ExperimentSpec::desk() };
        println!("{}", run_gen_data(&spec, out.as_ref())?.display());
    }
    Ok(())
}
