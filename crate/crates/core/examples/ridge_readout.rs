//! Recover a known linear readout from reservoir states by ridge regression.

use reservoir_transformer::reservoir::fit_linear_readout;
use reservoir_transformer::{Matrix, Reservoir, ReservoirConfig, Rng};

fn main() -> reservoir_transformer::Result<()> {
    let res = Reservoir::init(ReservoirConfig { n_r: 30, d_in: 1, ..Default::default() })?;
    let mut rng = Rng::new(5);
    let inputs = Matrix::from_vec(400, 1, (0..400).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let states = res.run_matrix(&inputs)?;
    let w: Vec<f64> = (0..30).map(|_| rng.normal(0.0, 1.0)).collect();
    let targets = Matrix::from_vec(400, 1, (0..400).map(|t| states.row(t).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5).collect());
    let ro = fit_linear_readout(&states, &targets, 0.0)?;
    let err = ro.w_out.as_slice().iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max weight error {err:.2e}, bias {:.6}", ro.theta_out[(0, 0)]);
    Ok(())
}
