//! Compare reverse-mode gradients of a tiny model with central differences.

use reservoir_transformer::group::GroupConfig;
use reservoir_transformer::model::DropoutRates;
use reservoir_transformer::train::gradient_check;
use reservoir_transformer::{ForecastModel, Matrix, ModelConfig};

fn main() -> reservoir_transformer::Result<()> {
    let cfg = ModelConfig {
        window_k: 6,
        neighbor_radius: 4,
        horizon_tau: 3,
        d_eps: 4,
        blocks: 2,
        heads: 2,
        ff_width: 8,
        dropout: DropoutRates::NONE,
        group: GroupConfig { l: 3, n_r: 8, d_in: 4, m: 6, n_tokens: 3, ..Default::default() },
        ..Default::default()
    };
    let model = ForecastModel::init(cfg)?;
    let series = Matrix::from_vec(60, 1, (0..60).map(|i| (0.25 * i as f64).sin() + 0.1 * (0.9 * i as f64).cos()).collect());
    let r = gradient_check(&model, &series, &[10, 25, 40], 1.0, 1e-5)?;
    for (name, e) in &r.per_tensor {
        println!("{name:<14} {e:.2e}");
    }
    println!("max relative error {:.2e}", r.max_rel_error);
    Ok(())
}
