//! Correlation dimension of synthetic point sets and generated chaotic
//! series.

use reservoir_transformer::chaos::{delay_embed, estimate_d2, estimate_d2_points, D2Options, FitWindow};
use reservoir_transformer::data::{gen_lorenz, gen_mackey_glass, LorenzParams, MackeyGlassParams};
use reservoir_transformer::{Rng, SeriesTensor};

fn main() -> reservoir_transformer::Result<()> {
    let mut opts = D2Options::default();
    if std::env::args().any(|a| a == "--most-linear") {
        opts.window = FitWindow::MostLinear;
    }
    let mut rng = Rng::new(7);
    let square: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.unit(), rng.unit()]).collect();
    let line: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64 / 499.0]).collect();
    let lorenz = gen_lorenz(&LorenzParams { n: 1100, sample_every: 10, ..Default::default() })?.slice(100, 1100);
    let lorenz_pts: Vec<Vec<f64>> = (0..lorenz.len()).map(|t| lorenz.row(t).to_vec()).collect();
    let mg = gen_mackey_glass(&MackeyGlassParams { n: 1100, discard: 200, ..Default::default() })?;
    let sine = SeriesTensor::univariate((0..1100).map(|t| (0.1 * t as f64).sin()).collect())?;

    let show = |name: &str, d2: f64, r2: f64| println!("{name:<14} d2 {d2:.3}  (fit r² {r2:.4})");
    let e = estimate_d2_points(&square, &opts)?;
    show("unit square", e.d2, e.r2);
    let e = estimate_d2_points(&line, &opts)?;
    show("segment", e.d2, e.r2);
    let e = estimate_d2_points(&lorenz_pts, &opts)?;
    show("lorenz", e.d2, e.r2);
    let e = estimate_d2(&mg, 0, 1000, 3, 1, &opts)?;
    show("mackey-glass", e.d2, e.r2);
    let e = estimate_d2(&sine, 0, 1000, 3, 1, &opts)?;
    show("sine", e.d2, e.r2);
    let emb = delay_embed(&lorenz.column(0), 3, 1)?;
    let e = estimate_d2_points(&emb[..990], &opts)?;
    show("lorenz x only", e.d2, e.r2);
    Ok(())
}
