//! Fading memory of a leaky reservoir: two different initial states driven
//! by the same input converge.

use reservoir_transformer::reservoir::{effective_radius, ReservoirState};
use reservoir_transformer::{Reservoir, ReservoirConfig, Rng};

fn main() -> reservoir_transformer::Result<()> {
    let res = Reservoir::init(ReservoirConfig { d_in: 2, ..Default::default() })?;
    println!("effective spectral radius {:.4}", effective_radius(&res)?);
    let mut rng = Rng::new(1);
    let mut a = ReservoirState::zeros(res.n_r());
    let mut b = ReservoirState { x: (0..res.n_r()).map(|_| rng.uniform(-1.0, 1.0)).collect(), t: 0 };
    let gap = |a: &ReservoirState, b: &ReservoirState| a.x.iter().zip(&b.x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let g0 = gap(&a, &b);
    for t in 1..=500 {
        let h = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        a = res.step(&a, &h)?;
        b = res.step(&b, &h)?;
        if t % 100 == 0 {
            println!("t = {t:>3}  |dx| / |dx0| = {:.3e}", gap(&a, &b) / g0);
        }
    }
    Ok(())
}
