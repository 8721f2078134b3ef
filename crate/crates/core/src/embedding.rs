//! Reversible instance normalization and the short-window embedding: an
//! affine token map followed by cross-attention from the window onto the
//! neighborhood of its last time step.

use crate::data::SeriesTensor;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, softmax_in_place, Matrix};
use crate::rng::{sample_uniform, Rng};

/// Floor applied to per-feature standard deviations before dividing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &SeriesTensor) -> Result<Self> {
        let t = series.len();
        if t < 2 {
            return Err(Error::InsufficientData("normalization needs at least 2 rows".into()));
        }
        let n = series.n_features();
        let mut mean = vec![0.0; n];
        for r in 0..t {
            for (m, v) in mean.iter_mut().zip(series.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        let mut var = vec![0.0; n];
        for r in 0..t {
            for ((s, v), m) in var.iter_mut().zip(series.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / t as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, series: &SeriesTensor) -> Result<SeriesTensor> {
        self.check(series.n_features())?;
        let mut v = series.values().clone();
        for r in 0..v.rows() {
            for (c, x) in v.row_mut(r).iter_mut().enumerate() {
                *x = (*x - self.mean[c]) / self.std[c];
            }
        }
        Ok(series.map_values(v))
    }

    pub fn invert(&self, series: &SeriesTensor) -> Result<SeriesTensor> {
        Ok(series.map_values(self.invert_matrix(series.values())?))
    }

    /// Maps a `rows × N_u` block in normalized units back to data units.
    pub fn invert_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m.cols())?;
        let mut v = m.clone();
        for r in 0..v.rows() {
            for (c, x) in v.row_mut(r).iter_mut().enumerate() {
                *x = *x * self.std[c] + self.mean[c];
            }
        }
        Ok(v)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.mean.len() {
            return dim_err(format!("stats for {} features applied to {}", self.mean.len(), n));
        }
        Ok(())
    }
}

pub fn revin_normalize(series: &SeriesTensor) -> Result<(SeriesTensor, NormStats)> {
    let stats = NormStats::fit(series)?;
    Ok((stats.apply(series)?, stats))
}

pub fn revin_denormalize(series: &SeriesTensor, stats: &NormStats) -> Result<SeriesTensor> {
    stats.invert(series)
}

/// Trainable embedding parameters. `token_map` maps an `N_u` observation to
/// `d_eps` dimensions; `w_q`, `w_k`, `w_v` act on column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub d_eps: usize,
    pub token_map: Matrix,
    /// 1 × d_eps
    pub token_bias: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub window_k: usize,
    pub neighbor_radius: usize,
}

impl EmbeddingParams {
    pub fn init(n_u: usize, d_eps: usize, window_k: usize, neighbor_radius: usize, rng: &mut Rng) -> Result<Self> {
        if d_eps == 0 || window_k == 0 || n_u == 0 {
            return Err(Error::Config("embedding needs d_eps ≥ 1, window_k ≥ 1, n_u ≥ 1".into()));
        }
        let a_in = 1.0 / (n_u as f64).sqrt();
        let a_d = 1.0 / (d_eps as f64).sqrt();
        Ok(Self {
            d_eps,
            token_map: sample_uniform(rng, -a_in, a_in, d_eps, n_u)?,
            token_bias: sample_uniform(rng, -0.1, 0.1, 1, d_eps)?,
            w_q: sample_uniform(rng, -a_d, a_d, d_eps, d_eps)?,
            w_k: sample_uniform(rng, -a_d, a_d, d_eps, d_eps)?,
            w_v: sample_uniform(rng, -a_d, a_d, d_eps, d_eps)?,
            window_k,
            neighbor_radius,
        })
    }

    pub fn n_u(&self) -> usize {
        self.token_map.cols()
    }
}

/// Row `t` of the result is `token_map · u_t + bias`.
pub fn embed_tokens(window: &Matrix, params: &EmbeddingParams) -> Result<Matrix> {
    if window.cols() != params.n_u() {
        return dim_err(format!("window has {} features, embedding expects {}", window.cols(), params.n_u()));
    }
    let mut e = window.matmul_t(&params.token_map)?;
    for r in 0..e.rows() {
        for (x, b) in e.row_mut(r).iter_mut().zip(params.token_bias.as_slice()) {
            *x += b;
        }
    }
    Ok(e)
}

/// Token embedding of a window that must have exactly `window_k` rows.
pub fn embed_window_tokens(window: &Matrix, params: &EmbeddingParams) -> Result<Matrix> {
    if window.rows() != params.window_k {
        return dim_err(format!("window has {} rows, expected {}", window.rows(), params.window_k));
    }
    embed_tokens(window, params)
}

/// `softmax((W_k·Q)(W_q·KV)ᵀ / √d) (W_v·KV)` with the window as queries and
/// the neighborhood as keys and values. Note the key/query matrix naming is
/// swapped relative to the usual convention.
pub fn cross_attention(window_embed: &Matrix, neighbor_embed: &Matrix, params: &EmbeddingParams) -> Result<Matrix> {
    let d = params.d_eps;
    if window_embed.cols() != d || neighbor_embed.cols() != d {
        return dim_err(format!(
            "cross attention expects width {d}, got {} and {}",
            window_embed.cols(),
            neighbor_embed.cols()
        ));
    }
    if neighbor_embed.rows() == 0 {
        return dim_err("cross attention needs at least one neighbor");
    }
    let q = window_embed.matmul_t(&params.w_k)?;
    let k = neighbor_embed.matmul_t(&params.w_q)?;
    let v = neighbor_embed.matmul_t(&params.w_v)?;
    let mut scores = q.matmul_t(&k)?.scale(1.0 / (d as f64).sqrt());
    for r in 0..scores.rows() {
        softmax_in_place(scores.row_mut(r));
    }
    scores.matmul(&v)
}

/// First row of the causal neighborhood of `t`.
pub fn neighbor_start(t: usize, radius: usize) -> usize {
    t.saturating_sub(radius)
}

/// `h_t`: the `k × d_eps` embedding of the window ending at `t`. Neighbors
/// are `u_{t−i ..= t}`, clipped at the start of the series; future rows are
/// never used.
pub fn embed_window(series: &SeriesTensor, t: usize, params: &EmbeddingParams) -> Result<Matrix> {
    let k = params.window_k;
    if t + 1 < k {
        return Err(Error::InsufficientData(format!("window of {k} rows needs t ≥ {}, got {t}", k - 1)));
    }
    if t >= series.len() {
        return Err(Error::InsufficientData(format!("t = {t} beyond series of length {}", series.len())));
    }
    let window = series.values().slice_rows(t + 1 - k, t + 1);
    let neighbors = series.values().slice_rows(neighbor_start(t, params.neighbor_radius), t + 1);
    let we = embed_tokens(&window, params)?;
    let ne = embed_tokens(&neighbors, params)?;
    cross_attention(&we, &ne, params)
}

/// Reservoir input for every time step: row `t` is the time-`t` row of
/// `h_t`, which only needs `u_t` and its causal neighborhood, so it is
/// defined from `t = 0` onwards.
pub fn reservoir_drive(series: &Matrix, params: &EmbeddingParams) -> Result<Matrix> {
    let d = params.d_eps;
    let e = embed_tokens(series, params)?;
    let q = e.matmul_t(&params.w_k)?;
    let k = e.matmul_t(&params.w_q)?;
    let v = e.matmul_t(&params.w_v)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(series.rows(), d);
    let mut w = Vec::with_capacity(params.neighbor_radius + 1);
    for t in 0..series.rows() {
        let start = neighbor_start(t, params.neighbor_radius);
        w.clear();
        w.extend((start..=t).map(|j| dot(q.row(t), k.row(j)) * scale));
        softmax_in_place(&mut w);
        let row = out.row_mut(t);
        for (j, a) in (start..=t).zip(&w) {
            for (o, x) in row.iter_mut().zip(v.row(j)) {
                *o += a * x;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: &[Vec<f64>]) -> SeriesTensor {
        SeriesTensor::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn normalize_hand_example() {
        let s = series(&[vec![1.0], vec![2.0], vec![3.0]]);
        let (n, st) = revin_normalize(&s).unwrap();
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((n.row(0)[0] + z).abs() < 1e-12 && n.row(1)[0].abs() < 1e-12 && (n.row(2)[0] - z).abs() < 1e-12);
        assert!((st.mean[0] - 2.0).abs() < 1e-15);
        assert!((st.std[0] - 0.816_496_580_927_726).abs() < 1e-12);
        let back = revin_denormalize(&n, &st).unwrap();
        assert!(back.values().max_abs_diff(s.values()) < 1e-12);
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let s = series(&[vec![5.0], vec![5.0], vec![5.0]]);
        let (n, st) = revin_normalize(&s).unwrap();
        assert!(n.values().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(st.std[0], STD_FLOOR);
    }

    #[test]
    fn denormalize_zeros_gives_mean() {
        let st = NormStats { mean: vec![3.5], std: vec![2.0] };
        let z = SeriesTensor::univariate(vec![0.0; 4]).unwrap();
        assert!(revin_denormalize(&z, &st).unwrap().values().as_slice().iter().all(|&v| v == 3.5));
        let two = series(&[vec![0.0, 0.0]]);
        assert!(matches!(revin_denormalize(&two, &st), Err(Error::Dimension(_))));
    }

    fn params(n_u: usize, d: usize, k: usize, i: usize, seed: u64) -> EmbeddingParams {
        EmbeddingParams::init(n_u, d, k, i, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn identity_token_map() {
        let mut p = params(3, 3, 2, 1, 1);
        p.token_map = Matrix::identity(3);
        p.token_bias = Matrix::zeros(1, 3);
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(embed_tokens(&w, &p).unwrap(), w);
        assert_eq!(embed_tokens(&Matrix::zeros(2, 3), &p).unwrap(), Matrix::zeros(2, 3));
        assert!(matches!(embed_window_tokens(&Matrix::zeros(3, 3), &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_scores_average_values() {
        let mut p = params(2, 4, 3, 2, 2);
        p.w_q = Matrix::zeros(4, 4);
        p.w_k = Matrix::zeros(4, 4);
        let we = sample_uniform(&mut Rng::new(5), -1.0, 1.0, 3, 4).unwrap();
        let ne = sample_uniform(&mut Rng::new(6), -1.0, 1.0, 5, 4).unwrap();
        let h = cross_attention(&we, &ne, &p).unwrap();
        let v = ne.matmul_t(&p.w_v).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let mean = (0..5).map(|j| v[(j, c)]).sum::<f64>() / 5.0;
                assert!((h[(r, c)] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_neighbor_is_its_value() {
        let p = params(2, 4, 3, 0, 3);
        let we = sample_uniform(&mut Rng::new(7), -1.0, 1.0, 3, 4).unwrap();
        let ne = sample_uniform(&mut Rng::new(8), -1.0, 1.0, 1, 4).unwrap();
        let h = cross_attention(&we, &ne, &p).unwrap();
        let v = ne.matmul_t(&p.w_v).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((h[(r, c)] - v[(0, c)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn window_history_checks() {
        let p = params(1, 4, 5, 2, 4);
        let s = SeriesTensor::univariate((0..5).map(|v| v as f64 * 0.3).collect()).unwrap();
        assert!(matches!(embed_window(&s, 3, &p), Err(Error::InsufficientData(_))));
        let h = embed_window(&s, 4, &p).unwrap();
        assert_eq!(h.shape(), (5, 4));
    }

    #[test]
    fn drive_matches_last_row_of_window_embedding() {
        let p = params(2, 4, 4, 3, 9);
        let vals = sample_uniform(&mut Rng::new(10), -1.0, 1.0, 12, 2).unwrap();
        let s = SeriesTensor::new(vals.clone()).unwrap();
        let drive = reservoir_drive(&vals, &p).unwrap();
        for t in 3..12 {
            let h = embed_window(&s, t, &p).unwrap();
            let last = h.row(3);
            for (a, b) in last.iter().zip(drive.row(t)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }
}
