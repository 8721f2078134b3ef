//! Correlation sum, correlation dimension and histogram entropy.

use crate::data::SeriesTensor;
use crate::error::{Error, Result};
use crate::stats::linear_fit;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of distinct pairs closer than `eps` (strictly).
pub fn correlation_sum(points: &[Vec<f64>], eps: f64) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData("correlation sum needs at least 2 points".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Range(format!("eps must be positive, got {eps}")));
    }
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if dist(&points[i], &points[j]) < eps {
                count += 1;
            }
        }
    }
    Ok(2.0 * count as f64 / (n as f64 * (n as f64 - 1.0)))
}

/// Sorted distances of all `i < j` pairs.
pub fn pairwise_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(&points[i], &points[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Rows `(x_t, x_{t+τ}, …, x_{t+(m−1)τ})`.
pub fn delay_embed(x: &[f64], dim: usize, delay: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || delay == 0 {
        return Err(Error::Config("delay embedding needs dim ≥ 1 and delay ≥ 1".into()));
    }
    let span = (dim - 1) * delay;
    if x.len() <= span {
        return Err(Error::InsufficientData(format!("{} samples cannot fill a {dim}-dim embedding", x.len())));
    }
    Ok((0..x.len() - span).map(|t| (0..dim).map(|j| x[t + j * delay]).collect()).collect())
}

/// Which run of grid points the slope is fitted over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWindow {
    /// The `fit_len` smallest radii.
    Smallest,
    /// The run with the highest R².
    MostLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D2Options {
    pub grid: usize,
    /// Percentiles of the pairwise distances bounding the ε grid.
    pub lo_quantile: f64,
    pub hi_quantile: f64,
    /// Consecutive grid points in the slope fit.
    pub fit_len: usize,
    pub window: FitWindow,
}

impl Default for D2Options {
    fn default() -> Self {
        Self { grid: 16, lo_quantile: 0.05, hi_quantile: 0.5, fit_len: 8, window: FitWindow::Smallest }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct D2Estimate {
    pub d2: f64,
    pub epsilons: Vec<f64>,
    pub log_c: Vec<f64>,
    /// Half-open index range of the grid used for the slope.
    pub fit_range: (usize, usize),
    pub r2: f64,
    pub n_points: usize,
}

/// Correlation dimension of a point set: the slope of `ln C(ε)` against
/// `ln ε` over a run of `fit_len` log-spaced grid points chosen by
/// `opts.window`.
pub fn estimate_d2_points(points: &[Vec<f64>], opts: &D2Options) -> Result<D2Estimate> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InsufficientData("correlation dimension needs at least 3 points".into()));
    }
    if opts.grid < 4 || opts.fit_len < 4 || opts.fit_len > opts.grid {
        return Err(Error::Config("ε grid needs ≥ 4 points and 4 ≤ fit_len ≤ grid".into()));
    }
    let d = pairwise_distances(points);
    let q = |p: f64| d[((d.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (q(opts.lo_quantile), q(opts.hi_quantile));
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::UndefinedDimension("pairwise distances are degenerate".into()));
    }
    let pairs = d.len() as f64;
    let epsilons: Vec<f64> =
        (0..opts.grid).map(|i| lo * (hi / lo).powf(i as f64 / (opts.grid - 1) as f64)).collect();
    let log_c: Vec<f64> = epsilons
        .iter()
        .map(|&e| {
            let c = d.partition_point(|&x| x < e) as f64 / pairs;
            c.ln()
        })
        .collect();
    let log_e: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let mut best: Option<(f64, f64, usize)> = None;
    for s in 0..=opts.grid - opts.fit_len {
        let ys = &log_c[s..s + opts.fit_len];
        if ys.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let fit = linear_fit(&log_e[s..s + opts.fit_len], ys)?;
        if best.is_none_or(|(r2, _, _)| fit.r2 > r2) {
            best = Some((fit.r2, fit.slope, s));
        }
        if opts.window == FitWindow::Smallest {
            break;
        }
    }
    let (r2, slope, s) = best.ok_or_else(|| Error::UndefinedDimension("no ε window with non-zero counts".into()))?;
    Ok(D2Estimate { d2: slope.max(0.0), epsilons, log_c, fit_range: (s, s + opts.fit_len), r2, n_points: n })
}

/// Correlation dimension of one channel of a series: the first `n_points`
/// rows of its delay embedding.
pub fn estimate_d2(
    series: &SeriesTensor,
    channel: usize,
    n_points: usize,
    embed_dim: usize,
    delay: usize,
    opts: &D2Options,
) -> Result<D2Estimate> {
    if channel >= series.n_features() {
        return Err(Error::Dimension(format!("channel {channel} of {} features", series.n_features())));
    }
    let x = series.column(channel);
    let mut pts = delay_embed(&x, embed_dim, delay)?;
    if pts.len() < n_points {
        return Err(Error::InsufficientData(format!("{} embedded points, {n_points} requested", pts.len())));
    }
    pts.truncate(n_points);
    estimate_d2_points(&pts, opts)
}

/// Entropy in nats of an equal-width histogram over the observed range.
pub fn shannon_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("entropy of an empty set".into()));
    }
    if bins < 2 {
        return Err(Error::Config("entropy needs at least 2 bins".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; bins];
    let w = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    Ok(counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum())
}
