//! Training loop, gradient checking and rolling prediction.
//!
//! Reservoir states are inputs to the differentiated graph, not functions of
//! the embedding parameters: each epoch the drive is recomputed with the
//! current embedding and the members are streamed once, then every batch
//! reads the states it needs.

use std::str::FromStr;

use crate::data::SeriesTensor;
use crate::embedding::NormStats;
use crate::error::{dim_err, Error, Result};
use crate::linalg::Matrix;
use crate::model::{huber_loss_values, BatchInput, ForecastModel, ParamGroup};
use crate::reservoir::fit_linear_readout;
use crate::rng::Rng;
use crate::tape::GradTape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam()),
            _ => Err(Error::Config(format!("unknown optimizer '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    PerBatch,
    /// One step per epoch on the gradient of the mean loss.
    PerEpoch,
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(UpdateRule::PerBatch),
            "epoch" => Ok(UpdateRule::PerEpoch),
            _ => Err(Error::Config(format!("unknown update rule '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub huber_delta: f64,
    pub batch: usize,
    pub optimizer: Optimizer,
    pub update: UpdateRule,
    /// Spacing of training window ends.
    pub train_stride: usize,
    /// Leading steps whose windows are skipped while states warm up.
    pub washout: usize,
    /// Fit each member readout by ridge regression first and keep it fixed.
    pub prefit_readout: bool,
    pub ridge_lambda: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-5,
            huber_delta: 1.0,
            batch: 32,
            optimizer: Optimizer::Sgd,
            update: UpdateRule::PerBatch,
            train_stride: 1,
            washout: 50,
            prefit_readout: false,
            ridge_lambda: 1e-6,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!("huber delta must be positive, got {}", self.huber_delta)));
        }
        if self.batch == 0 || self.train_stride == 0 {
            return Err(Error::Config("batch and train_stride must be positive".into()));
        }
        Ok(())
    }
}

/// A normalized series with the window ends used for fitting and validation.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub series: Matrix,
    pub train_ts: Vec<usize>,
    pub val_ts: Vec<usize>,
}

impl TrainData {
    /// Training windows have inputs and targets inside `[0, train_end)`;
    /// validation windows have targets inside `[train_end, val_end)`.
    pub fn new(
        series: Matrix,
        train_end: usize,
        val_end: usize,
        k: usize,
        tau: usize,
        washout: usize,
        stride: usize,
    ) -> Result<Self> {
        if val_end > series.rows() || train_end > val_end {
            return dim_err("split boundaries exceed the series");
        }
        let first = (k - 1).max(washout);
        let train_ts: Vec<usize> = (first..).step_by(stride).take_while(|t| t + tau < train_end).collect();
        if train_ts.is_empty() {
            return Err(Error::InsufficientData(format!(
                "training split of {train_end} rows is too short for k = {k}, τ = {tau}, washout = {washout}"
            )));
        }
        let val_start = train_end.saturating_sub(1).max(k - 1);
        let val_ts = (val_start..val_end).take_while(|t| t + tau < val_end).collect();
        Ok(Self { series, train_ts, val_ts })
    }
}

/// Per-epoch losses from a clean (dropout-free) pass after each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub initial_train_loss: f64,
    pub initial_val_loss: Option<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// `τ·N_u` flattened future values for each window end.
pub fn target_rows(series: &Matrix, ts: &[usize], tau: usize) -> Matrix {
    let n = series.cols();
    let mut out = Matrix::zeros(ts.len(), tau * n);
    for (i, &t) in ts.iter().enumerate() {
        for s in 0..tau {
            out.row_mut(i)[s * n..(s + 1) * n].copy_from_slice(series.row(t + 1 + s));
        }
    }
    out
}

/// Mean Huber loss over `ts` with dropout off, evaluated in chunks.
pub fn evaluate_loss(model: &ForecastModel, series: &Matrix, states: &[Matrix], ts: &[usize], delta: f64) -> Result<f64> {
    if ts.is_empty() {
        return dim_err("no windows to evaluate");
    }
    let tau = model.config.horizon_tau;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in ts.chunks(64) {
        let pred = model.predict_batch(&BatchInput { series, states, ts: chunk })?;
        let target = target_rows(series, chunk, tau);
        total += huber_loss_values(pred.as_slice(), target.as_slice(), delta) * pred.len() as f64;
        count += pred.len();
    }
    Ok(total / count as f64)
}

/// Which tensors receive updates.
pub fn trainable_mask(model: &ForecastModel, cfg: &TrainConfig) -> Vec<bool> {
    let gc = &model.group.config;
    model
        .tensor_info()
        .into_iter()
        .map(|(_, g)| match g {
            ParamGroup::Readout => !cfg.prefit_readout,
            ParamGroup::ReadoutAttention => gc.readout_attention && !gc.freeze_attention,
            _ => true,
        })
        .collect()
}

struct OptState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl OptState {
    fn new(model: &ForecastModel) -> Self {
        let zeros: Vec<Matrix> = model.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn apply(&mut self, model: &mut ForecastModel, grads: &[Option<Matrix>], cfg: &TrainConfig) {
        let mut scale = 1.0;
        if let Some(c) = cfg.clip_norm {
            let norm = grads.iter().flatten().map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            if norm > c {
                scale = c / norm;
            }
        }
        self.step += 1;
        let lr = cfg.lr;
        for (i, (p, g)) in model.tensors_mut().into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (w, gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *w -= lr * scale * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
                    for (j, (w, gi)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                        let gi = gi * scale;
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gi;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gi * gi;
                        *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Loss and gradients of one batch. Gradients are `None` for frozen tensors.
fn batch_gradients(
    model: &ForecastModel,
    series: &Matrix,
    states: &[Matrix],
    ts: &[usize],
    mask: &[bool],
    delta: f64,
    dropout: Option<&mut Rng>,
) -> Result<(f64, Vec<Option<Matrix>>)> {
    let mut tape = GradTape::new();
    let p = model.bind(&mut tape);
    let pred = model.forward_batch(&mut tape, &p, &BatchInput { series, states, ts }, dropout)?;
    let target = target_rows(series, ts, model.config.horizon_tau);
    let loss = tape.huber(pred, &target, delta);
    let value = tape.scalar(loss);
    let mut g = tape.backward(loss);
    let grads = p
        .vars
        .iter()
        .zip(mask)
        .zip(model.tensors())
        .map(|((&v, &on), t)| on.then(|| g.take(v).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols()))))
        .collect();
    Ok((value, grads))
}

/// Fits every member readout to the leading `m` future values of each
/// training window (cycled if `m` exceeds `τ·N_u`).
pub fn prefit_readouts(model: &mut ForecastModel, data: &TrainData, lambda: f64) -> Result<()> {
    let states = model.stream_states(&data.series)?;
    let targets = target_rows(&data.series, &data.train_ts, model.config.horizon_tau);
    let m = model.group.m();
    let mut y = Matrix::zeros(targets.rows(), m);
    for r in 0..targets.rows() {
        let src = targets.row(r);
        for (j, v) in y.row_mut(r).iter_mut().enumerate() {
            *v = src[j % src.len()];
        }
    }
    for (member, st) in model.group.members.iter_mut().zip(&states) {
        let mut x = Matrix::zeros(data.train_ts.len(), st.cols());
        for (i, &t) in data.train_ts.iter().enumerate() {
            x.row_mut(i).copy_from_slice(st.row(t));
        }
        member.readout = fit_linear_readout(&x, &y, lambda)?;
    }
    Ok(())
}

/// Gradient-based training. The model is updated in place; reservoirs are
/// never touched.
pub fn train(model: &mut ForecastModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let delta = cfg.huber_delta;
    if cfg.prefit_readout {
        prefit_readouts(model, data, cfg.ridge_lambda)?;
    }
    let mask = trainable_mask(model, cfg);
    let mut rng = Rng::new(cfg.seed);
    let mut opt = OptState::new(model);
    let mut states = model.stream_states(&data.series)?;
    let mut history = TrainHistory {
        initial_train_loss: evaluate_loss(model, &data.series, &states, &data.train_ts, delta)?,
        initial_val_loss: if data.val_ts.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, &data.series, &states, &data.val_ts, delta)?)
        },
        ..Default::default()
    };
    let mut order = data.train_ts.clone();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut acc: Option<Vec<Option<Matrix>>> = None;
        for chunk in order.chunks(cfg.batch) {
            let (loss, grads) = batch_gradients(model, &data.series, &states, chunk, &mask, delta, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}; lower the learning rate")));
            }
            match cfg.update {
                UpdateRule::PerBatch => opt.apply(model, &grads, cfg),
                UpdateRule::PerEpoch => {
                    let w = chunk.len() as f64 / order.len() as f64;
                    let acc = acc.get_or_insert_with(|| grads.iter().map(|g| g.as_ref().map(|g| g.scale(0.0))).collect());
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        if let (Some(a), Some(g)) = (a, g) {
                            a.add_assign(&g.scale(w));
                        }
                    }
                }
            }
        }
        if let Some(acc) = acc {
            opt.apply(model, &acc, cfg);
        }
        states = model.stream_states(&data.series)?;
        let tl = evaluate_loss(model, &data.series, &states, &data.train_ts, delta)?;
        if !tl.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss after epoch {epoch}; lower the learning rate")));
        }
        history.train_loss.push(tl);
        if !data.val_ts.is_empty() {
            history.val_loss.push(evaluate_loss(model, &data.series, &states, &data.val_ts, delta)?);
        }
        history.kappa.push(model.kappa());
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
}

/// Relative difference with denominators floored at `1e-6`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares reverse-mode gradients of the dropout-free batch loss against
/// central differences with step `h`, for every entry of every tensor.
/// Reservoir states are computed once and held fixed.
pub fn gradient_check(model: &ForecastModel, series: &Matrix, ts: &[usize], delta: f64, h: f64) -> Result<GradCheckReport> {
    let states = model.stream_states(series)?;
    let mask = vec![true; model.tensors().len()];
    let (_, grads) = batch_gradients(model, series, &states, ts, &mask, delta, None)?;
    let target = target_rows(series, ts, model.config.horizon_tau);
    let loss_at = |m: &ForecastModel| -> Result<f64> {
        let p = m.predict_batch(&BatchInput { series, states: &states, ts })?;
        Ok(huber_loss_values(p.as_slice(), target.as_slice(), delta))
    };
    let mut probe = model.clone();
    let mut per_tensor = Vec::new();
    let mut worst: f64 = 0.0;
    for (ti, (name, _)) in model.tensor_info().into_iter().enumerate() {
        let g = grads[ti].as_ref().expect("all tensors enabled");
        let mut tensor_worst: f64 = 0.0;
        for j in 0..g.len() {
            let orig = probe.tensors()[ti].as_slice()[j];
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig + h;
            let lp = loss_at(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig - h;
            let lm = loss_at(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            tensor_worst = tensor_worst.max(relative_error(g.as_slice()[j], numeric));
        }
        worst = worst.max(tensor_worst);
        per_tensor.push((name, tensor_worst));
    }
    Ok(GradCheckReport { max_rel_error: worst, per_tensor })
}

/// One rolling forecast in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub t: usize,
    /// τ × N_u
    pub pred: Matrix,
    pub truth: Matrix,
}

/// Forecasts for windows ending at `t0, t0 + stride, …` (`n_windows` of
/// them). The series is in data units; the model's stored normalization is
/// applied on the way in and inverted on the way out. Reservoir states are
/// streamed over the whole history before each window.
pub fn predict_rolling(
    model: &ForecastModel,
    series: &SeriesTensor,
    t0: usize,
    n_windows: usize,
    stride: usize,
) -> Result<Vec<Forecast>> {
    if n_windows == 0 {
        return Ok(Vec::new());
    }
    let c = &model.config;
    let tau = c.horizon_tau;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let last = t0 + (n_windows - 1) * stride;
    if t0 + 1 < c.window_k || last + tau >= series.len() {
        return Err(Error::Range(format!(
            "windows ending at {t0}..={last} with horizon {tau} do not fit a series of {} rows",
            series.len()
        )));
    }
    let stats = model.norm.clone().unwrap_or_else(|| NormStats {
        mean: vec![0.0; series.n_features()],
        std: vec![1.0; series.n_features()],
    });
    let normed = stats.apply(series)?;
    let x = normed.values().slice_rows(0, last + tau + 1);
    let states = model.stream_states(&x)?;
    let ts: Vec<usize> = (0..n_windows).map(|i| t0 + i * stride).collect();
    let mut out = Vec::with_capacity(n_windows);
    for chunk in ts.chunks(64) {
        let pred = model.predict_batch(&BatchInput { series: &x, states: &states, ts: chunk })?;
        for (i, &t) in chunk.iter().enumerate() {
            let p = Matrix::from_vec(tau, c.n_u, pred.row(i).to_vec());
            out.push(Forecast {
                t,
                pred: stats.invert_matrix(&p)?,
                truth: series.values().slice_rows(t + 1, t + 1 + tau),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupConfig;
    use crate::model::{DropoutRates, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_u: 1,
            window_k: 4,
            neighbor_radius: 3,
            horizon_tau: 2,
            d_eps: 4,
            blocks: 1,
            heads: 2,
            ff_width: 6,
            dropout: DropoutRates::NONE,
            group: GroupConfig { l: 2, n_r: 5, d_in: 4, m: 4, n_tokens: 2, seed: 3, ..Default::default() },
            seed: 2,
        }
    }

    fn data(n: usize) -> TrainData {
        let s = Matrix::from_vec(n, 1, (0..n).map(|i| (i as f64 * 0.3).sin()).collect());
        TrainData::new(s, n * 7 / 10, n * 8 / 10, 4, 2, 0, 1).unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = ForecastModel::init(tiny()).unwrap();
        let before = m.clone();
        let h = train(&mut m, &data(60), &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(h.train_loss.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn zero_lr_gives_constant_history() {
        let mut m = ForecastModel::init(tiny()).unwrap();
        let h = train(&mut m, &data(60), &TrainConfig { epochs: 3, lr: 0.0, ..Default::default() }).unwrap();
        assert_eq!(h.train_loss.len(), 3);
        assert!(h.train_loss.iter().all(|&l| l == h.initial_train_loss));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = ForecastModel::init(tiny()).unwrap();
        let d = data(40);
        let r = gradient_check(&m, &d.series, &d.train_ts[..3], 1.0, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r.per_tensor);
    }

    #[test]
    fn rolling_windows_tile_with_stride_tau() {
        let m = ForecastModel::init(tiny()).unwrap();
        let s = SeriesTensor::univariate((0..30).map(|i| i as f64).collect()).unwrap();
        let f = predict_rolling(&m, &s, 5, 3, 2).unwrap();
        assert_eq!(f.iter().map(|x| x.t).collect::<Vec<_>>(), vec![5, 7, 9]);
        assert_eq!(f[1].truth.as_slice(), &[8.0, 9.0]);
        assert!(predict_rolling(&m, &s, 5, 0, 2).unwrap().is_empty());
        assert!(predict_rolling(&m, &s, 26, 2, 2).is_err());
    }
}
