//! Experiment driver: declarative specs, per-run metric records and the
//! ablation sweeps.
//!
//! Records are written one per line as tab-separated `key:value` fields,
//! alongside a CSV summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::{estimate_d2, estimate_d2_points, shannon_entropy, D2Estimate, D2Options};
use crate::data::{gen_lorenz, gen_mackey_glass, load_csv, write_csv, write_metadata, CsvSchema, LorenzParams, MackeyGlassParams, SeriesTensor, SplitSpec};
use crate::embedding::NormStats;
use crate::error::{dim_err, Error, Result};
use crate::group::{GroupConfig, GroupReservoir, ScoreScale, SchemeScope};
use crate::linalg::Matrix;
use crate::model::{DropoutRates, ForecastModel, ModelConfig};
use crate::reservoir::{Activation, InitScheme, RescaleTarget};
use crate::rng::{derive_seed, Rng};
use crate::stats::{self, log_log_slope, median, one_sample_t_test, pooled_standard_error, variance};
use crate::train::{predict_rolling, train, Optimizer, TrainConfig, TrainData, TrainHistory, UpdateRule};

/// Flat description of an experiment; every field has a default so config
/// files only list overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// `mackey_glass`, `lorenz` or `csv`
    pub dataset: String,
    pub length: usize,
    pub mg_delay: usize,
    pub mg_sample_every: usize,
    pub mg_discard: usize,
    pub lorenz_dt: f64,
    pub lorenz_sample_every: usize,
    pub lorenz_discard: usize,
    pub csv_path: String,
    pub csv_timestamp: String,
    pub csv_features: Vec<String>,

    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<String>,
    pub out_dir: String,
    pub train_frac: f64,
    pub val_frac: f64,

    pub window_k: usize,
    pub neighbor_radius: usize,
    pub d_eps: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout_hidden: f64,
    pub dropout_readout: f64,
    pub dropout_attention: f64,

    pub l: usize,
    pub n_r: usize,
    pub m: usize,
    pub n_tokens: usize,
    pub activation: String,
    pub readout_attention: bool,
    pub score_scale: String,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub sigma_in: f64,
    pub init_scheme: String,
    pub scheme_scope: String,
    pub rescale_target: String,
    pub freeze_attention: bool,

    pub epochs: usize,
    pub lr: f64,
    pub huber_delta: f64,
    pub batch: usize,
    pub optimizer: String,
    pub update: String,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub washout: usize,
    pub prefit_readout: bool,
    pub ridge_lambda: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,

    pub group_l_values: Vec<usize>,
    pub init_l_values: Vec<usize>,
    pub schemes: Vec<String>,
    pub readout_arms: Vec<String>,

    pub scaling_t_values: Vec<usize>,
    pub scaling_nr_values: Vec<usize>,
    pub scaling_nr_length: usize,
    pub scaling_repeats: usize,

    pub d2_points: usize,
    pub d2_embed_dim: usize,
    pub d2_delay: usize,
    pub entropy_bins: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentSpec {
    /// Single-core desk scale.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            dataset: "mackey_glass".into(),
            length: 2000,
            mg_delay: 17,
            mg_sample_every: 10,
            mg_discard: 200,
            lorenz_dt: 0.01,
            lorenz_sample_every: 10,
            lorenz_discard: 100,
            csv_path: String::new(),
            csv_timestamp: String::new(),
            csv_features: Vec::new(),
            horizons: vec![50],
            seeds: vec![0, 1, 2, 3, 4],
            metrics: vec!["mse".into(), "mae".into()],
            out_dir: "results".into(),
            train_frac: 0.7,
            val_frac: 0.1,
            window_k: 16,
            neighbor_radius: 15,
            d_eps: 16,
            blocks: 1,
            heads: 2,
            ff_width: 32,
            dropout_hidden: 0.1,
            dropout_readout: 0.1,
            dropout_attention: 0.1,
            l: 5,
            n_r: 40,
            m: 32,
            n_tokens: 4,
            activation: "tanh".into(),
            readout_attention: true,
            score_scale: "embedding".into(),
            alpha_lo: 0.2,
            alpha_hi: 0.6,
            rho_lo: 0.5,
            rho_hi: 0.9,
            sigma_in: 1.0,
            init_scheme: "random".into(),
            scheme_scope: "first".into(),
            rescale_target: "leaky_matrix".into(),
            freeze_attention: false,
            epochs: 20,
            lr: 1e-3,
            huber_delta: 1.0,
            batch: 32,
            optimizer: "adam".into(),
            update: "batch".into(),
            train_stride: 2,
            eval_stride: 1,
            washout: 50,
            prefit_readout: false,
            ridge_lambda: 1e-6,
            clip_norm: 1.0,
            group_l_values: vec![1, 2, 4, 6, 8, 10, 12],
            init_l_values: vec![1, 10],
            schemes: InitScheme::ALL.iter().map(|s| s.name().to_string()).collect(),
            readout_arms: vec!["identity".into(), "relu".into(), "tanh".into(), "self_attention".into()],
            scaling_t_values: vec![1_000, 10_000, 100_000],
            scaling_nr_values: vec![200, 400, 800],
            scaling_nr_length: 2_000,
            scaling_repeats: 3,
            d2_points: 1000,
            d2_embed_dim: 3,
            d2_delay: 1,
            entropy_bins: 64,
        }
    }

    /// Full-scale settings: long windows, wide encoder, plain gradient
    /// descent at a small learning rate.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            length: 20_000,
            horizons: vec![96, 192, 336, 720],
            window_k: 300,
            neighbor_radius: 299,
            d_eps: 96,
            blocks: 4,
            heads: 12,
            ff_width: 384,
            dropout_hidden: 0.4,
            dropout_readout: 0.1,
            dropout_attention: 0.2,
            l: 10,
            n_r: 300,
            m: 96,
            n_tokens: 8,
            epochs: 100,
            lr: 1e-5,
            optimizer: "sgd".into(),
            clip_norm: 0.0,
            train_stride: 1,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown profile '{name}'"))),
        }
    }

    /// Profile defaults overlaid with the keys present in a TOML document.
    pub fn from_toml(text: &str, profile: &str) -> Result<Self> {
        let base = toml::Value::try_from(Self::profile(profile)?).map_err(|e| Error::Config(e.to_string()))?;
        let over: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = match base {
            toml::Value::Table(t) => t,
            _ => unreachable!(),
        };
        for (k, v) in over {
            merged.insert(k, v);
        }
        let spec: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>, profile: &str) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("a spec needs at least one horizon and one seed".into()));
        }
        self.split()?;
        for h in &self.horizons {
            self.model_config(*h, 0)?.validate()?;
        }
        self.train_config(0)?.validate()?;
        Ok(())
    }

    pub fn split(&self) -> Result<SplitSpec> {
        let s = SplitSpec { train_frac: self.train_frac, val_frac: self.val_frac, test_frac: 1.0 - self.train_frac - self.val_frac };
        if !(s.test_frac > 0.0) {
            return Err(Error::Config("train and validation fractions leave no test split".into()));
        }
        Ok(s)
    }

    pub fn model_config(&self, horizon: usize, seed: u64) -> Result<ModelConfig> {
        let group = GroupConfig {
            l: self.l,
            n_r: self.n_r,
            d_in: self.d_eps,
            m: self.m,
            n_tokens: self.n_tokens,
            activation: self.activation.parse()?,
            readout_attention: self.readout_attention,
            score_scale: self.score_scale.parse::<ScoreScale>()?,
            alpha_range: (self.alpha_lo, self.alpha_hi),
            rho_range: (self.rho_lo, self.rho_hi),
            sigma_in: self.sigma_in,
            init_scheme: self.init_scheme.parse::<InitScheme>()?,
            scheme_scope: self.scheme_scope.parse::<SchemeScope>()?,
            rescale_target: self.rescale_target.parse::<RescaleTarget>()?,
            seed: derive_seed(seed, 1),
            freeze_attention: self.freeze_attention,
        };
        Ok(ModelConfig {
            n_u: 1,
            window_k: self.window_k,
            neighbor_radius: self.neighbor_radius,
            horizon_tau: horizon,
            d_eps: self.d_eps,
            blocks: self.blocks,
            heads: self.heads,
            ff_width: self.ff_width,
            dropout: DropoutRates {
                hidden: self.dropout_hidden,
                readout: self.dropout_readout,
                attention: self.dropout_attention,
            },
            group,
            seed: derive_seed(seed, 2),
        })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            huber_delta: self.huber_delta,
            batch: self.batch,
            optimizer: self.optimizer.parse::<Optimizer>()?,
            update: self.update.parse::<UpdateRule>()?,
            train_stride: self.train_stride,
            washout: self.washout,
            prefit_readout: self.prefit_readout,
            ridge_lambda: self.ridge_lambda,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            seed: derive_seed(seed, 3),
        })
    }

    /// SHA-256 of the canonical serialization with the seed list removed.
    pub fn config_hash(&self) -> String {
        let mut s = self.clone();
        s.seeds.clear();
        hex(&Sha256::digest(s.to_toml().as_bytes()))
    }

    /// Hash that ignores the readout activation and attention switch, for
    /// auditing controlled comparisons.
    pub fn control_hash(&self) -> String {
        let mut s = self.clone();
        s.activation.clear();
        s.readout_attention = false;
        s.config_hash()
    }

    pub fn dataset(&self) -> Result<SeriesTensor> {
        match self.dataset.as_str() {
            "mackey_glass" => gen_mackey_glass(&MackeyGlassParams {
                n: self.length,
                delay: self.mg_delay,
                sample_every: self.mg_sample_every,
                discard: self.mg_discard,
                ..Default::default()
            }),
            "lorenz" => {
                let full = gen_lorenz(&LorenzParams {
                    n: self.length + self.lorenz_discard,
                    dt: self.lorenz_dt,
                    sample_every: self.lorenz_sample_every,
                    ..Default::default()
                })?;
                Ok(full.slice(self.lorenz_discard, full.len()))
            }
            "csv" => load_csv(
                &self.csv_path,
                &CsvSchema {
                    timestamp: (!self.csv_timestamp.is_empty()).then(|| self.csv_timestamp.clone()),
                    features: self.csv_features.clone(),
                },
            ),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn dataset_metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("dataset".into(), self.dataset.clone());
        m.insert("length".into(), self.length.to_string());
        match self.dataset.as_str() {
            "mackey_glass" => {
                let p = MackeyGlassParams::default();
                m.insert("delay".into(), self.mg_delay.to_string());
                m.insert("beta".into(), p.beta.to_string());
                m.insert("gamma".into(), p.gamma.to_string());
                m.insert("exponent".into(), p.exponent.to_string());
                m.insert("dt".into(), p.dt.to_string());
                m.insert("history".into(), p.history.to_string());
                m.insert("sample_every".into(), self.mg_sample_every.to_string());
                m.insert("discard".into(), self.mg_discard.to_string());
            }
            "lorenz" => {
                let p = LorenzParams::default();
                m.insert("dt".into(), self.lorenz_dt.to_string());
                m.insert("sigma".into(), p.sigma.to_string());
                m.insert("rho".into(), p.rho.to_string());
                m.insert("beta".into(), p.beta.to_string());
                m.insert("x0".into(), format!("{:?}", p.x0));
                m.insert("sample_every".into(), self.lorenz_sample_every.to_string());
                m.insert("discard".into(), self.lorenz_discard.to_string());
            }
            _ => {
                m.insert("path".into(), self.csv_path.clone());
            }
        }
        m
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Mean squared and mean absolute residual over every entry.
pub fn compute_metrics(preds: &[Matrix], targets: &[Matrix]) -> Result<(f64, f64)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return dim_err(format!("{} predictions for {} targets", preds.len(), targets.len()));
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return dim_err(format!("prediction {:?} vs target {:?}", p.shape(), t.shape()));
        }
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            let r = a - b;
            se += r * r;
            ae += r.abs();
        }
        n += p.len();
    }
    Ok((se / n as f64, ae / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment: String,
    pub arm: String,
    pub seed: u64,
    pub horizon: usize,
    pub init_scheme: String,
    pub l: usize,
    pub activation: String,
    pub readout_attention: bool,
    /// Data units.
    pub mse: f64,
    pub mae: f64,
    /// Normalized units.
    pub mse_norm: f64,
    pub mae_norm: f64,
    pub n_windows: usize,
    pub kappa: f64,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub wall_time: f64,
    pub config_hash: String,
    pub control_hash: String,
}

impl MetricsRecord {
    /// Every field except wall time, for determinism comparisons.
    pub fn metric_key(&self) -> String {
        let mut r = self.clone();
        r.wall_time = 0.0;
        r.to_line()
    }

    pub fn to_line(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        [
            ("experiment", self.experiment.clone()),
            ("arm", self.arm.clone()),
            ("seed", self.seed.to_string()),
            ("horizon", self.horizon.to_string()),
            ("init_scheme", self.init_scheme.clone()),
            ("l", self.l.to_string()),
            ("activation", self.activation.clone()),
            ("readout_attention", self.readout_attention.to_string()),
            ("units", "data".into()),
            ("mse", f(self.mse)),
            ("mae", f(self.mae)),
            ("mse_norm", f(self.mse_norm)),
            ("mae_norm", f(self.mae_norm)),
            ("n_windows", self.n_windows.to_string()),
            ("kappa", f(self.kappa)),
            ("initial_train_loss", f(self.initial_train_loss)),
            ("final_train_loss", f(self.final_train_loss)),
            ("wall_time", f(self.wall_time)),
            ("config_hash", self.config_hash.clone()),
            ("control_hash", self.control_hash.clone()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join("\t")
    }
}

/// Records plus the runs that failed, keyed by arm and seed.
#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<(String, u64, String)>,
}

/// One trained model together with its evaluation.
pub struct CellRun {
    pub model: ForecastModel,
    pub history: TrainHistory,
    pub record: MetricsRecord,
    pub normalized: Matrix,
    pub test_ts: Vec<usize>,
}

/// Prepared dataset shared by every cell of a sweep.
pub struct Prepared {
    pub raw: SeriesTensor,
    pub stats: NormStats,
    pub normalized: Matrix,
    pub train_end: usize,
    pub val_end: usize,
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let raw = spec.dataset()?;
    let (train_end, val_end) = spec.split()?.boundaries(raw.len())?;
    let stats = NormStats::fit(&raw.slice(0, train_end))?;
    let normalized = stats.apply(&raw)?.values().clone();
    Ok(Prepared { raw, stats, normalized, train_end, val_end })
}

/// Window ends whose targets lie in the test split.
pub fn test_window_ends(spec: &ExperimentSpec, p: &Prepared, horizon: usize) -> Vec<usize> {
    let start = p.val_end.saturating_sub(1).max(spec.window_k - 1);
    (start..).step_by(spec.eval_stride.max(1)).take_while(|t| t + horizon < p.raw.len()).collect()
}

/// Trains and evaluates one (spec, seed, horizon) cell. `spec` already
/// carries any per-arm overrides.
pub fn run_cell(spec: &ExperimentSpec, p: &Prepared, arm: &str, seed: u64, horizon: usize) -> Result<CellRun> {
    let started = Instant::now();
    let mcfg = spec.model_config(horizon, seed)?;
    let tcfg = spec.train_config(seed)?;
    let mut model = ForecastModel::init(mcfg)?;
    let data = TrainData::new(
        p.normalized.clone(),
        p.train_end,
        p.val_end,
        spec.window_k,
        horizon,
        spec.washout,
        spec.train_stride,
    )?;
    let history = train(&mut model, &data, &tcfg)?;
    model.norm = Some(p.stats.clone());
    let test_ts = test_window_ends(spec, p, horizon);
    if test_ts.is_empty() {
        return Err(Error::InsufficientData("test split has no complete windows".into()));
    }
    let stride = spec.eval_stride.max(1);
    let fc = predict_rolling(&model, &p.raw, test_ts[0], test_ts.len(), stride)?;
    let preds: Vec<Matrix> = fc.iter().map(|f| f.pred.clone()).collect();
    let truths: Vec<Matrix> = fc.iter().map(|f| f.truth.clone()).collect();
    let (mse, mae) = compute_metrics(&preds, &truths)?;
    let norm = |m: &Matrix| p.stats.apply(&SeriesTensor::new(m.clone())?).map(|s| s.values().clone());
    let pn = preds.iter().map(norm).collect::<Result<Vec<_>>>()?;
    let tn = truths.iter().map(norm).collect::<Result<Vec<_>>>()?;
    let (mse_norm, mae_norm) = compute_metrics(&pn, &tn)?;
    let mut cell_spec = spec.clone();
    cell_spec.horizons = vec![horizon];
    let record = MetricsRecord {
        experiment: spec.name.clone(),
        arm: arm.to_string(),
        seed,
        horizon,
        init_scheme: spec.init_scheme.clone(),
        l: spec.l,
        activation: spec.activation.clone(),
        readout_attention: spec.readout_attention,
        mse,
        mae,
        mse_norm,
        mae_norm,
        n_windows: fc.len(),
        kappa: model.kappa(),
        initial_train_loss: history.initial_train_loss,
        final_train_loss: history.train_loss.last().copied().unwrap_or(history.initial_train_loss),
        wall_time: started.elapsed().as_secs_f64(),
        config_hash: cell_spec.config_hash(),
        control_hash: cell_spec.control_hash(),
    };
    Ok(CellRun { model, history, record, normalized: p.normalized.clone(), test_ts })
}

fn sweep(spec: &ExperimentSpec, p: &Prepared, arms: &[(String, ExperimentSpec)]) -> SweepOutcome {
    let mut out = SweepOutcome::default();
    for (arm, s) in arms {
        for &seed in &spec.seeds {
            for &h in &spec.horizons {
                match run_cell(s, p, arm, seed, h) {
                    Ok(c) => out.records.push(c.record),
                    Err(e) => out.failures.push((arm.clone(), seed, e.to_string())),
                }
            }
        }
    }
    out
}

/// One record per (seed, horizon) for the experiment as configured.
pub fn run_forecast(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let p = prepare(spec)?;
    Ok(sweep(spec, &p, &[(format!("l{}", spec.l), spec.clone())]))
}

/// The same experiment with its reservoir branch removed.
pub fn transformer_only(spec: &ExperimentSpec) -> ExperimentSpec {
    ExperimentSpec { l: 0, ..spec.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRow {
    pub scheme: String,
    pub mses: Vec<f64>,
    pub mean_mse: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSensitivityBlock {
    pub l: usize,
    pub rows: Vec<SchemeRow>,
    /// Sample variance of the per-scheme mean MSEs.
    pub cross_scheme_variance: f64,
    /// Test of the per-scheme means against the combined mean.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSensitivityTable {
    pub combined_mean: f64,
    pub blocks: Vec<InitSensitivityBlock>,
    pub outcome_failures: Vec<(String, u64, String)>,
    pub records: Vec<MetricsRecord>,
}

/// Builds the table from records grouped by `l` and scheme. The population
/// mean of every t test is the mean over all records.
pub fn init_sensitivity_table(records: &[MetricsRecord], l_values: &[usize], schemes: &[String]) -> Result<InitSensitivityTable> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no successful runs".into()));
    }
    let combined_mean = stats::mean(&records.iter().map(|r| r.mse).collect::<Vec<_>>());
    let mut blocks = Vec::new();
    for &l in l_values {
        let mut rows = Vec::new();
        for s in schemes {
            let mses: Vec<f64> = records.iter().filter(|r| r.l == l && &r.init_scheme == s).map(|r| r.mse).collect();
            if mses.is_empty() {
                continue;
            }
            let p_value = if mses.len() >= 2 { one_sample_t_test(&mses, combined_mean)?.p } else { f64::NAN };
            rows.push(SchemeRow { scheme: s.clone(), mean_mse: stats::mean(&mses), mses, p_value });
        }
        let means: Vec<f64> = rows.iter().map(|r| r.mean_mse).collect();
        let p_value = if means.len() >= 2 { one_sample_t_test(&means, combined_mean)?.p } else { f64::NAN };
        blocks.push(InitSensitivityBlock { l, cross_scheme_variance: variance(&means), p_value, rows });
    }
    Ok(InitSensitivityTable { combined_mean, blocks, outcome_failures: Vec::new(), records: records.to_vec() })
}

pub fn run_init_sensitivity(spec: &ExperimentSpec) -> Result<InitSensitivityTable> {
    spec.validate()?;
    let p = prepare(spec)?;
    let mut arms = Vec::new();
    for &l in &spec.init_l_values {
        for s in &spec.schemes {
            arms.push((format!("l{l}_{s}"), ExperimentSpec { l, init_scheme: s.clone(), ..spec.clone() }));
        }
    }
    let out = sweep(spec, &p, &arms);
    let mut t = init_sensitivity_table(&out.records, &spec.init_l_values, &spec.schemes)?;
    t.outcome_failures = out.failures;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub l: usize,
    pub mses: Vec<f64>,
    pub median_mse: f64,
}

pub fn run_group_ablation(spec: &ExperimentSpec) -> Result<(Vec<CurvePoint>, SweepOutcome)> {
    spec.validate()?;
    let p = prepare(spec)?;
    let arms: Vec<_> =
        spec.group_l_values.iter().map(|&l| (format!("l{l}"), ExperimentSpec { l, ..spec.clone() })).collect();
    let out = sweep(spec, &p, &arms);
    Ok((group_curve(&out.records, &spec.group_l_values), out))
}

pub fn group_curve(records: &[MetricsRecord], l_values: &[usize]) -> Vec<CurvePoint> {
    l_values
        .iter()
        .filter_map(|&l| {
            let mses: Vec<f64> = records.iter().filter(|r| r.l == l).map(|r| r.mse).collect();
            (!mses.is_empty()).then(|| CurvePoint { l, median_mse: median(&mses), mses })
        })
        .collect()
}

/// Whether each step of the curve is non-increasing within one pooled
/// standard error.
pub fn curve_steps_within_se(curve: &[CurvePoint]) -> Vec<(usize, usize, f64, f64, bool)> {
    curve
        .windows(2)
        .map(|w| {
            let se = pooled_standard_error(&w[0].mses, &w[1].mses);
            let rise = w[1].median_mse - w[0].median_mse;
            (w[0].l, w[1].l, rise, se, rise <= se)
        })
        .collect()
}

/// Spec overrides for a readout-ablation arm.
pub fn readout_arm(spec: &ExperimentSpec, arm: &str) -> Result<ExperimentSpec> {
    let (activation, attention) = match arm {
        "self_attention" => ("tanh", true),
        a => {
            a.parse::<Activation>()?;
            (a, false)
        }
    };
    Ok(ExperimentSpec { activation: activation.into(), readout_attention: attention, ..spec.clone() })
}

pub fn run_readout_ablation(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let p = prepare(spec)?;
    let arms = spec
        .readout_arms
        .iter()
        .map(|a| Ok((a.clone(), readout_arm(spec, a)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep(spec, &p, &arms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub t_values: Vec<usize>,
    pub t_seconds: Vec<f64>,
    pub t_retained_bytes: Vec<usize>,
    pub t_slope: f64,
    pub nr_values: Vec<usize>,
    pub nr_seconds: Vec<f64>,
    pub nr_slope: f64,
}

/// Streams `t` pseudo-random inputs through a single-member group without
/// buffering them; returns elapsed seconds and retained bytes.
pub fn time_reservoir_pass(n_r: usize, d_in: usize, t: usize, seed: u64) -> Result<(f64, usize)> {
    let g = GroupReservoir::init(GroupConfig {
        l: 1,
        n_r,
        d_in,
        m: 8,
        n_tokens: 1,
        seed,
        ..Default::default()
    })?;
    let res = &g.members[0].reservoir;
    let mut rng = Rng::new(seed);
    let mut x = vec![0.0; n_r];
    let mut scratch = vec![0.0; n_r];
    let mut h = vec![0.0; d_in];
    let started = Instant::now();
    for _ in 0..t {
        for v in h.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        res.step_in_place(&mut x, &h, &mut scratch);
    }
    let secs = started.elapsed().as_secs_f64();
    std::hint::black_box(&x);
    let retained = g.retained_bytes() + 8 * (x.capacity() + scratch.capacity() + h.capacity());
    Ok((secs, retained))
}

pub fn run_scaling_probe(spec: &ExperimentSpec) -> Result<ScalingReport> {
    let reps = spec.scaling_repeats.max(1);
    let best = |n_r: usize, t: usize| -> Result<(f64, usize)> {
        let mut out = (f64::INFINITY, 0);
        for r in 0..reps {
            let (s, b) = time_reservoir_pass(n_r, spec.d_eps, t, r as u64)?;
            out = (out.0.min(s), b);
        }
        Ok(out)
    };
    let mut t_seconds = Vec::new();
    let mut t_retained_bytes = Vec::new();
    for &t in &spec.scaling_t_values {
        let (s, b) = best(100, t)?;
        t_seconds.push(s);
        t_retained_bytes.push(b);
    }
    let mut nr_seconds = Vec::new();
    for &n in &spec.scaling_nr_values {
        nr_seconds.push(best(n, spec.scaling_nr_length)?.0);
    }
    let tx: Vec<f64> = spec.scaling_t_values.iter().map(|&v| v as f64).collect();
    let nx: Vec<f64> = spec.scaling_nr_values.iter().map(|&v| v as f64).collect();
    Ok(ScalingReport {
        t_slope: log_log_slope(&tx, &t_seconds)?.slope,
        nr_slope: log_log_slope(&nx, &nr_seconds)?.slope,
        t_values: spec.scaling_t_values.clone(),
        t_seconds,
        t_retained_bytes,
        nr_values: spec.scaling_nr_values.clone(),
        nr_seconds,
    })
}

/// D₂ of the configured dataset: delay embedding for one channel, or the raw
/// rows when `d2_embed_dim` is 0.
pub fn run_d2(spec: &ExperimentSpec) -> Result<D2Estimate> {
    let s = spec.dataset()?;
    let opts = D2Options::default();
    if spec.d2_embed_dim == 0 {
        let n = spec.d2_points.min(s.len());
        let pts: Vec<Vec<f64>> = (0..n).map(|t| s.row(t).to_vec()).collect();
        estimate_d2_points(&pts, &opts)
    } else {
        estimate_d2(&s, 0, spec.d2_points, spec.d2_embed_dim, spec.d2_delay, &opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEntropy {
    pub h: f64,
    pub z: f64,
    pub f: f64,
}

/// Histogram entropy of the pooled `h_t`, `z_t` and `f_t` values over the
/// cell's test windows.
pub fn feature_entropy(cell: &CellRun, bins: usize) -> Result<FeatureEntropy> {
    let states = cell.model.stream_states(&cell.normalized)?;
    let (mut h, mut z, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &cell.test_ts {
        let w = cell.model.window_features(&cell.normalized, &states, t)?;
        h.extend_from_slice(w.h.as_slice());
        z.extend(w.z);
        f.extend(w.f);
    }
    Ok(FeatureEntropy {
        h: shannon_entropy(&h, bins)?,
        z: shannon_entropy(&z, bins)?,
        f: shannon_entropy(&f, bins)?,
    })
}

/// Writes the generated dataset and its metadata sidecar.
pub fn run_gen_data(spec: &ExperimentSpec, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let s = spec.dataset()?;
    let path = out.join(format!("{}.csv", spec.dataset));
    write_csv(&s, &path)?;
    write_metadata(out.join(format!("{}.meta", spec.dataset)), &spec.dataset_metadata())?;
    Ok(path)
}

/// Appends records as lines and writes a CSV summary next to them.
pub fn write_records(out: &Path, stem: &str, records: &[MetricsRecord]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(out.join(format!("{stem}.records")), text)?;
    let mut w = csv::Writer::from_path(out.join(format!("{stem}_summary.csv")))?;
    w.write_record(["arm", "seed", "horizon", "l", "init_scheme", "activation", "mse", "mae", "mse_norm", "mae_norm"])?;
    for r in records {
        w.write_record([
            r.arm.clone(),
            r.seed.to_string(),
            r.horizon.to_string(),
            r.l.to_string(),
            r.init_scheme.clone(),
            r.activation.clone(),
            format!("{:?}", r.mse),
            format!("{:?}", r.mae),
            format!("{:?}", r.mse_norm),
            format!("{:?}", r.mae_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a record line back into its fields.
pub fn parse_record_line(line: &str) -> BTreeMap<String, String> {
    line.split('\t')
        .filter_map(|f| f.split_once(':'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_examples() {
        let a = Matrix::from_vec(2, 1, vec![1.0, 2.0]);
        assert_eq!(compute_metrics(&[a.clone()], &[a.clone()]).unwrap(), (0.0, 0.0));
        let b = a.map(|v| v + 2.0);
        assert_eq!(compute_metrics(&[a.clone()], &[b]).unwrap(), (4.0, 2.0));
        assert!(compute_metrics(&[a], &[Matrix::zeros(1, 1)]).is_err());
    }

    #[test]
    fn toml_overrides_and_hash() {
        let s = ExperimentSpec::from_toml("seeds = [7]\nl = 3\n", "desk").unwrap();
        assert_eq!(s.l, 3);
        assert_eq!(s.seeds, vec![7]);
        assert_eq!(s.window_k, ExperimentSpec::desk().window_k);
        assert!(ExperimentSpec::from_toml("bogus = 1\n", "desk").is_err());
        let mut t = s.clone();
        t.seeds = vec![1, 2];
        assert_eq!(s.config_hash(), t.config_hash());
        t.activation = "relu".into();
        assert_ne!(s.config_hash(), t.config_hash());
        assert_eq!(s.control_hash(), t.control_hash());
    }

    #[test]
    fn profiles_validate() {
        ExperimentSpec::desk().validate().unwrap();
        ExperimentSpec::paper().validate().unwrap();
    }

    #[test]
    fn record_line_roundtrip() {
        let r = MetricsRecord {
            experiment: "x".into(),
            arm: "a".into(),
            seed: 3,
            horizon: 5,
            init_scheme: "zero".into(),
            l: 2,
            activation: "tanh".into(),
            readout_attention: true,
            mse: 0.1,
            mae: 0.2,
            mse_norm: 0.3,
            mae_norm: 0.4,
            n_windows: 9,
            kappa: 0.5,
            initial_train_loss: 1.0,
            final_train_loss: 0.5,
            wall_time: 1.5,
            config_hash: "abc".into(),
            control_hash: "def".into(),
        };
        let f = parse_record_line(&r.to_line());
        assert_eq!(f["mse"].parse::<f64>().unwrap(), 0.1);
        assert_eq!(f["seed"], "3");
    }
}
