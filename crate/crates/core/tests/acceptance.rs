//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits nonzero if any fails.

use std::collections::HashMap;
use std::time::Instant;

use reservoir_transformer::chaos::{estimate_d2, estimate_d2_points, D2Options};
use reservoir_transformer::checkpoint;
use reservoir_transformer::data::{gen_lorenz, gen_mackey_glass, LorenzParams, MackeyGlassParams};
use reservoir_transformer::group::GroupConfig;
use reservoir_transformer::harness::{
    curve_steps_within_se, feature_entropy, group_curve, init_sensitivity_table, prepare, readout_arm, run_cell,
    run_scaling_probe, transformer_only, CellRun, ExperimentSpec, MetricsRecord, Prepared,
};
use reservoir_transformer::model::{huber_derivative, huber_loss_values, DropoutRates};
use reservoir_transformer::reservoir::{fit_linear_readout, ReservoirState};
use reservoir_transformer::stats::median;
use reservoir_transformer::tape::{sigmoid, GradTape};
use reservoir_transformer::train::{gradient_check, predict_rolling, train, TrainData};
use reservoir_transformer::{ForecastModel, Matrix, ModelConfig, Reservoir, ReservoirConfig, Result, Rng, SeriesTensor};

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name.to_string());
        }
    }

    fn run(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.check(name, false, format!("error: {e}"));
        }
    }
}

/// Trains each (spec, seed) cell at most once.
struct Cells {
    prepared: Prepared,
    records: HashMap<(String, u64), MetricsRecord>,
}

impl Cells {
    fn record(&mut self, spec: &ExperimentSpec, arm: &str, seed: u64) -> Result<MetricsRecord> {
        let key = (spec.config_hash(), seed);
        if let Some(r) = self.records.get(&key) {
            return Ok(MetricsRecord { arm: arm.to_string(), ..r.clone() });
        }
        let c = run_cell(spec, &self.prepared, arm, seed, spec.horizons[0])?;
        self.records.insert(key, c.record.clone());
        Ok(c.record)
    }

    fn sweep(&mut self, spec: &ExperimentSpec, arm: &str) -> Result<Vec<MetricsRecord>> {
        spec.seeds.iter().map(|&s| self.record(spec, arm, s)).collect()
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
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
    }
}

fn wave(n: usize) -> Matrix {
    Matrix::from_vec(n, 1, (0..n).map(|i| (0.25 * i as f64).sin() + 0.1 * (0.9 * i as f64).cos()).collect())
}

fn gradients(s: &mut Suite) -> Result<()> {
    let started = Instant::now();
    let model = ForecastModel::init(tiny_config())?;
    let r = gradient_check(&model, &wave(60), &[10, 25, 40], 1.0, 1e-5)?;

    // κ through the fusion ops, against κ(1 − κ)(Σ w_h·h − Σ w_z·z)
    let mut rng = Rng::new(4);
    let z = Matrix::from_vec(1, 6, (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let h = Matrix::from_vec(1, 8, (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let w = Matrix::from_vec(1, 14, (0..14).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let logit = 0.3;
    let mut t = GradTape::new();
    let lv = t.leaf(Matrix::from_vec(1, 1, vec![logit]));
    let zv = t.leaf(z.clone());
    let hv = t.leaf(h.clone());
    let kappa = t.sigmoid(lv);
    let one_minus = t.rsub(1.0, kappa);
    let zs = t.scale_by(zv, one_minus);
    let hs = t.scale_by(hv, kappa);
    let f = t.concat_cols(&[zs, hs]);
    let fw = t.mask(f, w.clone());
    let ones = t.leaf(Matrix::filled(14, 1, 1.0));
    let loss = t.matmul(fw, ones);
    let g = t.backward(loss).get(lv, (1, 1))[(0, 0)];
    let k = sigmoid(logit);
    let dz: f64 = z.as_slice().iter().zip(&w.as_slice()[..6]).map(|(a, b)| a * b).sum();
    let dh: f64 = h.as_slice().iter().zip(&w.as_slice()[6..]).map(|(a, b)| a * b).sum();
    let analytic = k * (1.0 - k) * (dh - dz);
    let kappa_err = (g - analytic).abs();
    let secs = started.elapsed().as_secs_f64();
    s.check(
        "gradient suite",
        r.max_rel_error < 1e-4 && kappa_err < 1e-9 && secs < 60.0,
        format!("max rel error {:.2e} (< 1e-4), kappa error {:.2e} (< 1e-9), {secs:.1}s", r.max_rel_error, kappa_err),
    );
    Ok(())
}

fn reservoir_dynamics(s: &mut Suite) -> Result<()> {
    let started = Instant::now();
    let mut rng = Rng::new(11);

    let still = Reservoir::init(ReservoirConfig { n_r: 30, d_in: 3, alpha: 0.0, ..Default::default() })?;
    let x0 = ReservoirState { x: (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect(), t: 0 };
    let x1 = still.step(&x0, &[0.4, -2.0, 1.5])?;
    let identity = x1.x == x0.x;

    let res = Reservoir::init(ReservoirConfig { d_in: 3, ..Default::default() })?;
    let mut bounded = true;
    let mut a = ReservoirState::zeros(res.n_r());
    let mut b = ReservoirState { x: (0..res.n_r()).map(|_| rng.uniform(-1.0, 1.0)).collect(), t: 0 };
    let gap = |a: &ReservoirState, b: &ReservoirState| a.x.iter().zip(&b.x).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let g0 = gap(&a, &b);
    for _ in 0..500 {
        let h: Vec<f64> = (0..3).map(|_| rng.uniform(-5.0, 5.0)).collect();
        a = res.step(&a, &h)?;
        b = res.step(&b, &h)?;
        bounded &= a.x.iter().chain(&b.x).all(|v| v.abs() <= 1.0);
    }
    let contraction = gap(&a, &b) / g0;

    let spec = ExperimentSpec { epochs: 2, ..ExperimentSpec::desk() };
    let p = prepare(&spec)?;
    let mut model = ForecastModel::init(spec.model_config(spec.horizons[0], 0)?)?;
    let digest = |m: &ForecastModel| m.group.members.iter().map(|x| x.reservoir.param_digest()).collect::<Vec<_>>();
    let before = digest(&model);
    let data = TrainData::new(p.normalized.clone(), p.train_end, p.val_end, spec.window_k, spec.horizons[0], spec.washout, 4)?;
    train(&mut model, &data, &spec.train_config(0)?)?;
    let frozen = before == digest(&model);

    let secs = started.elapsed().as_secs_f64();
    s.check(
        "reservoir dynamics suite",
        identity && bounded && contraction <= 1e-6 && frozen && secs < 60.0,
        format!(
            "alpha=0 identity {identity}, |x| <= 1 {bounded}, contraction at t=500 {contraction:.2e} (<= 1e-6), frozen hashes equal {frozen}, {secs:.1}s"
        ),
    );
    Ok(())
}

fn readout_fitting(s: &mut Suite) -> Result<()> {
    let mut rng = Rng::new(5);
    let (t, n) = (200, 12);
    let states = Matrix::from_vec(t, n, (0..t * n).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let w: Vec<f64> = (0..2 * n).map(|_| rng.normal(0.0, 1.0)).collect();
    let bias = [0.3, -1.2];
    let targets = Matrix::from_vec(
        t,
        2,
        (0..t).flat_map(|r| (0..2).map(|o| (0..n).map(|j| w[o * n + j] * states[(r, j)]).sum::<f64>() + bias[o]).collect::<Vec<_>>()).collect(),
    );
    let ro = fit_linear_readout(&states, &targets, 0.0)?;
    let mut recovery: f64 = 0.0;
    for o in 0..2 {
        for j in 0..n {
            recovery = recovery.max((ro.w_out[(o, j)] - w[o * n + j]).abs());
        }
        recovery = recovery.max((ro.theta_out[(0, o)] - bias[o]).abs());
    }

    // residual orthogonal to the regressors for noisy targets
    let noise: Vec<f64> = (0..2 * t).map(|_| rng.normal(0.0, 0.5)).collect();
    let noisy = Matrix::from_vec(t, 2, targets.as_slice().iter().zip(&noise).map(|(a, b)| a + b).collect());
    let ro = fit_linear_readout(&states, &noisy, 0.0)?;
    let mut stationarity: f64 = 0.0;
    for o in 0..2 {
        let resid: Vec<f64> = (0..t)
            .map(|r| (0..n).map(|j| ro.w_out[(o, j)] * states[(r, j)]).sum::<f64>() + ro.theta_out[(0, o)] - noisy[(r, o)])
            .collect();
        for j in 0..=n {
            let g: f64 = (0..t).map(|r| resid[r] * if j == n { 1.0 } else { states[(r, j)] }).sum::<f64>() / t as f64;
            stationarity = stationarity.max(g.abs());
        }
    }
    s.check(
        "readout fitting",
        recovery < 1e-8 && stationarity < 1e-8,
        format!("generator recovery {recovery:.2e} (< 1e-8), residual gradient {stationarity:.2e} (< 1e-8)"),
    );
    Ok(())
}

fn huber_anchors(s: &mut Suite) -> Result<()> {
    let a = huber_loss_values(&[0.5], &[0.0], 1.0);
    let b = huber_loss_values(&[2.0], &[0.0], 1.0);
    let edge = huber_loss_values(&[1.0], &[0.0], 1.0);
    let eps = 1e-13;
    let left = huber_derivative(1.0 - eps, 1.0);
    let right = huber_derivative(1.0 + eps, 1.0);
    let ok = (a - 0.125).abs() < 1e-12
        && (b - 1.5).abs() < 1e-12
        && (edge - 0.5).abs() < 1e-12
        && (left - 1.0).abs() < 1e-12
        && (right - 1.0).abs() < 1e-12;
    s.check(
        "huber anchors",
        ok,
        format!("L(0.5) = {a}, L(2) = {b}, L(1) = {edge}, derivative left {left} right {right}"),
    );
    Ok(())
}

fn correlation_dimension(s: &mut Suite) -> Result<()> {
    let started = Instant::now();
    let opts = D2Options::default();
    let mut rng = Rng::new(7);
    let square: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.unit(), rng.unit()]).collect();
    let line: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64 / 499.0]).collect();
    let lorenz = gen_lorenz(&LorenzParams { n: 1100, sample_every: 10, ..Default::default() })?.slice(100, 1100);
    let lorenz: Vec<Vec<f64>> = (0..lorenz.len()).map(|t| lorenz.row(t).to_vec()).collect();
    let mg = gen_mackey_glass(&MackeyGlassParams { n: 1100, discard: 200, ..Default::default() })?;
    let sine = SeriesTensor::univariate((0..1100).map(|t| (0.1 * t as f64).sin()).collect())?;
    let d_sq = estimate_d2_points(&square, &opts)?.d2;
    let d_line = estimate_d2_points(&line, &opts)?.d2;
    let d_lor = estimate_d2_points(&lorenz, &opts)?.d2;
    let d_mg = estimate_d2(&mg, 0, 1000, 3, 1, &opts)?.d2;
    let d_sine = estimate_d2(&sine, 0, 1000, 3, 1, &opts)?.d2;
    let secs = started.elapsed().as_secs_f64();
    s.check(
        "correlation dimension suite",
        (d_sq - 2.0).abs() <= 0.25
            && (d_line - 1.0).abs() <= 0.15
            && (1.8..=3.2).contains(&d_lor)
            && d_mg > d_sine
            && secs < 120.0,
        format!(
            "square {d_sq:.3} (2 ± 0.25), line {d_line:.3} (1 ± 0.15), lorenz {d_lor:.3} in [1.8, 3.2] (reference 2.841), mackey-glass {d_mg:.3} > sine {d_sine:.3}, {secs:.1}s"
        ),
    );
    Ok(())
}

fn scaling(s: &mut Suite) -> Result<()> {
    let spec = ExperimentSpec { scaling_t_values: vec![1_000, 10_000, 100_000], ..ExperimentSpec::desk() };
    let r = run_scaling_probe(&spec)?;
    let same_bytes = r.t_retained_bytes.windows(2).all(|w| w[0] == w[1]);
    s.check(
        "complexity",
        same_bytes && (r.t_slope - 1.0).abs() <= 0.15 && (r.nr_slope - 2.0).abs() <= 0.3,
        format!(
            "retained bytes {:?} identical {same_bytes}, slope in T {:.3} (1 ± 0.15), slope in N_r {:.3} over {:?} (2 ± 0.3)",
            r.t_retained_bytes, r.t_slope, r.nr_slope, r.nr_values
        ),
    );
    Ok(())
}

fn rt_benefit(s: &mut Suite, cells: &mut Cells, spec: &ExperimentSpec) -> Result<()> {
    let rt = cells.sweep(spec, "rt")?;
    let base = cells.sweep(&transformer_only(spec), "transformer_only")?;
    let m_rt = median(&rt.iter().map(|r| r.mse).collect::<Vec<_>>());
    let m_base = median(&base.iter().map(|r| r.mse).collect::<Vec<_>>());
    let secs: f64 = rt.iter().chain(&base).map(|r| r.wall_time).sum();
    s.check(
        "reservoir benefit",
        m_rt < m_base && secs < 1200.0,
        format!("median test mse L=5 {m_rt:.6} < transformer-only {m_base:.6} over {} seeds, {secs:.0}s", spec.seeds.len()),
    );
    Ok(())
}

fn init_sensitivity(s: &mut Suite, cells: &mut Cells, spec: &ExperimentSpec) -> Result<()> {
    let mut records = Vec::new();
    for &l in &spec.init_l_values {
        for scheme in &spec.schemes {
            let arm = ExperimentSpec { l, init_scheme: scheme.clone(), ..spec.clone() };
            records.extend(cells.sweep(&arm, &format!("l{l}_{scheme}"))?);
        }
    }
    let t = init_sensitivity_table(&records, &spec.init_l_values, &spec.schemes)?;
    let (single, group) = (&t.blocks[0], &t.blocks[1]);
    let wins = single.rows.iter().zip(&group.rows).filter(|(a, b)| b.p_value < a.p_value).count();
    let secs: f64 = records.iter().map(|r| r.wall_time).sum();
    let detail: Vec<String> =
        single.rows.iter().zip(&group.rows).map(|(a, b)| format!("{} {:.3}/{:.3}", a.scheme, a.p_value, b.p_value)).collect();
    s.check(
        "initialization sensitivity",
        group.cross_scheme_variance < single.cross_scheme_variance && wins >= 4 && secs < 3600.0,
        format!(
            "variance L={} {:.2e} < L={} {:.2e}; group p below single p in {wins}/5 ({}); {secs:.0}s",
            group.l,
            group.cross_scheme_variance,
            single.l,
            single.cross_scheme_variance,
            detail.join(", ")
        ),
    );
    Ok(())
}

fn group_size(s: &mut Suite, cells: &mut Cells, spec: &ExperimentSpec) -> Result<()> {
    let mut records = Vec::new();
    for &l in &spec.group_l_values {
        records.extend(cells.sweep(&ExperimentSpec { l, ..spec.clone() }, &format!("l{l}"))?);
    }
    let curve = group_curve(&records, &spec.group_l_values);
    let steps = curve_steps_within_se(&curve);
    let up_to_ten = steps.iter().filter(|st| st.1 <= 10).all(|st| st.4);
    let at = |l: usize| curve.iter().find(|p| p.l == l).map(|p| p.median_mse).unwrap_or(f64::NAN);
    let flat = (at(12) - at(10)).abs() < (at(4) - at(1)).abs();
    let medians: Vec<String> = curve.iter().map(|p| format!("{}:{:.5}", p.l, p.median_mse)).collect();
    s.check(
        "reservoir count curve",
        up_to_ten && flat,
        format!(
            "medians {}; steps to L=10 within one pooled se {up_to_ten}; |m12 - m10| {:.2e} < |m4 - m1| {:.2e} {flat}",
            medians.join(" "),
            (at(12) - at(10)).abs(),
            (at(4) - at(1)).abs()
        ),
    );
    Ok(())
}

fn readout_arms(s: &mut Suite, cells: &mut Cells, spec: &ExperimentSpec) -> Result<()> {
    let mut med = Vec::new();
    let mut controls = Vec::new();
    for arm in &spec.readout_arms {
        let r = cells.sweep(&readout_arm(spec, arm)?, arm)?;
        controls.push(r[0].control_hash.clone());
        med.push((arm.clone(), median(&r.iter().map(|x| x.mse).collect::<Vec<_>>())));
    }
    let get = |n: &str| med.iter().find(|(a, _)| a == n).map(|x| x.1).unwrap_or(f64::NAN);
    let controlled = controls.windows(2).all(|w| w[0] == w[1]);
    let text: Vec<String> = med.iter().map(|(a, m)| format!("{a} {m:.6}")).collect();
    s.check(
        "readout activation",
        get("self_attention") <= get("identity") && controlled,
        format!("median mse {}; controlled {controlled}", text.join(", ")),
    );
    Ok(())
}

fn entropy_and_determinism(s: &mut Suite, cells: &mut Cells, spec: &ExperimentSpec) -> Result<()> {
    let seed = spec.seeds[0];
    let cell: CellRun = run_cell(spec, &cells.prepared, "rt", seed, spec.horizons[0])?;
    let e = feature_entropy(&cell, spec.entropy_bins)?;
    s.check(
        "feature entropy ordering",
        e.f >= e.z && e.z >= e.h,
        format!("f {:.4} >= z {:.4} >= h {:.4} ({} bins)", e.f, e.z, e.h, spec.entropy_bins),
    );

    let first = cells.record(spec, "rt", seed)?;
    let rerun_same = first.metric_key() == MetricsRecord { arm: first.arm.clone(), ..cell.record.clone() }.metric_key();
    let path = std::env::temp_dir().join(format!("rt_acceptance_{}.ckpt", std::process::id()));
    checkpoint::save(&cell.model, &path)?;
    let back = checkpoint::load(&path)?;
    let _ = std::fs::remove_file(&path);
    let t0 = cell.test_ts[0];
    let n = cell.test_ts.len();
    let a = predict_rolling(&cell.model, &cells.prepared.raw, t0, n, 1)?;
    let b = predict_rolling(&back, &cells.prepared.raw, t0, n, 1)?;
    let bits = a.iter().zip(&b).all(|(x, y)| {
        x.pred.as_slice().iter().zip(y.pred.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits())
    });
    s.check(
        "determinism",
        rerun_same && bits,
        format!("rerun record identical {rerun_same}; checkpoint reload predictions bit-identical {bits} over {n} windows"),
    );
    Ok(())
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let mut suite = Suite { failed: Vec::new() };
    suite.run("gradient suite", gradients);
    suite.run("reservoir dynamics suite", reservoir_dynamics);
    suite.run("readout fitting", readout_fitting);
    suite.run("huber anchors", huber_anchors);
    suite.run("correlation dimension suite", correlation_dimension);
    suite.run("complexity", scaling);

    let spec = ExperimentSpec::desk();
    match prepare(&spec) {
        Ok(prepared) => {
            let mut cells = Cells { prepared, records: HashMap::new() };
            suite.run("reservoir benefit", |s| rt_benefit(s, &mut cells, &spec));
            suite.run("initialization sensitivity", |s| init_sensitivity(s, &mut cells, &spec));
            suite.run("reservoir count curve", |s| group_size(s, &mut cells, &spec));
            suite.run("readout activation", |s| readout_arms(s, &mut cells, &spec));
            suite.run("feature entropy ordering", |s| entropy_and_determinism(s, &mut cells, &spec));
        }
        Err(e) => suite.check("desk dataset", false, format!("error: {e}")),
    }

    if suite.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: {} failing: {}", suite.failed.len(), suite.failed.join(", "));
        std::process::exit(1);
    }
}
