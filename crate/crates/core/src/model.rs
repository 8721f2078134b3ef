//! The trainable forecaster: embedding, group reservoir readouts, fusion,
//! a pre-norm transformer encoder and an affine prediction head.
//!
//! The fused vector `f_t = [(1 − κ) z_t, κ vec(h_t)]` is tokenized as
//! `⌈m / d_ε⌉` zero-padded reservoir tokens followed by the `k` rows of
//! `h_t`, all of width `d_ε`.

use crate::embedding::{cross_attention, embed_tokens, neighbor_start, EmbeddingParams, NormStats};
use crate::error::{dim_err, Error, Result};
use crate::group::{GroupConfig, GroupReservoir};
use crate::linalg::Matrix;
use crate::reservoir::Activation;
use crate::rng::{derive_seed, sample_uniform, Rng};
use crate::tape::{sigmoid, GradTape, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutRates {
    pub hidden: f64,
    pub readout: f64,
    pub attention: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        Self { hidden: 0.4, readout: 0.1, attention: 0.2 }
    }
}

impl DropoutRates {
    pub const NONE: DropoutRates = DropoutRates { hidden: 0.0, readout: 0.0, attention: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_u: usize,
    pub window_k: usize,
    pub neighbor_radius: usize,
    pub horizon_tau: usize,
    pub d_eps: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: DropoutRates,
    /// `l = 0` zeroes the reservoir branch.
    pub group: GroupConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_u: 1,
            window_k: 100,
            neighbor_radius: 99,
            horizon_tau: 50,
            d_eps: 32,
            blocks: 2,
            heads: 4,
            ff_width: 64,
            dropout: DropoutRates::default(),
            group: GroupConfig { d_in: 32, ..Default::default() },
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_u == 0 || self.window_k == 0 || self.horizon_tau == 0 || self.d_eps == 0 {
            return bad("n_u, window_k, horizon_tau and d_eps must be positive".into());
        }
        if self.neighbor_radius >= self.window_k {
            return bad(format!(
                "neighbor radius {} must be below the window length {}",
                self.neighbor_radius, self.window_k
            ));
        }
        if self.heads == 0 || self.d_eps % self.heads != 0 {
            return bad(format!("d_eps {} is not divisible by {} heads", self.d_eps, self.heads));
        }
        if self.ff_width == 0 {
            return bad("ff_width must be positive".into());
        }
        if self.group.d_in != self.d_eps {
            return bad(format!("group input width {} differs from d_eps {}", self.group.d_in, self.d_eps));
        }
        for p in [self.dropout.hidden, self.dropout.readout, self.dropout.attention] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        self.group.validate()
    }

    /// Reservoir prefix tokens.
    pub fn z_tokens(&self) -> usize {
        self.group.m.div_ceil(self.d_eps)
    }

    /// Encoder sequence length.
    pub fn seq_len(&self) -> usize {
        self.z_tokens() + self.window_k
    }

    pub fn fused_len(&self) -> usize {
        self.group.m + self.window_k * self.d_eps
    }

    pub fn out_len(&self) -> usize {
        self.horizon_tau * self.n_u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    /// d × d, applied as `x Wᵀ`
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    /// ff × d
    pub ff1_w: Matrix,
    pub ff1_b: Matrix,
    /// d × ff
    pub ff2_w: Matrix,
    pub ff2_b: Matrix,
}

fn linear_init(rng: &mut Rng, out: usize, inp: usize) -> Result<Matrix> {
    let a = 1.0 / (inp as f64).sqrt();
    sample_uniform(rng, -a, a, out, inp)
}

impl EncoderBlock {
    fn init(d: usize, ff: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            ln1_g: Matrix::filled(1, d, 1.0),
            ln1_b: Matrix::zeros(1, d),
            wq: linear_init(rng, d, d)?,
            wk: linear_init(rng, d, d)?,
            wv: linear_init(rng, d, d)?,
            wo: linear_init(rng, d, d)?,
            ln2_g: Matrix::filled(1, d, 1.0),
            ln2_b: Matrix::zeros(1, d),
            ff1_w: linear_init(rng, ff, d)?,
            ff1_b: Matrix::zeros(1, ff),
            ff2_w: linear_init(rng, d, ff)?,
            ff2_b: Matrix::zeros(1, d),
        })
    }

    fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.wk, &self.wv, &self.wo, &self.ln2_g, &self.ln2_b, &self.ff1_w,
            &self.ff1_b, &self.ff2_w, &self.ff2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

const BLOCK_NAMES: [&str; 12] =
    ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b"];

/// Which part of the model a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embedding,
    Readout,
    ReadoutAttention,
    Kappa,
    Encoder,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingParams,
    pub group: GroupReservoir,
    /// 1 × 1; κ = sigmoid(logit)
    pub kappa_logit: Matrix,
    pub blocks: Vec<EncoderBlock>,
    pub final_g: Matrix,
    pub final_b: Matrix,
    /// (τ·N_u) × (S·d_ε)
    pub head_w: Matrix,
    pub head_b: Matrix,
    /// Set by training; maps predictions back to data units.
    pub norm: Option<NormStats>,
}

/// Tape handles for every tensor, in [`ForecastModel::tensors`] order.
pub struct BoundParams {
    pub vars: Vec<Var>,
    l: usize,
    blocks: usize,
}

impl BoundParams {
    fn emb(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn readout(&self, member: usize) -> (Var, Var) {
        (self.vars[5 + 2 * member], self.vars[6 + 2 * member])
    }

    fn attn(&self, i: usize) -> Var {
        self.vars[5 + 2 * self.l + i]
    }

    fn kappa(&self) -> Var {
        self.vars[8 + 2 * self.l]
    }

    fn block(&self, b: usize, i: usize) -> Var {
        self.vars[9 + 2 * self.l + 12 * b + i]
    }

    fn tail(&self, i: usize) -> Var {
        self.vars[9 + 2 * self.l + 12 * self.blocks + i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeatures {
    /// `k × d_ε`
    pub h: Matrix,
    pub z: Vec<f64>,
    pub f: Vec<f64>,
}

/// Inputs for one batched forward pass.
pub struct BatchInput<'a> {
    /// Normalized series, `T × N_u`.
    pub series: &'a Matrix,
    /// One `T × N_r` state matrix per member; row t is the state after
    /// consuming step t.
    pub states: &'a [Matrix],
    /// Window end indices.
    pub ts: &'a [usize],
}

impl ForecastModel {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(derive_seed(config.seed, 0x6d6f_6465));
        let embedding =
            EmbeddingParams::init(config.n_u, config.d_eps, config.window_k, config.neighbor_radius, &mut rng)?;
        let group = GroupReservoir::init(config.group.clone())?;
        let d = config.d_eps;
        let blocks = (0..config.blocks)
            .map(|_| EncoderBlock::init(d, config.ff_width, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let flat = config.seq_len() * d;
        let head_w = linear_init(&mut rng, config.out_len(), flat)?;
        Ok(Self {
            embedding,
            group,
            kappa_logit: Matrix::zeros(1, 1),
            blocks,
            final_g: Matrix::filled(1, d, 1.0),
            final_b: Matrix::zeros(1, d),
            head_w,
            head_b: Matrix::zeros(1, config.out_len()),
            norm: None,
            config,
        })
    }

    pub fn kappa(&self) -> f64 {
        sigmoid(self.kappa_logit[(0, 0)])
    }

    /// Every parameter tensor except the frozen reservoirs, in a fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let e = &self.embedding;
        let mut v = vec![&e.token_map, &e.token_bias, &e.w_q, &e.w_k, &e.w_v];
        for m in &self.group.members {
            v.push(&m.readout.w_out);
            v.push(&m.readout.theta_out);
        }
        v.extend([&self.group.attn_wq, &self.group.attn_wk, &self.group.attn_wv, &self.kappa_logit]);
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend([&self.final_g, &self.final_b, &self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let e = &mut self.embedding;
        let mut v = vec![&mut e.token_map, &mut e.token_bias, &mut e.w_q, &mut e.w_k, &mut e.w_v];
        for m in &mut self.group.members {
            v.push(&mut m.readout.w_out);
            v.push(&mut m.readout.theta_out);
        }
        v.extend([&mut self.group.attn_wq, &mut self.group.attn_wk, &mut self.group.attn_wv, &mut self.kappa_logit]);
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend([&mut self.final_g, &mut self.final_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    /// Names and groups aligned with [`Self::tensors`].
    pub fn tensor_info(&self) -> Vec<(String, ParamGroup)> {
        let mut v: Vec<(String, ParamGroup)> = ["token_map", "token_bias", "emb_wq", "emb_wk", "emb_wv"]
            .iter()
            .map(|n| (n.to_string(), ParamGroup::Embedding))
            .collect();
        for i in 0..self.group.l() {
            v.push((format!("w_out_{i}"), ParamGroup::Readout));
            v.push((format!("theta_out_{i}"), ParamGroup::Readout));
        }
        for n in ["attn_wq", "attn_wk", "attn_wv"] {
            v.push((n.to_string(), ParamGroup::ReadoutAttention));
        }
        v.push(("kappa_logit".to_string(), ParamGroup::Kappa));
        for b in 0..self.blocks.len() {
            for n in BLOCK_NAMES {
                v.push((format!("block{b}_{n}"), ParamGroup::Encoder));
            }
        }
        v.push(("final_g".into(), ParamGroup::Encoder));
        v.push(("final_b".into(), ParamGroup::Encoder));
        v.push(("head_w".into(), ParamGroup::Head));
        v.push(("head_b".into(), ParamGroup::Head));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn bind(&self, tape: &mut GradTape) -> BoundParams {
        let vars = self.tensors().into_iter().map(|m| tape.leaf(m.clone())).collect();
        BoundParams { vars, l: self.group.l(), blocks: self.blocks.len() }
    }

    /// Reservoir inputs for every row of a normalized series.
    pub fn drive(&self, series: &Matrix) -> Result<Matrix> {
        crate::embedding::reservoir_drive(series, &self.embedding)
    }

    /// Member state matrices for a normalized series, streamed from the
    /// zero state at row 0.
    pub fn stream_states(&self, series: &Matrix) -> Result<Vec<Matrix>> {
        let drive = self.drive(series)?;
        self.group.member_states(&drive)
    }

    fn check_batch(&self, input: &BatchInput<'_>) -> Result<()> {
        let c = &self.config;
        if input.series.cols() != c.n_u {
            return dim_err(format!("series has {} features, model expects {}", input.series.cols(), c.n_u));
        }
        if input.states.len() != self.group.l() {
            return dim_err(format!("{} state matrices for {} members", input.states.len(), self.group.l()));
        }
        for &t in input.ts {
            if t + 1 < c.window_k || t >= input.series.rows() {
                return Err(Error::InsufficientData(format!("window ending at {t} is out of range")));
            }
        }
        for s in input.states {
            if s.rows() != input.series.rows() {
                return dim_err("state matrix length differs from the series length");
            }
        }
        if input.ts.is_empty() {
            return dim_err("empty batch");
        }
        Ok(())
    }

    /// Records the batched forward pass on `tape` and returns the
    /// `B × (τ·N_u)` prediction node. `dropout` is `Some` only in train mode.
    pub fn forward_batch(
        &self,
        tape: &mut GradTape,
        p: &BoundParams,
        input: &BatchInput<'_>,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        self.check_batch(input)?;
        let c = &self.config;
        let (k, d, nb) = (c.window_k, c.d_eps, c.neighbor_radius + 1);
        let b = input.ts.len();

        // Short-window embedding.
        let mut xw = Matrix::zeros(b * k, c.n_u);
        let mut xn = Matrix::zeros(b * nb, c.n_u);
        for (i, &t) in input.ts.iter().enumerate() {
            for r in 0..k {
                xw.row_mut(i * k + r).copy_from_slice(input.series.row(t + 1 - k + r));
            }
            let s = neighbor_start(t, c.neighbor_radius);
            for r in 0..nb {
                xn.row_mut(i * nb + r).copy_from_slice(input.series.row(s + r));
            }
        }
        let xw = tape.leaf(xw);
        let xn = tape.leaf(xn);
        let ew = tape.matmul_t(xw, p.emb(0));
        let ew = tape.add_row(ew, p.emb(1));
        let en = tape.matmul_t(xn, p.emb(0));
        let en = tape.add_row(en, p.emb(1));
        let q = tape.matmul_t(ew, p.emb(3));
        let kk = tape.matmul_t(en, p.emb(2));
        let v = tape.matmul_t(en, p.emb(4));
        let h = tape.block_attention(q, kk, v, b, 1.0 / (d as f64).sqrt(), None);

        let z = self.reservoir_branch(tape, p, input, b)?;
        let mut rng = dropout;
        let z = match rng.as_deref_mut() {
            Some(r) if c.dropout.readout > 0.0 => {
                let m = dropout_mask(r, b, c.group.m, c.dropout.readout);
                tape.mask(z, m)
            }
            _ => z,
        };

        let f = self.fuse_tokens(tape, p, z, h, b);
        let y = self.encode(tape, p, f, b, rng)?;
        Ok(y)
    }

    /// `B × m` reservoir summary: summed nonlinear readouts, optionally passed
    /// through token self-attention.
    fn reservoir_branch(
        &self,
        tape: &mut GradTape,
        p: &BoundParams,
        input: &BatchInput<'_>,
        b: usize,
    ) -> Result<Var> {
        let gc = &self.group.config;
        let mut o: Option<Var> = None;
        for (l, member) in self.group.members.iter().enumerate() {
            let n_r = member.reservoir.n_r();
            let mut x = Matrix::zeros(b, n_r);
            for (i, &t) in input.ts.iter().enumerate() {
                x.row_mut(i).copy_from_slice(input.states[l].row(t));
            }
            let x = tape.leaf(x);
            let (w, th) = p.readout(l);
            let y = tape.matmul_t(x, w);
            let y = tape.add_row(y, th);
            let s = match member.activation {
                Activation::Tanh => tape.tanh(y),
                Activation::Relu => tape.relu(y),
                Activation::Identity => y,
            };
            o = Some(match o {
                None => s,
                Some(acc) => tape.add(acc, s),
            });
        }
        let o = match o {
            Some(o) => o,
            None => tape.leaf(Matrix::zeros(b, gc.m)),
        };
        if !gc.readout_attention {
            return Ok(o);
        }
        let (n, dt) = (gc.n_tokens, gc.d_tok());
        let tok = tape.reshape(o, b * n, dt);
        let q = tape.matmul(tok, p.attn(0));
        let k = tape.matmul(tok, p.attn(1));
        let v = tape.matmul(tok, p.attn(2));
        let zt = tape.block_attention(q, k, v, b, gc.score_factor(), None);
        Ok(tape.reshape(zt, b, gc.m))
    }

    /// Weighted concatenation, tokenized to `(B·S) × d_ε`.
    fn fuse_tokens(&self, tape: &mut GradTape, p: &BoundParams, z: Var, h: Var, b: usize) -> Var {
        let c = &self.config;
        let d = c.d_eps;
        let kappa = tape.sigmoid(p.kappa());
        let one_minus = tape.rsub(1.0, kappa);
        let zs = tape.scale_by(z, one_minus);
        let hs = tape.scale_by(h, kappa);
        let pad = c.z_tokens() * d - c.group.m;
        let zp = if pad > 0 {
            let zeros = tape.leaf(Matrix::zeros(b, pad));
            tape.concat_cols(&[zs, zeros])
        } else {
            zs
        };
        let hf = tape.reshape(hs, b, c.window_k * d);
        let f = tape.concat_cols(&[zp, hf]);
        tape.reshape(f, b * c.seq_len(), d)
    }

    /// Encoder stack and head on `(B·S) × d_ε` tokens.
    fn encode(&self, tape: &mut GradTape, p: &BoundParams, mut x: Var, b: usize, mut rng: Option<&mut Rng>) -> Result<Var> {
        let c = &self.config;
        let (d, s) = (c.d_eps, c.seq_len());
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for bi in 0..self.blocks.len() {
            let a = tape.layer_norm(x, p.block(bi, 0), p.block(bi, 1), LN_EPS);
            let q = tape.matmul_t(a, p.block(bi, 2));
            let k = tape.matmul_t(a, p.block(bi, 3));
            let v = tape.matmul_t(a, p.block(bi, 4));
            let mut heads = Vec::with_capacity(c.heads);
            for hi in 0..c.heads {
                let (qh, kh, vh) = if c.heads == 1 {
                    (q, k, v)
                } else {
                    (tape.slice_cols(q, hi * dh, dh), tape.slice_cols(k, hi * dh, dh), tape.slice_cols(v, hi * dh, dh))
                };
                let mask = match rng.as_deref_mut() {
                    Some(r) if c.dropout.attention > 0.0 => Some(dropout_mask(r, b * s, s, c.dropout.attention)),
                    _ => None,
                };
                heads.push(tape.block_attention(qh, kh, vh, b, scale, mask));
            }
            let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            let proj = tape.matmul_t(cat, p.block(bi, 5));
            let proj = hidden_dropout(tape, proj, rng.as_deref_mut(), b * s, d, c.dropout.hidden);
            x = tape.add(x, proj);

            let a = tape.layer_norm(x, p.block(bi, 6), p.block(bi, 7), LN_EPS);
            let f1 = tape.matmul_t(a, p.block(bi, 8));
            let f1 = tape.add_row(f1, p.block(bi, 9));
            let f1 = tape.gelu(f1);
            let f2 = tape.matmul_t(f1, p.block(bi, 10));
            let f2 = tape.add_row(f2, p.block(bi, 11));
            let f2 = hidden_dropout(tape, f2, rng.as_deref_mut(), b * s, d, c.dropout.hidden);
            x = tape.add(x, f2);
        }
        let y = tape.layer_norm(x, p.tail(0), p.tail(1), LN_EPS);
        let y = tape.reshape(y, b, s * d);
        let out = tape.matmul_t(y, p.tail(2));
        Ok(tape.add_row(out, p.tail(3)))
    }

    /// Predictions for the windows ending at `ts`, one row of `τ·N_u` values
    /// each, in normalized units. Dropout is off.
    pub fn predict_batch(&self, input: &BatchInput<'_>) -> Result<Matrix> {
        let mut tape = GradTape::new();
        let p = self.bind(&mut tape);
        let y = self.forward_batch(&mut tape, &p, input, None)?;
        Ok(tape.value(y).clone())
    }

    /// Embedding `h_t`, readout `z_t` and fused vector `f_t` for the window
    /// ending at `t`, built from the unbatched operations.
    pub fn window_features(&self, series: &Matrix, states: &[Matrix], t: usize) -> Result<WindowFeatures> {
        let c = &self.config;
        if t + 1 < c.window_k || t >= series.rows() {
            return Err(Error::InsufficientData(format!("window ending at {t} is out of range")));
        }
        let window = series.slice_rows(t + 1 - c.window_k, t + 1);
        let neighbors = series.slice_rows(neighbor_start(t, c.neighbor_radius), t + 1);
        let h = cross_attention(
            &embed_tokens(&window, &self.embedding)?,
            &embed_tokens(&neighbors, &self.embedding)?,
            &self.embedding,
        )?;
        let mut o = vec![0.0; c.group.m];
        for (member, st) in self.group.members.iter().zip(states) {
            for (acc, v) in o.iter_mut().zip(member.readout(st.row(t))?) {
                *acc += v;
            }
        }
        let z = self.group.self_attention_readout(&o)?;
        let f = fuse(&z, &h, self.kappa())?;
        Ok(WindowFeatures { h, z, f })
    }

    /// Single-window prediction: [`Self::window_features`] then
    /// [`Self::encoder_forward`].
    pub fn forward_window(&self, series: &Matrix, states: &[Matrix], t: usize) -> Result<Vec<f64>> {
        let w = self.window_features(series, states, t)?;
        self.encoder_forward(&w.f, None)
    }

    /// Encoder and head applied to one fused vector of length
    /// `m + k·d_ε`. Passing an rng enables dropout.
    pub fn encoder_forward(&self, f: &[f64], dropout: Option<&mut Rng>) -> Result<Vec<f64>> {
        let c = &self.config;
        if f.len() != c.fused_len() {
            return dim_err(format!("fused vector has length {}, expected {}", f.len(), c.fused_len()));
        }
        let d = c.d_eps;
        let mut tokens = vec![0.0; c.seq_len() * d];
        tokens[..c.group.m].copy_from_slice(&f[..c.group.m]);
        tokens[c.z_tokens() * d..].copy_from_slice(&f[c.group.m..]);
        let mut tape = GradTape::new();
        let p = self.bind(&mut tape);
        let x = tape.leaf(Matrix::from_vec(c.seq_len(), d, tokens));
        let y = self.encode(&mut tape, &p, x, 1, dropout)?;
        Ok(tape.value(y).as_slice().to_vec())
    }
}

fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, p: f64) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect();
    Matrix::from_vec(rows, cols, data)
}

fn hidden_dropout(tape: &mut GradTape, v: Var, rng: Option<&mut Rng>, rows: usize, cols: usize, p: f64) -> Var {
    match rng {
        Some(r) if p > 0.0 => {
            let m = dropout_mask(r, rows, cols, p);
            tape.mask(v, m)
        }
        _ => v,
    }
}

/// `[(1 − κ) z, κ vec(h)]`
pub fn fuse(z: &[f64], h: &Matrix, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Range(format!("fusion weight must lie in (0, 1), got {kappa}")));
    }
    let mut f = Vec::with_capacity(z.len() + h.len());
    f.extend(z.iter().map(|v| (1.0 - kappa) * v));
    f.extend(h.as_slice().iter().map(|v| kappa * v));
    Ok(f)
}

/// Mean Huber loss between equally sized slices.
pub fn huber_loss_values(pred: &[f64], target: &[f64], delta: f64) -> f64 {
    assert_eq!(pred.len(), target.len(), "huber length mismatch");
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = (p - t).abs();
            if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        })
        .sum();
    sum / pred.len() as f64
}

pub fn huber_loss(pred: &Matrix, target: &Matrix, delta: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return dim_err(format!("prediction {:?} and target {:?} shapes differ", pred.shape(), target.shape()));
    }
    if !(delta > 0.0) {
        return Err(Error::Range(format!("huber delta must be positive, got {delta}")));
    }
    if pred.is_empty() {
        return dim_err("empty prediction");
    }
    Ok(huber_loss_values(pred.as_slice(), target.as_slice(), delta))
}

/// Derivative of the per-entry Huber term with respect to the residual.
pub fn huber_derivative(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}
