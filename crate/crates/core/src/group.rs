//! An ensemble of independently initialized reservoirs whose nonlinear
//! readouts are summed elementwise, followed by a token self-attention
//! readout over the sum.

use std::str::FromStr;

use crate::codec::{DumpReader, DumpWriter};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{softmax_in_place, Matrix};
use crate::reservoir::{
    nonlinear_readout, Activation, InitScheme, LinearReadout, RescaleTarget, Reservoir, ReservoirConfig, ReservoirState,
};
use crate::rng::{derive_seed, sample_uniform, Rng};

/// Which members receive the configured init scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeScope {
    /// Member 0 uses the scheme, the rest are random-uniform.
    FirstMember,
    AllMembers,
}

impl SchemeScope {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeScope::FirstMember => "first",
            SchemeScope::AllMembers => "all",
        }
    }
}

impl FromStr for SchemeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(SchemeScope::FirstMember),
            "all" => Ok(SchemeScope::AllMembers),
            _ => Err(Error::Config(format!("unknown scheme scope '{s}'"))),
        }
    }
}

/// Denominator of the attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreScale {
    /// `√d_ε`
    Embedding,
    /// `√d_tok`
    Token,
}

impl ScoreScale {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreScale::Embedding => "embedding",
            ScoreScale::Token => "token",
        }
    }
}

impl FromStr for ScoreScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(ScoreScale::Embedding),
            "token" => Ok(ScoreScale::Token),
            _ => Err(Error::Config(format!("unknown score scale '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfig {
    pub l: usize,
    pub n_r: usize,
    /// Reservoir input width, equal to d_ε.
    pub d_in: usize,
    pub m: usize,
    pub n_tokens: usize,
    pub activation: Activation,
    /// When false the summed readout passes through unchanged.
    pub readout_attention: bool,
    pub score_scale: ScoreScale,
    pub alpha_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub sigma_in: f64,
    pub init_scheme: InitScheme,
    pub scheme_scope: SchemeScope,
    pub rescale_target: RescaleTarget,
    pub seed: u64,
    pub freeze_attention: bool,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            l: 5,
            n_r: 100,
            d_in: 32,
            m: 64,
            n_tokens: 8,
            activation: Activation::Tanh,
            readout_attention: true,
            score_scale: ScoreScale::Embedding,
            alpha_range: (0.2, 0.6),
            rho_range: (0.5, 0.9),
            sigma_in: 1.0,
            init_scheme: InitScheme::RandomUniform,
            scheme_scope: SchemeScope::FirstMember,
            rescale_target: RescaleTarget::LeakyMatrix,
            seed: 0,
            freeze_attention: false,
        }
    }
}

impl GroupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_tokens == 0 || self.m % self.n_tokens != 0 {
            return Err(Error::Config(format!(
                "readout width {} must be a positive multiple of the token count {}",
                self.m, self.n_tokens
            )));
        }
        for (name, (lo, hi)) in [("alpha", self.alpha_range), ("rho", self.rho_range)] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} range is empty: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn d_tok(&self) -> usize {
        self.m / self.n_tokens
    }

    pub fn score_factor(&self) -> f64 {
        let d = match self.score_scale {
            ScoreScale::Embedding => self.d_in,
            ScoreScale::Token => self.d_tok(),
        };
        1.0 / (d as f64).sqrt()
    }

    /// Reservoir configuration for member `index`, with α and ρ drawn from
    /// their ranges by a stream derived from the group seed.
    pub fn member_config(&self, index: usize) -> ReservoirConfig {
        let mut rng = Rng::new(derive_seed(self.seed, 0x6d65_6d62 + index as u64));
        let draw = |rng: &mut Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.uniform(lo, hi) };
        let alpha = draw(&mut rng, self.alpha_range);
        let rho = draw(&mut rng, self.rho_range);
        let init_scheme = match (self.scheme_scope, index) {
            (SchemeScope::AllMembers, _) | (SchemeScope::FirstMember, 0) => self.init_scheme,
            _ => InitScheme::RandomUniform,
        };
        ReservoirConfig {
            n_r: self.n_r,
            d_in: self.d_in,
            alpha,
            rho,
            sigma_in: self.sigma_in,
            seed: self.seed.wrapping_add(index as u64),
            init_scheme,
            rescale_target: self.rescale_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub reservoir: Reservoir,
    pub readout: LinearReadout,
    pub activation: Activation,
}

impl Member {
    /// `σ(W_out x + θ_out)`
    pub fn readout(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(nonlinear_readout(&self.readout.apply(x)?, self.activation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReservoir {
    pub config: GroupConfig,
    pub members: Vec<Member>,
    /// d_tok × d_tok each
    pub attn_wq: Matrix,
    pub attn_wk: Matrix,
    pub attn_wv: Matrix,
}

impl GroupReservoir {
    pub fn init(config: GroupConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(derive_seed(config.seed, 0x7265_6164));
        let mut members = Vec::with_capacity(config.l);
        for i in 0..config.l {
            let reservoir = Reservoir::init(config.member_config(i))?;
            let readout = LinearReadout::init(config.m, config.n_r, &mut rng)?;
            members.push(Member { reservoir, readout, activation: config.activation });
        }
        let dt = config.d_tok();
        let a = 1.0 / (dt as f64).sqrt();
        let attn_wq = sample_uniform(&mut rng, -a, a, dt, dt)?;
        let attn_wk = sample_uniform(&mut rng, -a, a, dt, dt)?;
        let attn_wv = sample_uniform(&mut rng, -a, a, dt, dt)?;
        Ok(Self { config, members, attn_wq, attn_wk, attn_wv })
    }

    pub fn l(&self) -> usize {
        self.members.len()
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn zero_states(&self) -> Vec<ReservoirState> {
        self.members.iter().map(|m| ReservoirState::zeros(m.reservoir.n_r())).collect()
    }

    /// Steps every member on `h` and returns the new states with
    /// `o = Σ_l σ(y_l)`, summed in member order.
    pub fn group_step(&self, states: &[ReservoirState], h: &[f64]) -> Result<(Vec<ReservoirState>, Vec<f64>)> {
        if states.len() != self.members.len() {
            return dim_err(format!("{} states for {} members", states.len(), self.members.len()));
        }
        let mut next = Vec::with_capacity(states.len());
        let mut o = vec![0.0; self.m()];
        for (member, st) in self.members.iter().zip(states) {
            let s = member.reservoir.step(st, h)?;
            for (acc, v) in o.iter_mut().zip(member.readout(&s.x)?) {
                *acc += v;
            }
            next.push(s);
        }
        Ok((next, o))
    }

    /// Tokenizes `o` into `n` rows of width `d_tok` and applies one head of
    /// scaled dot-product self-attention; the result is flattened back.
    pub fn self_attention_readout(&self, o: &[f64]) -> Result<Vec<f64>> {
        if o.len() != self.m() {
            return dim_err(format!("readout vector has length {}, expected {}", o.len(), self.m()));
        }
        if !self.config.readout_attention {
            return Ok(o.to_vec());
        }
        let n = self.config.n_tokens;
        let dt = self.config.d_tok();
        let tokens = Matrix::from_vec(n, dt, o.to_vec());
        let q = tokens.matmul(&self.attn_wq)?;
        let k = tokens.matmul(&self.attn_wk)?;
        let v = tokens.matmul(&self.attn_wv)?;
        let mut scores = q.matmul_t(&k)?.scale(self.config.score_factor());
        for r in 0..n {
            softmax_in_place(scores.row_mut(r));
        }
        Ok(scores.matmul(&v)?.into_vec())
    }

    pub fn group_forward(&self, states: &[ReservoirState], h: &[f64]) -> Result<(Vec<ReservoirState>, Vec<f64>)> {
        let (next, o) = self.group_step(states, h)?;
        let z = self.self_attention_readout(&o)?;
        Ok((next, z))
    }

    /// Runs every member over all rows of `drive` from zero state; one
    /// `T × N_r` state matrix per member.
    pub fn member_states(&self, drive: &Matrix) -> Result<Vec<Matrix>> {
        self.members.iter().map(|m| m.reservoir.run_matrix(drive)).collect()
    }

    /// Bytes retained by the reservoir path between time steps: frozen
    /// parameters, readouts and one state vector per member.
    pub fn retained_bytes(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.reservoir.retained_bytes() + 8 * (m.readout.w_out.len() + m.readout.theta_out.len()))
            .sum::<usize>()
            + 8 * (self.attn_wq.len() + self.attn_wk.len() + self.attn_wv.len())
    }

    pub fn dump(&self) -> String {
        let c = &self.config;
        let mut w = DumpWriter::new("group v1");
        w.int("l", c.l as u64)
            .int("m", c.m as u64)
            .int("n_tokens", c.n_tokens as u64)
            .int("n_r", c.n_r as u64)
            .int("d_in", c.d_in as u64)
            .text("activation", c.activation.name())
            .int("readout_attention", c.readout_attention as u64)
            .text("score_scale", c.score_scale.name())
            .float("alpha_lo", c.alpha_range.0)
            .float("alpha_hi", c.alpha_range.1)
            .float("rho_lo", c.rho_range.0)
            .float("rho_hi", c.rho_range.1)
            .float("sigma_in", c.sigma_in)
            .text("scheme", c.init_scheme.name())
            .text("scope", c.scheme_scope.name())
            .text("rescale", c.rescale_target.name())
            .int("seed", c.seed)
            .int("freeze_attention", c.freeze_attention as u64);
        for m in &self.members {
            w.raw(&m.reservoir.dump());
            w.text("member_activation", m.activation.name())
                .tensor("w_out", &m.readout.w_out)
                .tensor("theta_out", &m.readout.theta_out);
        }
        w.tensor("attn_wq", &self.attn_wq).tensor("attn_wk", &self.attn_wk).tensor("attn_wv", &self.attn_wv);
        w.finish()
    }

    pub fn load(text: &str) -> Result<Self> {
        Self::read(&mut DumpReader::new(text))
    }

    pub(crate) fn read(r: &mut DumpReader<'_>) -> Result<Self> {
        r.header("group v1")?;
        let l = r.int("l")? as usize;
        let m = r.int("m")? as usize;
        let n_tokens = r.int("n_tokens")? as usize;
        let n_r = r.int("n_r")? as usize;
        let d_in = r.int("d_in")? as usize;
        let activation = r.text("activation")?.parse()?;
        let readout_attention = r.int("readout_attention")? != 0;
        let score_scale = r.text("score_scale")?.parse()?;
        let alpha_range = (r.float("alpha_lo")?, r.float("alpha_hi")?);
        let rho_range = (r.float("rho_lo")?, r.float("rho_hi")?);
        let config = GroupConfig {
            l,
            n_r,
            d_in,
            m,
            n_tokens,
            activation,
            readout_attention,
            score_scale,
            alpha_range,
            rho_range,
            sigma_in: r.float("sigma_in")?,
            init_scheme: r.text("scheme")?.parse()?,
            scheme_scope: r.text("scope")?.parse()?,
            rescale_target: r.text("rescale")?.parse()?,
            seed: r.int("seed")?,
            freeze_attention: r.int("freeze_attention")? != 0,
        };
        config.validate()?;
        let mut members = Vec::with_capacity(l);
        for _ in 0..l {
            let reservoir = Reservoir::read(r)?;
            let activation = r.text("member_activation")?.parse()?;
            let w_out = r.tensor("w_out")?;
            let theta_out = r.tensor("theta_out")?;
            if w_out.shape() != (m, reservoir.n_r()) || theta_out.shape() != (1, m) {
                return Err(Error::Format("readout shapes do not match group header".into()));
            }
            members.push(Member { reservoir, readout: LinearReadout { w_out, theta_out }, activation });
        }
        let attn_wq = r.tensor("attn_wq")?;
        let attn_wk = r.tensor("attn_wk")?;
        let attn_wv = r.tensor("attn_wv")?;
        Ok(Self { config, members, attn_wq, attn_wk, attn_wv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(l: usize, seed: u64) -> GroupConfig {
        GroupConfig { l, n_r: 12, d_in: 4, m: 8, n_tokens: 4, seed, ..Default::default() }
    }

    #[test]
    fn singleton_sum_is_member_readout() {
        let g = GroupReservoir::init(small(1, 3)).unwrap();
        let h = [0.1, -0.2, 0.3, 0.4];
        let (st, o) = g.group_step(&g.zero_states(), &h).unwrap();
        assert_eq!(o, g.members[0].readout(&st[0].x).unwrap());
    }

    #[test]
    fn duplicate_members_double() {
        let mut g = GroupReservoir::init(small(2, 3)).unwrap();
        g.members[1] = g.members[0].clone();
        let h = [0.1, -0.2, 0.3, 0.4];
        let (_, o) = g.group_step(&g.zero_states(), &h).unwrap();
        let mut single = g.clone();
        single.members.truncate(1);
        let (_, o1) = single.group_step(&single.zero_states(), &h).unwrap();
        for (a, b) in o.iter().zip(&o1) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn members_are_distinct() {
        let g = GroupReservoir::init(small(3, 9)).unwrap();
        assert_ne!(g.members[0].reservoir.param_digest(), g.members[1].reservoir.param_digest());
        assert_ne!(g.members[0].reservoir.config.alpha, g.members[1].reservoir.config.alpha);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let g = GroupReservoir::init(small(2, 1)).unwrap();
        assert!(g.self_attention_readout(&[0.0; 8]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_is_value_projection() {
        let g = GroupReservoir::init(GroupConfig { n_tokens: 1, ..small(1, 2) }).unwrap();
        let o: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let z = g.self_attention_readout(&o).unwrap();
        let expect = Matrix::from_vec(1, 8, o).matmul(&g.attn_wv).unwrap();
        assert!(expect.as_slice().iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn bad_token_count_rejected() {
        assert!(matches!(GroupReservoir::init(GroupConfig { n_tokens: 3, ..small(1, 0) }), Err(Error::Config(_))));
    }

    #[test]
    fn member_count_mismatch() {
        let g = GroupReservoir::init(small(2, 0)).unwrap();
        assert!(matches!(g.group_step(&g.zero_states()[..1], &[0.0; 4]), Err(Error::Dimension(_))));
    }

    #[test]
    fn scheme_scope() {
        let c = GroupConfig { init_scheme: InitScheme::Zero, ..small(3, 0) };
        assert_eq!(c.member_config(0).init_scheme, InitScheme::Zero);
        assert_eq!(c.member_config(2).init_scheme, InitScheme::RandomUniform);
        let c = GroupConfig { scheme_scope: SchemeScope::AllMembers, ..c };
        assert_eq!(c.member_config(2).init_scheme, InitScheme::Zero);
    }

    #[test]
    fn dump_roundtrip() {
        let g = GroupReservoir::init(small(3, 5)).unwrap();
        assert_eq!(GroupReservoir::load(&g.dump()).unwrap(), g);
    }
}
