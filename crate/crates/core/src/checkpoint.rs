//! Versioned text checkpoints of a trained model. Floats are stored as hex
//! bit patterns so a reload predicts bit-for-bit identically.

use std::path::Path;

use crate::codec::{DumpReader, DumpWriter};
use crate::embedding::NormStats;
use crate::error::{Error, Result};
use crate::group::GroupReservoir;
use crate::linalg::Matrix;
use crate::model::{DropoutRates, ForecastModel, ModelConfig};

const HEADER: &str = "forecast-model v1";

pub fn to_string(model: &ForecastModel) -> String {
    let c = &model.config;
    let mut w = DumpWriter::new(HEADER);
    w.int("n_u", c.n_u as u64)
        .int("window_k", c.window_k as u64)
        .int("neighbor_radius", c.neighbor_radius as u64)
        .int("horizon_tau", c.horizon_tau as u64)
        .int("d_eps", c.d_eps as u64)
        .int("blocks", c.blocks as u64)
        .int("heads", c.heads as u64)
        .int("ff_width", c.ff_width as u64)
        .float("dropout_hidden", c.dropout.hidden)
        .float("dropout_readout", c.dropout.readout)
        .float("dropout_attention", c.dropout.attention)
        .int("seed", c.seed);
    w.raw(&model.group.dump());
    let tensors = model.tensors();
    w.int("tensors", tensors.len() as u64);
    for ((name, _), t) in model.tensor_info().iter().zip(tensors) {
        w.tensor(name, t);
    }
    match &model.norm {
        Some(n) => {
            w.int("norm", 1)
                .tensor("norm_mean", &Matrix::from_vec(1, n.mean.len(), n.mean.clone()))
                .tensor("norm_std", &Matrix::from_vec(1, n.std.len(), n.std.clone()));
        }
        None => {
            w.int("norm", 0);
        }
    }
    w.finish()
}

pub fn from_str(text: &str) -> Result<ForecastModel> {
    let mut r = DumpReader::new(text);
    r.header(HEADER)?;
    let mut config = ModelConfig {
        n_u: r.int("n_u")? as usize,
        window_k: r.int("window_k")? as usize,
        neighbor_radius: r.int("neighbor_radius")? as usize,
        horizon_tau: r.int("horizon_tau")? as usize,
        d_eps: r.int("d_eps")? as usize,
        blocks: r.int("blocks")? as usize,
        heads: r.int("heads")? as usize,
        ff_width: r.int("ff_width")? as usize,
        dropout: DropoutRates {
            hidden: r.float("dropout_hidden")?,
            readout: r.float("dropout_readout")?,
            attention: r.float("dropout_attention")?,
        },
        group: Default::default(),
        seed: r.int("seed")?,
    };
    let group = GroupReservoir::read(&mut r)?;
    config.group = group.config.clone();
    let mut model = ForecastModel::init(config)?;
    model.group = group;
    let info = model.tensor_info();
    let n = r.int("tensors")? as usize;
    if n != info.len() {
        return Err(Error::Format(format!("checkpoint has {n} tensors, model expects {}", info.len())));
    }
    for ((name, _), slot) in info.iter().zip(model.tensors_mut()) {
        let t = r.tensor(name)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!("tensor {name}: {:?} vs {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    if r.int("norm")? != 0 {
        let mean = r.tensor("norm_mean")?.as_slice().to_vec();
        let std = r.tensor("norm_std")?.as_slice().to_vec();
        model.norm = Some(NormStats { mean, std });
    }
    if !r.at_end() {
        return Err(Error::Format("trailing data after checkpoint".into()));
    }
    Ok(model)
}

pub fn save(model: &ForecastModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ForecastModel> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupConfig;

    #[test]
    fn roundtrip_is_exact() {
        let cfg = ModelConfig {
            window_k: 8,
            neighbor_radius: 3,
            horizon_tau: 4,
            d_eps: 8,
            blocks: 1,
            heads: 2,
            ff_width: 16,
            group: GroupConfig { l: 2, n_r: 12, d_in: 8, m: 8, n_tokens: 2, ..Default::default() },
            ..Default::default()
        };
        let mut m = ForecastModel::init(cfg).unwrap();
        m.kappa_logit[(0, 0)] = 0.37;
        m.norm = Some(NormStats { mean: vec![0.5], std: vec![2.0] });
        let back = from_str(&to_string(&m)).unwrap();
        assert_eq!(back, m);
        assert!(from_str(&to_string(&m).replace("forecast-model v1", "forecast-model v9")).is_err());
    }
}
