//! Series containers, chaotic generators, CSV ingestion, splits and rolling
//! windows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A `T × N_u` multivariate series, optionally timestamped.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTensor {
    values: Matrix,
    names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl SeriesTensor {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Numeric("series contains non-finite values".into()));
        }
        let names = (0..values.cols()).map(|i| format!("x{i}")).collect();
        Ok(Self { values, names, timestamps: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.values.cols() {
            return Err(Error::Dimension(format!("{} names for {} features", names.len(), self.values.cols())));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_timestamps(mut self, ts: Vec<String>) -> Result<Self> {
        if ts.len() != self.values.rows() {
            return Err(Error::Dimension(format!("{} timestamps for {} rows", ts.len(), self.values.rows())));
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    /// Single-feature series.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(Matrix::from_vec(n, 1, values))
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.values[(t, c)]).collect()
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> SeriesTensor {
        SeriesTensor {
            values: self.values.slice_rows(start, end),
            names: self.names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
        }
    }

    pub fn concat(parts: &[&SeriesTensor]) -> Result<SeriesTensor> {
        let first = parts.first().ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let cols = first.n_features();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ts: Option<Vec<String>> = first.timestamps.as_ref().map(|_| Vec::new());
        for p in parts {
            if p.n_features() != cols {
                return Err(Error::Dimension("feature count differs between parts".into()));
            }
            data.extend_from_slice(p.values.as_slice());
            rows += p.len();
            if let (Some(acc), Some(t)) = (ts.as_mut(), p.timestamps.as_ref()) {
                acc.extend(t.iter().cloned());
            } else {
                ts = None;
            }
        }
        Ok(SeriesTensor { values: Matrix::from_vec(rows, cols, data), names: first.names.clone(), timestamps: ts })
    }

    pub(crate) fn map_values(&self, values: Matrix) -> SeriesTensor {
        SeriesTensor { values, names: self.names.clone(), timestamps: self.timestamps.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub n: usize,
    pub dt: f64,
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: [f64; 3],
    /// Integration steps per emitted sample.
    pub sample_every: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { n: 2000, dt: 0.01, sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, x0: [1.0, 1.0, 1.0], sample_every: 1 }
    }
}

pub fn lorenz_field(s: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    [p.sigma * (s[1] - s[0]), s[0] * (p.rho - s[2]) - s[1], s[0] * s[1] - p.beta * s[2]]
}

fn rk4_step(s: [f64; 3], p: &LorenzParams, h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    let k1 = lorenz_field(s, p);
    let k2 = lorenz_field(add(s, k1, h / 2.0), p);
    let k3 = lorenz_field(add(s, k2, h / 2.0), p);
    let k4 = lorenz_field(add(s, k3, h), p);
    let mut out = s;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Lorenz system integrated with fixed-step RK4. Row 0 is `x0`.
pub fn gen_lorenz(p: &LorenzParams) -> Result<SeriesTensor> {
    if p.n == 0 || !(p.dt > 0.0) || p.sample_every == 0 {
        return Err(Error::Config("lorenz needs n ≥ 1, dt > 0, sample_every ≥ 1".into()));
    }
    let mut s = p.x0;
    let mut data = Vec::with_capacity(p.n * 3);
    data.extend_from_slice(&s);
    for _ in 1..p.n {
        for _ in 0..p.sample_every {
            s = rk4_step(s, p, p.dt);
        }
        data.extend_from_slice(&s);
    }
    SeriesTensor::new(Matrix::from_vec(p.n, 3, data))?.with_names(vec!["x".into(), "y".into(), "z".into()])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MackeyGlassParams {
    pub n: usize,
    /// Delay τ_d in time units.
    pub delay: usize,
    pub beta: f64,
    pub gamma: f64,
    pub exponent: f64,
    pub dt: f64,
    /// Constant value of x on `[−τ_d, 0]`.
    pub history: f64,
    pub sample_every: usize,
    /// Emitted samples dropped from the front (transient).
    pub discard: usize,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            n: 2000,
            delay: 17,
            beta: 0.2,
            gamma: 0.1,
            exponent: 10.0,
            dt: 0.1,
            history: 1.2,
            sample_every: 10,
            discard: 0,
        }
    }
}

/// Mackey–Glass delay equation with fixed-step Euler over a delay buffer.
/// Before discarding, sample 0 is the initial history value.
pub fn gen_mackey_glass(p: &MackeyGlassParams) -> Result<SeriesTensor> {
    if p.delay == 0 || p.n == 0 || !(p.dt > 0.0) || p.sample_every == 0 {
        return Err(Error::Config("mackey-glass needs delay ≥ 1, n ≥ 1, dt > 0, sample_every ≥ 1".into()));
    }
    let lag = (p.delay as f64 / p.dt).round() as usize;
    if lag == 0 {
        return Err(Error::Config("delay shorter than one integration step".into()));
    }
    // ring buffer of the last `lag` values; buf[head] is x(t − τ_d)
    let mut buf = vec![p.history; lag];
    let mut head = 0;
    let mut x = p.history;
    let total = p.n + p.discard;
    let mut out = Vec::with_capacity(p.n);
    if p.discard == 0 {
        out.push(x);
    }
    for i in 1..total {
        for _ in 0..p.sample_every {
            let delayed = buf[head];
            let next = x + p.dt * (p.beta * delayed / (1.0 + delayed.powf(p.exponent)) - p.gamma * x);
            buf[head] = x;
            head = (head + 1) % lag;
            x = next;
        }
        if i >= p.discard {
            out.push(x);
        }
    }
    SeriesTensor::univariate(out)
}

/// Column selection for [`load_csv`]. Empty `features` means every column
/// other than the timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    pub timestamp: Option<String>,
    pub features: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesTensor> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let ts_col = schema.timestamp.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = if schema.features.is_empty() {
        (0..headers.len()).filter(|c| Some(*c) != ts_col).collect()
    } else {
        schema.features.iter().map(|f| find(f)).collect::<Result<_>>()?
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let mut data = Vec::new();
    let mut ts = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        // 1-based data row numbers, header is row 0
        let row_no = r + 1;
        for &c in &feature_cols {
            let cell = rec.get(c).ok_or_else(|| Error::Parse { row: row_no, col: c, msg: "missing cell".into() })?;
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_no,
                col: c,
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: row_no, col: c, msg: format!("'{cell}' is not finite") });
            }
            data.push(v);
        }
        if let Some(c) = ts_col {
            ts.push(rec.get(c).unwrap_or_default().to_string());
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InsufficientData("csv file has no data rows".into()));
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let series = SeriesTensor::new(Matrix::from_vec(rows, feature_cols.len(), data))?.with_names(names)?;
    if ts_col.is_some() {
        series.with_timestamps(ts)
    } else {
        Ok(series)
    }
}

/// Writes a header plus one row per time step. Values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(series: &SeriesTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = Vec::new();
    if series.timestamps.is_some() {
        header.push("timestamp".into());
    }
    header.extend(series.names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..series.len() {
        let mut rec: Vec<String> = Vec::new();
        if let Some(ts) = &series.timestamps {
            rec.push(ts[t].clone());
        }
        rec.extend(series.row(t).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `key = value` sidecar describing how a dataset was produced.
pub fn write_metadata(path: impl AsRef<Path>, meta: &BTreeMap<String, String>) -> Result<()> {
    let body: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(path, body)?;
    Ok(())
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { row: i + 1, col: 0, msg: "expected key = value".into() })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Sequential train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.7, val_frac: 0.1, test_frac: 0.2 }
    }
}

impl SplitSpec {
    /// `(train_end, val_end)` row boundaries for a series of length `t`.
    pub fn boundaries(&self, t: usize) -> Result<(usize, usize)> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {fr:?}")));
        }
        if t < 10 {
            return Err(Error::InsufficientData(format!("split needs at least 10 rows, got {t}")));
        }
        // small epsilon so 0.7 * 10 lands on 7 rather than 6.999…
        let a = (self.train_frac * t as f64 + 1e-9).floor() as usize;
        let b = ((self.train_frac + self.val_frac) * t as f64 + 1e-9).floor() as usize;
        Ok((a, b))
    }
}

pub fn split(series: &SeriesTensor, spec: &SplitSpec) -> Result<(SeriesTensor, SeriesTensor, SeriesTensor)> {
    let (a, b) = spec.boundaries(series.len())?;
    Ok((series.slice(0, a), series.slice(a, b), series.slice(b, series.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `k × N_u`, rows `t−k+1 ..= t`
    pub input: Matrix,
    /// `τ × N_u`, rows `t+1 ..= t+τ`
    pub target: Matrix,
    /// Index of the last input row.
    pub t: usize,
}

/// Count of windows [`rolling_windows`] would emit.
pub fn window_count(len: usize, k: usize, tau: usize, stride: usize) -> usize {
    if len < k + tau || stride == 0 {
        0
    } else {
        (len - k - tau) / stride + 1
    }
}

pub fn rolling_windows(series: &SeriesTensor, k: usize, tau: usize, stride: usize) -> Result<Vec<Window>> {
    if k == 0 || tau == 0 || stride == 0 {
        return Err(Error::Config("window, horizon and stride must be ≥ 1".into()));
    }
    if series.len() < k + tau {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than window + horizon = {}",
            series.len(),
            k + tau
        )));
    }
    let n = window_count(series.len(), k, tau, stride);
    Ok((0..n)
        .map(|j| {
            let t = k - 1 + j * stride;
            Window {
                input: series.values.slice_rows(t + 1 - k, t + 1),
                target: series.values.slice_rows(t + 1, t + 1 + tau),
                t,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_origin_is_fixed() {
        let s = gen_lorenz(&LorenzParams { n: 50, x0: [0.0; 3], ..Default::default() }).unwrap();
        assert!(s.values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lorenz_field_at_ones() {
        let p = LorenzParams::default();
        let f = lorenz_field([1.0, 1.0, 1.0], &p);
        let euler: Vec<f64> = (0..3).map(|i| 1.0 + 0.01 * f[i]).collect();
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 26.0).abs() < 1e-12);
        assert!((f[2] + 5.0 / 3.0).abs() < 1e-12);
        assert!((euler[1] - 1.26).abs() < 1e-12);
        assert!((euler[2] - 0.983_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn mackey_glass_fixed_point() {
        let s = gen_mackey_glass(&MackeyGlassParams { n: 300, history: 1.0, ..Default::default() }).unwrap();
        assert!(s.values().as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn mackey_glass_first_euler_step() {
        let p = MackeyGlassParams { n: 2, history: 1.2, sample_every: 1, ..Default::default() };
        let s = gen_mackey_glass(&p).unwrap();
        let expected = 1.2 + 0.1 * (0.2 * 1.2 / (1.0 + 1.2f64.powf(10.0)) - 0.1 * 1.2);
        assert_eq!(s.row(0)[0], 1.2);
        assert!((s.row(1)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn split_sizes() {
        let s = SeriesTensor::univariate((0..10).map(f64::from).collect()).unwrap();
        let (a, b, c) = split(&s, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        let s = SeriesTensor::univariate((0..100).map(f64::from).collect()).unwrap();
        let (a, b, c) = split(&s, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 10, 20));
        assert_eq!(SeriesTensor::concat(&[&a, &b, &c]).unwrap(), s);
        let short = SeriesTensor::univariate(vec![0.0; 9]).unwrap();
        assert!(matches!(split(&short, &SplitSpec::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn window_counts_and_alignment() {
        let s = SeriesTensor::univariate((0..30).map(f64::from).collect()).unwrap();
        assert_eq!(rolling_windows(&s.slice(0, 8), 5, 3, 1).unwrap().len(), 1);
        let ws = rolling_windows(&s.slice(0, 12), 5, 3, 1).unwrap();
        assert_eq!(ws.len(), 5);
        for w in rolling_windows(&s, 4, 3, 2).unwrap() {
            assert_eq!(w.input.as_slice().last().copied(), Some(w.t as f64));
            assert_eq!(w.target.as_slice()[0], w.t as f64 + 1.0);
        }
        assert!(rolling_windows(&s.slice(0, 6), 5, 3, 1).is_err());
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        fs::write(&p, "a,b\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvSchema::default()), Err(Error::InsufficientData(_))));
        fs::write(&p, "a,b\n1,2\n3,x\n").unwrap();
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 1)),
            other => panic!("{other:?}"),
        }
        let schema = CsvSchema { timestamp: None, features: vec!["c".into()] };
        assert!(matches!(load_csv(&p, &schema), Err(Error::Schema(_))));
    }
}
