//! Plain-text exact dump format shared by reservoirs, groups and model
//! checkpoints.
//!
//! ```text
//! <header line>
//! key value            # scalar fields, floats as 16-digit hex of their bits
//! tensor name rows cols
//! 3ff0000000000000 ...  # up to 8 words per line
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Default)]
pub struct DumpWriter {
    out: String,
}

impl DumpWriter {
    pub fn new(header: &str) -> Self {
        let mut out = String::new();
        out.push_str(header);
        out.push('\n');
        Self { out }
    }

    pub fn int(&mut self, key: &str, v: u64) -> &mut Self {
        let _ = writeln!(self.out, "{key} {v}");
        self
    }

    pub fn float(&mut self, key: &str, v: f64) -> &mut Self {
        let _ = writeln!(self.out, "{key} {:016x}", v.to_bits());
        self
    }

    pub fn text(&mut self, key: &str, v: &str) -> &mut Self {
        debug_assert!(!v.contains(char::is_whitespace));
        let _ = writeln!(self.out, "{key} {v}");
        self
    }

    pub fn tensor(&mut self, name: &str, m: &Matrix) -> &mut Self {
        let _ = writeln!(self.out, "tensor {name} {} {}", m.rows(), m.cols());
        for chunk in m.as_slice().chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            self.out.push_str(&line.join(" "));
            self.out.push('\n');
        }
        self
    }

    /// Embeds another dump verbatim.
    pub fn raw(&mut self, body: &str) -> &mut Self {
        self.out.push_str(body);
        if !body.ends_with('\n') {
            self.out.push('\n');
        }
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Line-oriented reader over a dump.
pub struct DumpReader<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> DumpReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { lines: text.lines().peekable() }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.lines.next().ok_or_else(|| Error::Format("unexpected end of dump".into()))
    }

    pub fn header(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() != expected {
            return Err(Error::Format(format!("expected header '{expected}', found '{line}'")));
        }
        Ok(())
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        let (k, v) = line.split_once(' ').ok_or_else(|| Error::Format(format!("malformed line '{line}'")))?;
        if k != key {
            return Err(Error::Format(format!("expected field '{key}', found '{k}'")));
        }
        Ok(v.trim())
    }

    pub fn int(&mut self, key: &str) -> Result<u64> {
        let v = self.field(key)?;
        v.parse().map_err(|_| Error::Format(format!("field '{key}': bad integer '{v}'")))
    }

    pub fn float(&mut self, key: &str) -> Result<f64> {
        let v = self.field(key)?;
        parse_hex_f64(v).ok_or_else(|| Error::Format(format!("field '{key}': bad float bits '{v}'")))
    }

    pub fn text(&mut self, key: &str) -> Result<String> {
        Ok(self.field(key)?.to_string())
    }

    pub fn tensor(&mut self, name: &str) -> Result<Matrix> {
        let line = self.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
            return Err(Error::Format(format!("expected tensor '{name}', found '{line}'")));
        }
        let rows: usize = parts[2].parse().map_err(|_| Error::Format("bad tensor rows".into()))?;
        let cols: usize = parts[3].parse().map_err(|_| Error::Format("bad tensor cols".into()))?;
        let n = rows * cols;
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let line = self.next_line()?;
            for w in line.split_whitespace() {
                data.push(parse_hex_f64(w).ok_or_else(|| Error::Format(format!("bad float bits '{w}'")))?);
            }
        }
        if data.len() != n {
            return Err(Error::Format(format!("tensor '{name}' has {} values, expected {n}", data.len())));
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    pub fn at_end(&mut self) -> bool {
        while let Some(l) = self.lines.peek() {
            if l.trim().is_empty() {
                self.lines.next();
            } else {
                return false;
            }
        }
        true
    }
}

fn parse_hex_f64(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_is_bit_exact() {
        let m = Matrix::from_vec(3, 3, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 3.0, 7.0, 8.0, 1.0 / 3.0]);
        let mut w = DumpWriter::new("test v1");
        w.int("n", 3).float("x", 0.7).text("kind", "abc").tensor("m", &m);
        let text = w.finish();
        let mut r = DumpReader::new(&text);
        r.header("test v1").unwrap();
        assert_eq!(r.int("n").unwrap(), 3);
        assert_eq!(r.float("x").unwrap().to_bits(), 0.7f64.to_bits());
        assert_eq!(r.text("kind").unwrap(), "abc");
        let back = r.tensor("m").unwrap();
        assert!(back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(r.at_end());
    }

    #[test]
    fn wrong_field_is_reported() {
        let mut r = DumpReader::new("h\nfoo 1\n");
        r.header("h").unwrap();
        assert!(matches!(r.int("bar"), Err(Error::Format(_))));
    }
}
