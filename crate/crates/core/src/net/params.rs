//! Named parameters and the checkpoint file format.
//!
//! Checkpoint layout: a plain-text header
//!
//! ```text
//! tse-params v1
//! count <n>
//! <name> <rows> <cols> <byte offset>
//! ...
//! end
//! ```
//!
//! followed by the payload of little-endian `f64` values; offsets are relative
//! to the first payload byte.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Mat<T>,
    pub grad: Mat<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `±scale / sqrt(rows)` (rows = fan-in for `x · W`).
    FanIn(f64),
    /// Uniform in `±bound`.
    Uniform(f64),
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut Rng) -> ParamId {
        let data = match init {
            Init::Zeros => vec![T::zero(); rows * cols],
            Init::Constant(c) => vec![T::lit(c); rows * cols],
            Init::FanIn(scale) => {
                let bound = scale / (rows.max(1) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| T::lit(rng::uniform(rng, -bound, bound)))
                    .collect()
            }
            Init::Uniform(bound) => (0..rows * cols)
                .map(|_| T::lit(rng::uniform(rng, -bound, bound)))
                .collect(),
        };
        self.params.push(Param {
            name: name.to_string(),
            value: Mat { rows, cols, data },
            grad: Mat::zeros(rows, cols),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }

    /// Copies values (not gradients) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape("parameter count differs".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || !a.value.same_shape(&b.value) {
                return Err(Error::Shape(format!("parameter {} vs {}", a.name, b.name)));
            }
            a.value.data.copy_from_slice(&b.value.data);
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let mut header = format!("tse-params v1\ncount {}\n", self.params.len());
        let mut offset = 0usize;
        for p in &self.params {
            header.push_str(&format!(
                "{} {} {} {}\n",
                p.name, p.value.rows, p.value.cols, offset
            ));
            offset += 8 * p.value.data.len();
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        for p in &self.params {
            for v in &p.value.data {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut line = String::new();
        let next_line = |r: &mut std::io::BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(Error::Corrupt("checkpoint header truncated".into()));
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        if line.trim_end() != "tse-params v1" {
            return Err(Error::Corrupt(format!("bad checkpoint magic {:?}", line.trim_end())));
        }
        next_line(&mut r, &mut line)?;
        let count: usize = line
            .trim_end()
            .strip_prefix("count ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("bad count line".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            next_line(&mut r, &mut line)?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f.as_slice() {
                [name, rows, cols, off] => rows
                    .parse::<usize>()
                    .ok()
                    .zip(cols.parse::<usize>().ok())
                    .zip(off.parse::<usize>().ok())
                    .map(|((rw, c), o)| (name.to_string(), rw, c, o)),
                _ => None,
            };
            entries.push(parsed.ok_or_else(|| Error::Corrupt(format!("bad entry {:?}", line.trim_end())))?);
        }
        next_line(&mut r, &mut line)?;
        if line.trim_end() != "end" {
            return Err(Error::Corrupt("missing header terminator".into()));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut params = Vec::with_capacity(count);
        for (name, rows, cols, off) in entries {
            let n = rows * cols;
            let bytes = payload
                .get(off..off + 8 * n)
                .ok_or_else(|| Error::Corrupt(format!("payload truncated at {name}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            params.push(Param {
                name,
                value: Mat { rows, cols, data },
                grad: Mat::zeros(rows, cols),
            });
        }
        Ok(Self { params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = seeded(4);
        let mut s = ParamStore::<f64>::new();
        s.add("a.w", 3, 5, Init::FanIn(1.0), &mut rng);
        s.add("a.b", 1, 5, Init::Constant(0.1), &mut rng);
        s.get_mut(ParamId(1)).value.data[2] = f64::MIN_POSITIVE;
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let back = ParamStore::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, s);
        let bits = |p: &ParamStore<f64>| -> Vec<u64> {
            p.iter().flat_map(|q| q.value.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = seeded(4);
        let mut s = ParamStore::<f64>::new();
        s.add("w", 4, 4, Init::FanIn(1.0), &mut rng);
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(ParamStore::<f64>::read_checkpoint(&buf[..]), Err(Error::Corrupt(_))));
        assert!(ParamStore::<f64>::read_checkpoint(&b"nonsense\n"[..]).is_err());
    }
}
