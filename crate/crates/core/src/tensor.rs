//! Complex time-frequency tensors.

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Real;

/// Complex `F x L` spectrogram stored as interleaved (re, im) pairs,
/// frequency-major: entry `(f, l)` lives at `2 * (f * frames + l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecTensor<T> {
    freqs: usize,
    frames: usize,
    data: Vec<T>,
}

impl<T: Real> SpecTensor<T> {
    pub fn zeros(freqs: usize, frames: usize) -> Self {
        Self {
            freqs,
            frames,
            data: vec![T::zero(); 2 * freqs * frames],
        }
    }

    pub fn from_interleaved(freqs: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != 2 * freqs * frames {
            return Err(Error::Shape(format!(
                "{} values for a {freqs}x{frames} complex tensor",
                data.len()
            )));
        }
        Ok(Self { freqs, frames, data })
    }

    pub fn from_fn(freqs: usize, frames: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut out = Self::zeros(freqs, frames);
        for fi in 0..freqs {
            for l in 0..frames {
                out.set(fi, l, f(fi, l));
            }
        }
        out
    }

    /// Tensor of i.i.d. standard complex normal entries (E|z|^2 = 1).
    pub fn complex_normal(freqs: usize, frames: usize, rng: &mut Rng) -> Self {
        let mut out = Self::zeros(freqs, frames);
        for pair in out.data.chunks_exact_mut(2) {
            let (re, im) = rng::complex_normal::<T>(rng);
            pair[0] = re;
            pair[1] = im;
        }
        out
    }

    pub fn filled(freqs: usize, frames: usize, re: T, im: T) -> Self {
        Self::from_fn(freqs, frames, |_, _| (re, im))
    }

    pub fn freqs(&self) -> usize {
        self.freqs
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.freqs, self.frames)
    }

    /// Number of complex entries.
    pub fn len(&self) -> usize {
        self.freqs * self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, f: usize, l: usize) -> (T, T) {
        let i = 2 * (f * self.frames + l);
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, f: usize, l: usize, v: (T, T)) {
        let i = 2 * (f * self.frames + l);
        self.data[i] = v.0;
        self.data[i + 1] = v.1;
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            freqs: self.freqs,
            frames: self.frames,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination over the real view; shapes must match.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "zip_with")?;
        Ok(Self {
            freqs: self.freqs,
            frames: self.frames,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    /// Squared Frobenius norm, sum of |entry|^2.
    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Real inner product of the interleaved views, Re<self, other>.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn cast<U: Real>(&self) -> SpecTensor<U> {
        SpecTensor {
            freqs: self.freqs,
            frames: self.frames,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Frame-major rows `[re(0..F) | im(0..F)]`, one row per frame.
    pub fn to_rows(&self) -> Vec<T> {
        let f = self.freqs;
        let mut out = vec![T::zero(); self.frames * 2 * f];
        for l in 0..self.frames {
            let row = &mut out[l * 2 * f..(l + 1) * 2 * f];
            for fi in 0..f {
                let (re, im) = self.get(fi, l);
                row[fi] = re;
                row[f + fi] = im;
            }
        }
        out
    }

    pub fn from_rows(freqs: usize, frames: usize, rows: &[T]) -> Result<Self> {
        if rows.len() != 2 * freqs * frames {
            return Err(Error::Shape(format!(
                "{} row values for {freqs}x{frames}",
                rows.len()
            )));
        }
        Ok(Self::from_fn(freqs, frames, |fi, l| {
            let row = &rows[l * 2 * freqs..];
            (row[fi], row[freqs + fi])
        }))
    }
}
