//! Waveforms, STFT/iSTFT with the compressive amplitude transform, and SI-SDR/SNR.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::SpecTensor;

/// Scores are clamped to `±METRIC_CAP` dB.
pub const METRIC_CAP: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rounds samples to 32-bit float precision, the resolution of the WAV format.
    pub fn quantize(&mut self) {
        for s in &mut self.samples {
            *s = *s as f32 as f64;
        }
    }

    /// Mono RIFF WAV with 32-bit float samples.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
            return Err(Error::Corrupt(format!(
                "{}: expected mono 32-bit float WAV",
                path.display()
            )));
        }
        let samples = r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Amplitude exponent `a` of `b |X|^a e^{i angle X}`.
    pub amp_exponent: f64,
    /// Amplitude scale `b`.
    pub amp_scale: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 64,
            hop: 16,
            sample_rate: 8000,
            amp_exponent: 0.5,
            amp_scale: 0.33,
        }
    }
}

impl StftConfig {
    /// Same framing with the identity amplitude transform.
    pub fn linear(self) -> Self {
        Self {
            amp_exponent: 1.0,
            amp_scale: 1.0,
            ..self
        }
    }

    pub fn freqs(&self) -> usize {
        self.window / 2 + 1
    }

    /// Zero padding added on each side so that every sample is covered by
    /// the same number of frames.
    pub fn pad(&self) -> usize {
        self.window - self.hop
    }

    pub fn frames(&self, n_samples: usize) -> usize {
        let total = n_samples + 2 * self.pad();
        (total - self.window).div_ceil(self.hop) + 1
    }

    /// Periodic Hann window.
    pub fn window_fn(&self) -> Vec<f64> {
        let n = self.window as f64;
        (0..self.window)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config("STFT window must be at least 2 samples".into()));
        }
        if self.hop == 0 || self.hop > self.window {
            return Err(Error::Config(format!(
                "STFT hop {} must be in [1, window = {}]",
                self.hop, self.window
            )));
        }
        if !(self.amp_exponent > 0.0 && self.amp_scale > 0.0) {
            return Err(Error::Config("amplitude exponent and scale must be positive".into()));
        }
        // every output sample must receive nonzero squared-window weight
        let w = self.window_fn();
        let min = (0..self.hop)
            .map(|r| w.iter().skip(r).step_by(self.hop).map(|v| v * v).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if !(min > 1e-8) {
            return Err(Error::Config(format!(
                "window {} with hop {} cannot reconstruct (overlap weight {min:e})",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    fn forward_transform(&self, re: f64, im: f64) -> (f64, f64) {
        if self.amp_exponent == 1.0 && self.amp_scale == 1.0 {
            return (re, im);
        }
        let mag = re.hypot(im);
        if mag == 0.0 {
            return (0.0, 0.0);
        }
        let k = self.amp_scale * mag.powf(self.amp_exponent) / mag;
        (k * re, k * im)
    }

    fn inverse_transform(&self, re: f64, im: f64) -> (f64, f64) {
        if self.amp_exponent == 1.0 && self.amp_scale == 1.0 {
            return (re, im);
        }
        let mag = re.hypot(im);
        if mag == 0.0 {
            return (0.0, 0.0);
        }
        let k = (mag / self.amp_scale).powf(1.0 / self.amp_exponent) / mag;
        (k * re, k * im)
    }
}

struct Plan {
    window: Vec<f64>,
    norm: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Plan {
    fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.window_fn();
        let norm = 1.0 / window.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut planner = FftPlanner::new();
        Ok(Self {
            fwd: planner.plan_fft_forward(cfg.window),
            inv: planner.plan_fft_inverse(cfg.window),
            window,
            norm,
        })
    }
}

/// Hann-windowed STFT scaled by `1 / sqrt(sum w^2)`, then the amplitude transform.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<SpecTensor<f64>> {
    let plan = Plan::new(cfg)?;
    let n = w.len();
    let (pad, frames, f) = (cfg.pad(), cfg.frames(n), cfg.freqs());
    let mut buf = vec![0.0; (frames - 1) * cfg.hop + cfg.window];
    buf[pad..pad + n].copy_from_slice(&w.samples);
    let mut out = SpecTensor::zeros(f, frames);
    let mut frame = vec![Complex::new(0.0, 0.0); cfg.window];
    for l in 0..frames {
        let seg = &buf[l * cfg.hop..l * cfg.hop + cfg.window];
        for (i, c) in frame.iter_mut().enumerate() {
            *c = Complex::new(seg[i] * plan.window[i] * plan.norm, 0.0);
        }
        plan.fwd.process(&mut frame);
        for (k, c) in frame.iter().take(f).enumerate() {
            out.set(k, l, cfg.forward_transform(c.re, c.im));
        }
    }
    Ok(out)
}

/// Inverse of [`stft`] by weighted overlap-add, trimmed to `n_samples`.
pub fn istft(s: &SpecTensor<f64>, cfg: &StftConfig, n_samples: usize) -> Result<Waveform> {
    let plan = Plan::new(cfg)?;
    let (pad, f) = (cfg.pad(), cfg.freqs());
    if s.freqs() != f {
        return Err(Error::Shape(format!("{} bins, STFT config expects {f}", s.freqs())));
    }
    if s.frames() != cfg.frames(n_samples) {
        return Err(Error::Shape(format!(
            "{} frames cannot hold {n_samples} samples ({} needed)",
            s.frames(),
            cfg.frames(n_samples)
        )));
    }
    let total = (s.frames() - 1) * cfg.hop + cfg.window;
    let mut acc = vec![0.0; total];
    let mut den = vec![0.0; total];
    let mut frame = vec![Complex::new(0.0, 0.0); cfg.window];
    for l in 0..s.frames() {
        for k in 0..f {
            let (re, im) = cfg.inverse_transform(s.get(k, l).0, s.get(k, l).1);
            frame[k] = Complex::new(re, im);
            if k > 0 && k < cfg.window - k {
                frame[cfg.window - k] = Complex::new(re, -im);
            }
        }
        if cfg.window.is_multiple_of(2) {
            // Nyquist bin must be real for a real signal
            frame[cfg.window / 2].im = 0.0;
        }
        frame[0].im = 0.0;
        plan.inv.process(&mut frame);
        let scale = 1.0 / (cfg.window as f64 * plan.norm);
        for i in 0..cfg.window {
            let wv = plan.window[i];
            acc[l * cfg.hop + i] += frame[i].re * scale * wv;
            den[l * cfg.hop + i] += wv * wv;
        }
    }
    let samples = (pad..pad + n_samples).map(|i| acc[i] / den[i]).collect();
    Waveform::new(samples, cfg.sample_rate)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let energy = dot(reference, reference);
    if !(energy > 0.0) {
        return Err(Error::Domain("reference signal is zero".into()));
    }
    Ok(energy)
}

fn ratio_db(signal: f64, noise: f64) -> f64 {
    if signal <= 0.0 {
        return -METRIC_CAP;
    }
    if noise <= 0.0 {
        return METRIC_CAP;
    }
    (10.0 * (signal / noise).log10()).clamp(-METRIC_CAP, METRIC_CAP)
}

/// Scale-invariant SDR in dB, clamped to `±METRIC_CAP`.
pub fn si_sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let energy = check_pair(reference, estimate)?;
    let alpha = dot(estimate, reference) / energy;
    let (mut sig, mut err) = (0.0, 0.0);
    for (&r, &e) in reference.iter().zip(estimate) {
        let t = alpha * r;
        sig += t * t;
        err += (t - e) * (t - e);
    }
    Ok(ratio_db(sig, err))
}

pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_sdr_slices(&reference.samples, &estimate.samples)
}

/// `si_sdr(reference, estimate) - si_sdr(reference, mixture)`.
pub fn si_sdr_improvement(reference: &Waveform, mixture: &Waveform, estimate: &Waveform) -> Result<f64> {
    Ok(si_sdr(reference, estimate)? - si_sdr(reference, mixture)?)
}

/// Plain SNR in dB, clamped to `±METRIC_CAP`.
pub fn snr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let energy = check_pair(reference, estimate)?;
    let err: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum();
    Ok(ratio_db(energy, err))
}

pub fn snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    snr_slices(&reference.samples, &estimate.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut r = seeded(seed);
        Waveform::new((0..n).map(|_| standard_normal::<f64>(&mut r)).collect(), 8000).unwrap()
    }

    #[test]
    fn toy_framing_shape() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.freqs(), 33);
        assert_eq!(cfg.frames(1000), 66);
    }

    #[test]
    fn round_trip_one_second() {
        for cfg in [StftConfig::default(), StftConfig::default().linear()] {
            let w = noise(8000, 1);
            let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len()).unwrap();
            let err = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn round_trip_other_valid_pairs() {
        for (win, hop) in [(32, 8), (64, 32), (48, 12), (16, 1), (2, 1)] {
            let cfg = StftConfig {
                window: win,
                hop,
                ..StftConfig::default().linear()
            };
            let w = noise(301, 2);
            let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len()).unwrap();
            let err = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "win {win} hop {hop}: {err}");
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = StftConfig::default();
        assert!(StftConfig { window: 1, hop: 1, ..base }.validate().is_err());
        assert!(StftConfig { hop: 65, ..base }.validate().is_err());
        // periodic Hann is zero at index 0, so hop = window leaves gaps
        assert!(StftConfig { hop: 64, ..base }.validate().is_err());
    }

    #[test]
    fn bin_centred_tone_stays_in_its_main_lobe() {
        let cfg = StftConfig::default().linear();
        let k0 = 5;
        let n = 2000;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / cfg.window as f64).sin())
            .collect();
        let s = stft(&Waveform::new(samples, 8000).unwrap(), &cfg).unwrap();
        let l = s.frames() / 2;
        let power: Vec<f64> = (0..s.freqs())
            .map(|k| {
                let (a, b) = s.get(k, l);
                a * a + b * b
            })
            .collect();
        let total: f64 = power.iter().sum();
        let peak = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
        assert_eq!(peak, k0);
        // Hann spreads a centred tone over bins k0-1..=k0+1 as 1/4 : 1/2 : 1/4
        let lobe = power[k0 - 1] + power[k0] + power[k0 + 1];
        assert!(lobe / total >= 0.9);
        assert!((power[k0] / total - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn identity_transform_and_linearity() {
        let cfg = StftConfig::default().linear();
        let (a, b) = (noise(500, 3), noise(500, 4));
        let sum = Waveform::new(a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(), 8000).unwrap();
        let lhs = stft(&sum, &cfg).unwrap();
        let rhs = stft(&a, &cfg).unwrap().add(&stft(&b, &cfg).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().norm() < 1e-12);
        let (re, im) = cfg.forward_transform(0.3, -0.4);
        assert_eq!((re, im), (0.3, -0.4));
    }

    #[test]
    fn compressive_transform_inverts() {
        let cfg = StftConfig::default();
        let (re, im) = cfg.forward_transform(0.3, -0.4);
        assert!(((re * re + im * im).sqrt() - 0.33 * 0.5f64.sqrt()).abs() < 1e-12);
        let (r2, i2) = cfg.inverse_transform(re, im);
        assert!((r2 - 0.3).abs() < 1e-12 && (i2 + 0.4).abs() < 1e-12);
    }

    #[test]
    fn si_sdr_examples() {
        assert_eq!(si_sdr_slices(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        let x = [0.5, -1.0, 2.0];
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr_slices(&x, &twice).unwrap(), METRIC_CAP);
        assert_eq!(si_sdr_slices(&x, &x).unwrap(), METRIC_CAP);
        assert!(si_sdr_slices(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(si_sdr_slices(&[1.0], &[1.0, 1.0]).is_err());
        assert_eq!(si_sdr_slices(&x, &[0.0; 3]).unwrap(), -METRIC_CAP);
    }

    #[test]
    fn improvement_of_mixture_is_zero() {
        let (a, b) = (noise(200, 5), noise(200, 6));
        let mix = Waveform::new(a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(), 8000).unwrap();
        assert_eq!(si_sdr_improvement(&a, &mix, &mix).unwrap(), 0.0);
        let full = si_sdr_improvement(&a, &mix, &a).unwrap();
        assert!((full - (METRIC_CAP - si_sdr(&a, &mix).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn snr_of_tenth_power_error() {
        let x = [1.0, 0.0, 0.0, 0.0];
        let e = [1.0, 0.1f64.sqrt(), 0.0, 0.0];
        assert!((snr_slices(&x, &e).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn wav_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = noise(123, 7);
        w.quantize();
        let p = dir.path().join("a.wav");
        w.write_wav(&p).unwrap();
        let back = Waveform::read_wav(&p).unwrap();
        assert_eq!(back, w);
    }
}
