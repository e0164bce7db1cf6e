//! Synthetic two-speaker corpus of harmonic "voices".
//!
//! Each speaker is a fundamental frequency with a harmonic amplitude profile.
//! An utterance jitters the fundamental and amplitudes, draws random phases
//! and a random onset with a short linear fade-in, and is normalized to unit
//! RMS. Waveforms are rounded to 32-bit float precision so that the WAV files
//! written by [`write_corpus`] reproduce them exactly.
//!
//! Corpus directory layout:
//!
//! ```text
//! manifest.txt          header, speakers, one line per example
//! <split>/<id>/*.wav    target, interferer, mixture, enroll
//! <split>/<id>/*.spec   x0, xi, y, c
//! ```
//!
//! `.spec` files hold two little-endian `u32` dimensions (freqs, frames)
//! followed by interleaved little-endian `f64` (re, im) pairs in
//! frequency-major order.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::EnrollmentClue;
use crate::rng::{self, Rng};
use crate::signal::{stft, StftConfig, Waveform};
use crate::tensor::SpecTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_samples: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Minimum ratio between the fundamentals of any two speakers.
    pub min_f0_ratio: f64,
    pub max_harmonics: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Relative fundamental jitter per utterance (uniform in `±f0_jitter`).
    pub f0_jitter: f64,
    /// Relative harmonic amplitude jitter per utterance.
    pub amp_jitter: f64,
    pub max_onset_s: f64,
    pub fade_s: f64,
    /// Target-to-interferer ratio in dB.
    pub tir_db: f64,
    pub max_retries: usize,
    pub stft: StftConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            n_train: 2000,
            n_test: 200,
            n_samples: 1000,
            f0_min: 200.0,
            f0_max: 1200.0,
            min_f0_ratio: 1.2,
            max_harmonics: 5,
            amp_min: 0.2,
            amp_max: 1.0,
            f0_jitter: 0.01,
            amp_jitter: 0.2,
            max_onset_s: 0.02,
            fade_s: 0.004,
            tir_db: 0.0,
            max_retries: 2_000,
            stft: StftConfig::default().linear(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let ok = self.n_speakers >= 2
            && self.n_samples > 0
            && self.f0_min > 0.0
            && self.f0_max > self.f0_min
            && self.min_f0_ratio >= 1.0
            && self.max_harmonics >= 1
            && self.amp_min >= 0.0
            && self.amp_max > self.amp_min
            && (0.0..1.0).contains(&self.f0_jitter)
            && (0.0..1.0).contains(&self.amp_jitter)
            && self.max_onset_s >= 0.0
            && self.fade_s >= 0.0
            && self.tir_db.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid corpus config {self:?}")))
        }
    }

    fn sample_rate(&self) -> f64 {
        self.stft.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpeaker {
    pub id: usize,
    pub f0: f64,
    pub amplitudes: Vec<f64>,
    pub f0_jitter: f64,
    pub amp_jitter: f64,
}

/// Draws a speaker whose fundamental is at least `min_f0_ratio` away from every
/// speaker in `existing`.
pub fn gen_speaker(id: usize, seed: u64, existing: &[ToySpeaker], cfg: &CorpusConfig) -> Result<ToySpeaker> {
    let mut r = rng::seeded(seed);
    let (lo, hi) = (cfg.f0_min.ln(), cfg.f0_max.ln());
    for _ in 0..cfg.max_retries.max(1) {
        let f0 = rng::uniform(&mut r, lo, hi).exp();
        let separated = existing
            .iter()
            .all(|s| f0.max(s.f0) / f0.min(s.f0) >= cfg.min_f0_ratio);
        if !separated {
            continue;
        }
        let nyquist = cfg.sample_rate() / 2.0;
        let n_harm = (((nyquist - 1.0) / f0).floor() as usize).clamp(1, cfg.max_harmonics);
        let amplitudes = (0..n_harm)
            .map(|_| rng::uniform(&mut r, cfg.amp_min, cfg.amp_max))
            .collect();
        return Ok(ToySpeaker {
            id,
            f0,
            amplitudes,
            f0_jitter: cfg.f0_jitter,
            amp_jitter: cfg.amp_jitter,
        });
    }
    Err(Error::Config(format!(
        "could not place speaker {id} with f0 ratio >= {} after {} draws",
        cfg.min_f0_ratio, cfg.max_retries
    )))
}

/// Places `n_speakers` speakers greedily; a set that paints itself into a corner
/// (no room left for the next fundamental) is redrawn from a fresh sub-seed.
pub fn gen_speakers(cfg: &CorpusConfig, seed: u64) -> Result<Vec<ToySpeaker>> {
    const RESTARTS: u64 = 64;
    let mut last = None;
    for attempt in 0..RESTARTS {
        let base = rng::split_seed(seed, attempt);
        let mut out: Vec<ToySpeaker> = Vec::with_capacity(cfg.n_speakers);
        let mut failed = None;
        for id in 0..cfg.n_speakers {
            match gen_speaker(id, rng::split_seed(base, id as u64), &out, cfg) {
                Ok(s) => out.push(s),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        match failed {
            None => return Ok(out),
            Some(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// The randomized parameters of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub f0: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub onset: usize,
    /// Gain applied for unit RMS.
    pub gain: f64,
}

fn envelope(n: usize, onset: usize, fade: usize) -> f64 {
    if n < onset {
        0.0
    } else if fade == 0 {
        1.0
    } else {
        ((n - onset) as f64 / fade as f64).min(1.0)
    }
}

pub fn gen_utterance(sp: &ToySpeaker, cfg: &CorpusConfig, r: &mut Rng) -> (Waveform, Utterance) {
    let fs = cfg.sample_rate();
    let f0 = sp.f0 * (1.0 + rng::uniform(r, -sp.f0_jitter, sp.f0_jitter));
    let max_onset = (cfg.max_onset_s * fs) as usize;
    let onset = if max_onset > 0 { rng::index(r, max_onset) } else { 0 };
    let fade = (cfg.fade_s * fs) as usize;
    let mut amplitudes = Vec::with_capacity(sp.amplitudes.len());
    let mut phases = Vec::with_capacity(sp.amplitudes.len());
    for &a in &sp.amplitudes {
        amplitudes.push(a * (1.0 + rng::uniform(r, -sp.amp_jitter, sp.amp_jitter)));
        phases.push(rng::uniform(r, 0.0, 2.0 * std::f64::consts::PI));
    }
    let mut samples: Vec<f64> = (0..cfg.n_samples)
        .map(|n| {
            let env = envelope(n, onset, fade);
            let tt = n as f64 / fs;
            env * amplitudes
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * std::f64::consts::PI * (h + 1) as f64 * f0 * tt + p).sin())
                .sum::<f64>()
        })
        .collect();
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt();
    let gain = if rms > 0.0 { 1.0 / rms } else { 0.0 };
    samples.iter_mut().for_each(|v| *v *= gain);
    let mut w = Waveform {
        samples,
        sample_rate: cfg.stft.sample_rate,
    };
    w.quantize();
    (
        w,
        Utterance {
            f0,
            amplitudes,
            phases,
            onset,
            gain,
        },
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub id: usize,
    pub seed: u64,
    pub target_id: usize,
    pub interferer_id: usize,
    pub x0: SpecTensor<f64>,
    pub x0_interferer: SpecTensor<f64>,
    pub y: SpecTensor<f64>,
    pub c: EnrollmentClue<f64>,
    pub target_wave: Waveform,
    pub interferer_wave: Waveform,
    pub mixture_wave: Waveform,
    pub enroll_wave: Waveform,
    /// Fundamental and onset of the target utterance (used by the oracle extractor).
    pub target_f0: f64,
    pub target_onset: usize,
}

/// Builds one mixture; the enrollment is a fresh utterance of the target.
/// With `silent_interferer` the interferer is muted so that `y = x0`.
pub fn gen_example(
    id: usize,
    target: &ToySpeaker,
    interferer: &ToySpeaker,
    cfg: &CorpusConfig,
    seed: u64,
    silent_interferer: bool,
) -> Result<MixtureExample> {
    if target.id == interferer.id {
        return Err(Error::Domain("target and interferer must differ".into()));
    }
    let mut r = rng::seeded(seed);
    let (target_wave, utt) = gen_utterance(target, cfg, &mut r);
    let (mut interferer_wave, _) = gen_utterance(interferer, cfg, &mut r);
    let (enroll_wave, _) = gen_utterance(target, cfg, &mut r);
    let k = if silent_interferer { 0.0 } else { 10f64.powf(-cfg.tir_db / 20.0) };
    interferer_wave.samples.iter_mut().for_each(|v| *v *= k);
    interferer_wave.quantize();
    let mut mixture_wave = Waveform {
        samples: target_wave
            .samples
            .iter()
            .zip(&interferer_wave.samples)
            .map(|(a, b)| a + b)
            .collect(),
        sample_rate: cfg.stft.sample_rate,
    };
    mixture_wave.quantize();
    let x0 = stft(&target_wave, &cfg.stft)?;
    let x0_interferer = stft(&interferer_wave, &cfg.stft)?;
    let y = x0.add(&x0_interferer)?;
    let c = EnrollmentClue::new(stft(&enroll_wave, &cfg.stft)?)?;
    Ok(MixtureExample {
        id,
        seed,
        target_id: target.id,
        interferer_id: interferer.id,
        x0,
        x0_interferer,
        y,
        c,
        target_wave,
        interferer_wave,
        mixture_wave,
        enroll_wave,
        target_f0: utt.f0,
        target_onset: utt.onset,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<ToySpeaker>,
    pub train: Vec<MixtureExample>,
    pub test: Vec<MixtureExample>,
}

impl Corpus {
    pub fn speaker(&self, id: usize) -> Result<&ToySpeaker> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Corrupt(format!("unknown speaker {id}")))
    }
}

const TEST_STREAM: u64 = 1 << 32;

fn draw_pair(n_speakers: usize, seed: u64) -> (usize, usize) {
    let mut r = rng::seeded(rng::split_seed(seed, 0xC0FFEE));
    let t = rng::index(&mut r, n_speakers);
    let i = rng::index(&mut r, n_speakers - 1);
    (t, if i >= t { i + 1 } else { i })
}

/// Generates the full corpus; a pure function of `(cfg, seed)` regardless of thread count.
pub fn gen_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let speakers = gen_speakers(cfg, rng::split_seed(seed, u64::MAX))?;
    let make = |stream_base: u64, n: usize| -> Result<Vec<MixtureExample>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let s = rng::split_seed(seed, stream_base + i as u64);
                let (t, j) = draw_pair(speakers.len(), s);
                gen_example(i, &speakers[t], &speakers[j], cfg, s, false)
            })
            .collect()
    };
    Ok(Corpus {
        train: make(0, cfg.n_train)?,
        test: make(TEST_STREAM, cfg.n_test)?,
        speakers,
    })
}

/// Oracle extractor that knows the target's fundamental and onset: fits every
/// harmonic below Nyquist to the mixture by least squares and resynthesizes it.
pub fn oracle_harmonic_extract(ex: &MixtureExample, cfg: &CorpusConfig, n_harmonics: usize) -> Result<Waveform> {
    let fs = cfg.sample_rate();
    let n = ex.mixture_wave.len();
    let fade = (cfg.fade_s * fs) as usize;
    let harm: Vec<usize> = (1..=n_harmonics)
        .filter(|h| (*h as f64) * ex.target_f0 < fs / 2.0)
        .collect();
    let mut a = DMatrix::<f64>::zeros(n, 2 * harm.len());
    for i in 0..n {
        let env = envelope(i, ex.target_onset, fade);
        let tt = i as f64 / fs;
        for (j, &h) in harm.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * h as f64 * ex.target_f0 * tt;
            a[(i, 2 * j)] = env * ph.sin();
            a[(i, 2 * j + 1)] = env * ph.cos();
        }
    }
    let b = DVector::from_column_slice(&ex.mixture_wave.samples);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-10)
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
    let fit = a * coef;
    Waveform::new(fit.iter().copied().collect(), ex.mixture_wave.sample_rate)
}

// ---------------------------------------------------------------- persistence

fn write_spec(path: &Path, s: &SpecTensor<f64>) -> Result<u32> {
    let mut bytes = Vec::with_capacity(8 + 8 * s.len());
    bytes.extend_from_slice(&(s.freqs() as u32).to_le_bytes());
    bytes.extend_from_slice(&(s.frames() as u32).to_le_bytes());
    for v in s.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &bytes)?;
    Ok(crc32fast::hash(&bytes))
}

fn read_spec(path: &Path, crc: u32) -> Result<SpecTensor<f64>> {
    let bytes = read_checked(path, crc)?;
    if bytes.len() < 8 {
        return Err(Error::Corrupt(format!("{}: missing header", path.display())));
    }
    let freqs = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let frames = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[8..];
    if payload.len() != 16 * freqs * frames {
        return Err(Error::Corrupt(format!(
            "{}: {} payload bytes for {freqs}x{frames}",
            path.display(),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    SpecTensor::from_interleaved(freqs, frames, data)
}

fn read_checked(path: &Path, crc: u32) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let got = crc32fast::hash(&bytes);
    if got != crc {
        return Err(Error::Corrupt(format!(
            "{}: checksum {got:08x}, manifest says {crc:08x}",
            path.display()
        )));
    }
    Ok(bytes)
}

fn write_wav(path: &Path, w: &Waveform) -> Result<u32> {
    w.write_wav(path)?;
    Ok(crc32fast::hash(&std::fs::read(path)?))
}

fn read_wav(path: &Path, crc: u32) -> Result<Waveform> {
    read_checked(path, crc)?;
    Waveform::read_wav(path)
}

const SPEC_FILES: [&str; 4] = ["x0", "xi", "y", "c"];
const WAV_FILES: [&str; 4] = ["target", "interferer", "mixture", "enroll"];

fn write_example(dir: &Path, split: &str, ex: &MixtureExample) -> Result<String> {
    let rel = format!("{split}/{:05}", ex.id);
    let d = dir.join(&rel);
    std::fs::create_dir_all(&d)?;
    let specs = [&ex.x0, &ex.x0_interferer, &ex.y, ex.c.spec()];
    let waves = [&ex.target_wave, &ex.interferer_wave, &ex.mixture_wave, &ex.enroll_wave];
    let mut line = format!(
        "{split} {} {} {} {} {} {} {rel}",
        ex.id, ex.target_id, ex.interferer_id, ex.seed, ex.target_f0, ex.target_onset
    );
    for (name, s) in SPEC_FILES.iter().zip(specs) {
        let crc = write_spec(&d.join(format!("{name}.spec")), s)?;
        write!(line, " {name}.spec:{crc:08x}").expect("string write");
    }
    for (name, w) in WAV_FILES.iter().zip(waves) {
        let crc = write_wav(&d.join(format!("{name}.wav")), w)?;
        write!(line, " {name}.wav:{crc:08x}").expect("string write");
    }
    Ok(line)
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("# tse toy corpus v1\n");
    writeln!(
        manifest,
        "# counts speakers={} train={} test={}",
        corpus.speakers.len(),
        corpus.train.len(),
        corpus.test.len()
    )
    .expect("string write");
    manifest.push_str("# speaker <id> <f0> <f0_jitter> <amp_jitter> <amplitudes...>\n");
    for s in &corpus.speakers {
        write!(manifest, "speaker {} {} {} {}", s.id, s.f0, s.f0_jitter, s.amp_jitter).expect("string write");
        for a in &s.amplitudes {
            write!(manifest, " {a}").expect("string write");
        }
        manifest.push('\n');
    }
    manifest.push_str("# <split> <id> <target> <interferer> <seed> <target_f0> <target_onset> <dir> <file:crc32>...\n");
    for (split, list) in [("train", &corpus.train), ("test", &corpus.test)] {
        let lines = list
            .par_iter()
            .map(|ex| write_example(dir, split, ex))
            .collect::<Result<Vec<_>>>()?;
        for l in lines {
            manifest.push_str(&l);
            manifest.push('\n');
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Corrupt(format!("manifest: bad {what} {s:?}")))
}

struct ExampleLine {
    split: String,
    id: usize,
    target: usize,
    interferer: usize,
    seed: u64,
    f0: f64,
    onset: usize,
    dir: String,
    files: Vec<(String, u32)>,
}

fn parse_example(fields: &[&str]) -> Result<ExampleLine> {
    if fields.len() != 16 {
        return Err(Error::Corrupt(format!("manifest: example line has {} fields", fields.len())));
    }
    let files = fields[8..]
        .iter()
        .map(|f| {
            let (name, crc) = f
                .split_once(':')
                .ok_or_else(|| Error::Corrupt(format!("manifest: bad file entry {f:?}")))?;
            let crc = u32::from_str_radix(crc, 16).map_err(|_| Error::Corrupt(format!("manifest: bad checksum {crc:?}")))?;
            Ok((name.to_string(), crc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExampleLine {
        split: fields[0].to_string(),
        id: parse(fields[1], "id")?,
        target: parse(fields[2], "target")?,
        interferer: parse(fields[3], "interferer")?,
        seed: parse(fields[4], "seed")?,
        f0: parse(fields[5], "f0")?,
        onset: parse(fields[6], "onset")?,
        dir: fields[7].to_string(),
        files,
    })
}

fn load_example(dir: &Path, e: &ExampleLine) -> Result<MixtureExample> {
    let d = dir.join(&e.dir);
    let file = |name: &str| -> Result<(std::path::PathBuf, u32)> {
        e.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, c)| (d.join(n), *c))
            .ok_or_else(|| Error::Corrupt(format!("manifest: example {} lacks {name}", e.id)))
    };
    let spec = |name: &str| -> Result<SpecTensor<f64>> {
        let (p, c) = file(&format!("{name}.spec"))?;
        read_spec(&p, c)
    };
    let wav = |name: &str| -> Result<Waveform> {
        let (p, c) = file(&format!("{name}.wav"))?;
        read_wav(&p, c)
    };
    Ok(MixtureExample {
        id: e.id,
        seed: e.seed,
        target_id: e.target,
        interferer_id: e.interferer,
        x0: spec("x0")?,
        x0_interferer: spec("xi")?,
        y: spec("y")?,
        c: EnrollmentClue::new(spec("c")?)?,
        target_wave: wav("target")?,
        interferer_wave: wav("interferer")?,
        mixture_wave: wav("mixture")?,
        enroll_wave: wav("enroll")?,
        target_f0: e.f0,
        target_onset: e.onset,
    })
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines = text.lines();
    if lines.next() != Some("# tse toy corpus v1") {
        return Err(Error::Corrupt("manifest: missing header".into()));
    }
    let mut speakers = Vec::new();
    let mut entries = Vec::new();
    let mut counts = None;
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first() {
            None => continue,
            Some(&"#") if fields.get(1) == Some(&"counts") => {
                let get = |k: &str| -> Result<usize> {
                    fields
                        .iter()
                        .find_map(|f| f.strip_prefix(&format!("{k}=")))
                        .ok_or_else(|| Error::Corrupt(format!("manifest: counts lack {k}")))
                        .and_then(|v| parse(v, k))
                };
                counts = Some((get("speakers")?, get("train")?, get("test")?));
            }
            Some(f) if f.starts_with('#') => continue,
            Some(&"speaker") => {
                if fields.len() < 6 {
                    return Err(Error::Corrupt("manifest: short speaker line".into()));
                }
                speakers.push(ToySpeaker {
                    id: parse(fields[1], "speaker id")?,
                    f0: parse(fields[2], "f0")?,
                    f0_jitter: parse(fields[3], "f0 jitter")?,
                    amp_jitter: parse(fields[4], "amp jitter")?,
                    amplitudes: fields[5..].iter().map(|a| parse(a, "amplitude")).collect::<Result<_>>()?,
                });
            }
            Some(_) => entries.push(parse_example(&fields)?),
        }
    }
    let loaded = entries
        .par_iter()
        .map(|e| load_example(dir, e).map(|ex| (e.split.clone(), ex)))
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = Corpus {
        speakers,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, ex) in loaded {
        match split.as_str() {
            "train" => corpus.train.push(ex),
            "test" => corpus.test.push(ex),
            other => return Err(Error::Corrupt(format!("manifest: unknown split {other:?}"))),
        }
    }
    let found = (corpus.speakers.len(), corpus.train.len(), corpus.test.len());
    match counts {
        Some(c) if c == found => Ok(corpus),
        Some(c) => Err(Error::Corrupt(format!("manifest counts {c:?} but found {found:?}"))),
        None => Err(Error::Corrupt("manifest: missing counts line".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{si_sdr, si_sdr_improvement};

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            n_train: 6,
            n_test: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn speakers_are_seeded_and_separated() {
        let cfg = CorpusConfig::default();
        let a = gen_speakers(&cfg, 3).unwrap();
        assert_eq!(a, gen_speakers(&cfg, 3).unwrap());
        assert_eq!(a.len(), 8);
        for (i, s) in a.iter().enumerate() {
            assert!(s.f0 >= cfg.f0_min && s.f0 <= cfg.f0_max);
            assert!(s.amplitudes.iter().all(|&v| v >= 0.0));
            assert!(s.amplitudes.len() <= 5 && (s.amplitudes.len() as f64) * s.f0 < 4000.0);
            for t in &a[i + 1..] {
                assert!(s.f0.max(t.f0) / s.f0.min(t.f0) >= 1.2);
            }
        }
    }

    #[test]
    fn impossible_separation_is_an_error() {
        let cfg = CorpusConfig {
            n_speakers: 30,
            max_retries: 50,
            ..CorpusConfig::default()
        };
        assert!(gen_speakers(&cfg, 1).is_err());
    }

    #[test]
    fn mixtures_are_additive_and_balanced() {
        let cfg = small_cfg();
        let c = gen_corpus(&cfg, 11).unwrap();
        let mut sisdr = 0.0;
        for ex in c.train.iter().chain(&c.test) {
            assert_ne!(ex.target_id, ex.interferer_id);
            assert_eq!(ex.y.sub(&ex.x0.add(&ex.x0_interferer).unwrap()).unwrap().norm(), 0.0);
            assert_eq!(ex.x0.shape(), (33, 66));
            assert_ne!(ex.enroll_wave, ex.target_wave);
            sisdr += si_sdr(&ex.target_wave, &ex.mixture_wave).unwrap();
        }
        assert!((sisdr / 9.0).abs() < 1.5);
    }

    #[test]
    fn silent_interferer_gives_clean_mixture() {
        let cfg = small_cfg();
        let sp = gen_speakers(&cfg, 2).unwrap();
        let ex = gen_example(0, &sp[0], &sp[1], &cfg, 5, true).unwrap();
        assert_eq!(ex.y, ex.x0);
        assert_eq!(si_sdr(&ex.target_wave, &ex.mixture_wave).unwrap(), crate::signal::METRIC_CAP);
        assert!(gen_example(0, &sp[0], &sp[0], &cfg, 5, false).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        assert_eq!(gen_corpus(&cfg, 4).unwrap(), gen_corpus(&cfg, 4).unwrap());
    }

    #[test]
    fn oracle_extractor_beats_ten_db() {
        let cfg = CorpusConfig {
            n_train: 0,
            n_test: 40,
            ..CorpusConfig::default()
        };
        let c = gen_corpus(&cfg, 21).unwrap();
        let mut imp = 0.0;
        for ex in &c.test {
            let est = oracle_harmonic_extract(ex, &cfg, cfg.max_harmonics).unwrap();
            imp += si_sdr_improvement(&ex.target_wave, &ex.mixture_wave, &est).unwrap();
        }
        imp /= c.test.len() as f64;
        assert!(imp > 10.0, "oracle SI-SDRi {imp}");
    }

    #[test]
    fn corpus_round_trip_and_corruption() {
        let cfg = small_cfg();
        let c = gen_corpus(&cfg, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back, c);

        let victim = dir.path().join("train/00002/y.spec");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt(_))));
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "hello\n").unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt(_))));
        std::fs::write(dir.path().join("manifest.txt"), "# tse toy corpus v1\ntrain 1 2\n").unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt(_))));
    }
}
