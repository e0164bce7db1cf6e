//! Reverse-time predictor–corrector sampling and ensemble inference.
//!
//! The reverse SDE `dx = [-f(x, y) + g(t)^2 s(x, y, c, t)] dt + g(t) dw` is
//! integrated from `x_T ~ N(y, sigma(T)^2)` down to `t_eps` on a linear grid,
//! each predictor step preceded by annealed Langevin corrector steps. A final
//! noise-free predictor step from `t_eps` to 0 removes the residual kernel bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{EnrollmentClue, ScoreModel, TargetExtractor};
use crate::rng::{self, Rng};
use crate::scalar::Real;
use crate::sde::{drift, SdeParams};
use crate::tensor::SpecTensor;

/// Langevin step size rule of the corrector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectorRule {
    /// `eps = 2 (r sigma(t))^2`.
    KernelStd,
    /// `eps = 2 (r ||z|| / ||s||)^2`.
    NormRatio,
}

/// How ensemble members are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleCombine {
    Mean,
    Sum,
}

/// Whether the predictor injects Brownian noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorNoise {
    Stochastic,
    /// Drift only; a test mode.
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub corrector_iters: usize,
    pub snr: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub t_eps: f64,
    pub corrector_rule: CorrectorRule,
    pub combine: EnsembleCombine,
    pub noise: PredictorNoise,
    /// Append a noise-free predictor step from `t_eps` to 0.
    pub final_denoise: bool,
    /// Keep every intermediate state in the trace.
    pub keep_trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 30,
            corrector_iters: 1,
            snr: 0.5,
            ensemble: 10,
            seed: 0,
            t_eps: 0.03,
            corrector_rule: CorrectorRule::KernelStd,
            combine: EnsembleCombine::Mean,
            noise: PredictorNoise::Stochastic,
            final_denoise: true,
            keep_trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate<T: Real>(&self, sde: &SdeParams<T>) -> Result<()> {
        let ok = self.n_steps >= 1
            && self.ensemble >= 1
            && self.snr >= 0.0
            && self.snr.is_finite()
            && self.t_eps > 0.0
            && self.t_eps < sde.t_max.as_f64();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sampler config {self:?}")))
        }
    }

    /// Reverse-time grid `T = t_0 > t_1 > ... > t_N = t_eps`.
    pub fn schedule<T: Real>(&self, sde: &SdeParams<T>) -> Vec<T> {
        let t_max = sde.t_max.as_f64();
        let n = self.n_steps;
        (0..=n)
            .map(|i| {
                if i == n {
                    T::lit(self.t_eps)
                } else {
                    T::lit(t_max - (t_max - self.t_eps) * i as f64 / n as f64)
                }
            })
            .collect()
    }
}

/// States visited by one reverse run.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace<T> {
    /// `(t, x_t)` after each predictor step, starting with the prior draw.
    pub states: Vec<(T, SpecTensor<T>)>,
    pub final_state: SpecTensor<T>,
    pub seed: u64,
}

/// `x_T = y + sigma(T) z`.
pub fn prior_draw<T: Real>(y: &SpecTensor<T>, p: &SdeParams<T>, r: &mut Rng) -> SpecTensor<T> {
    let z = SpecTensor::complex_normal(y.freqs(), y.frames(), r);
    y.lincomb(T::one(), &z, p.sigma(p.t_max)).expect("same shape")
}

/// One reverse Euler–Maruyama step from `t` to `t - dt`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step<M: ScoreModel<T>, T: Real>(
    model: &M,
    ctx: &M::Context,
    xt: &SpecTensor<T>,
    y: &SpecTensor<T>,
    t: T,
    dt: T,
    noise: PredictorNoise,
    r: &mut Rng,
) -> Result<SpecTensor<T>> {
    let p = model.sde();
    p.check_time(t)?;
    if dt == T::zero() {
        return Ok(xt.clone());
    }
    let s = model.score(ctx, xt, t)?;
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("score at t = {t}")));
    }
    let g = p.g(t);
    // x - [f - g^2 s] dt
    let mut out = xt.clone();
    out.axpy(-dt, &drift(xt, y, p)?)?;
    out.axpy(g * g * dt, &s)?;
    if noise == PredictorNoise::Stochastic {
        let z = SpecTensor::complex_normal(xt.freqs(), xt.frames(), r);
        out.axpy(g * dt.sqrt(), &z)?;
    }
    Ok(out)
}

/// One annealed Langevin step `x + eps s + sqrt(2 eps) z` at fixed `t`.
pub fn corrector_step<M: ScoreModel<T>, T: Real>(
    model: &M,
    ctx: &M::Context,
    xt: &SpecTensor<T>,
    t: T,
    snr: f64,
    rule: CorrectorRule,
    r: &mut Rng,
) -> Result<SpecTensor<T>> {
    let p = model.sde();
    p.check_time(t)?;
    let s = model.score(ctx, xt, t)?;
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("score at t = {t}")));
    }
    let z = SpecTensor::complex_normal(xt.freqs(), xt.frames(), r);
    let snr = T::lit(snr);
    let two = T::lit(2.0);
    let eps = match rule {
        CorrectorRule::KernelStd => {
            let a = snr * p.sigma(t);
            two * a * a
        }
        CorrectorRule::NormRatio => {
            let sn = s.norm();
            if !(sn > T::zero()) {
                return Ok(xt.clone());
            }
            let a = snr * z.norm() / sn;
            two * a * a
        }
    };
    let mut out = xt.clone();
    out.axpy(eps, &s)?;
    out.axpy((two * eps).sqrt(), &z)?;
    Ok(out)
}

/// Full reverse run from the prior to `t_eps` (and optionally to 0).
pub fn extract_once<M: ScoreModel<T>, T: Real>(
    model: &M,
    ctx: &M::Context,
    y: &SpecTensor<T>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleTrace<T>> {
    let p = model.sde();
    cfg.validate(p)?;
    let mut r = rng::seeded(seed);
    let times = cfg.schedule(p);
    let mut x = prior_draw(y, p, &mut r);
    let mut states = Vec::new();
    if cfg.keep_trace {
        states.push((times[0], x.clone()));
    }
    for w in times.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        for _ in 0..cfg.corrector_iters {
            x = corrector_step(model, ctx, &x, t, cfg.snr, cfg.corrector_rule, &mut r)?;
        }
        x = predictor_step(model, ctx, &x, y, t, t - t_next, cfg.noise, &mut r)?;
        if cfg.keep_trace {
            states.push((t_next, x.clone()));
        }
    }
    if cfg.final_denoise {
        let t = times[times.len() - 1];
        x = predictor_step(model, ctx, &x, y, t, t, PredictorNoise::Off, &mut r)?;
        if cfg.keep_trace {
            states.push((T::zero(), x.clone()));
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("sampler output".into()));
    }
    Ok(SampleTrace {
        states,
        final_state: x,
        seed,
    })
}

/// Combined estimate of `J` runs plus the runs themselves.
#[derive(Clone, Debug)]
pub struct EnsembleResult<T> {
    pub combined: SpecTensor<T>,
    pub traces: Vec<SampleTrace<T>>,
}

/// Seed of ensemble member `j`.
pub fn member_seed(master: u64, j: usize) -> u64 {
    rng::split_seed(master, j as u64)
}

/// Combines finals in member order.
pub fn combine<T: Real>(finals: &[&SpecTensor<T>], how: EnsembleCombine) -> Result<SpecTensor<T>> {
    let first = finals.first().ok_or(Error::Empty("ensemble"))?;
    let mut acc = SpecTensor::zeros(first.freqs(), first.frames());
    for f in finals {
        acc.axpy(T::one(), f)?;
    }
    Ok(match how {
        EnsembleCombine::Mean => acc.scale(T::lit(finals.len() as f64).recip()),
        EnsembleCombine::Sum => acc,
    })
}

/// Runs `cfg.ensemble` independent reverse runs in parallel with seeds split
/// off `cfg.seed` and combines them in member order.
pub fn extract_ensemble<M: ScoreModel<T>, T: Real>(
    model: &M,
    y: &SpecTensor<T>,
    c: &EnrollmentClue<T>,
    cfg: &SamplerConfig,
) -> Result<EnsembleResult<T>> {
    cfg.validate(model.sde())?;
    let ctx = model.condition(y, c)?;
    let traces = (0..cfg.ensemble)
        .into_par_iter()
        .map(|j| extract_once(model, &ctx, y, cfg, member_seed(cfg.seed, j)))
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<_> = traces.iter().map(|t| &t.final_state).collect();
    let combined = combine(&finals, cfg.combine)?;
    Ok(EnsembleResult { combined, traces })
}

/// Sampler wrapped as a single-estimate extractor returning the ensemble output.
#[derive(Clone, Debug)]
pub struct DiffusionExtractor<M> {
    pub model: M,
    pub cfg: SamplerConfig,
}

impl<T: Real, M: ScoreModel<T>> TargetExtractor<T> for DiffusionExtractor<M> {
    fn extract(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<SpecTensor<T>> {
        Ok(extract_ensemble(&self.model, y, c, &self.cfg)?.combined)
    }
}

const TRACE_MAGIC: &[u8; 8] = b"TSETRACE";

/// Writes a trace as little-endian binary: magic, `u64` seed, `u32` freqs,
/// frames and state count, then per state an `f64` time and interleaved
/// `f64` values. The final state is stored last with time `-1`.
pub fn write_trace<T: Real>(trace: &SampleTrace<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (f, l) = trace.final_state.shape();
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&trace.seed.to_le_bytes())?;
    for n in [f, l, trace.states.len() + 1] {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    let final_entry = (T::lit(-1.0), trace.final_state.clone());
    for (t, x) in trace.states.iter().chain(std::iter::once(&final_entry)) {
        w.write_all(&t.as_f64().to_le_bytes())?;
        for v in x.as_slice() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<SampleTrace<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_MAGIC {
        return Err(Error::Corrupt(format!("{} is not a trace", path.display())));
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut b4)?;
        *d = u32::from_le_bytes(b4) as usize;
    }
    let [f, l, n] = dims;
    if n == 0 {
        return Err(Error::Corrupt("trace without final state".into()));
    }
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let t = f64::from_le_bytes(b8);
        let mut data = vec![0.0; 2 * f * l];
        for v in &mut data {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        states.push((t, SpecTensor::from_interleaved(f, l, data)?));
    }
    let (_, final_state) = states.pop().expect("n > 0");
    Ok(SampleTrace {
        states,
        final_state,
        seed,
    })
}

/// Population statistics of sampler output against a diagonal Gaussian target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorMatch {
    /// `||mean_emp - m|| / ||m - y||`.
    pub mean_rel_err: f64,
    /// `|std_emp - std| / std`, pooled over entries.
    pub std_rel_err: f64,
}

/// Compares `runs` samples of the sampler driven by the exact score of
/// `oracle` with the oracle's own `N(m, P)`.
pub fn posterior_match<T: Real>(
    oracle: &crate::models::GaussianPosterior<T>,
    y: &SpecTensor<T>,
    cfg: &SamplerConfig,
    runs: usize,
) -> Result<PosteriorMatch> {
    if runs < 2 {
        return Err(Error::Config("posterior_match needs at least two runs".into()));
    }
    let ctx = oracle.condition(y, &EnrollmentClue::new(y.clone())?)?;
    let finals = (0..runs)
        .into_par_iter()
        .map(|j| extract_once(oracle, &ctx, y, cfg, member_seed(cfg.seed, j)).map(|t| t.final_state.cast::<f64>()))
        .collect::<Result<Vec<_>>>()?;
    let n = finals[0].as_slice().len();
    let mut mean = vec![0.0; n];
    for s in &finals {
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v / runs as f64;
        }
    }
    let mut sq = 0.0;
    for s in &finals {
        sq += s.as_slice().iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
    }
    let entries = (n / 2) as f64;
    let std_emp = (sq / (runs as f64 - 1.0) / entries).sqrt();
    let std_true = (oracle.var.iter().map(|v| v.as_f64()).sum::<f64>() / entries).sqrt();
    let m = oracle.mean.cast::<f64>();
    let yv = y.cast::<f64>();
    let err: f64 = mean.iter().zip(m.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let shift = m.sub(&yv)?.norm();
    Ok(PosteriorMatch {
        mean_rel_err: err / shift,
        std_rel_err: (std_emp - std_true).abs() / std_true,
    })
}

/// Fixed conditional Gaussian task used by the sampler checks.
pub fn gaussian_task(sde: SdeParams<f64>, seed: u64) -> Result<(crate::models::GaussianPosterior<f64>, SpecTensor<f64>)> {
    let mut r = rng::seeded(seed);
    let (f, l) = (4, 3);
    let y = SpecTensor::complex_normal(f, l, &mut r);
    let m = SpecTensor::from_fn(f, l, |k, j| {
        let (a, b) = y.get(k, j);
        (0.3 * a + 0.5, 0.3 * b - 0.4)
    });
    let var = (0..f * l).map(|i| 0.02 + 0.01 * (i % 4) as f64).collect();
    Ok((crate::models::GaussianPosterior::new(m, var, sde)?, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianPosterior, ZeroScore};
    use crate::rng::seeded;

    fn sde() -> SdeParams<f64> {
        SdeParams::default()
    }

    fn flat(v: f64) -> SpecTensor<f64> {
        SpecTensor::filled(3, 2, v, -v)
    }

    #[test]
    fn schedule_is_linear_and_decreasing() {
        let cfg = SamplerConfig::default();
        let s = cfg.schedule(&sde());
        assert_eq!(s.len(), 31);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[30], 0.03);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        let h = (1.0 - 0.03) / 30.0;
        assert!(s.windows(2).all(|w| ((w[0] - w[1]) - h).abs() < 1e-12));
    }

    #[test]
    fn prior_draw_has_terminal_std() {
        let p = sde();
        let y = SpecTensor::zeros(50, 20);
        let mut r = seeded(1);
        let n = 10;
        let mut sq = 0.0;
        for _ in 0..n {
            sq += prior_draw(&y, &p, &mut r).norm_sqr();
        }
        let count = (n * 1000) as f64;
        let std = (sq / count).sqrt();
        let target = p.sigma(1.0);
        // Standard error of a std estimate from `count` complex draws.
        let se = target / (2.0 * count).sqrt();
        assert!((std - target).abs() < 3.0 * se, "{std} vs {target}");
        let mut a = seeded(4);
        let mut b = seeded(4);
        assert_eq!(prior_draw(&y, &p, &mut a), prior_draw(&y, &p, &mut b));
    }

    #[test]
    fn prior_draw_collapses_to_mixture_without_noise() {
        let p = SdeParams::new(2.0, 1e-300, 1e-299, 1.0).unwrap();
        let y = flat(0.7);
        let x = prior_draw(&y, &p, &mut seeded(2));
        assert!(x.sub(&y).unwrap().norm() < 1e-200);
    }

    #[test]
    fn predictor_with_zero_dt_is_identity() {
        let z = ZeroScore::new(sde());
        let x = flat(0.3);
        let out = predictor_step(&z, &(), &x, &flat(1.0), 0.5, 0.0, PredictorNoise::Stochastic, &mut seeded(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn predictor_with_zero_score_reverses_drift() {
        let p = sde();
        let z = ZeroScore::new(p);
        let x = flat(0.3);
        let y = flat(1.0);
        let out = predictor_step(&z, &(), &x, &y, 0.5, 0.1, PredictorNoise::Off, &mut seeded(1)).unwrap();
        // x - gamma (y - x) dt moves away from y.
        let expect = x.lincomb(1.0 + 0.2, &y, -0.2).unwrap();
        assert!(out.sub(&expect).unwrap().norm() < 1e-14);
        assert!(out.sub(&y).unwrap().norm() > x.sub(&y).unwrap().norm());
    }

    #[test]
    fn noise_free_reverse_contracts_to_point_posterior() {
        let p = sde();
        let mut r = seeded(8);
        let y = SpecTensor::complex_normal(3, 2, &mut r);
        let m = SpecTensor::complex_normal(3, 2, &mut r);
        let oracle = GaussianPosterior::new(m.clone(), vec![0.0; 6], p).unwrap();
        let cfg = SamplerConfig {
            corrector_iters: 0,
            noise: PredictorNoise::Off,
            ..Default::default()
        };
        let ctx = y.clone();
        // Start exactly at y, the noise-free prior.
        let mut x = y.clone();
        let times = cfg.schedule(&p);
        for w in times.windows(2) {
            x = predictor_step(&oracle, &ctx, &x, &y, w[0], w[0] - w[1], PredictorNoise::Off, &mut r).unwrap();
        }
        let t = times[times.len() - 1];
        x = predictor_step(&oracle, &ctx, &x, &y, t, t, PredictorNoise::Off, &mut r).unwrap();
        let err = x.sub(&m).unwrap().norm() / m.sub(&y).unwrap().norm();
        assert!(err < 0.05, "relative terminal error {err}");
    }

    #[test]
    fn zero_snr_corrector_does_not_move() {
        let p = sde();
        let mut r = seeded(3);
        let (oracle, y) = gaussian_task(p, 1).unwrap();
        let x = y.clone();
        for rule in [CorrectorRule::KernelStd, CorrectorRule::NormRatio] {
            let out = corrector_step(&oracle, &y, &x, 0.5, 0.0, rule, &mut r).unwrap();
            assert_eq!(out, x);
        }
    }

    #[test]
    fn norm_ratio_corrector_skips_zero_score() {
        let z = ZeroScore::new(sde());
        let x = flat(0.2);
        let out = corrector_step(&z, &(), &x, 0.5, 0.5, CorrectorRule::NormRatio, &mut seeded(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn corrector_output_is_finite() {
        let (oracle, y) = gaussian_task(sde(), 2).unwrap();
        let mut r = seeded(9);
        for _ in 0..20 {
            let x = SpecTensor::complex_normal(4, 3, &mut r).scale(3.0);
            let out = corrector_step(&oracle, &y, &x, 0.3, 0.5, CorrectorRule::KernelStd, &mut r).unwrap();
            assert!(out.is_finite());
        }
    }

    #[test]
    fn repeated_correction_samples_the_marginal() {
        let p = sde();
        let (oracle, y) = gaussian_task(p, 3).unwrap();
        let t = 0.5;
        let mu = oracle.marginal_mean(&y, t).unwrap();
        let mut r = seeded(5);
        let chains = 200;
        let mut mean = SpecTensor::zeros(4, 3);
        for _ in 0..chains {
            let mut x = y.clone();
            for _ in 0..200 {
                x = corrector_step(&oracle, &y, &x, t, 0.5, CorrectorRule::KernelStd, &mut r).unwrap();
            }
            mean.axpy(1.0 / chains as f64, &x).unwrap();
        }
        let err = mean.sub(&mu).unwrap().norm() / mu.sub(&y).unwrap().norm();
        assert!(err < 0.05, "marginal mean error {err}");
    }

    #[test]
    fn extract_once_is_seed_deterministic() {
        let (oracle, y) = gaussian_task(sde(), 4).unwrap();
        let cfg = SamplerConfig::default();
        let a = extract_once(&oracle, &y, &y, &cfg, 11).unwrap();
        let b = extract_once(&oracle, &y, &y, &cfg, 11).unwrap();
        let c = extract_once(&oracle, &y, &y, &cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn single_step_schedule_completes() {
        let (oracle, y) = gaussian_task(sde(), 5).unwrap();
        let cfg = SamplerConfig {
            n_steps: 1,
            keep_trace: true,
            ..Default::default()
        };
        let tr = extract_once(&oracle, &y, &y, &cfg, 1).unwrap();
        assert!(tr.final_state.is_finite());
        assert_eq!(tr.states.len(), 3);
    }

    #[test]
    fn sampler_recovers_gaussian_posterior() {
        let (oracle, y) = gaussian_task(sde(), 6).unwrap();
        let m = posterior_match(&oracle, &y, &SamplerConfig::default(), 500).unwrap();
        assert!(m.mean_rel_err < 0.05 && m.std_rel_err < 0.10, "{m:?}");
    }

    #[test]
    fn finer_schedule_matches_posterior_better() {
        let (oracle, y) = gaussian_task(sde(), 7).unwrap();
        let run = |n| {
            let cfg = SamplerConfig {
                n_steps: n,
                seed: 3,
                ..Default::default()
            };
            let m = posterior_match(&oracle, &y, &cfg, 500).unwrap();
            m.mean_rel_err + m.std_rel_err
        };
        let coarse = run(15);
        let fine = run(60);
        assert!(fine < coarse, "N=60 err {fine} vs N=15 err {coarse}");
    }

    #[test]
    fn ensemble_of_one_is_the_sample() {
        let (oracle, y) = gaussian_task(sde(), 8).unwrap();
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let cfg = SamplerConfig {
            ensemble: 1,
            seed: 5,
            ..Default::default()
        };
        let e = extract_ensemble(&oracle, &y, &c, &cfg).unwrap();
        assert_eq!(e.combined, e.traces[0].final_state);
    }

    #[test]
    fn ensemble_is_mean_of_finals() {
        let (oracle, y) = gaussian_task(sde(), 9).unwrap();
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let cfg = SamplerConfig {
            ensemble: 4,
            ..Default::default()
        };
        let e = extract_ensemble(&oracle, &y, &c, &cfg).unwrap();
        let mut mean = SpecTensor::zeros(4, 3);
        for t in &e.traces {
            mean.axpy(0.25, &t.final_state).unwrap();
        }
        assert!(e.combined.sub(&mean).unwrap().norm() < 1e-12);
        let sum = combine(&[&e.traces[0].final_state, &e.traces[0].final_state], EnsembleCombine::Sum).unwrap();
        assert_eq!(sum, e.traces[0].final_state.scale(2.0));
        let same = combine(&[&e.traces[1].final_state; 3], EnsembleCombine::Mean).unwrap();
        assert!(same.sub(&e.traces[1].final_state).unwrap().norm() < 1e-15);
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let (oracle, y) = gaussian_task(sde(), 10).unwrap();
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let cfg = SamplerConfig {
            ensemble: 6,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| extract_ensemble(&oracle, &y, &c, &cfg).unwrap().combined)
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn runs_at_single_precision() {
        let (oracle, y) = gaussian_task(sde(), 11).unwrap();
        let o32 = GaussianPosterior::new(oracle.mean.cast::<f32>(), oracle.var.iter().map(|&v| v as f32).collect(), sde().cast()).unwrap();
        let y32 = y.cast::<f32>();
        let m = posterior_match(&o32, &y32, &SamplerConfig::default(), 300).unwrap();
        assert!(m.mean_rel_err < 0.1 && m.std_rel_err < 0.15, "{m:?}");
    }

    #[test]
    fn trace_roundtrips() {
        let (oracle, y) = gaussian_task(sde(), 12).unwrap();
        let cfg = SamplerConfig {
            n_steps: 3,
            keep_trace: true,
            ..Default::default()
        };
        let tr = extract_once(&oracle, &y, &y, &cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trace");
        write_trace(&tr, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back, tr);
        std::fs::write(&path, b"garbage!").unwrap();
        assert!(read_trace(&path).is_err());
    }
}
