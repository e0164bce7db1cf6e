//! Denoising score matching, the SNR objective and their multi-task sum, with a
//! speaker-first batch sampler and Adam plus weight EMA.
//!
//! Per-example gradients are computed in parallel from seeds split off the step
//! seed and summed serially in batch order, so results do not depend on the
//! number of worker threads.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::MixtureExample;
use crate::error::{Error, Result};
use crate::models::{spec_to_mat, EnrollmentClue, ModelKind, ScoreModel, TseModel};
use crate::net::{Graph, Mat, ParamStore};
use crate::rng::{self, Rng};
use crate::sde::{sample_xt, SdeParams};
use crate::signal::METRIC_CAP;
use crate::tensor::SpecTensor;

/// Per-time weight applied to the squared score residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossWeighting {
    /// `sigma(t)^2 ||s + z / sigma||^2`, i.e. `||sigma s + z||^2`.
    SigmaSquared,
    /// The bare residual `||s + z / sigma||^2`.
    AsWritten,
}

/// How the squared score residual is reduced over spectrogram entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossReduction {
    /// Divided by the number of complex entries.
    Mean,
    Sum,
}

/// Sign of the mean-offset term in the terminal (`t = T`) objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalCorrection {
    /// `s + z / sigma + e^{-gamma T} (x0 - y) / sigma^2`.
    AsPublished,
    /// `s + z / sigma - e^{-gamma T} (x0 - y) / sigma^2`, the sign implied by the kernel mean.
    KernelConsistent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Probability of drawing `t = T`.
    pub delta_t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub t_eps: f64,
    pub weighting: LossWeighting,
    pub reduction: LossReduction,
    pub terminal: TerminalCorrection,
    pub snr_cap: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            delta_t: 0.1,
            alpha: 1.0,
            beta: 1.0,
            ema_decay: 0.999,
            batch_size: 16,
            steps: 3000,
            t_eps: 0.03,
            weighting: LossWeighting::SigmaSquared,
            reduction: LossReduction::Mean,
            terminal: TerminalCorrection::AsPublished,
            snr_cap: METRIC_CAP,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sde: &SdeParams<f64>) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..=1.0).contains(&self.delta_t)
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && (0.0..=1.0).contains(&self.ema_decay)
            && self.t_eps > 0.0
            && self.t_eps < sde.t_max
            && self.snr_cap > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// `t = T` with probability `delta_t`, otherwise uniform on `[t_eps, T)`.
pub fn draw_time(cfg: &TrainConfig, sde: &SdeParams<f64>, r: &mut Rng) -> f64 {
    if cfg.delta_t > 0.0 && rng::uniform(r, 0.0, 1.0) < cfg.delta_t {
        sde.t_max
    } else {
        rng::uniform(r, cfg.t_eps, sde.t_max)
    }
}

/// Interior objective `||s(x_t, y, c, t) + z / sigma(t)||^2` with `x_t` drawn from the kernel.
pub fn score_loss_interior<M: ScoreModel<f64>>(
    model: &M,
    x0: &SpecTensor<f64>,
    y: &SpecTensor<f64>,
    c: &EnrollmentClue<f64>,
    t: f64,
    r: &mut Rng,
) -> Result<f64> {
    let p = model.sde();
    if t >= p.t_max {
        return Err(Error::Domain(format!("t = {t} belongs to the terminal objective")));
    }
    let (xt, z) = sample_xt(x0, y, t, p, r)?;
    let s = model.score_once(&xt, y, c, t)?;
    Ok(s.lincomb(1.0, &z, 1.0 / p.sigma(t))?.norm_sqr())
}

/// Terminal offset `±e^{-gamma T} (x0 - y) / sigma(T)^2`.
pub fn terminal_offset(
    x0: &SpecTensor<f64>,
    y: &SpecTensor<f64>,
    p: &SdeParams<f64>,
    correction: TerminalCorrection,
) -> Result<SpecTensor<f64>> {
    let sign = match correction {
        TerminalCorrection::AsPublished => 1.0,
        TerminalCorrection::KernelConsistent => -1.0,
    };
    let k = sign * p.decay(p.t_max) / p.sigma_sq(p.t_max);
    x0.lincomb(k, y, -k)
}

/// Terminal objective with `x_T = y + sigma(T) z`.
pub fn score_loss_terminal<M: ScoreModel<f64>>(
    model: &M,
    x0: &SpecTensor<f64>,
    y: &SpecTensor<f64>,
    c: &EnrollmentClue<f64>,
    correction: TerminalCorrection,
    r: &mut Rng,
) -> Result<f64> {
    let p = model.sde();
    let sig = p.sigma(p.t_max);
    let z = SpecTensor::complex_normal(y.freqs(), y.frames(), r);
    let xt = y.lincomb(1.0, &z, sig)?;
    let s = model.score_once(&xt, y, c, p.t_max)?;
    let res = s.lincomb(1.0, &z, 1.0 / sig)?.add(&terminal_offset(x0, y, p, correction)?)?;
    Ok(res.norm_sqr())
}

/// `-10 log10(||x0||^2 / ||x0 - x_hat||^2)`, clamped to `±cap`.
pub fn snr_loss(x0: &SpecTensor<f64>, x_hat: &SpecTensor<f64>, cap: f64) -> Result<f64> {
    x0.check_same_shape(x_hat, "snr_loss")?;
    let sig = x0.norm_sqr();
    if !(sig > 0.0) {
        return Err(Error::Domain("snr_loss needs a nonzero reference".into()));
    }
    let err = x0.sub(x_hat)?.norm_sqr();
    let snr = if err > 0.0 { 10.0 * (sig / err).log10() } else { f64::INFINITY };
    Ok(-snr.clamp(-cap, cap))
}

/// One training triple.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub x0: SpecTensor<f64>,
    pub y: SpecTensor<f64>,
    pub c: EnrollmentClue<f64>,
    pub speaker: usize,
}

impl From<&MixtureExample> for TrainExample {
    fn from(ex: &MixtureExample) -> Self {
        Self {
            x0: ex.x0.clone(),
            y: ex.y.clone(),
            c: ex.c.clone(),
            speaker: ex.target_id,
        }
    }
}

/// Draws a speaker uniformly, then one of that speaker's examples.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    by_speaker: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(speakers: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in speakers.into_iter().enumerate() {
            map.entry(s).or_default().push(i);
        }
        if map.is_empty() {
            return Err(Error::Empty("corpus has no examples"));
        }
        Ok(Self {
            by_speaker: map.into_values().collect(),
        })
    }

    pub fn sample(&self, batch_size: usize, r: &mut Rng) -> Vec<usize> {
        (0..batch_size)
            .map(|_| {
                let list = &self.by_speaker[rng::index(r, self.by_speaker.len())];
                list[rng::index(r, list.len())]
            })
            .collect()
    }
}

/// Speaker-first batch of examples.
pub fn sample_batch<'a>(examples: &'a [MixtureExample], batch_size: usize, r: &mut Rng) -> Result<Vec<&'a MixtureExample>> {
    let sampler = BatchSampler::new(examples.iter().map(|e| e.target_id))?;
    Ok(sampler.sample(batch_size, r).into_iter().map(|i| &examples[i]).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Weighted and reduced score objective (0 for the discriminative model).
    pub score_loss: f64,
    /// Negative SNR in dB (0 for Diff-TSE).
    pub snr_loss: f64,
    pub total: f64,
    pub t_drawn: f64,
    pub was_terminal: bool,
}

/// Random quantities of one example's loss.
#[derive(Clone, Debug)]
pub struct LossDraw {
    pub t: f64,
    pub terminal: bool,
    pub z: SpecTensor<f64>,
}

impl LossDraw {
    pub fn new(cfg: &TrainConfig, sde: &SdeParams<f64>, freqs: usize, frames: usize, r: &mut Rng) -> Self {
        let t = draw_time(cfg, sde, r);
        Self {
            t,
            terminal: t >= sde.t_max,
            z: SpecTensor::complex_normal(freqs, frames, r),
        }
    }
}

/// Loss and parameter gradients of one example for a network model.
pub fn example_loss_grad(
    model: &TseModel<f64>,
    ex: &TrainExample,
    cfg: &TrainConfig,
    draw: &LossDraw,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let sde = &model.sde;
    ex.x0.check_same_shape(&ex.y, "training example")?;
    let mut g = Graph::new(&model.store);
    let yn = g.input(spec_to_mat(&ex.y));
    let cn = g.input(spec_to_mat(ex.c.spec()));
    let emb = model.embed_node(&mut g, cn)?;
    let direct = if model.kind.has_direct_branch() {
        Some(model.direct_node(&mut g, yn, emb)?)
    } else {
        None
    };
    let mut seeds = Vec::new();
    let mut report = LossReport {
        t_drawn: draw.t,
        was_terminal: draw.terminal,
        ..LossReport::default()
    };

    let snr_weight = match model.kind {
        ModelKind::Tse => 1.0,
        ModelKind::DiffTseMt => cfg.alpha,
        ModelKind::DiffTse => 0.0,
    };
    if let Some(d) = direct {
        let x_hat = g.value(d).data.clone();
        let x0 = ex.x0.to_rows();
        let sig: f64 = x0.iter().map(|v| v * v).sum();
        if !(sig > 0.0) {
            return Err(Error::Domain("training target is silent".into()));
        }
        let err: Vec<f64> = x0.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
        let e2: f64 = err.iter().map(|v| v * v).sum();
        let snr = if e2 > 0.0 { 10.0 * (sig / e2).log10() } else { f64::INFINITY };
        report.snr_loss = -snr.clamp(-cfg.snr_cap, cfg.snr_cap);
        let inside = snr.abs() < cfg.snr_cap;
        if snr_weight > 0.0 && inside {
            // d(-SNR)/d x_hat = -(20 / ln 10) (x0 - x_hat) / ||x0 - x_hat||^2
            let k = -snr_weight * 20.0 / std::f64::consts::LN_10 / e2;
            let grad = Mat::from_vec(ex.y.frames(), 2 * ex.y.freqs(), err.iter().map(|e| k * e).collect())?;
            seeds.push((d, grad));
        }
    }

    let score_weight = match model.kind {
        ModelKind::Tse => 0.0,
        _ => cfg.beta,
    };
    if model.kind.is_generative() {
        let t = draw.t;
        let sigma = sde.sigma(t);
        let xt = if draw.terminal {
            ex.y.lincomb(1.0, &draw.z, sigma)?
        } else {
            let d = sde.decay(t);
            ex.x0.lincomb(d, &ex.y, 1.0 - d)?.lincomb(1.0, &draw.z, sigma)?
        };
        let offset = if draw.terminal {
            Some(terminal_offset(&ex.x0, &ex.y, sde, cfg.terminal)?.to_rows())
        } else {
            None
        };
        let xn = g.input(spec_to_mat(&xt));
        let n = model.head_node(&mut g, xn, yn, direct, emb, t)?;
        let pc = model.precond(t)?;
        let (xv, yv, zv) = (xt.to_rows(), ex.y.to_rows(), draw.z.to_rows());
        let nv = &g.value(n).data;
        let w = match cfg.weighting {
            LossWeighting::SigmaSquared => sigma * sigma,
            LossWeighting::AsWritten => 1.0,
        } * match cfg.reduction {
            LossReduction::Mean => 1.0 / (ex.y.freqs() * ex.y.frames()) as f64,
            LossReduction::Sum => 1.0,
        };
        let mut raw = 0.0;
        let mut grad = Vec::with_capacity(nv.len());
        for i in 0..nv.len() {
            let s = pc.score(xv[i], yv[i], pc.estimate(xv[i], yv[i], nv[i]));
            let res = s + zv[i] / sigma + offset.as_ref().map_or(0.0, |o| o[i]);
            raw += res * res;
            grad.push(score_weight * w * 2.0 * res * pc.score_gain());
        }
        report.score_loss = w * raw;
        if score_weight > 0.0 {
            seeds.push((n, Mat::from_vec(ex.y.frames(), 2 * ex.y.freqs(), grad)?));
        }
    }

    report.total = match model.kind {
        ModelKind::Tse => report.snr_loss,
        ModelKind::DiffTse => report.score_loss,
        ModelKind::DiffTseMt => cfg.alpha * report.snr_loss + cfg.beta * report.score_loss,
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {report:?}")));
    }
    let grads = if seeds.is_empty() {
        model.store.iter().map(|p| vec![0.0; p.value.data.len()]).collect()
    } else {
        g.backward(&seeds)?.into_param_buffers(&model.store)
    };
    Ok((report, grads))
}

/// Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore<f64>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.data.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam step from the gradients held in `params`, then the EMA update
/// `ema = decay ema + (1 - decay) params`.
pub fn optimize(params: &mut ParamStore<f64>, ema: &mut ParamStore<f64>, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p.value.data[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
        }
    }
    let d = cfg.ema_decay;
    for (e, p) in ema.iter_mut().zip(params.iter()) {
        for (a, &b) in e.value.data.iter_mut().zip(&p.value.data) {
            *a = d * *a + (1.0 - d) * b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Batch means.
    pub loss: LossReport,
    /// Fraction of the batch drawn at `t = T`.
    pub terminal_fraction: f64,
    pub wall_ms: u128,
}

impl StepReport {
    /// One training-log line.
    pub fn log_line(&self) -> String {
        format!(
            "step={} t_drawn={:.4} score_loss={:.6e} snr_loss={:.4} total={:.6e} wall_ms={}",
            self.step, self.loss.t_drawn, self.loss.score_loss, self.loss.snr_loss, self.loss.total, self.wall_ms
        )
    }
}

/// Owns the model, its EMA shadow and the optimizer state.
pub struct Trainer {
    pub model: TseModel<f64>,
    pub ema: ParamStore<f64>,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub step: usize,
    seed: u64,
    batch_rng: Rng,
}

impl Trainer {
    pub fn new(model: TseModel<f64>, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate(&model.sde)?;
        Ok(Self {
            ema: model.store.clone(),
            adam: AdamState::new(&model.store),
            batch_rng: rng::seeded(rng::split_seed(seed, 0xBA7C4)),
            model,
            cfg,
            step: 0,
            seed,
        })
    }

    /// One optimizer step on a batch drawn speaker-first from `examples`.
    pub fn step(&mut self, examples: &[TrainExample], sampler: &BatchSampler) -> Result<StepReport> {
        let start = Instant::now();
        let idx = sampler.sample(self.cfg.batch_size, &mut self.batch_rng);
        let step_seed = rng::split_seed(self.seed, self.step as u64);
        let model = &self.model;
        let cfg = &self.cfg;
        let results = idx
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let ex = &examples[i];
                let mut r = rng::seeded(rng::split_seed(step_seed, k as u64));
                let draw = LossDraw::new(cfg, &model.sde, ex.y.freqs(), ex.y.frames(), &mut r);
                example_loss_grad(model, ex, cfg, &draw)
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let n = results.len().max(1) as f64;
        self.model.store.zero_grads();
        let mut mean = LossReport::default();
        let mut terminal = 0.0;
        for (rep, grads) in &results {
            mean.score_loss += rep.score_loss / n;
            mean.snr_loss += rep.snr_loss / n;
            mean.total += rep.total / n;
            mean.t_drawn += rep.t_drawn / n;
            if rep.was_terminal {
                terminal += 1.0 / n;
            }
            for (p, g) in self.model.store.iter_mut().zip(grads) {
                for (a, &b) in p.grad.data.iter_mut().zip(g) {
                    *a += b / n;
                }
            }
        }
        mean.was_terminal = terminal > 0.0;
        if !results.is_empty() {
            optimize(&mut self.model.store, &mut self.ema, &mut self.adam, &self.cfg);
        }
        Ok(StepReport {
            step: self.step,
            loss: mean,
            terminal_fraction: terminal,
            wall_ms: start.elapsed().as_millis(),
        })
    }

    /// The model with EMA weights, used for inference.
    pub fn ema_model(&self) -> TseModel<f64> {
        let mut m = self.model.clone();
        m.store
            .copy_values_from(&self.ema)
            .expect("EMA shadow shares the model layout");
        m
    }

    /// Runs `cfg.steps` steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        examples: &[TrainExample],
        mut on_step: impl FnMut(&StepReport, &Trainer) -> Result<()>,
    ) -> Result<()> {
        let sampler = BatchSampler::new(examples.iter().map(|e| e.speaker))?;
        while self.step < self.cfg.steps {
            let rep = self.step(examples, &sampler)?;
            on_step(&rep, self)?;
        }
        Ok(())
    }
}

/// Average interior objective (unweighted, summed) over `draws` draws per example,
/// with `t` uniform on `[t_eps, T)`.
pub fn eval_score_loss<M: ScoreModel<f64>>(
    model: &M,
    examples: &[TrainExample],
    t_eps: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let t_max = model.sde().t_max;
    let losses = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng::seeded(rng::split_seed(seed, i as u64));
            let mut acc = 0.0;
            for _ in 0..draws {
                let t = rng::uniform(&mut r, t_eps, t_max);
                acc += score_loss_interior(model, &ex.x0, &ex.y, &ex.c, t, &mut r)?;
            }
            Ok(acc / draws as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianPosterior, NetConfig, ZeroScore};
    use crate::net::gradcheck::grad_check;
    use crate::sde::kernel_score;

    fn sde() -> SdeParams<f64> {
        SdeParams::default()
    }

    /// Score model that returns a fixed closed-form target.
    struct Fixed<F: Fn(&SpecTensor<f64>, f64) -> SpecTensor<f64> + Sync>(F, SdeParams<f64>);

    impl<F: Fn(&SpecTensor<f64>, f64) -> SpecTensor<f64> + Sync> ScoreModel<f64> for Fixed<F> {
        type Context = ();
        fn sde(&self) -> &SdeParams<f64> {
            &self.1
        }
        fn condition(&self, _y: &SpecTensor<f64>, _c: &EnrollmentClue<f64>) -> Result<()> {
            Ok(())
        }
        fn score(&self, _ctx: &(), xt: &SpecTensor<f64>, t: f64) -> Result<SpecTensor<f64>> {
            Ok((self.0)(xt, t))
        }
    }

    fn spec(seed: u64) -> SpecTensor<f64> {
        SpecTensor::complex_normal(4, 5, &mut rng::seeded(seed))
    }

    #[test]
    fn time_draws_follow_delta() {
        let p = sde();
        let mut r = rng::seeded(1);
        let mut cfg = TrainConfig {
            delta_t: 1.0,
            ..TrainConfig::default()
        };
        assert!((0..100).all(|_| draw_time(&cfg, &p, &mut r) == 1.0));
        cfg.delta_t = 0.0;
        assert!((0..100_000).all(|_| {
            let t = draw_time(&cfg, &p, &mut r);
            (0.03..1.0).contains(&t)
        }));
        cfg.delta_t = 0.1;
        let hits = (0..100_000).filter(|_| draw_time(&cfg, &p, &mut r) == 1.0).count();
        assert!((hits as f64 / 1e5 - 0.1).abs() < 0.005, "{hits}");
    }

    #[test]
    fn interior_minimizer_gives_zero_loss() {
        let (x0, y) = (spec(1), spec(2));
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let p = sde();
        let kernel = |x0: SpecTensor<f64>, y: SpecTensor<f64>| {
            Fixed(move |xt: &SpecTensor<f64>, t: f64| kernel_score(xt, &x0, &y, t, &sde()).unwrap(), sde())
        };
        let m = kernel(x0.clone(), y.clone());
        for &t in &[0.03, 0.3, 0.9] {
            let l = score_loss_interior(&m, &x0, &y, &c, t, &mut rng::seeded(4)).unwrap();
            assert!(l < 1e-20, "t={t} loss={l}");
        }
        assert!(score_loss_interior(&m, &x0, &y, &c, p.t_max, &mut rng::seeded(4)).is_err());
    }

    #[test]
    fn zero_model_interior_loss_is_noise_power() {
        let (x0, y) = (spec(1), spec(2));
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let p = sde();
        let zero = ZeroScore::new(p);
        let t = 0.5;
        let mut acc = 0.0;
        let n = 4000;
        let mut r = rng::seeded(8);
        for _ in 0..n {
            acc += score_loss_interior(&zero, &x0, &y, &c, t, &mut r).unwrap();
        }
        // E||z||^2 = number of complex entries (E|z|^2 = 1 per entry)
        let expect = 20.0 / p.sigma_sq(t);
        assert!((acc / n as f64 / expect - 1.0).abs() < 0.03);
    }

    #[test]
    fn terminal_minimizer_and_reduction() {
        let (x0, y) = (spec(1), spec(2));
        let c = EnrollmentClue::new(y.clone()).unwrap();
        let p = sde();
        let sig = p.sigma(1.0);
        for corr in [TerminalCorrection::AsPublished, TerminalCorrection::KernelConsistent] {
            let (x0c, yc) = (x0.clone(), y.clone());
            // x_T = y + sigma z, so z = (x_T - y) / sigma
            let m = Fixed(
                move |xt: &SpecTensor<f64>, _t: f64| {
                    let z = xt.lincomb(1.0 / sig, &yc, -1.0 / sig).unwrap();
                    z.scale(-1.0 / sig).sub(&terminal_offset(&x0c, &yc, &sde(), corr).unwrap()).unwrap()
                },
                p,
            );
            let l = score_loss_terminal(&m, &x0, &y, &c, corr, &mut rng::seeded(3)).unwrap();
            assert!(l < 1e-20, "{l}");
        }
        // x0 = y: the offset vanishes and the loss is the interior form at t = T
        let yc = y.clone();
        let m = Fixed(move |xt: &SpecTensor<f64>, _t: f64| xt.lincomb(-1.0 / (sig * sig), &yc, 1.0 / (sig * sig)).unwrap(), p);
        let l = score_loss_terminal(&m, &y, &y, &c, TerminalCorrection::AsPublished, &mut rng::seeded(3)).unwrap();
        assert!(l < 1e-20);
        let off = terminal_offset(&x0, &y, &p, TerminalCorrection::AsPublished).unwrap();
        let want = (-2.0f64).exp() * x0.sub(&y).unwrap().norm() / p.sigma_sq(1.0);
        assert!((off.norm() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_loss_examples() {
        let x0 = SpecTensor::<f64>::filled(2, 2, 1.0, 0.0);
        assert_eq!(snr_loss(&x0, &SpecTensor::zeros(2, 2), 50.0).unwrap(), 0.0);
        assert_eq!(snr_loss(&x0, &x0, 50.0).unwrap(), -50.0);
        let tenth = x0.scale(1.0 - 0.1f64.sqrt());
        assert!((snr_loss(&x0, &tenth, 50.0).unwrap() + 10.0).abs() < 1e-12);
        assert!(snr_loss(&SpecTensor::zeros(2, 2), &x0, 50.0).is_err());
    }

    #[test]
    fn speaker_first_sampling_is_balanced() {
        let speakers: Vec<usize> = (0..100).map(|i| if i < 90 { 0 } else { 1 }).collect();
        let s = BatchSampler::new(speakers.iter().copied()).unwrap();
        let mut r = rng::seeded(2);
        let draws = s.sample(10_000, &mut r);
        let frac = draws.iter().filter(|&&i| speakers[i] == 0).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        assert!(s.sample(0, &mut r).is_empty());
        assert_eq!(s.sample(5, &mut rng::seeded(9)), s.sample(5, &mut rng::seeded(9)));
        assert!(BatchSampler::new(std::iter::empty()).is_err());
    }

    #[test]
    fn adam_and_ema_limits() {
        let mut r = rng::seeded(0);
        let mut store = ParamStore::<f64>::new();
        store.add("x", 1, 3, crate::net::Init::Constant(5.0), &mut r);
        let init = store.clone();
        let target = [1.0, -2.0, 0.5];
        let run = |decay: f64, steps: usize| {
            let mut s = init.clone();
            let mut ema = init.clone();
            let mut st = AdamState::new(&s);
            let cfg = TrainConfig {
                lr: 1e-2,
                ema_decay: decay,
                ..TrainConfig::default()
            };
            for _ in 0..steps {
                let p = s.get_mut(crate::net::ParamId(0));
                for ((g, v), t) in p.grad.data.iter_mut().zip(&p.value.data).zip(&target) {
                    *g = 2.0 * (v - t);
                }
                optimize(&mut s, &mut ema, &mut st, &cfg);
            }
            (s, ema)
        };
        let (s, ema) = run(0.0, 5);
        assert_eq!(s.get(crate::net::ParamId(0)).value, ema.get(crate::net::ParamId(0)).value);
        let (_, ema) = run(1.0, 5);
        assert_eq!(ema.get(crate::net::ParamId(0)).value, init.get(crate::net::ParamId(0)).value);
        let (s, _) = run(0.999, 10_000);
        for (v, t) in s.get(crate::net::ParamId(0)).value.data.iter().zip(target) {
            assert!((v - t).abs() < 1e-6, "{v} vs {t}");
        }
    }

    fn tiny(kind: ModelKind) -> TseModel<f64> {
        let cfg = NetConfig {
            freqs: 3,
            width: 5,
            blocks: 2,
            embed_dim: 3,
            time_dim: 4,
            data_var: 1.0,
        };
        let mut m = TseModel::new(kind, cfg, sde(), 3).unwrap();
        // move zero-initialized layers off zero so every path carries gradient
        let mut r = rng::seeded(77);
        for p in m.store.iter_mut() {
            for v in &mut p.value.data {
                *v += rng::uniform(&mut r, -0.3, 0.3);
            }
        }
        m
    }

    fn tiny_example(seed: u64) -> TrainExample {
        let mut r = rng::seeded(seed);
        TrainExample {
            x0: SpecTensor::complex_normal(3, 4, &mut r),
            y: SpecTensor::complex_normal(3, 4, &mut r),
            c: EnrollmentClue::new(SpecTensor::complex_normal(3, 2, &mut r)).unwrap(),
            speaker: 0,
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for kind in [ModelKind::Tse, ModelKind::DiffTse, ModelKind::DiffTseMt] {
            for terminal in [false, true] {
                let m = tiny(kind);
                let ex = tiny_example(5);
                let t = if terminal { 1.0 } else { 0.37 };
                let draw = LossDraw {
                    t,
                    terminal,
                    z: SpecTensor::complex_normal(3, 4, &mut rng::seeded(6)),
                };
                let cfg = TrainConfig::default();
                let mut store = m.store.clone();
                let rep = grad_check(&mut store, 1, |s| {
                    let mut mm = m.clone();
                    mm.store.copy_values_from(s)?;
                    let (r, g) = example_loss_grad(&mm, &ex, &cfg, &draw)?;
                    Ok((r.total, g))
                })
                .unwrap();
                assert!(rep.passes(1e-4), "{kind:?} terminal={terminal}: {rep:?}");
            }
        }
    }

    #[test]
    fn multitask_weights() {
        let m = tiny(ModelKind::DiffTseMt);
        let ex = tiny_example(1);
        let draw = LossDraw {
            t: 0.5,
            terminal: false,
            z: SpecTensor::complex_normal(3, 4, &mut rng::seeded(2)),
        };
        let base = TrainConfig::default();
        let (rep, _) = example_loss_grad(&m, &ex, &base, &draw).unwrap();
        assert_eq!(rep.total, rep.snr_loss + rep.score_loss);

        // beta = 0: the score head gets no gradient
        let cfg = TrainConfig { beta: 0.0, ..base.clone() };
        let (_, g) = example_loss_grad(&m, &ex, &cfg, &draw).unwrap();
        for (p, g) in m.store.iter().zip(&g) {
            if TseModel::<f64>::is_head_param(&p.name) {
                assert!(g.iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }

        // alpha = 0: only the score term remains
        let cfg = TrainConfig { alpha: 0.0, ..base };
        let (rep, g) = example_loss_grad(&m, &ex, &cfg, &draw).unwrap();
        assert_eq!(rep.total, rep.score_loss);
        assert!(g.iter().flatten().any(|&v| v != 0.0));
    }

    #[test]
    fn training_is_thread_count_independent() {
        let examples: Vec<TrainExample> = (0..6).map(|i| TrainExample { speaker: i % 2, ..tiny_example(i as u64) }).collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let cfg = TrainConfig {
                    steps: 4,
                    batch_size: 3,
                    lr: 1e-3,
                    ..TrainConfig::default()
                };
                let mut tr = Trainer::new(tiny(ModelKind::DiffTseMt), cfg, 9).unwrap();
                tr.run(&examples, |_, _| Ok(())).unwrap();
                tr.ema_model().store
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn oracle_beats_zero_model() {
        let p = sde();
        let examples: Vec<TrainExample> = (0..5).map(|i| tiny_example(i as u64)).collect();
        let ex = &examples[0];
        let oracle = GaussianPosterior::new(ex.x0.clone(), vec![0.0; 12], p).unwrap();
        let zero = ZeroScore::new(p);
        let one = std::slice::from_ref(ex);
        let lo = eval_score_loss(&oracle, one, 0.03, 20, 1).unwrap();
        let hi = eval_score_loss(&zero, one, 0.03, 20, 1).unwrap();
        assert!(lo < 1e-18 && hi > 1.0);
    }
}
