//! Self-contained oracle suites: each compares an implementation against an
//! independent closed form or simulation and reports pass/fail with the
//! measured numbers.

use std::fmt;
use std::time::Instant;

use crate::error::Result;
use crate::models::{EnrollmentClue, ModelKind, NetConfig, ScoreModel, TseModel};
use crate::net::grad_check;
use crate::rng::{self, seeded};
use crate::sampling::{gaussian_task, posterior_match, SamplerConfig};
use crate::sde::{forward_simulate, kernel_moments, kernel_score, SdeParams, SimulationMode};
use crate::signal::{istft, si_sdr_slices, stft, StftConfig, Waveform};
use crate::tensor::SpecTensor;
use crate::training::{
    example_loss_grad, score_loss_interior, score_loss_terminal, terminal_offset, LossDraw, TerminalCorrection,
    TrainConfig, TrainExample,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> SuiteReport {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteReport {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Euler–Maruyama paths (10^4, dt = 1e-3) against the closed-form kernel at
/// t in {0.25, 0.5, 1}: mean error < 2 %, std error < 5 %.
pub fn kernel_monte_carlo(sde: &SdeParams<f64>, seed: u64) -> SuiteReport {
    timed("kernel vs Monte-Carlo", || {
        let x0 = SpecTensor::from_interleaved(2, 1, vec![1.0, -0.5, 0.3, 0.8])?;
        let y = SpecTensor::from_interleaved(2, 1, vec![-0.4, 0.2, 1.1, -0.6])?;
        let times = [0.25, 0.5, 1.0];
        let sims = forward_simulate(&x0, &y, sde, 10_000, 1e-3, &times, SimulationMode::Stochastic, &mut seeded(seed))?;
        let mut ok = true;
        let mut parts = Vec::new();
        for sim in &sims {
            let k = kernel_moments(&x0, &y, sim.t, sde)?;
            let mean_err = sim.mean.sub(&k.mean)?.norm() / k.mean.norm();
            let std_err = (sim.std - k.std).abs() / k.std;
            ok &= mean_err < 0.02 && std_err < 0.05;
            parts.push(format!("t={} mean_err={:.4} std_err={:.4}", sim.t, mean_err, std_err));
        }
        Ok((ok, parts.join("; ")))
    })
}

/// `sigma(0)^2 = 0`, `mu(x0, y, 0) = x0` and `sigma(1)^2 ~ 0.1338` for the default parameters.
pub fn boundary_identities(sde: &SdeParams<f64>) -> SuiteReport {
    timed("boundary identities", || {
        let mut r = seeded(1);
        let x0 = SpecTensor::complex_normal(5, 4, &mut r);
        let y = SpecTensor::complex_normal(5, 4, &mut r);
        let k = kernel_moments(&x0, &y, 0.0, sde)?;
        let var0 = sde.sigma_sq(0.0).abs();
        let mean0 = k.mean.sub(&x0)?.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // independent evaluation of the variance integral by the trapezoid rule
        let n = 200_000;
        let h = 1.0 / n as f64;
        let integrand = |s: f64| (-2.0 * sde.gamma * (1.0 - s)).exp() * sde.g(s).powi(2);
        let quad = h * ((1..n).map(|i| integrand(i as f64 * h)).sum::<f64>() + 0.5 * (integrand(0.0) + integrand(1.0)));
        let var1 = sde.sigma_sq(1.0);
        let ok = var0 <= 1e-12 && mean0 <= 1e-12 && (var1 - quad).abs() < 1e-8 && (var1 - 0.1338).abs() < 5e-5;
        Ok((
            ok,
            format!("sigma(0)^2={var0:e} |mu(0)-x0|={mean0:e} sigma(1)^2={var1:.6} quadrature={quad:.6}"),
        ))
    })
}

struct Target<F>(F, SdeParams<f64>);

impl<F: Fn(&SpecTensor<f64>, f64) -> SpecTensor<f64> + Sync> ScoreModel<f64> for Target<F> {
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

/// Closed-form targets drive both score objectives below 1e-20 and every
/// network's training gradient matches central differences to 1e-4.
pub fn loss_minimizers_and_gradients(sde: &SdeParams<f64>) -> SuiteReport {
    timed("loss minimizers and gradients", || {
        let p = *sde;
        let mut r = seeded(2);
        let x0 = SpecTensor::complex_normal(4, 5, &mut r);
        let y = SpecTensor::complex_normal(4, 5, &mut r);
        let c = EnrollmentClue::new(y.clone())?;
        let (xa, ya) = (x0.clone(), y.clone());
        let exact = Target(move |xt: &SpecTensor<f64>, t: f64| kernel_score(xt, &xa, &ya, t, &p).expect("t > 0"), p);
        let mut worst: f64 = 0.0;
        for t in [0.03, 0.3, 0.9] {
            worst = worst.max(score_loss_interior(&exact, &x0, &y, &c, t, &mut seeded(3))?);
        }
        let sig = p.sigma(p.t_max);
        for corr in [TerminalCorrection::AsPublished, TerminalCorrection::KernelConsistent] {
            let off = terminal_offset(&x0, &y, &p, corr)?;
            let yc = y.clone();
            let m = Target(
                move |xt: &SpecTensor<f64>, _t: f64| {
                    let z = xt.lincomb(1.0 / sig, &yc, -1.0 / sig).expect("shape");
                    z.scale(-1.0 / sig).sub(&off).expect("shape")
                },
                p,
            );
            worst = worst.max(score_loss_terminal(&m, &x0, &y, &c, corr, &mut seeded(4))?);
        }

        let net = NetConfig {
            freqs: 3,
            width: 5,
            blocks: 2,
            embed_dim: 3,
            time_dim: 4,
            data_var: 1.0,
        };
        let mut grad_err: f64 = 0.0;
        let mut checked = 0;
        for kind in [ModelKind::Tse, ModelKind::DiffTse, ModelKind::DiffTseMt] {
            let mut model = TseModel::new(kind, net, p, 3)?;
            // move zero-initialized layers off zero so every path carries gradient
            let mut pr = seeded(77);
            for prm in model.store.iter_mut() {
                for v in &mut prm.value.data {
                    *v += rng::uniform(&mut pr, -0.3, 0.3);
                }
            }
            let mut er = seeded(5);
            let ex = TrainExample {
                x0: SpecTensor::complex_normal(3, 4, &mut er),
                y: SpecTensor::complex_normal(3, 4, &mut er),
                c: EnrollmentClue::new(SpecTensor::complex_normal(3, 2, &mut er))?,
                speaker: 0,
            };
            for (t, terminal) in [(0.37, false), (p.t_max, true)] {
                let draw = LossDraw {
                    t,
                    terminal,
                    z: SpecTensor::complex_normal(3, 4, &mut seeded(6)),
                };
                let cfg = TrainConfig::default();
                let mut store = model.store.clone();
                let rep = grad_check(&mut store, 1, |s| {
                    let mut m = model.clone();
                    m.store.copy_values_from(s)?;
                    let (l, g) = example_loss_grad(&m, &ex, &cfg, &draw)?;
                    Ok((l.total, g))
                })?;
                grad_err = grad_err.max(rep.max_rel_err);
                checked += rep.checked;
            }
        }
        let ok = worst < 1e-20 && grad_err < 1e-4;
        Ok((
            ok,
            format!("max minimizer loss={worst:e} max grad rel err={grad_err:e} over {checked} entries"),
        ))
    })
}

/// PC sampling with the exact score of a conditional Gaussian reproduces its
/// mean (error < 5 % of the prior-to-posterior shift) and std (< 10 %) over 500 runs.
pub fn sampler_posterior(sde: &SdeParams<f64>, cfg: &SamplerConfig) -> SuiteReport {
    timed("sampler vs analytic posterior", || {
        let (oracle, y) = gaussian_task(*sde, 6)?;
        let m = posterior_match(&oracle, &y, cfg, 500)?;
        let ok = m.mean_rel_err < 0.05 && m.std_rel_err < 0.10;
        Ok((
            ok,
            format!(
                "N={} r={} mean_err={:.4} std_err={:.4}",
                cfg.n_steps, cfg.snr, m.mean_rel_err, m.std_rel_err
            ),
        ))
    })
}

/// SI-SDR scale invariance over 1000 random cases, `si_sdr([1,0],[1,1]) = 0 dB`
/// and the STFT round trip to 1e-10.
pub fn metric_identities(stft_cfg: &StftConfig) -> SuiteReport {
    timed("metric identities", || {
        let mut r = seeded(7);
        let mut inv: f64 = 0.0;
        for _ in 0..1000 {
            let n = 16 + rng::index(&mut r, 48);
            let s: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
            let e: Vec<f64> = s.iter().map(|v| v + 0.5 * rng::standard_normal::<f64>(&mut r)).collect();
            let k = rng::uniform(&mut r, 0.01, 100.0) * if rng::index(&mut r, 2) == 0 { 1.0 } else { -1.0 };
            let ks: Vec<f64> = e.iter().map(|v| k * v).collect();
            let ka: Vec<f64> = s.iter().map(|v| k.abs() * v).collect();
            let base = si_sdr_slices(&s, &e)?;
            inv = inv.max((si_sdr_slices(&s, &ks)? - base).abs());
            inv = inv.max((si_sdr_slices(&ka, &e)? - base).abs());
        }
        let zero = si_sdr_slices(&[1.0, 0.0], &[1.0, 1.0])?;
        let n = stft_cfg.sample_rate as usize;
        let w = Waveform::new((0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect(), stft_cfg.sample_rate)?;
        let back = istft(&stft(&w, stft_cfg)?, stft_cfg, n)?;
        let rt = w.samples.iter().zip(&back.samples).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let ok = inv < 1e-9 && zero.abs() < 1e-12 && rt < 1e-10;
        Ok((
            ok,
            format!("scale invariance max dev={inv:e} si_sdr([1,0],[1,1])={zero:e} dB istft(stft) max err={rt:e}"),
        ))
    })
}

/// Every oracle suite with the default sampler at the given SDE.
pub fn run_all(sde: &SdeParams<f64>, sampler: &SamplerConfig, stft_cfg: &StftConfig, seed: u64) -> Vec<SuiteReport> {
    vec![
        kernel_monte_carlo(sde, seed),
        boundary_identities(sde),
        loss_minimizers_and_gradients(sde),
        sampler_posterior(sde, sampler),
        metric_identities(stft_cfg),
    ]
}
