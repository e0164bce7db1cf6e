//! Closed-form mathematics of the mixture-conditioned forward SDE
//!
//! ```text
//! dx_t = gamma (y - x_t) dt + g(t) dw,   g(t) = sigma0 (sigma1/sigma0)^t sqrt(2 ln(sigma1/sigma0))
//! ```
//!
//! whose transition kernel is a circular complex Gaussian with mean
//! `e^{-gamma t} x0 + (1 - e^{-gamma t}) y` and variance
//! `sigma0^2 ((sigma1/sigma0)^{2t} - e^{-2 gamma t}) ln(sigma1/sigma0) / (gamma + ln(sigma1/sigma0))`.
//!
//! Complex noise follows the convention E|z|^2 = 1 (real and imaginary
//! parts each N(0, 1/2)), so `sigma(t)^2` is the complex variance.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::SpecTensor;

/// Parameters of the forward/reverse SDE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeParams<T> {
    pub gamma: T,
    pub sigma0: T,
    pub sigma1: T,
    pub t_max: T,
}

impl<T: Real> Default for SdeParams<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(2.0),
            sigma0: T::lit(0.05),
            sigma1: T::lit(0.5),
            t_max: T::one(),
        }
    }
}

impl<T: Real> SdeParams<T> {
    pub fn new(gamma: T, sigma0: T, sigma1: T, t_max: T) -> Result<Self> {
        let p = Self {
            gamma,
            sigma0,
            sigma1,
            t_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > T::zero()
            && self.sigma0 > T::zero()
            && self.sigma1 > self.sigma0
            && self.t_max > T::zero()
            && self.gamma.is_finite()
            && self.sigma1.is_finite()
            && self.t_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "need gamma > 0, 0 < sigma0 < sigma1, t_max > 0; got {self:?}"
            )))
        }
    }

    pub fn cast<U: Real>(&self) -> SdeParams<U> {
        SdeParams {
            gamma: U::lit(self.gamma.as_f64()),
            sigma0: U::lit(self.sigma0.as_f64()),
            sigma1: U::lit(self.sigma1.as_f64()),
            t_max: U::lit(self.t_max.as_f64()),
        }
    }

    fn log_ratio(&self) -> T {
        (self.sigma1 / self.sigma0).ln()
    }

    pub fn check_time(&self, t: T) -> Result<()> {
        if t >= T::zero() && t <= self.t_max {
            Ok(())
        } else {
            Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_max)))
        }
    }

    /// Mean decay factor `e^{-gamma t}`.
    pub fn decay(&self, t: T) -> T {
        (-self.gamma * t).exp()
    }

    /// Kernel variance `sigma(t)^2`, no range check.
    pub fn sigma_sq(&self, t: T) -> T {
        let k = self.log_ratio();
        let ratio = self.sigma1 / self.sigma0;
        let two = T::lit(2.0);
        self.sigma0 * self.sigma0 * (ratio.powf(two * t) - (-two * self.gamma * t).exp()) * k
            / (self.gamma + k)
    }

    pub fn sigma(&self, t: T) -> T {
        self.sigma_sq(t).max(T::zero()).sqrt()
    }

    /// Diffusion coefficient g(t), no range check.
    pub fn g(&self, t: T) -> T {
        self.sigma0 * (self.sigma1 / self.sigma0).powf(t) * (T::lit(2.0) * self.log_ratio()).sqrt()
    }
}

/// Mean and standard deviation of the perturbation kernel at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMoments<T> {
    pub mean: SpecTensor<T>,
    pub std: T,
}

/// Drift `f(x, y) = gamma (y - x)`.
pub fn drift<T: Real>(x: &SpecTensor<T>, y: &SpecTensor<T>, p: &SdeParams<T>) -> Result<SpecTensor<T>> {
    x.check_same_shape(y, "drift")?;
    y.lincomb(p.gamma, x, -p.gamma)
}

pub fn diffusion_coeff<T: Real>(t: T, p: &SdeParams<T>) -> Result<T> {
    p.check_time(t)?;
    Ok(p.g(t))
}

pub fn kernel_moments<T: Real>(
    x0: &SpecTensor<T>,
    y: &SpecTensor<T>,
    t: T,
    p: &SdeParams<T>,
) -> Result<KernelMoments<T>> {
    x0.check_same_shape(y, "kernel_moments")?;
    p.check_time(t)?;
    let d = p.decay(t);
    Ok(KernelMoments {
        mean: x0.lincomb(d, y, T::one() - d)?,
        std: p.sigma(t),
    })
}

/// Reparameterized draw `x_t = mu + sigma(t) z`; returns `(x_t, z)`.
pub fn sample_xt<T: Real>(
    x0: &SpecTensor<T>,
    y: &SpecTensor<T>,
    t: T,
    p: &SdeParams<T>,
    rng: &mut Rng,
) -> Result<(SpecTensor<T>, SpecTensor<T>)> {
    let m = kernel_moments(x0, y, t, p)?;
    let z = SpecTensor::complex_normal(x0.freqs(), x0.frames(), rng);
    let xt = m.mean.lincomb(T::one(), &z, m.std)?;
    Ok((xt, z))
}

/// Closed-form kernel score `-(x_t - mu) / sigma(t)^2`.
pub fn kernel_score<T: Real>(
    xt: &SpecTensor<T>,
    x0: &SpecTensor<T>,
    y: &SpecTensor<T>,
    t: T,
    p: &SdeParams<T>,
) -> Result<SpecTensor<T>> {
    xt.check_same_shape(x0, "kernel_score")?;
    let m = kernel_moments(x0, y, t, p)?;
    let var = m.std * m.std;
    if !(var > T::zero()) {
        return Err(Error::Singular);
    }
    xt.lincomb(-var.recip(), &m.mean, var.recip())
}

/// How [`forward_simulate`] integrates the SDE.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimulationMode {
    /// Euler–Maruyama with Brownian increments.
    Stochastic,
    /// Drift only (the zero-diffusion limit), an exponential relaxation.
    DriftOnly,
}

/// Empirical statistics of simulated paths at one checkpoint time.
#[derive(Clone, Debug)]
pub struct EmpiricalMoments<T> {
    pub t: T,
    pub mean: SpecTensor<T>,
    /// Pooled complex standard deviation, sqrt(mean |x - mean|^2).
    pub std: T,
}

/// Euler–Maruyama Monte-Carlo of the forward SDE, reporting empirical moments
/// at each checkpoint time (rounded to the step grid).
#[allow(clippy::too_many_arguments)]
pub fn forward_simulate<T: Real>(
    x0: &SpecTensor<T>,
    y: &SpecTensor<T>,
    p: &SdeParams<T>,
    n_paths: usize,
    dt: T,
    checkpoints: &[T],
    mode: SimulationMode,
    rng: &mut Rng,
) -> Result<Vec<EmpiricalMoments<T>>> {
    x0.check_same_shape(y, "forward_simulate")?;
    if !(dt > T::zero()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if n_paths == 0 {
        return Err(Error::Empty("n_paths"));
    }
    for &t in checkpoints {
        p.check_time(t)?;
    }
    let step_of = |t: T| (t / dt).round().to_usize().unwrap_or(0);
    let total = checkpoints.iter().map(|&t| step_of(t)).max().unwrap_or(0);
    let n = x0.as_slice().len();
    let mut sums = vec![vec![0.0f64; n]; checkpoints.len()];
    let mut sq = vec![0.0f64; checkpoints.len()];
    let sqrt_half_dt = (dt * T::lit(0.5)).sqrt();
    let yv = y.as_slice();

    let mut x = x0.as_slice().to_vec();
    for _ in 0..n_paths {
        x.copy_from_slice(x0.as_slice());
        let record = |x: &[T], step: usize, sums: &mut [Vec<f64>], sq: &mut [f64]| {
            for (c, &t) in checkpoints.iter().enumerate() {
                if step_of(t) == step {
                    for (s, v) in sums[c].iter_mut().zip(x) {
                        *s += v.as_f64();
                    }
                    sq[c] += x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                }
            }
        };
        record(&x, 0, &mut sums, &mut sq);
        for step in 0..total {
            let t = T::from_usize(step).unwrap() * dt;
            let gdt = p.g(t) * sqrt_half_dt;
            for (xi, &yi) in x.iter_mut().zip(yv) {
                let mut next = *xi + p.gamma * (yi - *xi) * dt;
                if mode == SimulationMode::Stochastic {
                    next += gdt * crate::rng::standard_normal::<T>(rng);
                }
                *xi = next;
            }
            record(&x, step + 1, &mut sums, &mut sq);
        }
    }

    let np = n_paths as f64;
    let entries = x0.len() as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / np).collect();
            let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
            let var = (sq[c] / np - mean_sq) / entries;
            EmpiricalMoments {
                t,
                mean: SpecTensor::from_interleaved(
                    x0.freqs(),
                    x0.frames(),
                    mean.into_iter().map(T::lit).collect(),
                )
                .expect("shape preserved"),
                std: T::lit(var.max(0.0).sqrt()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn reference() -> SdeParams<f64> {
        SdeParams::default()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SdeParams::new(0.0, 0.05, 0.5, 1.0).is_err());
        assert!(SdeParams::new(2.0, 0.5, 0.05, 1.0).is_err());
        assert!(SdeParams::new(2.0, 0.05, 0.5, 0.0).is_err());
    }

    #[test]
    fn drift_examples() {
        let p = reference();
        let x = SpecTensor::<f64>::zeros(2, 3);
        let y = SpecTensor::filled(2, 3, 1.0, 1.0);
        let d = drift(&x, &y, &p).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 2.0));
        assert!(drift(&y, &y, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(drift(&x, &SpecTensor::zeros(3, 2), &p).is_err());
    }

    #[test]
    fn diffusion_coefficient_values() {
        let p = reference();
        let g0 = diffusion_coeff(0.0, &p).unwrap();
        assert!((g0 - 0.05 * (2.0 * 10f64.ln()).sqrt()).abs() < 1e-15);
        assert!((g0 - 0.10730).abs() < 1e-5);
        let ratio = diffusion_coeff(1.0, &p).unwrap() / g0;
        assert!((ratio - 10.0).abs() < 1e-12);
        let g = |t| diffusion_coeff(t, &p).unwrap();
        assert!(g(0.25) < g(0.5) && g(0.5) < g(0.75));
        assert!(diffusion_coeff(1.5, &p).is_err());
        assert!(diffusion_coeff(-0.1, &p).is_err());
    }

    #[test]
    fn kernel_boundaries() {
        let p = reference();
        let x0 = SpecTensor::<f64>::filled(2, 2, 1.0, -0.5);
        let y = SpecTensor::<f64>::filled(2, 2, 0.25, 2.0);
        let m0 = kernel_moments(&x0, &y, 0.0, &p).unwrap();
        assert_eq!(m0.std, 0.0);
        assert!(m0.mean.sub(&x0).unwrap().norm() <= 1e-12);
        let m1 = kernel_moments(&x0, &y, 1.0, &p).unwrap();
        let want = x0.lincomb((-2f64).exp(), &y, 1.0 - (-2f64).exp()).unwrap();
        assert!(m1.mean.sub(&want).unwrap().norm() < 1e-14);
        assert!((m1.std.powi(2) - 0.1338).abs() < 5e-5);
        assert!(kernel_moments(&x0, &y, 1.01, &p).is_err());
    }

    #[test]
    fn sigma_increases_on_grid() {
        let p = reference();
        let mut prev = 0.0;
        for i in 1..=100 {
            let s = p.sigma(i as f64 / 100.0);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn sample_at_zero_is_clean_and_seeded() {
        let p = reference();
        let x0 = SpecTensor::<f64>::filled(3, 2, 0.3, 0.1);
        let y = SpecTensor::<f64>::zeros(3, 2);
        let (xt, _) = sample_xt(&x0, &y, 0.0, &p, &mut seeded(1)).unwrap();
        assert_eq!(xt, x0);
        let a = sample_xt(&x0, &y, 0.4, &p, &mut seeded(9)).unwrap();
        let b = sample_xt(&x0, &y, 0.4, &p, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_score_of_reparameterized_draw() {
        let p = reference();
        let x0 = SpecTensor::<f64>::filled(4, 3, 1.0, 0.0);
        let y = SpecTensor::<f64>::filled(4, 3, 0.0, 1.0);
        for &t in &[0.03, 0.5, 1.0] {
            let (xt, z) = sample_xt(&x0, &y, t, &p, &mut seeded(5)).unwrap();
            let s = kernel_score(&xt, &x0, &y, t, &p).unwrap();
            let want = z.scale(-1.0 / p.sigma(t));
            let rel = s.sub(&want).unwrap().norm() / want.norm();
            assert!(rel <= 1e-12, "t={t} rel={rel}");
        }
        let mu = kernel_moments(&x0, &y, 0.5, &p).unwrap().mean;
        assert_eq!(kernel_score(&mu, &x0, &y, 0.5, &p).unwrap().norm(), 0.0);
        assert!(matches!(kernel_score(&x0, &x0, &y, 0.0, &p), Err(Error::Singular)));
    }

    #[test]
    fn drift_only_simulation_is_exponential_relaxation() {
        let p = reference();
        let x0 = SpecTensor::<f64>::filled(2, 2, 1.0, 0.0);
        let y = SpecTensor::<f64>::filled(2, 2, 0.0, 1.0);
        let out = forward_simulate(&x0, &y, &p, 1, 1e-4, &[0.5], SimulationMode::DriftOnly, &mut seeded(0)).unwrap();
        let want = kernel_moments(&x0, &y, 0.5, &p).unwrap().mean;
        assert!(out[0].mean.sub(&want).unwrap().norm() / want.norm() < 1e-3);
        assert_eq!(out[0].std, 0.0);
    }

    #[test]
    fn stiff_drift_reaches_mixture() {
        let p = SdeParams::new(50.0, 0.05, 0.5, 1.0).unwrap();
        let x0 = SpecTensor::<f64>::filled(2, 2, 3.0, 0.0);
        let y = SpecTensor::<f64>::filled(2, 2, -1.0, 1.0);
        let out = forward_simulate(&x0, &y, &p, 200, 1e-3, &[1.0], SimulationMode::Stochastic, &mut seeded(2)).unwrap();
        assert!(out[0].mean.sub(&y).unwrap().norm() / y.norm() < 0.02);
    }

    #[test]
    fn simulate_rejects_bad_arguments() {
        let p = reference();
        let x = SpecTensor::<f64>::zeros(1, 1);
        let mut r = seeded(0);
        assert!(forward_simulate(&x, &x, &p, 10, 0.0, &[0.5], SimulationMode::Stochastic, &mut r).is_err());
        assert!(forward_simulate(&x, &x, &p, 0, 1e-3, &[0.5], SimulationMode::Stochastic, &mut r).is_err());
    }

    #[test]
    fn linearity_of_mean() {
        let p = reference();
        let x0 = SpecTensor::<f64>::from_fn(2, 3, |f, l| (f as f64 + 0.5, l as f64 - 1.0));
        let y = SpecTensor::<f64>::from_fn(2, 3, |f, l| (l as f64, -(f as f64)));
        let a = -2.5;
        let lhs = kernel_moments(&x0.scale(a), &y.scale(a), 0.7, &p).unwrap().mean;
        let rhs = kernel_moments(&x0, &y, 0.7, &p).unwrap().mean.scale(a);
        assert!(lhs.sub(&rhs).unwrap().norm() < 1e-12);
    }

    #[test]
    fn kernel_score_is_wirtinger_gradient_of_log_density() {
        let p = reference();
        let mut r = seeded(3);
        let x0 = SpecTensor::<f64>::complex_normal(3, 2, &mut r);
        let y = SpecTensor::<f64>::complex_normal(3, 2, &mut r);
        let xt = SpecTensor::<f64>::complex_normal(3, 2, &mut r);
        let t = 0.6;
        let m = kernel_moments(&x0, &y, t, &p).unwrap();
        let v = m.std * m.std;
        // circular complex Gaussian: log p = -|x - mu|^2 / v - ln(pi v) per entry
        let log_p = |x: &SpecTensor<f64>| -> f64 {
            let d = x.sub(&m.mean).unwrap();
            -d.norm_sqr() / v - 6.0 * (std::f64::consts::PI * v).ln()
        };
        let s = kernel_score(&xt, &x0, &y, t, &p).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            let (mut up, mut dn) = (xt.clone(), xt.clone());
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            let fd = (log_p(&up) - log_p(&dn)) / (2.0 * h) / 2.0;
            let a = s.as_slice()[i];
            assert!((a - fd).abs() / fd.abs().max(1e-6) < 1e-6, "{a} vs {fd}");
        }
    }
}
