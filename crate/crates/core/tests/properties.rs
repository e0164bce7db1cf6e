//! Cross-module properties of the engine's public API.

use proptest::prelude::*;
use tse_diffusion::corpus::{gen_corpus, read_corpus, write_corpus, CorpusConfig};
use tse_diffusion::models::{EnrollmentClue, GaussianPosterior, ModelKind, NetConfig, ScoreModel, TseModel};
use tse_diffusion::rng::seeded;
use tse_diffusion::sampling::{extract_ensemble, SamplerConfig};
use tse_diffusion::sde::{kernel_moments, kernel_score, sample_xt};
use tse_diffusion::signal::{istft, si_sdr_slices, stft, StftConfig, Waveform};
use tse_diffusion::training::{score_loss_interior, TrainConfig, TrainExample, Trainer};
use tse_diffusion::{Sde32, Sde64, Spec64};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn si_sdr_ignores_estimate_scale(
        v in prop::collection::vec(-1.0f64..1.0, 8..64),
        noise in prop::collection::vec(-0.3f64..0.3, 64),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let e: Vec<f64> = v.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let ke: Vec<f64> = e.iter().map(|x| k * x).collect();
        let a = si_sdr_slices(&v, &e).unwrap();
        let b = si_sdr_slices(&v, &ke).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn stft_round_trip_any_length(n in 1usize..700, seed in 0u64..1000) {
        let cfg = StftConfig::default();
        let mut r = seeded(seed);
        let w = Waveform::new(
            (0..n).map(|_| tse_diffusion::rng::uniform(&mut r, -1.0, 1.0)).collect(),
            cfg.sample_rate,
        ).unwrap();
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg, n).unwrap();
        let err = w.samples.iter().zip(&back.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn kernel_score_of_draw_is_scaled_noise(t in 0.01f64..1.0, seed in 0u64..1000) {
        let p = Sde64::default();
        let mut r = seeded(seed);
        let x0 = Spec64::complex_normal(3, 4, &mut r);
        let y = Spec64::complex_normal(3, 4, &mut r);
        let (xt, z) = sample_xt(&x0, &y, t, &p, &mut r).unwrap();
        let s = kernel_score(&xt, &x0, &y, t, &p).unwrap();
        let resid = s.lincomb(1.0, &z, 1.0 / p.sigma(t)).unwrap().norm();
        prop_assert!(resid < 1e-8 * (1.0 + z.norm() / p.sigma(t)));
    }

    #[test]
    fn kernel_mean_is_convex_combination(t in 0.0f64..1.0) {
        let p = Sde64::default();
        let x0 = Spec64::filled(2, 2, 1.0, 0.0);
        let y = Spec64::filled(2, 2, 0.0, 1.0);
        let m = kernel_moments(&x0, &y, t, &p).unwrap().mean;
        let (re, im) = m.get(0, 0);
        prop_assert!((re + im - 1.0).abs() < 1e-12 && re >= 0.0 && im >= 0.0);
    }
}

#[test]
fn precision_aliases_agree_on_kernel() {
    let p64 = Sde64::default();
    let p32: Sde32 = p64.cast();
    for t in [0.1, 0.5, 1.0] {
        assert!((p32.sigma_sq(t as f32) as f64 - p64.sigma_sq(t)).abs() < 1e-6);
    }
}

#[test]
fn corpus_round_trips_through_disk() {
    let cfg = CorpusConfig {
        n_train: 6,
        n_test: 3,
        ..CorpusConfig::default()
    };
    let c = gen_corpus(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&c, dir.path()).unwrap();
    assert_eq!(read_corpus(dir.path()).unwrap(), c);
}

fn small_net() -> NetConfig {
    NetConfig {
        width: 8,
        blocks: 2,
        ..NetConfig::default()
    }
}

#[test]
fn trained_model_survives_save_load_and_downcast() {
    let cfg = CorpusConfig {
        n_train: 12,
        n_test: 2,
        ..CorpusConfig::default()
    };
    let corpus = gen_corpus(&cfg, 1).unwrap();
    let examples: Vec<TrainExample> = corpus.train.iter().map(TrainExample::from).collect();
    let model = TseModel::new(ModelKind::DiffTseMt, small_net(), Sde64::default(), 3).unwrap();
    let mut tr = Trainer::new(
        model,
        TrainConfig {
            steps: 3,
            batch_size: 2,
            lr: 1e-3,
            ..TrainConfig::default()
        },
        3,
    )
    .unwrap();
    tr.run(&examples, |_, _| Ok(())).unwrap();
    let m = tr.ema_model();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), "m").unwrap();
    let back = TseModel::<f64>::load(dir.path(), "m").unwrap();
    // checkpoints hold values only
    for (a, b) in back.store.iter().zip(m.store.iter()) {
        assert_eq!((&a.name, &a.value), (&b.name, &b.value));
    }
    assert_eq!(back.store.len(), m.store.len());

    let ex = &corpus.test[0];
    let s64 = m.score_once(&ex.y, &ex.y, &ex.c, 0.5).unwrap();
    let m32 = m.cast::<f32>();
    let s32 = m32.score_once(&ex.y.cast(), &ex.y.cast(), &ex.c.cast(), 0.5).unwrap();
    let rel = s32.cast::<f64>().sub(&s64).unwrap().norm() / s64.norm();
    assert!(rel < 1e-4, "f32 vs f64 score relative difference {rel}");

    let scfg = SamplerConfig {
        ensemble: 2,
        n_steps: 3,
        ..SamplerConfig::default()
    };
    let a = extract_ensemble(&m32, &ex.y.cast(), &ex.c.cast(), &scfg).unwrap();
    let b = extract_ensemble(&m32, &ex.y.cast(), &ex.c.cast(), &scfg).unwrap();
    assert_eq!(a.combined, b.combined);
}

#[test]
fn oracle_score_zeroes_score_loss_everywhere() {
    let p = Sde64::default();
    let mut r = seeded(9);
    let x0 = Spec64::complex_normal(4, 3, &mut r);
    let y = Spec64::complex_normal(4, 3, &mut r);
    let oracle = GaussianPosterior::new(x0.clone(), vec![0.0; 12], p).unwrap();
    let c = EnrollmentClue::new(y.clone()).unwrap();
    for t in [0.03, 0.2, 0.6, 0.99] {
        assert!(score_loss_interior(&oracle, &x0, &y, &c, t, &mut r).unwrap() < 1e-20);
    }
}
