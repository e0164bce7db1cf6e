//! The five subcommands. Each writes the resolved configuration next to its outputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tse_diffusion::corpus::{gen_corpus, read_corpus, write_corpus, Corpus};
use tse_diffusion::models::{EnrollmentClue, TseModel};
use tse_diffusion::sampling::write_trace;
use tse_diffusion::signal::{istft, stft, Waveform};
use tse_diffusion::training::{TrainExample, Trainer};
use tse_diffusion::verify::{run_all, SuiteReport};

use crate::config::{ModelChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::eval::{aggregate, evaluate, write_reports, EvalRow};
use crate::inference::{Extractor, Inference};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_STEM: &str = "model";

fn create_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_file(p: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(p, body).map_err(|e| CliError::io(p, e))
}

/// Writes `config.toml` into `dir`.
pub fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_saved_toml())
}

fn load_corpus(cfg: &RunConfig) -> CliResult<Corpus> {
    let manifest = cfg.run.corpus.join("manifest.txt");
    if !manifest.exists() {
        return Err(CliError::io(
            &manifest,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus not found (run `difftse gen` first)"),
        ));
    }
    Ok(read_corpus(&cfg.run.corpus)?)
}

/// Generates the toy corpus into `run.corpus`.
pub fn cmd_gen(cfg: &RunConfig) -> CliResult<Corpus> {
    cfg.validate()?;
    let corpus = gen_corpus(&cfg.corpus_config(), cfg.run.seed)?;
    create_dir(&cfg.run.corpus)?;
    write_corpus(&corpus, &cfg.run.corpus)?;
    echo_config(&cfg.run.corpus, cfg)?;
    Ok(corpus)
}

/// Directory of the checkpoint written after `step` steps.
pub fn checkpoint_dir(out: &Path, step: usize) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:06}"))
}

/// Trains `run.model` on the corpus; writes the EMA model, periodic
/// checkpoints and a per-step log to `run.out`. Timings go to stderr only so
/// that every file is reproducible.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TseModel<f64>> {
    cfg.validate()?;
    let kind = cfg
        .run
        .model
        .kind()
        .ok_or_else(|| CliError::Config("the pass-through model has nothing to train".into()))?;
    let corpus = load_corpus(cfg)?;
    let examples: Vec<TrainExample> = corpus.train.iter().map(TrainExample::from).collect();
    if examples.is_empty() {
        return Err(CliError::Config("corpus has no training examples".into()));
    }
    let out = &cfg.run.out;
    echo_config(out, cfg)?;
    let model = TseModel::new(kind, cfg.net_config(), cfg.sde_params()?, cfg.run.seed)?;
    let tcfg = cfg.train_config();
    let every = tcfg.checkpoint_every;
    let mut trainer = Trainer::new(model, tcfg, cfg.run.seed)?;
    let log_path = out.join("train.log");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let mut wall = 0u128;
    trainer.run(&examples, |rep, tr| {
        wall += rep.wall_ms;
        let line = rep.log_line();
        let line = line.split(" wall_ms=").next().unwrap_or(&line);
        writeln!(log, "{line}")?;
        if rep.step % 100 == 0 || rep.step == tr.cfg.steps {
            eprintln!("{line} elapsed_s={:.1}", wall as f64 / 1000.0);
        }
        if every > 0 && rep.step % every == 0 {
            let dir = checkpoint_dir(out, rep.step);
            std::fs::create_dir_all(&dir)?;
            tr.ema_model().save(&dir, MODEL_STEM)?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    let ema = trainer.ema_model();
    ema.save(out, MODEL_STEM)?;
    Ok(ema)
}

/// Builds the extractor for `run.model`, loading weights from `checkpoint`
/// for network models. The loaded topology decides the model kind.
pub fn load_extractor(cfg: &mut RunConfig, checkpoint: Option<&Path>) -> CliResult<Extractor> {
    if cfg.run.model == ModelChoice::Passthrough {
        return Ok(Extractor::passthrough());
    }
    let dir = checkpoint.ok_or_else(|| CliError::Config("--checkpoint is required for network models".into()))?;
    let topo = dir.join(format!("{MODEL_STEM}.topology"));
    if !topo.exists() {
        return Err(CliError::io(
            &topo,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no model in checkpoint directory"),
        ));
    }
    let model = TseModel::<f64>::load(dir, MODEL_STEM)?;
    cfg.run.model = ModelChoice::from_kind(model.kind);
    Ok(Extractor::new(model, cfg.run.precision))
}

fn read_spec(path: &Path, cfg: &RunConfig) -> CliResult<(Waveform, tse_diffusion::tensor::SpecTensor<f64>)> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input not found")));
    }
    let w = Waveform::read_wav(path)?;
    let s = cfg.stft_config();
    if w.sample_rate != s.sample_rate {
        return Err(CliError::Config(format!(
            "{} has sample rate {} but stft.sample_rate = {}",
            path.display(),
            w.sample_rate,
            s.sample_rate
        )));
    }
    let spec = stft(&w, &s)?;
    Ok((w, spec))
}

/// Extracts the target from the `input` mixture given the `enroll` utterance.
pub fn cmd_extract(
    cfg: &mut RunConfig,
    checkpoint: Option<&Path>,
    input: &Path,
    enroll: &Path,
    trace: bool,
) -> CliResult<Inference> {
    cfg.validate()?;
    let ex = load_extractor(cfg, checkpoint)?;
    let (mix, y) = read_spec(input, cfg)?;
    let (_, c) = read_spec(enroll, cfg)?;
    let c = EnrollmentClue::new(c)?;
    let mut scfg = cfg.sampler_config();
    scfg.keep_trace = trace;
    let inf = ex.infer(&y, &c, &scfg)?;

    let out = cfg.run.out.clone();
    echo_config(&out, cfg)?;
    let s = cfg.stft_config();
    let n = mix.len();
    let save = |name: &str, x: &tse_diffusion::tensor::SpecTensor<f64>| -> CliResult<()> {
        let mut w = istft(x, &s, n)?;
        w.quantize();
        w.write_wav(&out.join(name))?;
        Ok(())
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "model = {:?}", cfg.run.model);
    let _ = writeln!(summary, "input = {}", input.display());
    let _ = writeln!(summary, "enroll = {}", enroll.display());
    save("estimate.wav", &inf.estimate)?;
    let _ = writeln!(summary, "estimate = estimate.wav");
    if !inf.samples.is_empty() {
        create_dir(&out.join("samples"))?;
        for (j, x) in inf.samples.iter().enumerate() {
            save(&format!("samples/sample_{j:02}.wav"), x)?;
        }
        let _ = writeln!(summary, "samples = {}", inf.samples.len());
    }
    if let Some(e) = &inf.ensemble {
        save("ensemble.wav", e)?;
        let _ = writeln!(summary, "ensemble = ensemble.wav");
    }
    if let Some(d) = &inf.internal {
        save("internal.wav", d)?;
        let _ = writeln!(summary, "internal = internal.wav");
    }
    if trace {
        create_dir(&out.join("traces"))?;
        for (j, t) in inf.traces.iter().enumerate() {
            write_trace(t, &out.join(format!("traces/sample_{j:02}.trace")))?;
        }
        let _ = writeln!(summary, "traces = {}", inf.traces.len());
    }
    write_file(&out.join("extract.txt"), summary)?;
    Ok(inf)
}

/// Evaluates on the corpus test set; writes `metrics.txt`, `metrics.csv` and `scatter.csv`.
pub fn cmd_eval(cfg: &mut RunConfig, checkpoint: Option<&Path>) -> CliResult<Vec<EvalRow>> {
    cfg.validate()?;
    let ex = load_extractor(cfg, checkpoint)?;
    let corpus = load_corpus(cfg)?;
    let rows = evaluate(
        &corpus,
        &ex,
        &cfg.sampler_config(),
        &cfg.stft_config(),
        cfg.eval.examples,
        cfg.eval.clue_swap,
    )?;
    let out = cfg.run.out.clone();
    echo_config(&out, cfg)?;
    let title = format!(
        "model={:?} ensemble={} steps={} precision={:?}",
        cfg.run.model, cfg.sampler.ensemble, cfg.sampler.n_steps, cfg.run.precision
    );
    write_reports(&out, &rows, &title)?;
    let a = aggregate(&rows);
    eprintln!("{title}: mean SI-SDRi {:.2} dB over {} examples", a.estimate_si_sdri, a.count);
    Ok(rows)
}

/// Runs the oracle suites; fails with [`CliError::Verify`] if any suite fails.
pub fn cmd_verify(cfg: &RunConfig, out: Option<&Path>) -> CliResult<Vec<SuiteReport>> {
    cfg.validate()?;
    let reports = run_all(&cfg.sde_params()?, &cfg.sampler_config(), &cfg.stft_config(), cfg.run.seed);
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "{r}");
    }
    eprint!("{text}");
    if let Some(dir) = out {
        echo_config(dir, cfg)?;
        write_file(&dir.join("verify.txt"), &text)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
