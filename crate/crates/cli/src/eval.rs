//! Per-example SI-SDR metrics over a test set and their text/CSV reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use tse_diffusion::corpus::{Corpus, MixtureExample};
use tse_diffusion::models::EnrollmentClue;
use tse_diffusion::rng::split_seed;
use tse_diffusion::sampling::SamplerConfig;
use tse_diffusion::signal::{istft, si_sdr, StftConfig, Waveform};
use tse_diffusion::tensor::SpecTensor;

use crate::config::ModelChoice;
use crate::error::{CliError, CliResult};
use crate::inference::Extractor;

/// Stream offset separating clue-swap sampler seeds from the regular ones.
const SWAP_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: usize,
    pub target_id: usize,
    pub interferer_id: usize,
    /// SI-SDR of the unprocessed mixture against the target.
    pub mixture_si_sdr: f64,
    /// SI-SDRi of the headline estimate.
    pub estimate_si_sdri: f64,
    /// Mean SI-SDRi over the individual samples.
    pub per_sample_si_sdri: Option<f64>,
    pub ensemble_si_sdri: Option<f64>,
    pub internal_si_sdri: Option<f64>,
    /// With the interferer's enrollment, the estimate is closer to the interferer.
    pub clue_swap_success: Option<bool>,
}

/// Column means; each equals the mean of the corresponding row values.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mixture_si_sdr: f64,
    pub estimate_si_sdri: f64,
    pub per_sample_si_sdri: Option<f64>,
    pub ensemble_si_sdri: Option<f64>,
    pub internal_si_sdri: Option<f64>,
    pub clue_swap_rate: Option<f64>,
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(rows: &[EvalRow]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    Aggregate {
        count: rows.len(),
        mixture_si_sdr: rows.iter().map(|r| r.mixture_si_sdr).sum::<f64>() / n,
        estimate_si_sdri: rows.iter().map(|r| r.estimate_si_sdri).sum::<f64>() / n,
        per_sample_si_sdri: mean_of(rows.iter().map(|r| r.per_sample_si_sdri)),
        ensemble_si_sdri: mean_of(rows.iter().map(|r| r.ensemble_si_sdri)),
        internal_si_sdri: mean_of(rows.iter().map(|r| r.internal_si_sdri)),
        clue_swap_rate: mean_of(rows.iter().map(|r| r.clue_swap_success.map(|b| if b { 1.0 } else { 0.0 }))),
    }
}

fn wave(s: &SpecTensor<f64>, stft: &StftConfig, like: &Waveform) -> CliResult<Waveform> {
    Ok(istft(s, stft, like.len())?)
}

fn improvement(est: &SpecTensor<f64>, ex: &MixtureExample, stft: &StftConfig, mix: f64) -> CliResult<f64> {
    Ok(si_sdr(&ex.target_wave, &wave(est, stft, &ex.target_wave)?)? - mix)
}

/// Enrollment of `speaker` taken from another mixture of the corpus.
pub fn enrollment_of(corpus: &Corpus, speaker: usize, exclude: usize) -> CliResult<&EnrollmentClue<f64>> {
    corpus
        .test
        .iter()
        .filter(|e| e.id != exclude)
        .chain(corpus.train.iter())
        .find(|e| e.target_id == speaker)
        .map(|e| &e.c)
        .ok_or_else(|| CliError::Config(format!("no enrollment for speaker {speaker}")))
}

/// Sampler seeds derive from `(cfg.seed, example id)`, so rows do not depend on
/// evaluation order or thread count.
pub fn evaluate_example(
    ex: &MixtureExample,
    corpus: &Corpus,
    model: &Extractor,
    cfg: &SamplerConfig,
    stft: &StftConfig,
    clue_swap: bool,
) -> CliResult<EvalRow> {
    let mix = si_sdr(&ex.target_wave, &ex.mixture_wave)?;
    let local = SamplerConfig {
        seed: split_seed(cfg.seed, ex.id as u64),
        ..cfg.clone()
    };
    let inf = model.infer(&ex.y, &ex.c, &local)?;
    let per_sample = if inf.samples.is_empty() {
        None
    } else {
        let mut acc = 0.0;
        for s in &inf.samples {
            acc += improvement(s, ex, stft, mix)?;
        }
        Some(acc / inf.samples.len() as f64)
    };
    let ensemble = inf.ensemble.as_ref().map(|s| improvement(s, ex, stft, mix)).transpose()?;
    let internal = inf.internal.as_ref().map(|s| improvement(s, ex, stft, mix)).transpose()?;
    let swap = if clue_swap {
        let c = enrollment_of(corpus, ex.interferer_id, ex.id)?;
        let swapped = SamplerConfig {
            seed: split_seed(cfg.seed, SWAP_STREAM + ex.id as u64),
            ..cfg.clone()
        };
        let est = wave(&model.infer(&ex.y, c, &swapped)?.estimate, stft, &ex.target_wave)?;
        Some(si_sdr(&ex.interferer_wave, &est)? > si_sdr(&ex.target_wave, &est)?)
    } else {
        None
    };
    Ok(EvalRow {
        id: ex.id,
        target_id: ex.target_id,
        interferer_id: ex.interferer_id,
        mixture_si_sdr: mix,
        estimate_si_sdri: if model.choice == ModelChoice::Passthrough {
            si_sdr(&ex.target_wave, &ex.mixture_wave)? - mix
        } else {
            improvement(&inf.estimate, ex, stft, mix)?
        },
        per_sample_si_sdri: per_sample,
        ensemble_si_sdri: ensemble,
        internal_si_sdri: internal,
        clue_swap_success: swap,
    })
}

/// Evaluates the first `limit` test mixtures (all when `limit` is 0).
pub fn evaluate(
    corpus: &Corpus,
    model: &Extractor,
    cfg: &SamplerConfig,
    stft: &StftConfig,
    limit: usize,
    clue_swap: bool,
) -> CliResult<Vec<EvalRow>> {
    let n = if limit == 0 { corpus.test.len() } else { limit.min(corpus.test.len()) };
    corpus.test[..n]
        .par_iter()
        .map(|ex| evaluate_example(ex, corpus, model, cfg, stft, clue_swap))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

pub const CSV_HEADER: &str = "id,target,interferer,mixture_si_sdr,estimate_si_sdri,per_sample_si_sdri,ensemble_si_sdri,internal_si_sdri,clue_swap_success";

/// Per-example rows at full precision followed by a `mean` row.
pub fn metrics_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.id,
            r.target_id,
            r.interferer_id,
            r.mixture_si_sdr,
            r.estimate_si_sdri,
            opt(r.per_sample_si_sdri),
            opt(r.ensemble_si_sdri),
            opt(r.internal_si_sdri),
            r.clue_swap_success.map(|b| b.to_string()).unwrap_or_default()
        );
    }
    let a = aggregate(rows);
    let _ = writeln!(
        s,
        "mean,,,{},{},{},{},{},{}",
        a.mixture_si_sdr,
        a.estimate_si_sdri,
        opt(a.per_sample_si_sdri),
        opt(a.ensemble_si_sdri),
        opt(a.internal_si_sdri),
        opt(a.clue_swap_rate)
    );
    s
}

/// Per-example mixture SI-SDR against per-sample and ensemble SI-SDRi, for scatter plots.
pub fn scatter_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("id,mixture_si_sdr,per_sample_si_sdri,ensemble_si_sdri,estimate_si_sdri\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.id,
            r.mixture_si_sdr,
            opt(r.per_sample_si_sdri),
            opt(r.ensemble_si_sdri),
            r.estimate_si_sdri
        );
    }
    s
}

/// Human-readable table with the aggregate row last.
pub fn metrics_text(rows: &[EvalRow], title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "{:>5} {:>4} {:>4} {:>9} {:>9} {:>10} {:>9} {:>9} {:>5}",
        "id", "tgt", "int", "mix[dB]", "est[dB]", "sample[dB]", "ens[dB]", "int[dB]", "swap"
    );
    let swap = |b: Option<bool>| match b {
        Some(true) => "yes".to_string(),
        Some(false) => "no".to_string(),
        None => "-".to_string(),
    };
    for r in rows {
        let _ = writeln!(
            s,
            "{:>5} {:>4} {:>4} {:>9.2} {:>9.2} {:>10} {:>9} {:>9} {:>5}",
            r.id,
            r.target_id,
            r.interferer_id,
            r.mixture_si_sdr,
            r.estimate_si_sdri,
            opt_fixed(r.per_sample_si_sdri),
            opt_fixed(r.ensemble_si_sdri),
            opt_fixed(r.internal_si_sdri),
            swap(r.clue_swap_success)
        );
    }
    let a = aggregate(rows);
    let _ = writeln!(
        s,
        "{:>5} {:>4} {:>4} {:>9.2} {:>9.2} {:>10} {:>9} {:>9} {:>5}",
        "mean",
        "",
        "",
        a.mixture_si_sdr,
        a.estimate_si_sdri,
        opt_fixed(a.per_sample_si_sdri),
        opt_fixed(a.ensemble_si_sdri),
        opt_fixed(a.internal_si_sdri),
        a.clue_swap_rate.map(|v| format!("{:.0}%", 100.0 * v)).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(s, "examples: {}", a.count);
    s
}

pub fn write_reports(dir: &Path, rows: &[EvalRow], title: &str) -> CliResult<()> {
    for (name, body) in [
        ("metrics.txt", metrics_text(rows, title)),
        ("metrics.csv", metrics_csv(rows)),
        ("scatter.csv", scatter_csv(rows)),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, est: f64, sample: Option<f64>, swap: Option<bool>) -> EvalRow {
        EvalRow {
            id,
            target_id: 0,
            interferer_id: 1,
            mixture_si_sdr: 0.5 * id as f64,
            estimate_si_sdri: est,
            per_sample_si_sdri: sample,
            ensemble_si_sdri: None,
            internal_si_sdri: None,
            clue_swap_success: swap,
        }
    }

    #[test]
    fn aggregate_is_row_mean() {
        let rows = vec![row(0, 1.0, Some(2.0), Some(true)), row(1, 3.0, Some(0.0), Some(false))];
        let a = aggregate(&rows);
        assert_eq!(a.estimate_si_sdri, 2.0);
        assert_eq!(a.per_sample_si_sdri, Some(1.0));
        assert_eq!(a.ensemble_si_sdri, None);
        assert_eq!(a.clue_swap_rate, Some(0.5));
        assert_eq!(a.mixture_si_sdr, 0.25);
    }

    #[test]
    fn csv_has_empty_columns_for_missing_values() {
        let csv = metrics_csv(&[row(3, 1.5, None, None)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "3,0,1,1.5,1.5,,,,");
        assert!(lines[2].starts_with("mean,,,1.5,1.5,"));
    }

    #[test]
    fn text_marks_missing_columns() {
        let t = metrics_text(&[row(0, 1.0, None, None)], "demo");
        assert!(t.starts_with("demo\n"));
        assert!(t.contains("examples: 1"));
    }
}
