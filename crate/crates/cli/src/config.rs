//! Unified run configuration: a TOML file of `key = value` lines under section
//! headers, overridden by command-line flags, and echoed in resolved form next
//! to every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tse_diffusion::corpus::CorpusConfig;
use tse_diffusion::models::{ModelKind, NetConfig};
use tse_diffusion::sampling::{CorrectorRule, EnsembleCombine, PredictorNoise, SamplerConfig};
use tse_diffusion::sde::SdeParams;
use tse_diffusion::signal::StftConfig;
use tse_diffusion::training::{LossReduction, LossWeighting, TerminalCorrection, TrainConfig};

use crate::error::{CliError, CliResult};

/// Model selector, including the mixture pass-through baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Tse,
    DiffTse,
    DiffTseMt,
    Passthrough,
}

impl ModelChoice {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "passthrough" => Ok(Self::Passthrough),
            other => Ok(Self::from_kind(ModelKind::parse(other).map_err(|e| CliError::Config(e.to_string()))?)),
        }
    }

    pub fn from_kind(k: ModelKind) -> Self {
        match k {
            ModelKind::Tse => Self::Tse,
            ModelKind::DiffTse => Self::DiffTse,
            ModelKind::DiffTseMt => Self::DiffTseMt,
        }
    }

    pub fn kind(self) -> Option<ModelKind> {
        match self {
            Self::Tse => Some(ModelKind::Tse),
            Self::DiffTse => Some(ModelKind::DiffTse),
            Self::DiffTseMt => Some(ModelKind::DiffTseMt),
            Self::Passthrough => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub model: ModelChoice,
    pub out: PathBuf,
    pub corpus: PathBuf,
    /// Scalar type used at inference.
    pub precision: Precision,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            model: ModelChoice::DiffTse,
            out: PathBuf::from("run"),
            corpus: PathBuf::from("corpus"),
            precision: Precision::F32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub gamma: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub t_max: f64,
}

impl Default for SdeSection {
    fn default() -> Self {
        let p = SdeParams::<f64>::default();
        Self {
            gamma: p.gamma,
            sigma0: p.sigma0,
            sigma1: p.sigma1,
            t_max: p.t_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    SigmaSquared,
    AsWritten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    AsPublished,
    KernelConsistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub delta_t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub t_eps: f64,
    pub weighting: Weighting,
    pub reduction: Reduction,
    pub terminal: Terminal,
    pub snr_cap: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            lr: c.lr,
            delta_t: c.delta_t,
            alpha: c.alpha,
            beta: c.beta,
            ema_decay: c.ema_decay,
            batch_size: c.batch_size,
            steps: c.steps,
            t_eps: c.t_eps,
            weighting: Weighting::SigmaSquared,
            reduction: Reduction::Mean,
            terminal: Terminal::AsPublished,
            snr_cap: c.snr_cap,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            adam_eps: c.adam_eps,
            checkpoint_every: c.checkpoint_every,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corrector {
    KernelStd,
    NormRatio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub n_steps: usize,
    pub corrector_iters: usize,
    pub snr: f64,
    pub ensemble: usize,
    pub t_eps: f64,
    pub corrector_rule: Corrector,
    pub combine: Combine,
    pub final_denoise: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = SamplerConfig::default();
        Self {
            n_steps: c.n_steps,
            corrector_iters: c.corrector_iters,
            snr: c.snr,
            ensemble: c.ensemble,
            t_eps: c.t_eps,
            corrector_rule: Corrector::KernelStd,
            combine: Combine::Mean,
            final_denoise: c.final_denoise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub amp_exponent: f64,
    pub amp_scale: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        let c = StftConfig::default().linear();
        Self {
            window: c.window,
            hop: c.hop,
            sample_rate: c.sample_rate,
            amp_exponent: c.amp_exponent,
            amp_scale: c.amp_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_speakers: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_samples: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    pub min_f0_ratio: f64,
    pub max_harmonics: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    pub f0_jitter: f64,
    pub amp_jitter: f64,
    pub max_onset_s: f64,
    pub fade_s: f64,
    pub tir_db: f64,
    pub max_retries: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            n_speakers: c.n_speakers,
            n_train: c.n_train,
            n_test: c.n_test,
            n_samples: c.n_samples,
            f0_min: c.f0_min,
            f0_max: c.f0_max,
            min_f0_ratio: c.min_f0_ratio,
            max_harmonics: c.max_harmonics,
            amp_min: c.amp_min,
            amp_max: c.amp_max,
            f0_jitter: c.f0_jitter,
            amp_jitter: c.amp_jitter,
            max_onset_s: c.max_onset_s,
            fade_s: c.fade_s,
            tir_db: c.tir_db,
            max_retries: c.max_retries,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub data_var: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = NetConfig::default();
        Self {
            width: c.width,
            blocks: c.blocks,
            embed_dim: c.embed_dim,
            time_dim: c.time_dim,
            data_var: c.data_var,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Evaluate only the first this many test mixtures (0 = all).
    pub examples: usize,
    /// Also extract with the interferer's enrollment.
    pub clue_swap: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub sde: SdeSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub stft: StftSection,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub eval: EvalSection,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub model: Option<ModelChoice>,
    pub ensemble: Option<usize>,
    pub steps: Option<usize>,
    pub train_steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub examples: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.jobs {
            self.run.jobs = v;
        }
        if let Some(v) = o.model {
            self.run.model = v;
        }
        if let Some(v) = o.ensemble {
            self.sampler.ensemble = v;
        }
        if let Some(v) = o.steps {
            self.sampler.n_steps = v;
        }
        if let Some(v) = o.train_steps {
            self.train.steps = v;
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = &o.corpus {
            self.run.corpus = v.clone();
        }
        if let Some(v) = o.examples {
            self.eval.examples = v;
        }
    }

    /// The resolved configuration as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// TOML saved next to outputs. The thread count is reset to its default
    /// because it never changes results.
    pub fn to_saved_toml(&self) -> String {
        let mut c = self.clone();
        c.run.jobs = RunSection::default().jobs;
        c.to_toml()
    }

    /// Checks every section by building the engine-side configurations.
    pub fn validate(&self) -> CliResult<()> {
        let sde = self.sde_params()?;
        self.train_config().validate(&sde).map_err(cfg_err)?;
        self.sampler_config().validate(&sde).map_err(cfg_err)?;
        self.corpus_config().validate().map_err(cfg_err)?;
        self.net_config().validate().map_err(cfg_err)?;
        if self.sampler.t_eps != self.train.t_eps {
            return Err(CliError::Config(format!(
                "sampler.t_eps = {} differs from train.t_eps = {}",
                self.sampler.t_eps, self.train.t_eps
            )));
        }
        Ok(())
    }

    pub fn sde_params(&self) -> CliResult<SdeParams<f64>> {
        let s = &self.sde;
        SdeParams::new(s.gamma, s.sigma0, s.sigma1, s.t_max).map_err(cfg_err)
    }

    pub fn stft_config(&self) -> StftConfig {
        let s = &self.stft;
        StftConfig {
            window: s.window,
            hop: s.hop,
            sample_rate: s.sample_rate,
            amp_exponent: s.amp_exponent,
            amp_scale: s.amp_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.train;
        TrainConfig {
            lr: s.lr,
            delta_t: s.delta_t,
            alpha: s.alpha,
            beta: s.beta,
            ema_decay: s.ema_decay,
            batch_size: s.batch_size,
            steps: s.steps,
            t_eps: s.t_eps,
            weighting: match s.weighting {
                Weighting::SigmaSquared => LossWeighting::SigmaSquared,
                Weighting::AsWritten => LossWeighting::AsWritten,
            },
            reduction: match s.reduction {
                Reduction::Mean => LossReduction::Mean,
                Reduction::Sum => LossReduction::Sum,
            },
            terminal: match s.terminal {
                Terminal::AsPublished => TerminalCorrection::AsPublished,
                Terminal::KernelConsistent => TerminalCorrection::KernelConsistent,
            },
            snr_cap: s.snr_cap,
            adam_beta1: s.adam_beta1,
            adam_beta2: s.adam_beta2,
            adam_eps: s.adam_eps,
            checkpoint_every: s.checkpoint_every,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            n_steps: s.n_steps,
            corrector_iters: s.corrector_iters,
            snr: s.snr,
            ensemble: s.ensemble,
            seed: self.run.seed,
            t_eps: s.t_eps,
            corrector_rule: match s.corrector_rule {
                Corrector::KernelStd => CorrectorRule::KernelStd,
                Corrector::NormRatio => CorrectorRule::NormRatio,
            },
            combine: match s.combine {
                Combine::Mean => EnsembleCombine::Mean,
                Combine::Sum => EnsembleCombine::Sum,
            },
            noise: PredictorNoise::Stochastic,
            final_denoise: s.final_denoise,
            keep_trace: false,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let s = &self.corpus;
        CorpusConfig {
            n_speakers: s.n_speakers,
            n_train: s.n_train,
            n_test: s.n_test,
            n_samples: s.n_samples,
            f0_min: s.f0_min,
            f0_max: s.f0_max,
            min_f0_ratio: s.min_f0_ratio,
            max_harmonics: s.max_harmonics,
            amp_min: s.amp_min,
            amp_max: s.amp_max,
            f0_jitter: s.f0_jitter,
            amp_jitter: s.amp_jitter,
            max_onset_s: s.max_onset_s,
            fade_s: s.fade_s,
            tir_db: s.tir_db,
            max_retries: s.max_retries,
            stft: self.stft_config(),
        }
    }

    pub fn net_config(&self) -> NetConfig {
        let s = &self.model;
        NetConfig {
            freqs: self.stft_config().freqs(),
            width: s.width,
            blocks: s.blocks,
            embed_dim: s.embed_dim,
            time_dim: s.time_dim,
            data_var: s.data_var,
        }
    }
}

fn cfg_err(e: tse_diffusion::Error) -> CliError {
    CliError::Config(e.to_string())
}
