//! One extraction call for any model choice, at the configured precision.

use tse_diffusion::models::{EnrollmentClue, ModelKind, TargetExtractor, TseModel};
use tse_diffusion::sampling::{extract_ensemble, SampleTrace, SamplerConfig};
use tse_diffusion::scalar::Real;
use tse_diffusion::tensor::SpecTensor;

use crate::config::{ModelChoice, Precision};
use crate::error::{CliError, CliResult};

/// Everything one extraction produces, in 64-bit.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Individual reverse-run outputs (generative models only).
    pub samples: Vec<SpecTensor<f64>>,
    /// Combined estimate, present only for more than one sample.
    pub ensemble: Option<SpecTensor<f64>>,
    /// Discriminative estimate (internal branch of the multi-task model, or the discriminative model itself).
    pub internal: Option<SpecTensor<f64>>,
    /// The headline output: ensemble, single sample, direct estimate or mixture.
    pub estimate: SpecTensor<f64>,
    pub traces: Vec<SampleTrace<f64>>,
}

/// A model choice bound to its weights.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub choice: ModelChoice,
    pub precision: Precision,
    model64: Option<TseModel<f64>>,
    model32: Option<TseModel<f32>>,
}

impl Extractor {
    pub fn passthrough() -> Self {
        Self {
            choice: ModelChoice::Passthrough,
            precision: Precision::F64,
            model64: None,
            model32: None,
        }
    }

    pub fn new(model: TseModel<f64>, precision: Precision) -> Self {
        Self {
            choice: ModelChoice::from_kind(model.kind),
            precision,
            model32: (precision == Precision::F32).then(|| model.cast()),
            model64: Some(model),
        }
    }

    pub fn model(&self) -> Option<&TseModel<f64>> {
        self.model64.as_ref()
    }

    pub fn infer(&self, y: &SpecTensor<f64>, c: &EnrollmentClue<f64>, cfg: &SamplerConfig) -> CliResult<Inference> {
        match (&self.model64, self.precision) {
            (None, _) => Ok(Inference {
                samples: Vec::new(),
                ensemble: None,
                internal: None,
                estimate: y.clone(),
                traces: Vec::new(),
            }),
            (Some(m), Precision::F64) => infer_with(m, y, c, cfg),
            (Some(_), Precision::F32) => {
                let m = self.model32.as_ref().expect("built with the f32 copy");
                infer_with(m, &y.cast(), &c.cast(), cfg)
            }
        }
    }
}

fn infer_with<T: Real>(
    m: &TseModel<T>,
    y: &SpecTensor<T>,
    c: &EnrollmentClue<T>,
    cfg: &SamplerConfig,
) -> CliResult<Inference> {
    if m.kind == ModelKind::Tse {
        let d = m.extract(y, c)?.cast::<f64>();
        return Ok(Inference {
            samples: Vec::new(),
            ensemble: None,
            internal: Some(d.clone()),
            estimate: d,
            traces: Vec::new(),
        });
    }
    let internal = match m.kind {
        ModelKind::DiffTseMt => Some(m.extract(y, c)?.cast::<f64>()),
        _ => None,
    };
    let res = extract_ensemble(m, y, c, cfg)?;
    let samples: Vec<SpecTensor<f64>> = res.traces.iter().map(|t| t.final_state.cast()).collect();
    let ensemble = (samples.len() > 1).then(|| res.combined.cast::<f64>());
    let estimate = ensemble.clone().unwrap_or_else(|| samples[0].clone());
    let traces = if cfg.keep_trace {
        res.traces
            .iter()
            .map(|t| SampleTrace {
                states: t.states.iter().map(|(s, x)| (s.as_f64(), x.cast())).collect(),
                final_state: t.final_state.cast(),
                seed: t.seed,
            })
            .collect()
    } else {
        Vec::new()
    };
    if !estimate.is_finite() {
        return Err(CliError::Engine(tse_diffusion::Error::NonFinite("extraction".into())));
    }
    Ok(Inference {
        samples,
        ensemble,
        internal,
        estimate,
        traces,
    })
}
