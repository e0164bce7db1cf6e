//! Clue-conditioned extraction and score networks plus an analytic Gaussian oracle.
//!
//! Network variants:
//!
//! * [`ModelKind::Tse`]: discriminative extractor `x_hat = M (.) y` from `(y, c)`.
//! * [`ModelKind::DiffTse`]: score network on `[x_t, y]` with clue fusion.
//! * [`ModelKind::DiffTseMt`]: shared clue encoder, an internal discriminative
//!   branch whose estimate is fed (with `x_t` and `y`) to the score head.
//!
//! Score heads predict a clean-data estimate through fixed preconditioning,
//! `x_hat = c_skip (x_t - (1 - e) y) / e + c_out N` with `e = e^{-gamma t}`, and
//! return the implied score `-(x_t - e x_hat - (1 - e) y) / sigma(t)^2`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::layers::{Backbone, BackboneSpec, ClueEncoder, TimeEmbedding};
use crate::net::{Graph, Mat, NodeId, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Real;
use crate::sde::SdeParams;
use crate::tensor::SpecTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    pub freqs: usize,
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    /// Per-entry power assumed for clean spectra by the preconditioning.
    pub data_var: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            freqs: 33,
            width: 64,
            blocks: 4,
            embed_dim: 16,
            time_dim: 16,
            data_var: 1.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freqs == 0 || self.width == 0 || self.embed_dim == 0 {
            return Err(Error::Config("freqs, width and embed_dim must be positive".into()));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be an even number >= 2".into()));
        }
        if !(self.data_var > 0.0) {
            return Err(Error::Config("data_var must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Tse,
    DiffTse,
    DiffTseMt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tse => "tse",
            ModelKind::DiffTse => "diff-tse",
            ModelKind::DiffTseMt => "diff-tse-mt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tse" => Ok(ModelKind::Tse),
            "diff-tse" => Ok(ModelKind::DiffTse),
            "diff-tse-mt" => Ok(ModelKind::DiffTseMt),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn is_generative(self) -> bool {
        self != ModelKind::Tse
    }

    pub fn has_direct_branch(self) -> bool {
        self != ModelKind::DiffTse
    }
}

/// Spectrogram of an enrollment utterance; its frame count may differ from the mixture's.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentClue<T> {
    spec: SpecTensor<T>,
}

impl<T: Real> EnrollmentClue<T> {
    pub fn new(spec: SpecTensor<T>) -> Result<Self> {
        if spec.frames() == 0 || spec.freqs() == 0 {
            return Err(Error::Empty("enrollment has no frames"));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SpecTensor<T> {
        &self.spec
    }

    pub fn cast<U: Real>(&self) -> EnrollmentClue<U> {
        EnrollmentClue {
            spec: self.spec.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClueEmbedding<T> {
    pub values: Vec<T>,
}

impl<T: Real> ClueEmbedding<T> {
    pub fn cosine(&self, other: &Self) -> T {
        let dot: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        let na: T = self.values.iter().map(|&a| a * a).sum();
        let nb: T = other.values.iter().map(|&a| a * a).sum();
        dot / (na.sqrt() * nb.sqrt()).max(T::min_positive_value())
    }
}

/// Interface of a conditional score `s(x_t, y, c, t)`.
///
/// `condition` caches everything that depends only on `(y, c)` so that a
/// sampler evaluating many `(x_t, t)` pairs does the clue work once.
pub trait ScoreModel<T: Real>: Sync {
    type Context: Sync;

    fn sde(&self) -> &SdeParams<T>;

    fn condition(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<Self::Context>;

    fn score(&self, ctx: &Self::Context, xt: &SpecTensor<T>, t: T) -> Result<SpecTensor<T>>;

    fn score_once(&self, xt: &SpecTensor<T>, y: &SpecTensor<T>, c: &EnrollmentClue<T>, t: T) -> Result<SpecTensor<T>> {
        let ctx = self.condition(y, c)?;
        self.score(&ctx, xt, t)
    }
}

/// Interface of a single-estimate extractor `x_hat0 = TSE(y, c)`.
pub trait TargetExtractor<T: Real> {
    fn extract(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<SpecTensor<T>>;
}

/// Returns the mixture unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl<T: Real> TargetExtractor<T> for Passthrough {
    fn extract(&self, y: &SpecTensor<T>, _c: &EnrollmentClue<T>) -> Result<SpecTensor<T>> {
        Ok(y.clone())
    }
}

/// Score that is identically zero; the baseline of the score objective.
#[derive(Clone, Copy, Debug)]
pub struct ZeroScore<T> {
    pub sde: SdeParams<T>,
}

impl<T: Real> ZeroScore<T> {
    pub fn new(sde: SdeParams<T>) -> Self {
        Self { sde }
    }
}

impl<T: Real> ScoreModel<T> for ZeroScore<T> {
    type Context = ();

    fn sde(&self) -> &SdeParams<T> {
        &self.sde
    }

    fn condition(&self, _y: &SpecTensor<T>, _c: &EnrollmentClue<T>) -> Result<()> {
        Ok(())
    }

    fn score(&self, _ctx: &(), xt: &SpecTensor<T>, _t: T) -> Result<SpecTensor<T>> {
        Ok(SpecTensor::zeros(xt.freqs(), xt.frames()))
    }
}

/// Scalar coefficients of the data-estimate parameterization at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precond<T> {
    pub decay: T,
    pub var: T,
    pub c_skip: T,
    pub c_out: T,
}

impl<T: Real> Precond<T> {
    pub fn new(sde: &SdeParams<T>, t: T, data_var: T) -> Result<Self> {
        sde.check_time(t)?;
        let var = sde.sigma_sq(t);
        if !(var > T::zero()) {
            return Err(Error::Singular);
        }
        let decay = sde.decay(t);
        let se2 = var / (decay * decay);
        Ok(Self {
            decay,
            var,
            c_skip: data_var / (data_var + se2),
            c_out: (data_var * se2 / (data_var + se2)).sqrt(),
        })
    }

    /// `x_hat = c_skip (x_t - (1 - e) y) / e + c_out n`, elementwise on real views.
    pub fn estimate(&self, xt: T, y: T, n: T) -> T {
        self.c_skip * (xt - (T::one() - self.decay) * y) / self.decay + self.c_out * n
    }

    pub fn score(&self, xt: T, y: T, x_hat: T) -> T {
        -(xt - self.decay * x_hat - (T::one() - self.decay) * y) / self.var
    }

    /// `d score / d n`.
    pub fn score_gain(&self) -> T {
        self.decay * self.c_out / self.var
    }
}

/// Values cached by [`TseModel::condition`].
#[derive(Clone, Debug)]
pub struct NetContext<T> {
    pub y: SpecTensor<T>,
    y_rows: Mat<T>,
    embedding: Mat<T>,
    direct_rows: Option<Mat<T>>,
}

impl<T: Real> NetContext<T> {
    pub fn embedding(&self) -> ClueEmbedding<T> {
        ClueEmbedding {
            values: self.embedding.data.clone(),
        }
    }

    /// Internal discriminative estimate (multi-task and discriminative models).
    pub fn direct(&self) -> Option<SpecTensor<T>> {
        self.direct_rows
            .as_ref()
            .map(|m| SpecTensor::from_rows(self.y.freqs(), self.y.frames(), &m.data).expect("rows match mixture"))
    }
}

/// Clue encoder plus optional discriminative branch and score head.
#[derive(Clone, Debug)]
pub struct TseModel<T: Real> {
    pub kind: ModelKind,
    pub cfg: NetConfig,
    pub sde: SdeParams<T>,
    pub store: ParamStore<T>,
    pub time_embedding: TimeEmbedding,
    clue: ClueEncoder,
    direct: Option<Backbone>,
    head: Option<Backbone>,
}

pub type TseExtractor<T> = TseModel<T>;

pub fn spec_to_mat<T: Real>(s: &SpecTensor<T>) -> Mat<T> {
    Mat {
        rows: s.frames(),
        cols: 2 * s.freqs(),
        data: s.to_rows(),
    }
}

impl<T: Real> TseModel<T> {
    pub fn new(kind: ModelKind, cfg: NetConfig, sde: SdeParams<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        sde.validate()?;
        let mut rng: Rng = rng::seeded(seed);
        let mut store = ParamStore::new();
        let clue = ClueEncoder::new(&mut store, cfg.freqs, cfg.width, cfg.embed_dim, &mut rng);
        let direct = kind.has_direct_branch().then(|| {
            let spec = BackboneSpec {
                freqs: cfg.freqs,
                width: cfg.width,
                blocks: cfg.blocks,
                n_in: 1,
                n_out: 1,
                time_dim: None,
                embed_dim: Some(cfg.embed_dim),
            };
            Backbone::new(&mut store, "direct", spec, &mut rng)
        });
        let head = kind.is_generative().then(|| {
            let n = if kind == ModelKind::DiffTseMt { 3 } else { 2 };
            let spec = BackboneSpec {
                freqs: cfg.freqs,
                width: cfg.width,
                blocks: cfg.blocks,
                n_in: n,
                n_out: n,
                time_dim: Some(cfg.time_dim),
                embed_dim: Some(cfg.embed_dim),
            };
            Backbone::new(&mut store, "head", spec, &mut rng)
        });
        if kind == ModelKind::DiffTseMt {
            // start the head as a pass-through of the internal estimate
            let bias = head.as_ref().and_then(|h| h.output.b).expect("head output bias");
            store.get_mut(bias).value.data[..cfg.freqs].iter_mut().for_each(|v| *v = T::one());
        }
        Ok(Self {
            kind,
            cfg,
            sde,
            store,
            time_embedding: TimeEmbedding::new(cfg.time_dim),
            clue,
            direct,
            head,
        })
    }

    pub fn cast<U: Real>(&self) -> TseModel<U> {
        TseModel {
            kind: self.kind,
            cfg: self.cfg,
            sde: self.sde.cast(),
            store: self.store.cast(),
            time_embedding: self.time_embedding,
            clue: self.clue.clone(),
            direct: self.direct.clone(),
            head: self.head.clone(),
        }
    }

    /// Names of the parameters belonging to the score head (absent for `Tse`).
    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    pub fn is_direct_param(name: &str) -> bool {
        name.starts_with("direct.")
    }

    fn check_spec(&self, s: &SpecTensor<T>, what: &str) -> Result<()> {
        if s.freqs() != self.cfg.freqs {
            return Err(Error::Shape(format!(
                "{what} has {} bins, model expects {}",
                s.freqs(),
                self.cfg.freqs
            )));
        }
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("{what} has non-finite entries")));
        }
        Ok(())
    }

    /// Clue embedding node (`1 x E`) from enrollment rows.
    pub fn embed_node(&self, g: &mut Graph<'_, T>, clue_rows: NodeId) -> Result<NodeId> {
        self.clue.forward(g, clue_rows)
    }

    /// Internal discriminative estimate `M (.) y` as spectral rows.
    pub fn direct_node(&self, g: &mut Graph<'_, T>, y_rows: NodeId, emb: NodeId) -> Result<NodeId> {
        let net = self
            .direct
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no discriminative branch", self.kind.name())))?;
        let mask = net.forward(g, &[y_rows], Some(emb), None)?;
        g.cmul(mask, y_rows)
    }

    /// Combined mask output `N` of the score head as spectral rows.
    pub fn head_node(
        &self,
        g: &mut Graph<'_, T>,
        xt_rows: NodeId,
        y_rows: NodeId,
        direct: Option<NodeId>,
        emb: NodeId,
        t: T,
    ) -> Result<NodeId> {
        let net = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no score head", self.kind.name())))?;
        let temb = g.input(self.time_embedding.embed(t));
        let bases: Vec<NodeId> = match (self.kind, direct) {
            (ModelKind::DiffTseMt, Some(d)) => vec![d, xt_rows, y_rows],
            (ModelKind::DiffTseMt, None) => {
                return Err(Error::Config("multi-task head needs the internal estimate".into()))
            }
            _ => vec![y_rows, xt_rows],
        };
        let inputs: Vec<NodeId> = match self.kind {
            ModelKind::DiffTseMt => vec![xt_rows, bases[0], y_rows],
            _ => vec![xt_rows, y_rows],
        };
        let out = net.forward(g, &inputs, Some(emb), Some(temb))?;
        let masks = net.masks(g, out)?;
        let mut acc = None;
        for (m, b) in masks.into_iter().zip(bases) {
            let term = g.cmul(m, b)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        Ok(acc.expect("at least one mask"))
    }

    pub fn precond(&self, t: T) -> Result<Precond<T>> {
        Precond::new(&self.sde, t, T::lit(self.cfg.data_var))
    }

    pub fn clue_encode(&self, c: &EnrollmentClue<T>) -> Result<ClueEmbedding<T>> {
        self.check_spec(c.spec(), "enrollment")?;
        let mut g = Graph::new(&self.store);
        let rows = g.input(spec_to_mat(c.spec()));
        let e = self.embed_node(&mut g, rows)?;
        Ok(ClueEmbedding {
            values: g.value(e).data.clone(),
        })
    }

    pub fn condition_net(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<NetContext<T>> {
        self.check_spec(y, "mixture")?;
        self.check_spec(c.spec(), "enrollment")?;
        let mut g = Graph::new(&self.store);
        let y_rows = spec_to_mat(y);
        let yn = g.input(y_rows.clone());
        let cn = g.input(spec_to_mat(c.spec()));
        let e = self.embed_node(&mut g, cn)?;
        let direct_rows = match self.direct {
            Some(_) => {
                let d = self.direct_node(&mut g, yn, e)?;
                Some(g.value(d).clone())
            }
            None => None,
        };
        Ok(NetContext {
            y: y.clone(),
            y_rows,
            embedding: g.value(e).clone(),
            direct_rows,
        })
    }

    /// Clean-data estimate implied by the score head at `(x_t, t)`.
    pub fn denoise(&self, ctx: &NetContext<T>, xt: &SpecTensor<T>, t: T) -> Result<SpecTensor<T>> {
        xt.check_same_shape(&ctx.y, "denoise")?;
        let pc = self.precond(t)?;
        let n = self.head_rows(ctx, xt, t)?;
        let (yv, xv) = (ctx.y.to_rows(), xt.to_rows());
        let rows: Vec<T> = (0..n.len()).map(|i| pc.estimate(xv[i], yv[i], n[i])).collect();
        SpecTensor::from_rows(xt.freqs(), xt.frames(), &rows)
    }

    fn head_rows(&self, ctx: &NetContext<T>, xt: &SpecTensor<T>, t: T) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.store);
        let xn = g.input(spec_to_mat(xt));
        let yn = g.input(ctx.y_rows.clone());
        let en = g.input(ctx.embedding.clone());
        let dn = ctx.direct_rows.as_ref().map(|d| g.input(d.clone()));
        let n = self.head_node(&mut g, xn, yn, dn, en, t)?;
        Ok(g.value(n).data.clone())
    }

    /// Score together with the internal estimate, for the multi-task model.
    pub fn score_with_internal(
        &self,
        xt: &SpecTensor<T>,
        y: &SpecTensor<T>,
        c: &EnrollmentClue<T>,
        t: T,
    ) -> Result<(SpecTensor<T>, SpecTensor<T>)> {
        let ctx = self.condition_net(y, c)?;
        let internal = ctx
            .direct()
            .ok_or_else(|| Error::Config(format!("{} has no internal estimate", self.kind.name())))?;
        Ok((self.score(&ctx, xt, t)?, internal))
    }

    /// Plain-text topology descriptor; [`TseModel::from_descriptor`] inverts it.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "kind = {}\nfreqs = {}\nwidth = {}\nblocks = {}\nembed_dim = {}\ntime_dim = {}\ndata_var = {}\ngamma = {}\nsigma0 = {}\nsigma1 = {}\nt_max = {}\n",
            self.kind.name(),
            self.cfg.freqs,
            self.cfg.width,
            self.cfg.blocks,
            self.cfg.embed_dim,
            self.cfg.time_dim,
            self.cfg.data_var,
            self.sde.gamma.as_f64(),
            self.sde.sigma0.as_f64(),
            self.sde.sigma1.as_f64(),
            self.sde.t_max.as_f64(),
        );
        s.push_str(&format!("# clue: frames x {} -> {} -> {} (mean over frames)\n", 3 * self.cfg.freqs, self.cfg.width, self.cfg.embed_dim));
        for (name, b) in [("direct", &self.direct), ("head", &self.head)] {
            if let Some(b) = b {
                s.push_str(&format!("# {}", b.describe(name)));
            }
        }
        s.push_str(&format!("# parameters: {} tensors, {} values\n", self.store.len(), self.store.num_values()));
        s
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("bad topology line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> { kv.get(k).ok_or_else(|| Error::Corrupt(format!("topology lacks {k}"))) };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Corrupt(format!("bad value for {k}"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Corrupt(format!("bad value for {k}"))) };
        let kind = ModelKind::parse(get("kind")?)?;
        let cfg = NetConfig {
            freqs: int("freqs")?,
            width: int("width")?,
            blocks: int("blocks")?,
            embed_dim: int("embed_dim")?,
            time_dim: int("time_dim")?,
            data_var: num("data_var")?,
        };
        let sde = SdeParams::new(
            T::lit(num("gamma")?),
            T::lit(num("sigma0")?),
            T::lit(num("sigma1")?),
            T::lit(num("t_max")?),
        )?;
        Self::new(kind, cfg, sde, 0)
    }

    /// Writes `<stem>.topology` and `<stem>.params`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.topology")), self.describe())?;
        let f = std::fs::File::create(dir.join(format!("{stem}.params")))?;
        let mut w = std::io::BufWriter::new(f);
        self.store.write_checkpoint(&mut w)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.topology")))?;
        let mut model = Self::from_descriptor(&text)?;
        let f = std::fs::File::open(dir.join(format!("{stem}.params")))?;
        let store = ParamStore::read_checkpoint(std::io::BufReader::new(f))?;
        model
            .store
            .copy_values_from(&store)
            .map_err(|e| Error::Corrupt(format!("checkpoint does not match topology: {e}")))?;
        Ok(model)
    }
}

impl<T: Real> ScoreModel<T> for TseModel<T> {
    type Context = NetContext<T>;

    fn sde(&self) -> &SdeParams<T> {
        &self.sde
    }

    fn condition(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<NetContext<T>> {
        self.condition_net(y, c)
    }

    fn score(&self, ctx: &NetContext<T>, xt: &SpecTensor<T>, t: T) -> Result<SpecTensor<T>> {
        xt.check_same_shape(&ctx.y, "score")?;
        let pc = self.precond(t)?;
        let n = self.head_rows(ctx, xt, t)?;
        let (yv, xv) = (ctx.y.to_rows(), xt.to_rows());
        let rows: Vec<T> = (0..n.len())
            .map(|i| pc.score(xv[i], yv[i], pc.estimate(xv[i], yv[i], n[i])))
            .collect();
        let s = SpecTensor::from_rows(xt.freqs(), xt.frames(), &rows)?;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score at t = {t}")));
        }
        Ok(s)
    }
}

impl<T: Real> TargetExtractor<T> for TseModel<T> {
    fn extract(&self, y: &SpecTensor<T>, c: &EnrollmentClue<T>) -> Result<SpecTensor<T>> {
        self.condition_net(y, c)?
            .direct()
            .ok_or_else(|| Error::Config("diff-tse extracts through the sampler".into()))
    }
}

/// Exact score when `p(x0 | y, c)` is a diagonal complex Gaussian `N(m, P)`:
/// the marginal at `t` is `N(e m + (1 - e) y, e^2 P + sigma(t)^2)`.
#[derive(Clone, Debug)]
pub struct GaussianPosterior<T> {
    pub mean: SpecTensor<T>,
    /// Complex variance per entry, `P >= 0`.
    pub var: Vec<T>,
    pub sde: SdeParams<T>,
}

impl<T: Real> GaussianPosterior<T> {
    pub fn new(mean: SpecTensor<T>, var: Vec<T>, sde: SdeParams<T>) -> Result<Self> {
        if var.len() != mean.freqs() * mean.frames() {
            return Err(Error::Shape(format!("{} variances for {} entries", var.len(), mean.freqs() * mean.frames())));
        }
        if var.iter().any(|&p| !(p >= T::zero())) {
            return Err(Error::Domain("posterior variances must be nonnegative".into()));
        }
        Ok(Self { mean, var, sde })
    }

    pub fn marginal_mean(&self, y: &SpecTensor<T>, t: T) -> Result<SpecTensor<T>> {
        let d = self.sde.decay(t);
        self.mean.lincomb(d, y, T::one() - d)
    }

    /// Complex variance per entry of the marginal at `t`.
    pub fn marginal_var(&self, t: T) -> Vec<T> {
        let d = self.sde.decay(t);
        let s2 = self.sde.sigma_sq(t);
        self.var.iter().map(|&p| d * d * p + s2).collect()
    }

    /// Draws one sample from `N(m, P)`.
    pub fn sample(&self, rng: &mut Rng) -> SpecTensor<T> {
        let mut out = self.mean.clone();
        let f = self.mean.freqs();
        for l in 0..self.mean.frames() {
            for k in 0..f {
                let (zr, zi) = rng::complex_normal::<T>(rng);
                let s = self.var[k * self.mean.frames() + l].sqrt();
                let (mr, mi) = out.get(k, l);
                out.set(k, l, (mr + s * zr, mi + s * zi));
            }
        }
        out
    }
}

impl<T: Real> ScoreModel<T> for GaussianPosterior<T> {
    type Context = SpecTensor<T>;

    fn sde(&self) -> &SdeParams<T> {
        &self.sde
    }

    fn condition(&self, y: &SpecTensor<T>, _c: &EnrollmentClue<T>) -> Result<SpecTensor<T>> {
        y.check_same_shape(&self.mean, "oracle condition")?;
        Ok(y.clone())
    }

    fn score(&self, y: &SpecTensor<T>, xt: &SpecTensor<T>, t: T) -> Result<SpecTensor<T>> {
        self.sde.check_time(t)?;
        if !(t > T::zero()) {
            return Err(Error::Singular);
        }
        xt.check_same_shape(y, "oracle score")?;
        let mu = self.marginal_mean(y, t)?;
        let var = self.marginal_var(t);
        let frames = xt.frames();
        Ok(SpecTensor::from_fn(xt.freqs(), frames, |k, l| {
            let v = var[k * frames + l];
            let (xr, xi) = xt.get(k, l);
            let (mr, mi) = mu.get(k, l);
            (-(xr - mr) / v, -(xi - mi) / v)
        }))
    }
}
