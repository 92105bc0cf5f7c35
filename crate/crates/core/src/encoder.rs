//! Frozen dual encoders, similarity, and the softmax classification head.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array4, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PreprocessSpec;
use crate::error::{Error, Result};
use crate::prompt::AssembledPromptBatch;

/// Preprocessed images, laid out `[n, channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Array4<f64>,
}

impl ImageBatch {
    pub fn new(pixels: Array4<f64>) -> Self {
        ImageBatch { pixels }
    }

    pub fn len(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.pixels.dim()
    }

    /// Images at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> ImageBatch {
        ImageBatch::new(self.pixels.select(Axis(0), idx))
    }

    pub fn concat(parts: &[&ImageBatch]) -> Result<ImageBatch> {
        let views: Vec<_> = parts.iter().map(|b| b.pixels.view()).collect();
        ndarray::concatenate(Axis(0), &views)
            .map(ImageBatch::new)
            .map_err(|e| Error::invalid(format!("cannot concatenate image batches: {e}")))
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (i, img) in self.pixels.outer_iter().enumerate() {
            if img.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("image {i} has non-finite pixels")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: Array2<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>, source: EmbeddingSource) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::invalid("embedding matrix has no rows"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingMatrix { data, source })
    }

    pub fn n_items(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Dot,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    pub temperature: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::Dot,
            temperature: 1.0,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SimilarityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SimilarityKind::Dot => "dot",
            SimilarityKind::Cosine => "cosine",
        };
        write!(f, "{kind}(temperature={})", self.temperature)
    }
}

/// One prompt as a sequence of token vectors; the last row is the class token.
pub type TokenSequence = Array2<f64>;

/// A frozen image/text encoder pair with the backward passes needed by
/// prompt learning (gradients flow to inputs, never to parameters).
pub trait DualEncoder: Send + Sync {
    /// Identifier that resolves back to this encoder.
    fn id(&self) -> String;
    fn embed_dim(&self) -> usize;
    /// Width of token vectors, and therefore of learnable context vectors.
    fn ctx_dim(&self) -> usize;
    /// Digest of every encoder parameter.
    fn fingerprint(&self) -> String;
    fn default_similarity(&self) -> SimilarityConfig;
    fn preprocess_spec(&self) -> PreprocessSpec;
    fn token_embedding(&self, token: &str) -> Result<Array1<f64>>;

    fn encode_images(&self, batch: &ImageBatch) -> Result<EmbeddingMatrix>;
    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<EmbeddingMatrix>;

    /// Vector-Jacobian product of `encode_images` at `batch`.
    fn image_backward(&self, batch: &ImageBatch, grad: &Array2<f64>) -> Result<Array4<f64>>;
    /// Vector-Jacobian product of `encode_sequences` at `seqs`, one gradient per sequence.
    fn sequence_backward(&self, seqs: &[TokenSequence], grad: &Array2<f64>)
        -> Result<Vec<Array2<f64>>>;
}

pub fn encode_images(enc: &dyn DualEncoder, batch: &ImageBatch) -> Result<EmbeddingMatrix> {
    enc.encode_images(batch)
}

pub(crate) fn prompt_sequences(
    enc: &dyn DualEncoder,
    prompts: &AssembledPromptBatch,
) -> Result<Vec<TokenSequence>> {
    let ctx = &prompts.context;
    if ctx.ncols() != enc.ctx_dim() {
        return Err(Error::invalid(format!(
            "context dimension {} does not match encoder ctx_dim {}",
            ctx.ncols(),
            enc.ctx_dim()
        )));
    }
    let n_ctx = ctx.nrows();
    prompts
        .class_names
        .iter()
        .map(|name| {
            let tok = enc.token_embedding(name)?;
            let mut seq = Array2::zeros((n_ctx + 1, ctx.ncols()));
            seq.slice_mut(s![..n_ctx, ..]).assign(ctx);
            seq.row_mut(n_ctx).assign(&tok);
            Ok(seq)
        })
        .collect()
}

/// One embedding row per class prompt.
pub fn encode_prompts(
    enc: &dyn DualEncoder,
    prompts: &AssembledPromptBatch,
) -> Result<EmbeddingMatrix> {
    enc.encode_sequences(&prompt_sequences(enc, prompts)?)
}

/// Encode a hand-written prompt such as `"a photo of a fake"`. Words are split
/// on whitespace; the final word is the class token.
pub fn encode_text(enc: &dyn DualEncoder, texts: &[&str]) -> Result<EmbeddingMatrix> {
    let seqs = texts
        .iter()
        .map(|text| {
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.len() < 2 {
                return Err(Error::invalid(format!(
                    "prompt {text:?} needs at least one context word and a class word"
                )));
            }
            let mut seq = Array2::zeros((words.len(), enc.ctx_dim()));
            for (i, w) in words.iter().enumerate() {
                seq.row_mut(i).assign(&enc.token_embedding(w)?);
            }
            Ok(seq)
        })
        .collect::<Result<Vec<_>>>()?;
    enc.encode_sequences(&seqs)
}

/// Raw similarities scaled by temperature, `[n_images × n_prompts]`.
pub fn similarity_logits(
    img: &EmbeddingMatrix,
    prompts: &EmbeddingMatrix,
    cfg: &SimilarityConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    if img.dim() != prompts.dim() {
        return Err(Error::invalid(format!(
            "embedding dims differ: image {} vs prompt {}",
            img.dim(),
            prompts.dim()
        )));
    }
    let tau = cfg.temperature;
    Ok(match cfg.kind {
        SimilarityKind::Dot => img.data.dot(&prompts.data.t()) * tau,
        SimilarityKind::Cosine => {
            let v = normalize_rows(&img.data).0;
            let t = normalize_rows(&prompts.data).0;
            v.dot(&t.t()) * tau
        }
    })
}

fn normalize_rows(m: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = m
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(1e-12))
        .collect::<Array1<f64>>();
    let mut out = m.clone();
    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row /= *n;
    }
    (out, norms)
}

/// Gradients of a scalar loss with respect to both embedding matrices, given
/// its gradient with respect to the logits.
pub fn similarity_backward(
    img: &EmbeddingMatrix,
    prompts: &EmbeddingMatrix,
    cfg: &SimilarityConfig,
    grad_logits: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let tau = cfg.temperature;
    match cfg.kind {
        SimilarityKind::Dot => (
            grad_logits.dot(&prompts.data) * tau,
            grad_logits.t().dot(&img.data) * tau,
        ),
        SimilarityKind::Cosine => {
            let (v, vn) = normalize_rows(&img.data);
            let (t, tn) = normalize_rows(&prompts.data);
            let cos = v.dot(&t.t());
            let g = grad_logits * tau;
            // d cos(v,t)/dv = (t̂ - cos·v̂) / |v|
            let mut gv = g.dot(&t);
            for i in 0..gv.nrows() {
                let c: f64 = g.row(i).dot(&cos.row(i));
                let vi = v.row(i);
                let mut row = gv.row_mut(i);
                row.scaled_add(-c, &vi);
                row /= vn[i];
            }
            let mut gt = g.t().dot(&v);
            for k in 0..gt.nrows() {
                let c: f64 = g.column(k).dot(&cos.column(k));
                let tk = t.row(k);
                let mut row = gt.row_mut(k);
                row.scaled_add(-c, &tk);
                row /= tn[k];
            }
            (gv, gt)
        }
    }
}

pub type ProbabilityMatrix = Array2<f64>;

/// Row-wise softmax of `logits`.
pub fn softmax_rows(logits: &Array2<f64>) -> ProbabilityMatrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Class probabilities `[n_images × K]` from the softmax over similarities.
pub fn class_probabilities(
    img: &EmbeddingMatrix,
    prompts: &EmbeddingMatrix,
    cfg: &SimilarityConfig,
) -> Result<ProbabilityMatrix> {
    if prompts.n_items() < 2 {
        return Err(Error::invalid("need at least two class prompts"));
    }
    Ok(softmax_rows(&similarity_logits(img, prompts, cfg)?))
}

pub(crate) fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn digest_hex(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_f64s(h: &mut Sha256, values: impl IntoIterator<Item = f64>) {
    for v in values {
        h.update(v.to_le_bytes());
    }
}

/// Settings of the built-in toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub ctx_dim: usize,
    /// Side of the average-pooling grid applied before the feature map.
    pub grid: usize,
    /// Length scale of the random Fourier features.
    pub bandwidth: f64,
}

impl ToyConfig {
    pub fn new(seed: u64) -> Self {
        ToyConfig {
            seed,
            embed_dim: 256,
            ctx_dim: 64,
            grid: 1,
            bandwidth: 0.08,
        }
    }

    /// Parse `toy:<seed>` or `toy:<seed>:key=value,...`.
    pub fn parse(id: &str) -> Result<Self> {
        let rest = id
            .strip_prefix("toy:")
            .ok_or_else(|| Error::invalid(format!("not a toy encoder id: {id:?}")))?;
        let (seed, opts) = match rest.split_once(':') {
            Some((s, o)) => (s, Some(o)),
            None => (rest, None),
        };
        let seed = seed
            .parse::<u64>()
            .map_err(|_| Error::invalid(format!("bad toy encoder seed in {id:?}")))?;
        let mut cfg = ToyConfig::new(seed);
        for kv in opts.into_iter().flat_map(|o| o.split(',')).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad toy encoder option {kv:?}")))?;
            let bad = || Error::invalid(format!("bad value for toy encoder option {k}: {v:?}"));
            match k {
                "embed_dim" => cfg.embed_dim = v.parse().map_err(|_| bad())?,
                "ctx_dim" => cfg.ctx_dim = v.parse().map_err(|_| bad())?,
                "grid" => cfg.grid = v.parse().map_err(|_| bad())?,
                "bandwidth" => cfg.bandwidth = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::invalid(format!("unknown toy encoder option {k:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn id(&self) -> String {
        let def = ToyConfig::new(self.seed);
        let mut opts = Vec::new();
        if self.embed_dim != def.embed_dim {
            opts.push(format!("embed_dim={}", self.embed_dim));
        }
        if self.ctx_dim != def.ctx_dim {
            opts.push(format!("ctx_dim={}", self.ctx_dim));
        }
        if self.grid != def.grid {
            opts.push(format!("grid={}", self.grid));
        }
        if self.bandwidth != def.bandwidth {
            opts.push(format!("bandwidth={}", self.bandwidth));
        }
        if opts.is_empty() {
            format!("toy:{}", self.seed)
        } else {
            format!("toy:{}:{}", self.seed, opts.join(","))
        }
    }
}

/// Seeded toy dual encoder.
///
/// Images are average-pooled to a `grid × grid` map per channel, then sent
/// through random Fourier features `sqrt(2/E) cos(Ω p + b)`. A prompt is
/// encoded as `W (mean(context) ⊙ class_token)`, so the class token gates
/// the learned context.
pub struct ToyEncoder {
    cfg: ToyConfig,
    omega: Array2<f64>,
    phase: Array1<f64>,
    w_text: Array2<f64>,
}

impl ToyEncoder {
    pub const CHANNELS: usize = 3;

    pub fn new(cfg: ToyConfig) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.ctx_dim == 0 || cfg.grid == 0 {
            return Err(Error::invalid("toy encoder dims must be positive"));
        }
        if !(cfg.bandwidth > 0.0) {
            return Err(Error::invalid("toy encoder bandwidth must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d_in = Self::CHANNELS * cfg.grid * cfg.grid;
        let omega = Array2::from_shape_simple_fn((cfg.embed_dim, d_in), || {
            rng.sample::<f64, _>(StandardNormal) / cfg.bandwidth
        });
        let phase = Array1::from_shape_simple_fn(cfg.embed_dim, || {
            rng.random::<f64>() * std::f64::consts::TAU
        });
        let scale = 1.0 / (cfg.ctx_dim as f64).sqrt();
        let w_text = Array2::from_shape_simple_fn((cfg.embed_dim, cfg.ctx_dim), || {
            rng.sample::<f64, _>(StandardNormal) * scale
        });
        Ok(ToyEncoder {
            cfg,
            omega,
            phase,
            w_text,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    fn cells(&self, len: usize) -> Vec<(usize, usize)> {
        let g = self.cfg.grid;
        (0..g)
            .map(|i| ((i * len) / g, ((i + 1) * len).div_ceil(g)))
            .collect()
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let (n, c, h, w) = batch.dims();
        if n == 0 {
            return Err(Error::invalid("empty image batch"));
        }
        if c != Self::CHANNELS {
            return Err(Error::invalid(format!("expected 3 channels, got {c}")));
        }
        if h < self.cfg.grid || w < self.cfg.grid {
            return Err(Error::invalid(format!(
                "image {h}x{w} smaller than pooling grid {}",
                self.cfg.grid
            )));
        }
        batch.check_finite()
    }

    fn pool(&self, batch: &ImageBatch) -> Array2<f64> {
        let (n, c, h, w) = batch.dims();
        let g = self.cfg.grid;
        let (rows, cols) = (self.cells(h), self.cells(w));
        let mut out = Array2::zeros((n, c * g * g));
        for i in 0..n {
            for ch in 0..c {
                for (gi, &(r0, r1)) in rows.iter().enumerate() {
                    for (gj, &(c0, c1)) in cols.iter().enumerate() {
                        let cell = batch.pixels.slice(s![i, ch, r0..r1, c0..c1]);
                        out[[i, ch * g * g + gi * g + gj]] = cell.mean().unwrap_or(0.0);
                    }
                }
            }
        }
        out
    }

    fn pre_activation(&self, pooled: &Array2<f64>) -> Array2<f64> {
        pooled.dot(&self.omega.t()) + &self.phase
    }

    fn amplitude(&self) -> f64 {
        (2.0 / self.cfg.embed_dim as f64).sqrt()
    }

    fn check_sequences(&self, seqs: &[TokenSequence]) -> Result<()> {
        if seqs.is_empty() {
            return Err(Error::invalid("no prompts to encode"));
        }
        for (i, s) in seqs.iter().enumerate() {
            if s.ncols() != self.cfg.ctx_dim {
                return Err(Error::invalid(format!(
                    "prompt {i} token width {} does not match ctx_dim {}",
                    s.ncols(),
                    self.cfg.ctx_dim
                )));
            }
            if s.nrows() < 2 {
                return Err(Error::invalid(format!("prompt {i} needs context and a class token")));
            }
        }
        Ok(())
    }

    fn gated(seq: &TokenSequence) -> (Array1<f64>, Array1<f64>) {
        let l = seq.nrows();
        let ctx_mean = seq.slice(s![..l - 1, ..]).mean_axis(Axis(0)).expect("non-empty");
        let cls = seq.row(l - 1).to_owned();
        (ctx_mean, cls)
    }
}

impl DualEncoder for ToyEncoder {
    fn id(&self) -> String {
        self.cfg.id()
    }

    fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn ctx_dim(&self) -> usize {
        self.cfg.ctx_dim
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.cfg.id().as_bytes());
        hash_f64s(&mut h, self.omega.iter().copied());
        hash_f64s(&mut h, self.phase.iter().copied());
        hash_f64s(&mut h, self.w_text.iter().copied());
        digest_hex(h)
    }

    fn default_similarity(&self) -> SimilarityConfig {
        SimilarityConfig::default()
    }

    fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec::toy()
    }

    fn token_embedding(&self, token: &str) -> Result<Array1<f64>> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad token {token:?}")));
        }
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok(Array1::from_shape_simple_fn(self.cfg.ctx_dim, || {
            rng.sample::<f64, _>(StandardNormal)
        }))
    }

    fn encode_images(&self, batch: &ImageBatch) -> Result<EmbeddingMatrix> {
        self.check_batch(batch)?;
        let amp = self.amplitude();
        let v = self
            .pre_activation(&self.pool(batch))
            .mapv(|a| amp * a.cos());
        EmbeddingMatrix::new(v, EmbeddingSource::Image)
    }

    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<EmbeddingMatrix> {
        self.check_sequences(seqs)?;
        let mut out = Array2::zeros((seqs.len(), self.cfg.embed_dim));
        for (i, seq) in seqs.iter().enumerate() {
            let (ctx_mean, cls) = Self::gated(seq);
            out.row_mut(i).assign(&self.w_text.dot(&(ctx_mean * cls)));
        }
        EmbeddingMatrix::new(out, EmbeddingSource::Text)
    }

    fn image_backward(&self, batch: &ImageBatch, grad: &Array2<f64>) -> Result<Array4<f64>> {
        self.check_batch(batch)?;
        let (n, c, h, w) = batch.dims();
        if grad.dim() != (n, self.cfg.embed_dim) {
            return Err(Error::invalid("image gradient shape mismatch"));
        }
        let amp = self.amplitude();
        let pre = self.pre_activation(&self.pool(batch));
        let g_pre = pre.mapv(|a| -amp * a.sin()) * grad;
        let g_pool = g_pre.dot(&self.omega);
        let g = self.cfg.grid;
        let (rows, cols) = (self.cells(h), self.cells(w));
        let mut out = Array4::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for (gi, &(r0, r1)) in rows.iter().enumerate() {
                    for (gj, &(c0, c1)) in cols.iter().enumerate() {
                        let size = ((r1 - r0) * (c1 - c0)) as f64;
                        let v = g_pool[[i, ch * g * g + gi * g + gj]] / size;
                        // Overlapping cells (when the side is not divisible by the grid) accumulate.
                        out.slice_mut(s![i, ch, r0..r1, c0..c1])
                            .mapv_inplace(|x| x + v);
                    }
                }
            }
        }
        Ok(out)
    }

    fn sequence_backward(
        &self,
        seqs: &[TokenSequence],
        grad: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        self.check_sequences(seqs)?;
        if grad.dim() != (seqs.len(), self.cfg.embed_dim) {
            return Err(Error::invalid("prompt gradient shape mismatch"));
        }
        Ok(seqs
            .iter()
            .zip(grad.rows())
            .map(|(seq, g)| {
                let l = seq.nrows();
                let (ctx_mean, cls) = Self::gated(seq);
                let g_u = self.w_text.t().dot(&g);
                let mut out = Array2::zeros(seq.dim());
                let g_ctx = &g_u * &cls / (l - 1) as f64;
                for mut row in out.slice_mut(s![..l - 1, ..]).rows_mut() {
                    row.assign(&g_ctx);
                }
                out.row_mut(l - 1).assign(&(g_u * ctx_mean));
                out
            })
            .collect())
    }
}

type Factory = Box<dyn Fn(&str) -> Result<Arc<dyn DualEncoder>> + Send + Sync>;

/// Maps encoder identifiers to constructors. `toy:<seed>` is always
/// available; pretrained backbones are registered by name.
pub struct EncoderRegistry {
    backbones: BTreeMap<String, Factory>,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        EncoderRegistry {
            backbones: BTreeMap::new(),
        }
    }
}

/// Backbone names known to the toolkit that need externally supplied weights.
pub const KNOWN_BACKBONES: &[&str] = &["vit-b-16", "vit-b-32", "vit-l-14", "rn50"];

impl EncoderRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&str) -> Result<Arc<dyn DualEncoder>> + Send + Sync + 'static,
    {
        self.backbones.insert(name.to_string(), Box::new(factory));
    }

    pub fn resolve(&self, id: &str) -> Result<Arc<dyn DualEncoder>> {
        if id.starts_with("toy:") {
            return Ok(Arc::new(ToyEncoder::new(ToyConfig::parse(id)?)?));
        }
        let name = id.split(':').next().unwrap_or(id);
        if let Some(f) = self.backbones.get(name) {
            return f(id);
        }
        if KNOWN_BACKBONES.contains(&name) {
            return Err(Error::Unavailable(format!(
                "backbone {name:?} needs pretrained weights; register an adapter for it"
            )));
        }
        Err(Error::invalid(format!("unknown encoder id {id:?}")))
    }
}

/// Resolve with the default registry.
pub fn resolve_encoder(id: &str) -> Result<Arc<dyn DualEncoder>> {
    EncoderRegistry::default().resolve(id)
}
