//! Prompt optimization with adversarial data augmentation.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ada::{self, AdaConfig, AdaMode, Perturbation};
use crate::data::FewShotSplit;
use crate::encoder::{
    prompt_sequences, similarity_backward, similarity_logits, softmax_rows, DualEncoder,
    EmbeddingMatrix, ImageBatch, ProbabilityMatrix, SimilarityConfig,
};
use crate::error::{Error, Result};
use crate::evaluator::{apply_verification_transform, TransformKind};
use crate::fingerprint::fingerprint_of;
use crate::prompt::{
    assemble_classes, init_context, trainable_parameters, ClassPromptPair, OneClassClassifier,
    PromptContext, DEFAULT_INIT_STD, DEFAULT_N_CTX,
};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub warm_lr: f64,
    pub warm_epochs: usize,
    pub schedule: Schedule,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images per step; `None` trains on the whole few-shot set at once.
    pub batch_size: Option<usize>,
    pub shots: usize,
    pub seed: u64,
    pub n_ctx: usize,
    pub init_std: f64,
    pub prompt_pair: ClassPromptPair,
    pub ada: AdaConfig,
    pub similarity: SimilarityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 1e-4,
            warm_lr: 1e-5,
            warm_epochs: 1,
            schedule: Schedule::Cosine,
            optimizer: Optimizer::Sgd,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: None,
            shots: 50,
            seed: 0,
            n_ctx: DEFAULT_N_CTX,
            init_std: DEFAULT_INIT_STD,
            prompt_pair: ClassPromptPair::default(),
            ada: AdaConfig::default(),
            similarity: SimilarityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warm_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "need 0 <= warm_epochs < epochs, got {} and {}",
                self.warm_epochs, self.epochs
            )));
        }
        for (name, v) in [("base_lr", self.base_lr), ("warm_lr", self.warm_lr), ("init_std", self.init_std)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("momentum must be in [0, 1) and weight_decay >= 0"));
        }
        if self.shots == 0 || self.n_ctx == 0 || self.batch_size == Some(0) {
            return Err(Error::invalid("shots, n_ctx and batch_size must be positive"));
        }
        self.ada.validate()?;
        self.similarity.validate()
    }
}

/// Learning rate for `epoch`: constant warm-up, then cosine annealing from `base_lr`.
pub fn learning_rate_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} out of range for {} epochs",
            cfg.epochs
        )));
    }
    if epoch < cfg.warm_epochs {
        return Ok(cfg.warm_lr);
    }
    let t = (epoch - cfg.warm_epochs) as f64 / (cfg.epochs - cfg.warm_epochs) as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (PI * t).cos()))
}

/// Mean of `-ln p[true class]`, with probabilities floored at 1e-12.
pub fn cross_entropy(probs: &ProbabilityMatrix, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        total -= row[y].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Images with one class label each (0 = non-target).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageBatch {
    pub images: ImageBatch,
    pub labels: Vec<usize>,
}

impl LabeledImageBatch {
    pub fn new(images: ImageBatch, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(LabeledImageBatch { images, labels })
    }

    pub fn from_split(split: &FewShotSplit) -> Result<Self> {
        let images = ImageBatch::concat(&[&split.non_target, &split.target])?;
        let mut labels = vec![ada::NON_TARGET; split.non_target.len()];
        labels.extend(vec![ada::TARGET; split.target.len()]);
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn select(&self, idx: &[usize]) -> LabeledImageBatch {
        LabeledImageBatch {
            images: self.images.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Loss and the gradients requested from one forward/backward pass.
pub struct Evaluation {
    pub loss: f64,
    pub probs: ProbabilityMatrix,
    pub context_grad: Option<Array2<f64>>,
    pub image_grad: Option<Array4<f64>>,
}

/// Cross-entropy of the prompt classifier on `batch`, with analytic
/// gradients with respect to the context and/or the input images.
pub fn evaluate_loss(
    enc: &dyn DualEncoder,
    ctx: &PromptContext,
    class_names: &[String],
    similarity: &SimilarityConfig,
    batch: &LabeledImageBatch,
    want_context: bool,
    want_images: bool,
) -> Result<Evaluation> {
    let img = enc.encode_images(&batch.images)?;
    let seqs = prompt_sequences(enc, &assemble_classes(ctx, class_names)?)?;
    let txt = enc.encode_sequences(&seqs)?;
    let logits = similarity_logits(&img, &txt, similarity)?;
    let probs = softmax_rows(&logits);
    let loss = cross_entropy(&probs, &batch.labels)?;
    if !(want_context || want_images) {
        return Ok(Evaluation {
            loss,
            probs,
            context_grad: None,
            image_grad: None,
        });
    }
    let n = batch.len() as f64;
    let mut g_logits = probs.clone();
    for (mut row, &y) in g_logits.rows_mut().into_iter().zip(&batch.labels) {
        row[y] -= 1.0;
        row /= n;
    }
    let (g_img, g_txt) = similarity_backward(&img, &txt, similarity, &g_logits);
    let image_grad = if want_images {
        Some(enc.image_backward(&batch.images, &g_img)?)
    } else {
        None
    };
    let context_grad = if want_context {
        let n_ctx = ctx.n_ctx();
        let mut g = Array2::zeros((n_ctx, ctx.ctx_dim()));
        for gs in enc.sequence_backward(&seqs, &g_txt)? {
            g += &gs.slice(s![..n_ctx, ..]);
        }
        Some(g)
    } else {
        None
    };
    Ok(Evaluation {
        loss,
        probs,
        context_grad,
        image_grad,
    })
}

/// What replaces clean images during training.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    Ada(AdaConfig),
    /// A fixed image transform applied to the masked subset every iteration.
    Transform {
        kind: TransformKind,
        mode: AdaMode,
        proportion: f64,
        mask_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub ctx: PromptContext,
    pub class_names: Vec<String>,
    pub epoch: usize,
    pub lr: f64,
    pub loss_history: Vec<f64>,
    /// Images selected for augmentation, fixed for the run.
    pub mask: Vec<bool>,
    /// Labels used by the loss after augmentation.
    pub train_labels: Vec<usize>,
    velocity: Array2<f64>,
    rng: ChaCha8Rng,
    augmentation: Augmentation,
}

impl TrainState {
    pub fn new(
        ctx: PromptContext,
        class_names: Vec<String>,
        labels: &[usize],
        augmentation: Augmentation,
        seed: u64,
    ) -> Self {
        let (mask, train_labels) = match &augmentation {
            Augmentation::Ada(a) => {
                let mask = ada::select_mask_for(labels, a);
                let tl = ada::training_labels(labels, &mask, a.mode);
                (mask, tl)
            }
            Augmentation::Transform {
                mode,
                proportion,
                mask_seed,
                ..
            } => {
                let mask = ada::select_mask(labels, *mode, *proportion, *mask_seed);
                let tl = ada::training_labels(labels, &mask, *mode);
                (mask, tl)
            }
        };
        let velocity = Array2::zeros(ctx.values().raw_dim());
        TrainState {
            ctx,
            class_names,
            epoch: 0,
            lr: 0.0,
            loss_history: Vec::new(),
            mask,
            train_labels,
            velocity,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a1e),
            augmentation,
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
    /// Gradient of the clean-image loss with respect to the images, when ADA ran.
    pub image_grad: Option<Array4<f64>>,
    pub perturbation: Option<Perturbation>,
}

fn sgd_update(state: &mut TrainState, grad: &Array2<f64>, cfg: &TrainConfig) {
    let lr = state.lr;
    let mut g = grad.clone();
    if cfg.weight_decay != 0.0 {
        g.scaled_add(cfg.weight_decay, state.ctx.values());
    }
    let params = trainable_parameters(&mut state.ctx);
    if cfg.momentum != 0.0 {
        state.velocity.mapv_inplace(|v| v * cfg.momentum);
        state.velocity += &g;
        let mut p = params.values;
        p.scaled_add(-lr, &state.velocity);
    } else {
        let mut p = params.values;
        p.scaled_add(-lr, &g);
    }
}

fn diverged(state: &TrainState, message: String) -> Error {
    Error::Diverged {
        epoch: state.epoch,
        message,
        snapshot: state.ctx.values().iter().copied().collect(),
    }
}

/// One iteration on `idx` (indices into `batch`): clean pass, image gradient,
/// perturbation, re-encode, context update.
fn step_on(
    state: &mut TrainState,
    batch: &LabeledImageBatch,
    idx: &[usize],
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let sub = batch.select(idx);
    let mask: Vec<bool> = idx.iter().map(|&i| state.mask[i]).collect();
    let train_labels: Vec<usize> = idx.iter().map(|&i| state.train_labels[i]).collect();
    let (images, image_grad, perturbation) = match state.augmentation.clone() {
        Augmentation::Ada(a) if a.mode != AdaMode::None => {
            let clean = evaluate_loss(enc, &state.ctx, &state.class_names, &cfg.similarity, &sub, false, true)?;
            let g = clean.image_grad.expect("requested");
            let pert = ada::gradient_sign_perturbation(&g, &mask, a.epsilon)?;
            (ada::apply(&sub.images, &pert)?, Some(g), Some(pert))
        }
        Augmentation::Ada(_) => (sub.images.clone(), None, None),
        Augmentation::Transform { kind, .. } => {
            let chosen: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let mut px = sub.images.pixels.clone();
            if !chosen.is_empty() && kind != TransformKind::None {
                let seed = rand::Rng::random::<u64>(&mut state.rng);
                let out = apply_verification_transform(&sub.images.select(&chosen), kind, seed)?;
                if out.dims() != sub.images.select(&chosen).dims() {
                    return Err(Error::invalid(format!(
                        "transform {kind} changes image shape; use square images"
                    )));
                }
                for (j, &i) in chosen.iter().enumerate() {
                    px.index_axis_mut(Axis(0), i).assign(&out.pixels.index_axis(Axis(0), j));
                }
            }
            (ImageBatch::new(px), None, None)
        }
    };
    let train_batch = LabeledImageBatch {
        images,
        labels: train_labels,
    };
    let ev = evaluate_loss(enc, &state.ctx, &state.class_names, &cfg.similarity, &train_batch, true, false)?;
    if !ev.loss.is_finite() {
        return Err(diverged(state, format!("loss is {}", ev.loss)));
    }
    let grad = ev.context_grad.expect("requested");
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(diverged(state, "non-finite context gradient".into()));
    }
    sgd_update(state, &grad, cfg);
    state.loss_history.push(ev.loss);
    Ok(StepOutcome {
        loss: ev.loss,
        lr: state.lr,
        image_grad,
        perturbation,
    })
}

/// One full-batch epoch of the min-max loop.
pub fn train_step(
    state: &mut TrainState,
    batch: &LabeledImageBatch,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    if batch.len() != state.mask.len() {
        return Err(Error::invalid("batch does not match the training state"));
    }
    state.lr = learning_rate_at(state.epoch, cfg)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let out = step_on(state, batch, &idx, enc, cfg)?;
    state.epoch += 1;
    Ok(out)
}

fn run_epoch(
    state: &mut TrainState,
    batch: &LabeledImageBatch,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainState, &StepOutcome),
) -> Result<()> {
    match cfg.batch_size {
        Some(b) if b < batch.len() => {
            state.lr = learning_rate_at(state.epoch, cfg)?;
            let mut order: Vec<usize> = (0..batch.len()).collect();
            order.shuffle(&mut state.rng);
            for chunk in order.chunks(b) {
                let out = step_on(state, batch, chunk, enc, cfg)?;
                observer(state, &out);
            }
            state.epoch += 1;
        }
        _ => {
            let out = train_step(state, batch, enc, cfg)?;
            observer(state, &out);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub(crate) fn fit(
    enc: &dyn DualEncoder,
    batch: &LabeledImageBatch,
    class_names: Vec<String>,
    augmentation: Augmentation,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainState, &StepOutcome),
) -> Result<TrainState> {
    cfg.validate()?;
    let before = enc.fingerprint();
    let ctx = init_context(cfg.n_ctx, enc.ctx_dim(), cfg.init_std, cfg.seed)?;
    let mut state = TrainState::new(ctx, class_names, &batch.labels, augmentation, cfg.seed);
    for _ in 0..cfg.epochs {
        run_epoch(&mut state, batch, enc, cfg, observer)?;
    }
    if enc.fingerprint() != before {
        return Err(Error::Numeric("encoder parameters changed during training".into()));
    }
    Ok(state)
}

fn classifier_from(
    state: TrainState,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
    split: &FewShotSplit,
    ada: AdaConfig,
    tag: &str,
) -> Result<OneClassClassifier> {
    let train_fingerprint = fingerprint_of(&(
        tag,
        cfg,
        enc.id(),
        &split.source_names,
        split.draw_seed,
        split.shots,
    ))?;
    Ok(OneClassClassifier {
        context: state.ctx,
        class_names: state.class_names,
        encoder_id: enc.id(),
        encoder_fingerprint: enc.fingerprint(),
        similarity: cfg.similarity,
        ada,
        train_fingerprint,
    })
}

fn check_shots(split: &FewShotSplit, cfg: &TrainConfig) -> Result<()> {
    if split.target.len() < cfg.shots || split.non_target.len() < cfg.shots {
        return Err(Error::invalid(format!(
            "few-shot split has {} target and {} non-target images, need {} each",
            split.target.len(),
            split.non_target.len(),
            cfg.shots
        )));
    }
    Ok(())
}

/// Train a one-class classifier with ADA, reporting every step to `observer`.
pub fn train_observed(
    split: &FewShotSplit,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainState, &StepOutcome),
) -> Result<OneClassClassifier> {
    check_shots(split, cfg)?;
    let batch = LabeledImageBatch::from_split(split)?;
    let state = fit(
        enc,
        &batch,
        cfg.prompt_pair.names(),
        Augmentation::Ada(cfg.ada.clone()),
        cfg,
        observer,
    )?;
    classifier_from(state, enc, cfg, split, cfg.ada.clone(), "ada")
}

pub fn train(split: &FewShotSplit, enc: &dyn DualEncoder, cfg: &TrainConfig) -> Result<OneClassClassifier> {
    train_observed(split, enc, cfg, &mut |_, _| {})
}

/// Train and collect one log record per epoch.
pub fn train_logged(
    split: &FewShotSplit,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<(OneClassClassifier, Vec<EpochRecord>)> {
    let mut log = Vec::new();
    let clf = train_observed(split, enc, cfg, &mut |st, out| {
        log.push(EpochRecord {
            epoch: st.epoch.saturating_sub(1),
            lr: out.lr,
            loss: out.loss,
        })
    })?;
    Ok((clf, log))
}

/// Plain prompt tuning: clean images, no augmentation of any kind.
pub fn train_prompt_tuning(
    split: &FewShotSplit,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<OneClassClassifier> {
    check_shots(split, cfg)?;
    cfg.validate()?;
    let batch = LabeledImageBatch::from_split(split)?;
    let names = cfg.prompt_pair.names();
    let mut ctx = init_context(cfg.n_ctx, enc.ctx_dim(), cfg.init_std, cfg.seed)?;
    for epoch in 0..cfg.epochs {
        let lr = learning_rate_at(epoch, cfg)?;
        let ev = evaluate_loss(enc, &ctx, &names, &cfg.similarity, &batch, true, false)?;
        let g = ev.context_grad.expect("requested");
        trainable_parameters(&mut ctx).values.scaled_add(-lr, &g);
    }
    let state = TrainState::new(ctx, names, &batch.labels, Augmentation::Ada(AdaConfig::disabled()), cfg.seed);
    classifier_from(state, enc, cfg, split, AdaConfig::disabled(), "ada")
}

/// Train with a standard image transform in place of ADA, on the subset ADA would have perturbed.
pub fn standard_augmentation_train(
    kind: TransformKind,
    split: &FewShotSplit,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<OneClassClassifier> {
    check_shots(split, cfg)?;
    let batch = LabeledImageBatch::from_split(split)?;
    let mode = match cfg.ada.mode {
        AdaMode::TargetAsNonTarget => AdaMode::Target,
        m => m,
    };
    let aug = Augmentation::Transform {
        kind,
        mode,
        proportion: cfg.ada.proportion,
        mask_seed: cfg.ada.mask_seed,
    };
    let state = fit(enc, &batch, cfg.prompt_pair.names(), aug, cfg, &mut |_, _| {})?;
    classifier_from(state, enc, cfg, split, AdaConfig::disabled(), &format!("transform:{kind}"))
}

/// Image embeddings and class probabilities of a trained prompt.
pub fn predict(
    enc: &dyn DualEncoder,
    clf: &OneClassClassifier,
    images: &ImageBatch,
) -> Result<(EmbeddingMatrix, ProbabilityMatrix)> {
    let img = enc.encode_images(images)?;
    let txt = crate::encoder::encode_prompts(enc, &clf.prompts()?)?;
    let probs = crate::encoder::class_probabilities(&img, &txt, &clf.similarity)?;
    Ok((img, probs))
}
