//! AUC, scoring, verification-time transforms, the repetition protocol,
//! baselines, and result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{draw_few_shot, reserve_test, DatasetHandle, PreprocessSpec};
use crate::encoder::{class_probabilities, encode_text, DualEncoder, ImageBatch};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint_of;
use crate::prompt::OneClassClassifier;
use crate::trainer::{
    predict, standard_augmentation_train, train, train_prompt_tuning, LabeledImageBatch,
    TrainConfig,
};

/// Target-class scores of true targets (`positives`) and of non-targets (`negatives`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (p, n) = (scores.positives.len(), scores.negatives.len());
    if p == 0 || n == 0 {
        return Err(Error::invalid(format!("AUC needs both sides, got {p} positives and {n} negatives")));
    }
    if scores.positives.iter().chain(&scores.negatives).any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let mut neg = scores.negatives.clone();
    neg.sort_by(|a, b| a.total_cmp(b));
    // Twice the number of winning pairs plus the number of ties, as an integer.
    let mut twice: u128 = 0;
    for &s in &scores.positives {
        let below = neg.partition_point(|&x| x < s);
        let not_above = neg.partition_point(|&x| x <= s);
        twice += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

fn check_encoder(clf: &OneClassClassifier, enc: &dyn DualEncoder) -> Result<()> {
    if clf.encoder_id != enc.id() {
        return Err(Error::invalid(format!(
            "classifier was trained with encoder {:?}, not {:?}",
            clf.encoder_id,
            enc.id()
        )));
    }
    if clf.encoder_fingerprint != enc.fingerprint() {
        return Err(Error::invalid(format!(
            "encoder {:?} parameters differ from those used in training",
            clf.encoder_id
        )));
    }
    Ok(())
}

/// Target-class probability (last column) for every image.
pub fn score_images(
    clf: &OneClassClassifier,
    enc: &dyn DualEncoder,
    batch: &ImageBatch,
) -> Result<Vec<f64>> {
    check_encoder(clf, enc)?;
    let (_, probs) = predict(enc, clf, batch)?;
    let col = probs.ncols() - 1;
    Ok(probs.column(col).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    None,
    GaussianBlur,
    GaussianNoise,
    Grayscale,
    Rotate90,
    Flip,
    Mixture,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::None,
        TransformKind::GaussianBlur,
        TransformKind::GaussianNoise,
        TransformKind::Grayscale,
        TransformKind::Rotate90,
        TransformKind::Flip,
        TransformKind::Mixture,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TransformKind::None => "none",
            TransformKind::GaussianBlur => "gaussian_blur",
            TransformKind::GaussianNoise => "gaussian_noise",
            TransformKind::Grayscale => "grayscale",
            TransformKind::Rotate90 => "rotate90",
            TransformKind::Flip => "flip",
            TransformKind::Mixture => "mixture",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transform {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformParams {
    pub blur_sigma: f64,
    pub blur_kernel: usize,
    pub noise_std: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            blur_sigma: 1.0,
            blur_kernel: 5,
            noise_std: 0.05,
        }
    }
}

fn blur(px: &Array4<f64>, sigma: f64, size: usize) -> Array4<f64> {
    let r = (size / 2) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    let (n, c, h, w) = px.dim();
    let clamp = |i: isize, len: usize| i.clamp(0, len as isize - 1) as usize;
    let mut tmp = Array4::<f64>::zeros(px.raw_dim());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    tmp[[b, ch, y, x]] = (-r..=r)
                        .map(|d| k[(d + r) as usize] * px[[b, ch, y, clamp(x as isize + d, w)]])
                        .sum::<f64>();
                }
            }
        }
    }
    let mut out = Array4::zeros(px.raw_dim());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[b, ch, y, x]] = (-r..=r)
                        .map(|d| k[(d + r) as usize] * tmp[[b, ch, clamp(y as isize + d, h), x]])
                        .sum::<f64>();
                }
            }
        }
    }
    out
}

fn grayscale(px: &Array4<f64>) -> Result<Array4<f64>> {
    let (n, c, h, w) = px.dim();
    if c != 3 {
        return Err(Error::invalid("grayscale needs 3 channels"));
    }
    let mut out = Array4::zeros(px.raw_dim());
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let l = 0.299 * px[[b, 0, y, x]] + 0.587 * px[[b, 1, y, x]] + 0.114 * px[[b, 2, y, x]];
                for ch in 0..3 {
                    out[[b, ch, y, x]] = l;
                }
            }
        }
    }
    Ok(out)
}

/// Quarter turn counter-clockwise.
fn rotate90(px: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = px.dim();
    Array4::from_shape_fn((n, c, w, h), |(b, ch, y, x)| px[[b, ch, x, w - 1 - y]])
}

fn flip(px: &Array4<f64>) -> Array4<f64> {
    let mut out = px.clone();
    out.invert_axis(Axis(3));
    out.as_standard_layout().to_owned()
}

/// Apply a processing method with explicit magnitudes. Operates on
/// normalized pixels; grayscale uses Rec. 601 luma weights.
pub fn apply_transform_with(
    batch: &ImageBatch,
    kind: TransformKind,
    params: &TransformParams,
    seed: u64,
) -> Result<ImageBatch> {
    let px = &batch.pixels;
    let out = match kind {
        TransformKind::None => px.clone(),
        TransformKind::GaussianBlur => blur(px, params.blur_sigma, params.blur_kernel),
        TransformKind::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            px.mapv(|v| v + params.noise_std * rng.sample::<f64, _>(StandardNormal))
        }
        TransformKind::Grayscale => grayscale(px)?,
        TransformKind::Rotate90 => rotate90(px),
        TransformKind::Flip => flip(px),
        TransformKind::Mixture => {
            let mut b = batch.clone();
            for k in [
                TransformKind::GaussianBlur,
                TransformKind::GaussianNoise,
                TransformKind::Grayscale,
                TransformKind::Rotate90,
                TransformKind::Flip,
            ] {
                b = apply_transform_with(&b, k, params, seed)?;
            }
            b.pixels
        }
    };
    Ok(ImageBatch::new(out))
}

pub fn apply_verification_transform(
    batch: &ImageBatch,
    kind: TransformKind,
    seed: u64,
) -> Result<ImageBatch> {
    apply_transform_with(batch, kind, &TransformParams::default(), seed)
}

/// How classifiers are produced in a protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "transform")]
pub enum Method {
    /// Prompt learning with ADA as configured.
    OccClip,
    /// Plain prompt tuning on clean images.
    PromptTuning,
    /// A standard transform in place of ADA.
    StandardAugmentation(TransformKind),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::OccClip => f.write_str("occ_clip"),
            Method::PromptTuning => f.write_str("prompt_tuning"),
            Method::StandardAugmentation(k) => write!(f, "augment_{k}"),
        }
    }
}

/// One evaluation cell: train on a target and a non-target pool, test
/// against a (possibly different) non-target pool.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub name: String,
    pub target_train: DatasetHandle,
    pub non_target_train: DatasetHandle,
    pub target_test: DatasetHandle,
    pub non_target_test: DatasetHandle,
    pub transform: TransformKind,
    pub transform_params: TransformParams,
    pub method: Method,
    pub preprocess: PreprocessSpec,
    /// Repetition `r` draws with seed `draw_seed + r`.
    pub draw_seed: u64,
    /// Cap on test images per side.
    pub test_cap: usize,
}

impl EvalTask {
    /// A task with the first `test_cap` images of every dataset held out
    /// for testing and the rest available for training.
    pub fn new(
        name: &str,
        target: &DatasetHandle,
        non_target_train: &DatasetHandle,
        non_target_test: &DatasetHandle,
        test_cap: usize,
        preprocess: PreprocessSpec,
    ) -> EvalTask {
        let (target_train, target_test) = reserve_test(target, test_cap);
        let (non_target_train, _) = reserve_test(non_target_train, test_cap);
        let (_, non_target_test) = reserve_test(non_target_test, test_cap);
        EvalTask {
            name: name.to_string(),
            target_train,
            non_target_train,
            target_test,
            non_target_test,
            transform: TransformKind::None,
            transform_params: TransformParams::default(),
            method: Method::OccClip,
            preprocess,
            draw_seed: 0,
            test_cap,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_transform(mut self, transform: TransformKind) -> Self {
        self.transform = transform;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub method: String,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub n_repetitions: usize,
    pub per_run_auc: Vec<f64>,
    pub config_fingerprint: String,
    pub transform: TransformKind,
    pub n_test_target: usize,
    pub n_test_non_target: usize,
    /// Settings that affect comparability (optimizer, similarity, ...).
    pub settings: BTreeMap<String, String>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_runs(
        task_name: &str,
        method: &str,
        per_run_auc: Vec<f64>,
        config_fingerprint: String,
        transform: TransformKind,
        n_test: (usize, usize),
        settings: BTreeMap<String, String>,
    ) -> EvalReport {
        let (auc_mean, auc_std) = mean_std(&per_run_auc);
        EvalReport {
            task_name: task_name.to_string(),
            method: method.to_string(),
            auc_mean,
            auc_std,
            n_repetitions: per_run_auc.len(),
            per_run_auc,
            config_fingerprint,
            transform,
            n_test_target: n_test.0,
            n_test_non_target: n_test.1,
            settings,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize report: {e}")))
    }
}

pub fn settings_of(cfg: &TrainConfig, enc: &dyn DualEncoder) -> BTreeMap<String, String> {
    let mut s = BTreeMap::new();
    s.insert("encoder".into(), enc.id());
    s.insert("similarity".into(), cfg.similarity.to_string());
    s.insert(
        "optimizer".into(),
        format!("sgd(momentum={},weight_decay={})", cfg.momentum, cfg.weight_decay),
    );
    s.insert("epochs".into(), cfg.epochs.to_string());
    s.insert("shots".into(), cfg.shots.to_string());
    s.insert("prompt_pair".into(), cfg.prompt_pair.to_string());
    s.insert(
        "ada".into(),
        format!(
            "{}(epsilon={},proportion={})",
            cfg.ada.mode, cfg.ada.epsilon, cfg.ada.proportion
        ),
    );
    s
}

fn load_capped(handle: &DatasetHandle, cap: usize, spec: &PreprocessSpec) -> Result<ImageBatch> {
    if handle.count() < cap {
        warn!(
            "test pool {} has {} images, fewer than the cap of {cap}; using all of them",
            handle.name,
            handle.count()
        );
    }
    let idx: Vec<usize> = (0..handle.count().min(cap)).collect();
    if idx.is_empty() {
        return Err(Error::invalid(format!("test pool {} is empty", handle.name)));
    }
    handle.load(&idx, spec)
}

/// Loaded, transformed test images of a task.
pub struct TestPools {
    pub target: ImageBatch,
    pub non_target: ImageBatch,
}

pub fn load_test_pools(task: &EvalTask) -> Result<TestPools> {
    let t = load_capped(&task.target_test, task.test_cap, &task.preprocess)?;
    let n = load_capped(&task.non_target_test, task.test_cap, &task.preprocess)?;
    Ok(TestPools {
        target: apply_transform_with(&t, task.transform, &task.transform_params, task.draw_seed)?,
        non_target: apply_transform_with(
            &n,
            task.transform,
            &task.transform_params,
            task.draw_seed.wrapping_add(1),
        )?,
    })
}

/// AUC of one classifier on the test pools.
pub fn classifier_auc(clf: &OneClassClassifier, enc: &dyn DualEncoder, pools: &TestPools) -> Result<f64> {
    auc(&ScoreSet {
        positives: score_images(clf, enc, &pools.target)?,
        negatives: score_images(clf, enc, &pools.non_target)?,
    })
}

/// Per-repetition training configuration: seeds move with the repetition.
pub fn repetition_config(cfg: &TrainConfig, rep: usize) -> TrainConfig {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(rep as u64);
    c.ada.mask_seed = cfg.ada.mask_seed.wrapping_add(rep as u64);
    c
}

/// Train one classifier for repetition `rep` of `task`.
pub fn train_repetition(
    task: &EvalTask,
    rep: usize,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<OneClassClassifier> {
    let split = draw_few_shot(
        &task.target_train,
        &task.non_target_train,
        cfg.shots,
        task.draw_seed.wrapping_add(rep as u64),
        &task.preprocess,
    )?;
    let c = repetition_config(cfg, rep);
    match task.method {
        Method::OccClip => train(&split, enc, &c),
        Method::PromptTuning => train_prompt_tuning(&split, enc, &c),
        Method::StandardAugmentation(kind) => standard_augmentation_train(kind, &split, enc, &c),
    }
}

pub fn task_fingerprint(task: &EvalTask, n_reps: usize, enc: &dyn DualEncoder, cfg: &TrainConfig) -> Result<String> {
    fingerprint_of(&(
        &task.name,
        task.method,
        task.transform,
        &task.transform_params,
        &task.preprocess,
        task.draw_seed,
        task.test_cap,
        [
            &task.target_train.name,
            &task.non_target_train.name,
            &task.target_test.name,
            &task.non_target_test.name,
        ],
        [
            task.target_train.count(),
            task.non_target_train.count(),
            task.target_test.count(),
            task.non_target_test.count(),
        ],
        n_reps,
        enc.id(),
        enc.fingerprint(),
        cfg,
    ))
}

/// Train `n_reps` classifiers on seeded few-shot draws and aggregate their
/// AUC on the shared test pools.
pub fn run_protocol(
    task: &EvalTask,
    n_reps: usize,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    if n_reps == 0 {
        return Err(Error::invalid("n_reps must be positive"));
    }
    let pools = load_test_pools(task)?;
    let per_run = (0..n_reps)
        .into_par_iter()
        .map(|rep| classifier_auc(&train_repetition(task, rep, enc, cfg)?, enc, &pools))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_runs(
        &task.name,
        &task.method.to_string(),
        per_run,
        task_fingerprint(task, n_reps, enc, cfg)?,
        task.transform,
        (pools.target.len(), pools.non_target.len()),
        settings_of(cfg, enc),
    ))
}

/// Hand-written prompts, no training.
pub fn zero_shot_baseline(
    pair_text: (&str, &str),
    enc: &dyn DualEncoder,
    test: &LabeledImageBatch,
) -> Result<EvalReport> {
    let txt = encode_text(enc, &[pair_text.0, pair_text.1])?;
    let img = enc.encode_images(&test.images)?;
    let sim = enc.default_similarity();
    let probs = class_probabilities(&img, &txt, &sim)?;
    let mut scores = ScoreSet::default();
    for (row, &y) in probs.rows().into_iter().zip(&test.labels) {
        if y == 0 {
            scores.negatives.push(row[1]);
        } else {
            scores.positives.push(row[1]);
        }
    }
    let value = auc(&scores)?;
    let mut settings = BTreeMap::new();
    settings.insert("encoder".into(), enc.id());
    settings.insert("similarity".into(), sim.to_string());
    settings.insert("prompts".into(), format!("{:?} / {:?}", pair_text.0, pair_text.1));
    Ok(EvalReport::from_runs(
        "zero_shot",
        "zero_shot",
        vec![value],
        fingerprint_of(&(pair_text, enc.id(), enc.fingerprint(), &test.labels))?,
        TransformKind::None,
        (scores.positives.len(), scores.negatives.len()),
        settings,
    ))
}

/// Unweighted mean of the per-task mean AUCs.
pub fn overall(reports: &[EvalReport]) -> f64 {
    mean_std(&reports.iter().map(|r| r.auc_mean).collect::<Vec<_>>()).0
}

/// A grid of AUC cells rendered as tab-separated text.
#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub corner: String,
    pub columns: Vec<String>,
    rows: Vec<(String, Vec<Option<(f64, f64)>>)>,
    pub with_overall: bool,
}

impl ResultsTable {
    pub fn new(corner: &str, with_overall: bool) -> Self {
        ResultsTable {
            corner: corner.to_string(),
            with_overall,
            ..Default::default()
        }
    }

    /// Place `(mean, std)` at `(row, column)`, adding either if new.
    pub fn set(&mut self, row: &str, column: &str, mean: f64, std: f64) {
        let ci = match self.columns.iter().position(|c| c == column) {
            Some(i) => i,
            None => {
                self.columns.push(column.to_string());
                for (_, cells) in &mut self.rows {
                    cells.push(None);
                }
                self.columns.len() - 1
            }
        };
        let ri = match self.rows.iter().position(|(r, _)| r == row) {
            Some(i) => i,
            None => {
                self.rows.push((row.to_string(), vec![None; self.columns.len()]));
                self.rows.len() - 1
            }
        };
        self.rows[ri].1[ci] = Some((mean, std));
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<(f64, f64)> {
        let ci = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|(r, _)| r == row)?.1[ci]
    }

    pub fn render_tsv(&self) -> String {
        let mut out = self.corner.clone();
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        if self.with_overall {
            out.push_str("\tOverall");
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            out.push_str(name);
            for c in cells {
                match c {
                    Some((m, s)) => out.push_str(&format!("\t{m:.4}±{s:.4}")),
                    None => out.push_str("\t-"),
                }
            }
            if self.with_overall {
                let means: Vec<f64> = cells.iter().flatten().map(|(m, _)| *m).collect();
                out.push_str(&format!("\t{:.4}", mean_std(&means).0));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(p: &[f64], n: &[f64]) -> ScoreSet {
        ScoreSet {
            positives: p.to_vec(),
            negatives: n.to_vec(),
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[0.9, 0.9], &[0.1, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[0.3], &[0.3])).unwrap(), 0.5);
        assert_eq!(auc(&set(&[0.8, 0.4], &[0.6, 0.2])).unwrap(), 0.75);
        assert!(auc(&set(&[], &[0.2])).is_err());
        assert!(auc(&set(&[0.1], &[])).is_err());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    fn batch() -> ImageBatch {
        ImageBatch::new(Array4::from_shape_fn((2, 3, 4, 5), |(a, b, c, d)| {
            (a * 60 + b * 20 + c * 5 + d) as f64 * 0.01
        }))
    }

    #[test]
    fn flip_and_rotate_cycles() {
        let b = batch();
        let f = apply_verification_transform(&b, TransformKind::Flip, 0).unwrap();
        assert_ne!(f, b);
        assert_eq!(apply_verification_transform(&f, TransformKind::Flip, 0).unwrap(), b);
        let mut r = b.clone();
        for i in 0..4 {
            r = apply_verification_transform(&r, TransformKind::Rotate90, 0).unwrap();
            if i == 0 {
                assert_eq!(r.dims(), (2, 3, 5, 4));
            }
        }
        assert_eq!(r, b);
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let g = apply_verification_transform(&batch(), TransformKind::Grayscale, 0).unwrap();
        for img in g.pixels.outer_iter() {
            assert_eq!(img.index_axis(Axis(0), 0), img.index_axis(Axis(0), 1));
            assert_eq!(img.index_axis(Axis(0), 0), img.index_axis(Axis(0), 2));
        }
    }

    #[test]
    fn blur_preserves_constants_and_noise_is_seeded() {
        let c = ImageBatch::new(Array4::from_elem((1, 3, 6, 6), 0.3));
        let b = apply_verification_transform(&c, TransformKind::GaussianBlur, 0).unwrap();
        assert!(b.pixels.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        let n1 = apply_verification_transform(&c, TransformKind::GaussianNoise, 4).unwrap();
        let n2 = apply_verification_transform(&c, TransformKind::GaussianNoise, 4).unwrap();
        let n3 = apply_verification_transform(&c, TransformKind::GaussianNoise, 5).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1, n3);
    }

    #[test]
    fn transforms_keep_batch_size() {
        let b = batch();
        for k in TransformKind::ALL {
            assert_eq!(apply_verification_transform(&b, k, 1).unwrap().len(), 2);
        }
        assert!("sharpen".parse::<TransformKind>().is_err());
        assert_eq!("flip".parse::<TransformKind>().unwrap(), TransformKind::Flip);
    }

    #[test]
    fn table_overall_is_row_mean() {
        let mut t = ResultsTable::new("target", true);
        t.set("sd", "a", 0.9, 0.01);
        t.set("sd", "b", 0.7, 0.02);
        let text = t.render_tsv();
        assert_eq!(text.lines().next().unwrap(), "target\ta\tb\tOverall");
        assert!(text.lines().nth(1).unwrap().ends_with("\t0.8000"));
        assert_eq!(t.cell("sd", "b"), Some((0.7, 0.02)));
    }
}
