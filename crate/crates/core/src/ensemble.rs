//! Multi-source attribution: one-vs-rest ensembles with an "others"
//! outcome, and direct multi-class prompt training.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ada::{AdaConfig, AdaMode};
use crate::encoder::{argmax, DualEncoder, ImageBatch};
use crate::error::{Error, Result};
use crate::evaluator::score_images;
use crate::fingerprint::fingerprint_of;
use crate::prompt::{check_token, OneClassClassifier};
use crate::trainer::{fit, predict, Augmentation, LabeledImageBatch, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Class(usize),
    Others,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Class(i) => write!(f, "{i}"),
            Decision::Others => f.write_str("others"),
        }
    }
}

/// The highest score names the source if it is strictly above `threshold`;
/// otherwise the image belongs to none of them. Ties go to the lowest index.
pub fn decide(scores: &[f64], threshold: f64) -> Decision {
    if scores.is_empty() {
        return Decision::Others;
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    if scores.iter().filter(|&&s| s == scores[best]).count() > 1 {
        debug!("argmax tie at {}, taking index {best}", scores[best]);
    }
    if scores[best] > threshold {
        Decision::Class(best)
    } else {
        Decision::Others
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub decision: Decision,
    pub scores: Vec<f64>,
    pub max_score: f64,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    classifiers: Vec<OneClassClassifier>,
    threshold: f64,
    class_names: Vec<String>,
}

impl Ensemble {
    pub fn new(
        classifiers: Vec<OneClassClassifier>,
        threshold: f64,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if classifiers.is_empty() {
            return Err(Error::invalid("ensemble needs at least one classifier"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold must be in (0, 1), got {threshold}")));
        }
        if class_names.len() != classifiers.len() {
            return Err(Error::invalid(format!(
                "{} class names for {} classifiers",
                class_names.len(),
                classifiers.len()
            )));
        }
        let first = &classifiers[0];
        for c in &classifiers[1..] {
            if c.encoder_id != first.encoder_id || c.encoder_fingerprint != first.encoder_fingerprint {
                return Err(Error::invalid(format!(
                    "classifiers use different encoders: {:?} and {:?}",
                    first.encoder_id, c.encoder_id
                )));
            }
            if c.similarity != first.similarity {
                return Err(Error::invalid("classifiers use different similarity settings"));
            }
        }
        Ok(Ensemble {
            classifiers,
            threshold,
            class_names,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn classifiers(&self) -> &[OneClassClassifier] {
        &self.classifiers
    }

    pub fn encoder_id(&self) -> &str {
        &self.classifiers[0].encoder_id
    }

    /// `[n_images][K]` target scores.
    pub fn scores(&self, enc: &dyn DualEncoder, images: &ImageBatch) -> Result<Vec<Vec<f64>>> {
        let per_clf = self
            .classifiers
            .par_iter()
            .map(|c| score_images(c, enc, images))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..images.len())
            .map(|i| per_clf.iter().map(|s| s[i]).collect())
            .collect())
    }
}

/// Attribute every image in `images`.
pub fn attribute(ens: &Ensemble, enc: &dyn DualEncoder, images: &ImageBatch) -> Result<Vec<AttributionResult>> {
    Ok(ens
        .scores(enc, images)?
        .into_iter()
        .map(|scores| {
            let max_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            AttributionResult {
                decision: decide(&scores, ens.threshold),
                scores,
                max_score,
            }
        })
        .collect())
}

/// Fraction of images whose decision equals the label.
pub fn ensemble_accuracy(
    ens: &Ensemble,
    enc: &dyn DualEncoder,
    images: &ImageBatch,
    labels: &[Decision],
) -> Result<f64> {
    if images.is_empty() || labels.len() != images.len() {
        return Err(Error::invalid(format!(
            "need a non-empty test set with one label per image, got {} images and {} labels",
            images.len(),
            labels.len()
        )));
    }
    let results = attribute(ens, enc, images)?;
    let hits = results.iter().zip(labels).filter(|(r, l)| r.decision == **l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestClass {
    pub name: String,
    pub checkpoint: PathBuf,
}

/// Ensemble description on disk: checkpoints, class names, threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub classes: Vec<ManifestClass>,
}

fn default_threshold() -> f64 {
    0.5
}

impl EnsembleManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    /// Load every checkpoint; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Ensemble> {
        let classifiers = self
            .classes
            .iter()
            .map(|c| {
                let p = if c.checkpoint.is_absolute() {
                    c.checkpoint.clone()
                } else {
                    base.join(&c.checkpoint)
                };
                OneClassClassifier::load(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(
            classifiers,
            self.threshold,
            self.classes.iter().map(|c| c.name.clone()).collect(),
        )
    }
}

/// Training data for a direct multi-class prompt: one shared non-target
/// set and one set per source.
#[derive(Debug, Clone)]
pub struct MultiClassSplit {
    pub non_target: ImageBatch,
    pub targets: Vec<ImageBatch>,
    /// `K + 1` prompt tokens, non-target first.
    pub class_names: Vec<String>,
}

/// A single context with `K + 1` class prompts.
#[derive(Debug, Clone)]
pub struct MultiClassifier {
    pub inner: OneClassClassifier,
}

impl MultiClassifier {
    pub fn n_sources(&self) -> usize {
        self.inner.class_names.len() - 1
    }

    /// `[n_images × (K+1)]` class probabilities.
    pub fn probabilities(&self, enc: &dyn DualEncoder, images: &ImageBatch) -> Result<ndarray::Array2<f64>> {
        Ok(predict(enc, &self.inner, images)?.1)
    }

    /// Source index, or `Others` when the non-target prompt wins.
    pub fn decide(&self, enc: &dyn DualEncoder, images: &ImageBatch) -> Result<Vec<Decision>> {
        let p = self.probabilities(enc, images)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| match argmax(r) {
                0 => Decision::Others,
                k => Decision::Class(k - 1),
            })
            .collect())
    }

    pub fn accuracy(&self, enc: &dyn DualEncoder, images: &ImageBatch, labels: &[Decision]) -> Result<f64> {
        if images.is_empty() || labels.len() != images.len() {
            return Err(Error::invalid("need a non-empty test set with one label per image"));
        }
        let d = self.decide(enc, images)?;
        Ok(d.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }
}

/// Train one context over `K + 1` classes. ADA, when enabled, perturbs
/// only the non-target images.
pub fn train_direct_multiclass(
    split: &MultiClassSplit,
    enc: &dyn DualEncoder,
    cfg: &TrainConfig,
) -> Result<MultiClassifier> {
    let k = split.targets.len();
    if k == 0 {
        return Err(Error::invalid("need at least one target source"));
    }
    if split.class_names.len() != k + 1 {
        return Err(Error::invalid(format!(
            "need {} class names, got {}",
            k + 1,
            split.class_names.len()
        )));
    }
    for n in &split.class_names {
        check_token(n)?;
    }
    for (i, t) in std::iter::once(&split.non_target).chain(&split.targets).enumerate() {
        if t.len() < cfg.shots {
            return Err(Error::invalid(format!(
                "class {} has {} images, need {}",
                split.class_names[i],
                t.len(),
                cfg.shots
            )));
        }
    }
    let mut parts = vec![&split.non_target];
    parts.extend(split.targets.iter());
    let images = ImageBatch::concat(&parts)?;
    let mut labels = Vec::with_capacity(images.len());
    for (class, part) in parts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(class, part.len()));
    }
    let batch = LabeledImageBatch::new(images, labels)?;
    let ada = AdaConfig {
        mode: match cfg.ada.mode {
            AdaMode::None => AdaMode::None,
            _ => AdaMode::NonTarget,
        },
        ..cfg.ada.clone()
    };
    let state = fit(enc, &batch, split.class_names.clone(), Augmentation::Ada(ada.clone()), cfg, &mut |_, _| {})?;
    Ok(MultiClassifier {
        inner: OneClassClassifier {
            context: state.ctx,
            class_names: state.class_names,
            encoder_id: enc.id(),
            encoder_fingerprint: enc.fingerprint(),
            similarity: cfg.similarity,
            ada,
            train_fingerprint: fingerprint_of(&("direct_multiclass", cfg, enc.id(), &split.class_names))?,
        },
    })
}
