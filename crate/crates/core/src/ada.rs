//! Adversarial data augmentation: one-step sign-gradient perturbations of a
//! seeded subset of the training images.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, Axis, Zip};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ImageBatch;
use crate::error::{Error, Result};

pub const NON_TARGET: usize = 0;
pub const TARGET: usize = 1;

/// Perturbation step sizes from the supplementary sweep.
pub const EPSILON_SWEEP: [f64; 6] = [0.0, 0.03125, 0.0625, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaMode {
    None,
    NonTarget,
    Target,
    Both,
    TargetAsNonTarget,
}

impl AdaMode {
    pub const ALL: [AdaMode; 5] = [
        AdaMode::None,
        AdaMode::NonTarget,
        AdaMode::Both,
        AdaMode::Target,
        AdaMode::TargetAsNonTarget,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdaMode::None => "none",
            AdaMode::NonTarget => "non_target",
            AdaMode::Target => "target",
            AdaMode::Both => "both",
            AdaMode::TargetAsNonTarget => "target_as_non_target",
        }
    }

    fn covers(&self, label: usize) -> bool {
        match self {
            AdaMode::None => false,
            AdaMode::NonTarget => label == NON_TARGET,
            AdaMode::Target | AdaMode::TargetAsNonTarget => label != NON_TARGET,
            AdaMode::Both => true,
        }
    }
}

impl fmt::Display for AdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AdaMode::None,
            "non_target" | "nt" => AdaMode::NonTarget,
            "target" | "t" => AdaMode::Target,
            "both" => AdaMode::Both,
            "target_as_non_target" | "t_nt" => AdaMode::TargetAsNonTarget,
            _ => return Err(Error::invalid(format!("unknown ada mode {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaConfig {
    pub epsilon: f64,
    pub mode: AdaMode,
    pub proportion: f64,
    pub mask_seed: u64,
}

impl Default for AdaConfig {
    fn default() -> Self {
        AdaConfig {
            epsilon: 0.1,
            mode: AdaMode::NonTarget,
            proportion: 0.5,
            mask_seed: 0,
        }
    }
}

impl AdaConfig {
    pub fn disabled() -> Self {
        AdaConfig {
            mode: AdaMode::None,
            ..AdaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.proportion) {
            return Err(Error::invalid(format!(
                "ada proportion must be in [0, 1], got {}",
                self.proportion
            )));
        }
        Ok(())
    }
}

/// Pick `⌊proportion × count⌋` images of every class the mode covers.
/// Label 0 is non-target; any other label counts as a target class.
pub fn select_mask(labels: &[usize], mode: AdaMode, proportion: f64, seed: u64) -> Vec<bool> {
    let mut mask = vec![false; labels.len()];
    if mode == AdaMode::None {
        return mask;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    for class in 0..n_classes {
        if !mode.covers(class) {
            continue;
        }
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let k = (proportion * members.len() as f64).floor() as usize;
        for j in index::sample(&mut rng, members.len(), k.min(members.len())) {
            mask[members[j]] = true;
        }
    }
    mask
}

pub fn select_mask_for(labels: &[usize], cfg: &AdaConfig) -> Vec<bool> {
    select_mask(labels, cfg.mode, cfg.proportion, cfg.mask_seed)
}

/// Labels used for the loss after perturbation: target-as-non-target moves
/// every masked image to the non-target class.
pub fn training_labels(labels: &[usize], mask: &[bool], mode: AdaMode) -> Vec<usize> {
    labels
        .iter()
        .zip(mask)
        .map(|(&l, &m)| {
            if mode == AdaMode::TargetAsNonTarget && m {
                NON_TARGET
            } else {
                l
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Array4<f64>,
    pub mask: Vec<bool>,
    pub epsilon: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `δ = ε · sign(G)` on masked images, zero elsewhere.
pub fn gradient_sign_perturbation(
    grad: &Array4<f64>,
    mask: &[bool],
    epsilon: f64,
) -> Result<Perturbation> {
    if grad.shape()[0] != mask.len() {
        return Err(Error::invalid(format!(
            "mask has {} entries for {} images",
            mask.len(),
            grad.shape()[0]
        )));
    }
    let mut delta = Array4::zeros(grad.raw_dim());
    for (i, (g, mut d)) in grad
        .axis_iter(Axis(0))
        .zip(delta.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite image gradient at image {i}")));
        }
        if mask[i] {
            Zip::from(&mut d).and(&g).for_each(|d, &g| *d = epsilon * sign(g));
        }
    }
    Ok(Perturbation {
        delta,
        mask: mask.to_vec(),
        epsilon,
    })
}

/// `X + δ`, unclamped.
pub fn apply(batch: &ImageBatch, pert: &Perturbation) -> Result<ImageBatch> {
    if batch.pixels.shape() != pert.delta.shape() {
        return Err(Error::invalid(format!(
            "perturbation shape {:?} does not match batch {:?}",
            pert.delta.shape(),
            batch.pixels.shape()
        )));
    }
    Ok(ImageBatch::new(&batch.pixels + &pert.delta))
}
