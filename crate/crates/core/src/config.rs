//! Experiment configuration files (TOML) with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ada::{AdaMode, EPSILON_SWEEP};
use crate::data::{
    ingest, synth_toy_dataset, synth_under_covered_task, DatasetHandle, PreprocessSpec,
    UnderCoveredGeometry,
};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::evaluator::{TransformKind, TransformParams};
use crate::prompt::{ClassPromptPair, SUPPLEMENTARY_PAIRS};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_reps: usize,
    /// Test images per side.
    pub test_cap: usize,
    pub transforms: Vec<TransformKind>,
    pub transform_params: TransformParams,
    /// Repetition `r` draws its few-shot set with `draw_seed + r`.
    pub draw_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_reps: 10,
            test_cap: 200,
            transforms: vec![TransformKind::None],
            transform_params: TransformParams::default(),
            draw_seed: 0,
        }
    }
}

/// Parameters for `synth:` dataset references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub size: usize,
    pub n_target: usize,
    pub n_non_target: usize,
    pub n_outside: usize,
    pub geometry: UnderCoveredGeometry,
    pub separation: f64,
    pub n_per_class: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            seed: 0,
            size: 8,
            n_target: 700,
            n_non_target: 500,
            n_outside: 200,
            geometry: UnderCoveredGeometry::default(),
            separation: 0.4,
            n_per_class: 700,
        }
    }
}

/// Values for each sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub shots: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub proportion: Vec<f64>,
    pub ada_mode: Vec<AdaMode>,
    pub prompt_pair: Vec<ClassPromptPair>,
    pub augmentation: Vec<TransformKind>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            shots: vec![10, 20, 50, 100, 200],
            epsilon: EPSILON_SWEEP.to_vec(),
            proportion: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ada_mode: AdaMode::ALL.to_vec(),
            prompt_pair: SUPPLEMENTARY_PAIRS
                .iter()
                .map(|(a, b)| ClassPromptPair::new(a, b).expect("valid pair"))
                .collect(),
            augmentation: TransformKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder_id: String,
    pub target_dataset: String,
    pub non_target_dataset: String,
    #[serde(default)]
    pub test_non_target_datasets: Vec<String>,
    #[serde(default)]
    pub prompt_pair: ClassPromptPair,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Overrides the encoder's own preprocessing.
    #[serde(default)]
    pub preprocess: Option<PreprocessSpec>,
    pub output_dir: PathBuf,
    /// Directory that relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `a.b.c = value` inside `root`, creating intermediate tables.
fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train.prompt_pair = cfg.prompt_pair.clone();
        cfg.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        if cfg.eval.n_reps == 0 || cfg.eval.test_cap == 0 {
            return Err(Error::Config("eval.n_reps and eval.test_cap must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve_path(&self.output_dir)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn preprocess_for(&self, enc: &dyn DualEncoder) -> PreprocessSpec {
        self.preprocess.clone().unwrap_or_else(|| {
            let mut s = enc.preprocess_spec();
            if self.is_synthetic() {
                s.size = self.synth.size;
            }
            s
        })
    }

    fn is_synthetic(&self) -> bool {
        self.target_dataset.starts_with("synth:")
    }

    /// Test non-target datasets, defaulting to the training non-target dataset.
    pub fn test_datasets(&self) -> Vec<String> {
        if self.test_non_target_datasets.is_empty() {
            vec![self.non_target_dataset.clone()]
        } else {
            self.test_non_target_datasets.clone()
        }
    }

    /// Resolve a dataset reference: a directory path, or one of
    /// `synth:undercovered/{target,non_target,outside}` and
    /// `synth:separable/{target,non_target}`.
    pub fn resolve_dataset(&self, reference: &str) -> Result<DatasetHandle> {
        if let Some(rest) = reference.strip_prefix("synth:") {
            let s = &self.synth;
            let dim = (s.size, s.size);
            let mut h = match rest {
                "undercovered/target" | "undercovered/non_target" | "undercovered/outside" => {
                    let task = synth_under_covered_task(
                        s.n_target,
                        s.n_non_target,
                        s.n_outside,
                        dim,
                        &s.geometry,
                        s.seed,
                    )?;
                    match rest {
                        "undercovered/target" => task.target,
                        "undercovered/non_target" => task.non_target,
                        _ => task.outside,
                    }
                }
                "separable/target" | "separable/non_target" => {
                    let (t, n) = synth_toy_dataset(s.n_per_class, s.separation, dim, s.seed)?;
                    if rest == "separable/target" {
                        t
                    } else {
                        n
                    }
                }
                _ => return Err(Error::Config(format!("unknown synthetic dataset {reference:?}"))),
            };
            h.name = rest.replace('/', "_");
            return Ok(h);
        }
        let path = self.resolve_path(Path::new(reference));
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(reference)
            .to_string();
        ingest(&path, &name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
encoder_id = "toy:1"
target_dataset = "synth:undercovered/target"
non_target_dataset = "synth:undercovered/non_target"
output_dir = "out"
"#;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::from_toml(
            MINIMAL,
            &[
                "train.epochs=5".into(),
                "train.ada.mode=target".into(),
                "eval.transforms=[\"flip\"]".into(),
                "prompt_pair=this-other".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.ada.mode, AdaMode::Target);
        assert_eq!(cfg.eval.transforms, vec![TransformKind::Flip]);
        assert_eq!(cfg.train.prompt_pair.to_string(), "this-other");
        assert_eq!(cfg.eval.n_reps, 10);
        assert_eq!(cfg.test_datasets(), vec!["synth:undercovered/non_target"]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml(MINIMAL, &["train.epohcs=5".into()]).unwrap_err();
        assert!(err.to_string().contains("epohcs"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, &[]).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn synthetic_references_resolve() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL, &[]).unwrap();
        cfg.synth.n_outside = 7;
        let h = cfg.resolve_dataset("synth:undercovered/outside").unwrap();
        assert_eq!(h.count(), 7);
        assert!(cfg.resolve_dataset("synth:nothing").is_err());
        let err = cfg.resolve_dataset("/no/such/dir").unwrap_err();
        assert!(err.to_string().contains("/no/such/dir"));
        assert_eq!(err.exit_code(), 2);
    }
}
