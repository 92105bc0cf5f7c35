//! Experiment driver behind the `occ` binary.
//!
//! Every command reads an [`ExperimentConfig`] and accepts trailing
//! `key=value` overrides (`train.epochs=20`, `eval.n_reps=3`, ...).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::ada::AdaMode;
use crate::config::ExperimentConfig;
use crate::data::{draw_few_shot, manifest_rows, preprocess, render_manifest, reserve_test, RawImage};
use crate::encoder::{resolve_encoder, DualEncoder};
use crate::ensemble::{attribute, Decision, EnsembleManifest};
use crate::error::{Error, Result};
use crate::evaluator::{
    classifier_auc, load_test_pools, repetition_config, run_protocol, settings_of, task_fingerprint,
    EvalReport, EvalTask, Method, ResultsTable, TransformKind,
};
use crate::fingerprint::fingerprint_of;
use crate::io::write_atomic;
use crate::prompt::{ClassPromptPair, OneClassClassifier};
use crate::trainer::{train_logged, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "occ", version, about = "Few-shot one-class origin attribution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one prompt per repetition seed.
    Train {
        config: PathBuf,
        /// `key=value` config overrides.
        overrides: Vec<String>,
    },
    /// Score saved checkpoints on every test dataset and transform.
    Eval { config: PathBuf, overrides: Vec<String> },
    /// Train and evaluate once per value of one axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        overrides: Vec<String>,
    },
    /// Attribute images with an ensemble manifest.
    Attribute {
        manifest: PathBuf,
        /// Image files or directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump image embeddings as tab-separated text.
    ExportEmbeddings {
        config: PathBuf,
        /// Dataset references; defaults to every dataset in the config.
        #[arg(long = "dataset")]
        datasets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        overrides: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Shots,
    Epsilon,
    Proportion,
    AdaMode,
    PromptPair,
    Augmentation,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Shots => "shots",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Proportion => "proportion",
            SweepAxis::AdaMode => "ada_mode",
            SweepAxis::PromptPair => "prompt_pair",
            SweepAxis::Augmentation => "augmentation",
        }
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let out = cmd_train(&cfg)?;
            println!("wrote {} checkpoints to {}", out.len(), cfg.output_dir().join("checkpoints").display());
            Ok(0)
        }
        Command::Eval { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let (_, table) = cmd_eval(&cfg)?;
            print!("{table}");
            Ok(0)
        }
        Command::Sweep {
            config,
            axis,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let (_, table) = cmd_sweep(&cfg, axis)?;
            print!("{table}");
            Ok(0)
        }
        Command::Attribute { manifest, paths, out } => {
            let records = cmd_attribute(&manifest, &paths)?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).expect("record serializes"));
                text.push('\n');
            }
            match out {
                Some(p) => write_atomic(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                warn!("{failed} of {} images could not be attributed", records.len());
            }
            Ok(if failed == records.len() { 1 } else { 0 })
        }
        Command::ExportEmbeddings {
            config,
            datasets,
            out,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let path = out.unwrap_or_else(|| cfg.output_dir().join("embeddings.tsv"));
            let rows = cmd_export_embeddings(&cfg, &datasets, &path)?;
            println!("wrote {rows} rows to {}", path.display());
            Ok(0)
        }
    }
}

fn encoder_for(cfg: &ExperimentConfig) -> Result<Arc<dyn DualEncoder>> {
    resolve_encoder(&cfg.encoder_id).map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(format!("encoder_id: {m}")),
        e => e,
    })
}

fn checkpoint_path(cfg: &ExperimentConfig, rep: usize) -> PathBuf {
    cfg.output_dir().join("checkpoints").join(format!("rep_{rep}.json"))
}

/// A task whose test pools come from `test_ref`.
fn task_for(cfg: &ExperimentConfig, enc: &dyn DualEncoder, test_ref: &str) -> Result<EvalTask> {
    let target = cfg.resolve_dataset(&cfg.target_dataset)?;
    let non_target = cfg.resolve_dataset(&cfg.non_target_dataset)?;
    let test = if test_ref == cfg.non_target_dataset {
        non_target.clone()
    } else {
        cfg.resolve_dataset(test_ref)?
    };
    let name = format!("{}_vs_{}", target.name, test.name);
    let mut task = EvalTask::new(&name, &target, &non_target, &test, cfg.eval.test_cap, cfg.preprocess_for(enc));
    task.transform_params = cfg.eval.transform_params.clone();
    task.draw_seed = cfg.eval.draw_seed;
    Ok(task)
}

/// Train `eval.n_reps` classifiers and write checkpoints, per-epoch logs
/// and the split manifest under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let enc = encoder_for(cfg)?;
    let task = task_for(cfg, enc.as_ref(), &cfg.non_target_dataset)?;
    let out = cfg.output_dir();
    let n = cfg.eval.n_reps;
    let seeds: Vec<u64> = (0..n).map(|r| task.draw_seed.wrapping_add(r as u64)).collect();

    let paths = (0..n)
        .into_par_iter()
        .map(|rep| {
            let split = draw_few_shot(
                &task.target_train,
                &task.non_target_train,
                cfg.train.shots,
                seeds[rep],
                &task.preprocess,
            )?;
            let (clf, log) = train_logged(&split, enc.as_ref(), &repetition_config(&cfg.train, rep))?;
            let path = checkpoint_path(cfg, rep);
            clf.save(&path)?;
            let mut lines = String::new();
            for rec in &log {
                lines.push_str(&serde_json::to_string(rec).expect("record serializes"));
                lines.push('\n');
            }
            write_atomic(&out.join("logs").join(format!("rep_{rep}.jsonl")), lines.as_bytes())?;
            info!("rep {rep}: final loss {:.6}", log.last().map_or(f64::NAN, |r| r.loss));
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;

    let target = cfg.resolve_dataset(&cfg.target_dataset)?;
    let non_target = cfg.resolve_dataset(&cfg.non_target_dataset)?;
    let mut rows = Vec::new();
    for h in [&target, &non_target] {
        let (train_pool, test_pool) = reserve_test(h, cfg.eval.test_cap);
        rows.extend(manifest_rows(&test_pool, &train_pool, cfg.train.shots, &seeds)?);
    }
    write_atomic(&out.join("manifest.tsv"), render_manifest(&rows).as_bytes())?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(paths)
}

fn load_checkpoints(cfg: &ExperimentConfig, enc: &dyn DualEncoder) -> Result<Vec<OneClassClassifier>> {
    (0..cfg.eval.n_reps)
        .map(|rep| {
            let clf = OneClassClassifier::load(&checkpoint_path(cfg, rep))?;
            if clf.encoder_id != enc.id() || clf.encoder_fingerprint != enc.fingerprint() {
                return Err(Error::Config(format!(
                    "checkpoint rep_{rep} was trained with encoder {:?}, config uses {:?}",
                    clf.encoder_id,
                    enc.id()
                )));
            }
            Ok(clf)
        })
        .collect()
}

fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&r.to_json_line()?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn table_text(table: &ResultsTable, reports: &[EvalReport]) -> Result<String> {
    let fps: Vec<&str> = reports.iter().map(|r| r.config_fingerprint.as_str()).collect();
    Ok(format!("# fingerprint\t{}\n{}", fingerprint_of(&fps)?, table.render_tsv()))
}

/// Evaluate saved checkpoints: one report per (test dataset, transform),
/// written as `results.jsonl` plus a `results.tsv` table with an Overall column.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<(Vec<EvalReport>, String)> {
    let enc = encoder_for(cfg)?;
    let classifiers = load_checkpoints(cfg, enc.as_ref())?;
    let mut reports = Vec::new();
    let mut table = ResultsTable::new("transform", true);
    for test_ref in cfg.test_datasets() {
        let base = task_for(cfg, enc.as_ref(), &test_ref)?;
        for &t in &cfg.eval.transforms {
            let task = base.clone().with_transform(t);
            let pools = load_test_pools(&task)?;
            let per_run = classifiers
                .par_iter()
                .map(|c| classifier_auc(c, enc.as_ref(), &pools))
                .collect::<Result<Vec<_>>>()?;
            let report = EvalReport::from_runs(
                &task.name,
                &task.method.to_string(),
                per_run,
                task_fingerprint(&task, cfg.eval.n_reps, enc.as_ref(), &cfg.train)?,
                t,
                (pools.target.len(), pools.non_target.len()),
                settings_of(&cfg.train, enc.as_ref()),
            );
            table.set(t.as_str(), &task.non_target_test.name, report.auc_mean, report.auc_std);
            reports.push(report);
        }
    }
    let text = table_text(&table, &reports)?;
    let out = cfg.output_dir();
    write_reports(&out.join("results.jsonl"), &reports)?;
    write_atomic(&out.join("results.tsv"), text.as_bytes())?;
    Ok((reports, text))
}

/// The values an axis takes and how each one changes the run.
fn axis_values(cfg: &ExperimentConfig, axis: SweepAxis) -> Vec<(String, TrainConfig, Method)> {
    let s = &cfg.sweep;
    let base = &cfg.train;
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        SweepAxis::Shots => s
            .shots
            .iter()
            .map(|&v| (v.to_string(), with(&|c| c.shots = v), Method::OccClip))
            .collect(),
        SweepAxis::Epsilon => s
            .epsilon
            .iter()
            .map(|&v| (v.to_string(), with(&|c| c.ada.epsilon = v), Method::OccClip))
            .collect(),
        SweepAxis::Proportion => s
            .proportion
            .iter()
            .map(|&v| (v.to_string(), with(&|c| c.ada.proportion = v), Method::OccClip))
            .collect(),
        SweepAxis::AdaMode => s
            .ada_mode
            .iter()
            .map(|&m: &AdaMode| (m.to_string(), with(&|c| c.ada.mode = m), Method::OccClip))
            .collect(),
        SweepAxis::PromptPair => s
            .prompt_pair
            .iter()
            .map(|p: &ClassPromptPair| (p.to_string(), with(&|c| c.prompt_pair = p.clone()), Method::OccClip))
            .collect(),
        SweepAxis::Augmentation => s
            .augmentation
            .iter()
            .map(|&k: &TransformKind| (k.to_string(), base.clone(), Method::StandardAugmentation(k)))
            .collect(),
    }
}

/// Train and evaluate once per axis value; rows are axis values, columns
/// test datasets plus Overall. Writes `sweep_<axis>.{jsonl,tsv}`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<(Vec<EvalReport>, String)> {
    let enc = encoder_for(cfg)?;
    let values = axis_values(cfg, axis);
    if values.is_empty() {
        return Err(Error::Config(format!("sweep.{} lists no values", axis.as_str())));
    }
    for (v, c, _) in &values {
        c.validate()
            .map_err(|e| Error::Config(format!("sweep.{} = {v}: {e}", axis.as_str())))?;
    }
    let mut reports = Vec::new();
    let mut table = ResultsTable::new(axis.as_str(), true);
    let multi = cfg.eval.transforms.len() > 1;
    for test_ref in cfg.test_datasets() {
        let base = task_for(cfg, enc.as_ref(), &test_ref)?;
        for &t in &cfg.eval.transforms {
            for (label, train_cfg, method) in &values {
                let task = base.clone().with_transform(t).with_method(*method);
                info!("sweep {} = {label} on {}", axis.as_str(), task.name);
                let report = run_protocol(&task, cfg.eval.n_reps, enc.as_ref(), train_cfg)?;
                let row = if multi { format!("{label} [{t}]") } else { label.clone() };
                table.set(&row, &task.non_target_test.name, report.auc_mean, report.auc_std);
                reports.push(report);
            }
        }
    }
    let text = table_text(&table, &reports)?;
    let out = cfg.output_dir();
    write_reports(&out.join(format!("sweep_{}.jsonl", axis.as_str())), &reports)?;
    write_atomic(&out.join(format!("sweep_{}.tsv", axis.as_str())), text.as_bytes())?;
    Ok((reports, text))
}

/// One line of `attribute` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionRecord {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file())
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Attribute every image (directories expand to their files, sorted).
/// Images that cannot be read get an error record.
pub fn cmd_attribute(manifest_path: &Path, paths: &[PathBuf]) -> Result<Vec<AttributionRecord>> {
    let manifest = EnsembleManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let ens = manifest.load(base)?;
    let enc = resolve_encoder(ens.encoder_id())?;
    if ens.classifiers()[0].encoder_fingerprint != enc.fingerprint() {
        return Err(Error::Config(format!(
            "encoder {:?} does not match the fingerprint stored in the checkpoints",
            ens.encoder_id()
        )));
    }
    let spec = enc.preprocess_spec();
    let files = expand_paths(paths)?;
    let decoded: Vec<Result<RawImage>> = files.par_iter().map(|p| RawImage::decode(p)).collect();
    let good: Vec<RawImage> = decoded.iter().filter_map(|d| d.as_ref().ok().cloned()).collect();
    let mut results = if good.is_empty() {
        Vec::new()
    } else {
        attribute(&ens, enc.as_ref(), &preprocess(&good, &spec)?)?
    }
    .into_iter();
    let names = ens.class_names();
    Ok(files
        .iter()
        .zip(decoded)
        .map(|(path, d)| {
            let path = path.display().to_string();
            match d {
                Err(e) => AttributionRecord {
                    path,
                    decision: None,
                    scores: Vec::new(),
                    classes: Vec::new(),
                    threshold: None,
                    error: Some(e.to_string()),
                },
                Ok(_) => {
                    let r = results.next().expect("one result per decoded image");
                    AttributionRecord {
                        path,
                        decision: Some(match r.decision {
                            Decision::Class(i) => names[i].clone(),
                            Decision::Others => "others".into(),
                        }),
                        scores: r.scores,
                        classes: names.to_vec(),
                        threshold: Some(ens.threshold()),
                        error: None,
                    }
                }
            }
        })
        .collect())
}

const EXPORT_CHUNK: usize = 256;

/// Write `dataset, path, e_0 … e_{D-1}` rows for every image of each
/// dataset. Returns the number of rows.
pub fn cmd_export_embeddings(cfg: &ExperimentConfig, datasets: &[String], out: &Path) -> Result<usize> {
    let enc = encoder_for(cfg)?;
    let spec = cfg.preprocess_for(enc.as_ref());
    let refs: Vec<String> = if datasets.is_empty() {
        let mut r = vec![cfg.target_dataset.clone(), cfg.non_target_dataset.clone()];
        for t in cfg.test_datasets() {
            if !r.contains(&t) {
                r.push(t);
            }
        }
        r
    } else {
        datasets.to_vec()
    };
    let mut text = String::from("dataset\tpath");
    for i in 0..enc.embed_dim() {
        write!(text, "\te{i}").expect("write to string");
    }
    text.push('\n');
    let mut rows = 0;
    for r in &refs {
        let h = cfg.resolve_dataset(r)?;
        let ids = h.ids();
        for start in (0..h.count()).step_by(EXPORT_CHUNK) {
            let idx: Vec<usize> = (start..(start + EXPORT_CHUNK).min(h.count())).collect();
            let emb = enc.encode_images(&h.load(&idx, &spec)?)?;
            for (row, &i) in emb.data.rows().into_iter().zip(&idx) {
                write!(text, "{}\t{}", h.name, ids[i]).expect("write to string");
                for v in row {
                    write!(text, "\t{v}").expect("write to string");
                }
                text.push('\n');
                rows += 1;
            }
        }
    }
    write_atomic(out, text.as_bytes())?;
    Ok(rows)
}
