//! Compare ADA application modes on a synthetic task whose training
//! non-targets cover only part of the space around the target.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example ada_modes
//! ```

use occ_attrib::ada::AdaMode;
use occ_attrib::data::{synth_under_covered_task, UnderCoveredGeometry};
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{run_protocol, EvalTask};
use occ_attrib::trainer::TrainConfig;

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let task = synth_under_covered_task(700, 700, 200, (8, 8), &UnderCoveredGeometry::default(), 1)?;
    let eval = EvalTask::new(
        "under_covered",
        &task.target,
        &task.non_target,
        &task.outside,
        200,
        enc.preprocess_spec(),
    );

    let mut results = Vec::new();
    for mode in [
        AdaMode::None,
        AdaMode::NonTarget,
        AdaMode::Both,
        AdaMode::Target,
        AdaMode::TargetAsNonTarget,
    ] {
        let mut cfg = TrainConfig {
            base_lr: 100.0,
            warm_lr: 10.0,
            ..TrainConfig::default()
        };
        cfg.ada.mode = mode;
        let report = run_protocol(&eval, 10, &enc, &cfg)?;
        println!(
            "{:<22} {:.4} ± {:.4}  {:?}",
            mode.as_str(),
            report.auc_mean,
            report.auc_std,
            report.per_run_auc.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
        results.push((mode, report.per_run_auc));
    }

    let runs = |m: AdaMode| &results.iter().find(|(k, _)| *k == m).unwrap().1;
    let wins = |a: AdaMode, b: AdaMode, strict: bool| {
        runs(a)
            .iter()
            .zip(runs(b))
            .filter(|(x, y)| if strict { x > y } else { x >= y })
            .count()
    };
    println!(
        "seeds with non_target >= t_nt: {}/10, t_nt > none: {}/10, none > target: {}/10",
        wins(AdaMode::NonTarget, AdaMode::TargetAsNonTarget, false),
        wins(AdaMode::TargetAsNonTarget, AdaMode::None, true),
        wins(AdaMode::None, AdaMode::Target, true),
    );
    Ok(())
}
