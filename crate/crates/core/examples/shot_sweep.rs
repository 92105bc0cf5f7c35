//! AUC against the number of shots, plus the augmented-proportion and
//! epsilon sweeps, rendered as tab-separated tables.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example shot_sweep
//! ```

use occ_attrib::data::{synth_under_covered_task, UnderCoveredGeometry};
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{run_protocol, EvalTask, ResultsTable};
use occ_attrib::trainer::TrainConfig;

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let task = synth_under_covered_task(700, 700, 200, (8, 8), &UnderCoveredGeometry::default(), 1)?;
    let eval = EvalTask::new("uc", &task.target, &task.non_target, &task.outside, 200, enc.preprocess_spec());
    let base = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };
    let reps = 5;

    let mut shots = ResultsTable::new("task", false);
    for n in [10, 20, 50, 100, 200] {
        let r = run_protocol(&eval, reps, &enc, &TrainConfig { shots: n, ..base.clone() })?;
        shots.set("uc_outside", &n.to_string(), r.auc_mean, r.auc_std);
    }
    print!("{}", shots.render_tsv());

    let mut prop = ResultsTable::new("task", false);
    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut cfg = base.clone();
        cfg.ada.proportion = p;
        let r = run_protocol(&eval, reps, &enc, &cfg)?;
        prop.set("uc_outside", &p.to_string(), r.auc_mean, r.auc_std);
    }
    print!("\n{}", prop.render_tsv());

    let mut eps = ResultsTable::new("task", false);
    for e in occ_attrib::ada::EPSILON_SWEEP {
        let mut cfg = base.clone();
        cfg.ada.epsilon = e;
        let r = run_protocol(&eval, reps, &enc, &cfg)?;
        eps.set("uc_outside", &e.to_string(), r.auc_mean, r.auc_std);
    }
    print!("\n{}", eps.render_tsv());
    Ok(())
}
