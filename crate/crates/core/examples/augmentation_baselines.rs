//! Standard image transforms used in place of ADA during training, against
//! ADA itself and plain prompt tuning.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example augmentation_baselines
//! ```

use occ_attrib::data::{synth_under_covered_task, UnderCoveredGeometry};
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{run_protocol, EvalTask, Method, TransformKind};
use occ_attrib::trainer::TrainConfig;

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let task = synth_under_covered_task(700, 700, 200, (8, 8), &UnderCoveredGeometry::default(), 1)?;
    let eval = EvalTask::new("uc", &task.target, &task.non_target, &task.outside, 200, enc.preprocess_spec());
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };

    let mut methods = vec![Method::PromptTuning, Method::OccClip];
    methods.extend(TransformKind::ALL[1..].iter().map(|&k| Method::StandardAugmentation(k)));
    for m in methods {
        let r = run_protocol(&eval.clone().with_method(m), 5, &enc, &cfg)?;
        println!("{:<28} {:.4} ± {:.4}", m.to_string(), r.auc_mean, r.auc_std);
    }
    Ok(())
}
