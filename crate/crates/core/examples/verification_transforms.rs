//! Train once per seed, then score test images after each processing step
//! applied at verification time.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example verification_transforms
//! ```

use occ_attrib::data::synth_toy_dataset;
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{classifier_auc, load_test_pools, mean_std, train_repetition, EvalTask, TransformKind};
use occ_attrib::trainer::TrainConfig;

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::parse("toy:7:grid=2")?)?;
    let (t, n) = synth_toy_dataset(600, 0.2, (8, 8), 3)?;
    let task = EvalTask::new("toy", &t, &n, &n, 200, enc.preprocess_spec());
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };
    let classifiers = (0..5)
        .map(|rep| train_repetition(&task, rep, &enc, &cfg))
        .collect::<occ_attrib::Result<Vec<_>>>()?;

    for kind in TransformKind::ALL {
        let pools = load_test_pools(&task.clone().with_transform(kind))?;
        let aucs = classifiers
            .iter()
            .map(|c| classifier_auc(c, &enc, &pools))
            .collect::<occ_attrib::Result<Vec<_>>>()?;
        let (m, s) = mean_std(&aucs);
        println!("{:<15} {m:.4} ± {s:.4}", kind.as_str());
    }
    Ok(())
}
