//! Hand-written prompts with no training, next to a trained prompt.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example zero_shot
//! ```

use occ_attrib::data::synth_toy_dataset;
use occ_attrib::encoder::{DualEncoder, ImageBatch, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{run_protocol, zero_shot_baseline, EvalTask};
use occ_attrib::trainer::{LabeledImageBatch, TrainConfig};

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let spec = enc.preprocess_spec();
    let (t, n) = synth_toy_dataset(400, 0.3, (8, 8), 4)?;

    let images = ImageBatch::concat(&[&n.load_all(&spec)?, &t.load_all(&spec)?])?;
    let mut labels = vec![0; n.count()];
    labels.extend(vec![1; t.count()]);
    let test = LabeledImageBatch::new(images, labels)?;
    for pair in [("a photo of a real", "a photo of a fake"), ("a photo of a fake", "a photo of a real")] {
        let r = zero_shot_baseline(pair, &enc, &test)?;
        println!("zero-shot {pair:?}: {:.4}", r.auc_mean);
    }

    let task = EvalTask::new("toy", &t, &n, &n, 200, spec);
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };
    let r = run_protocol(&task, 3, &enc, &cfg)?;
    println!("trained prompt: {:.4} ± {:.4}", r.auc_mean, r.auc_std);
    Ok(())
}
