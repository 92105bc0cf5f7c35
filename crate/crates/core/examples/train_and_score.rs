//! Train one prompt on a separable synthetic pair and score held-out images.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example train_and_score
//! ```

use occ_attrib::data::{draw_few_shot, reserve_test, synth_toy_dataset, PreprocessSpec};
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::evaluator::{auc, score_images, ScoreSet};
use occ_attrib::trainer::{train_logged, TrainConfig};

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let spec = PreprocessSpec::toy();
    let (target, non_target) = synth_toy_dataset(500, 0.3, (8, 8), 0)?;
    let (t_train, t_test) = reserve_test(&target, 200);
    let (n_train, n_test) = reserve_test(&non_target, 200);

    let split = draw_few_shot(&t_train, &n_train, 50, 0, &spec)?;
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };
    let (clf, log) = train_logged(&split, &enc, &cfg)?;
    for rec in log.iter().step_by(40) {
        println!("epoch {:>3}  lr {:>8.3}  loss {:.5}", rec.epoch, rec.lr, rec.loss);
    }

    let scores = ScoreSet {
        positives: score_images(&clf, &enc, &t_test.load_all(&spec)?)?,
        negatives: score_images(&clf, &enc, &n_test.load_all(&spec)?)?,
    };
    println!("test AUC {:.4} with encoder {}", auc(&scores)?, enc.id());
    Ok(())
}
