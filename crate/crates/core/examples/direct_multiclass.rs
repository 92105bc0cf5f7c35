//! One context with a prompt per source plus a non-target prompt.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example direct_multiclass
//! ```

use occ_attrib::data::{synth_clusters, PreprocessSpec};
use occ_attrib::encoder::{ImageBatch, ToyConfig, ToyEncoder};
use occ_attrib::ensemble::{train_direct_multiclass, Decision, MultiClassSplit};
use occ_attrib::trainer::TrainConfig;

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let spec = PreprocessSpec::toy();
    let centres = [[-0.4, -0.4, -0.4], [0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]];
    let clusters = synth_clusters(&centres, 150, 0.03, (8, 8), 2)?;
    let train_idx: Vec<usize> = (0..50).collect();
    let test_idx: Vec<usize> = (50..150).collect();

    let split = MultiClassSplit {
        non_target: clusters[0].load(&train_idx, &spec)?,
        targets: clusters[1..]
            .iter()
            .map(|h| h.load(&train_idx, &spec))
            .collect::<Result<_, _>>()?,
        class_names: ["real", "sd", "glide", "progan"].map(String::from).to_vec(),
    };
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };
    let clf = train_direct_multiclass(&split, &enc, &cfg)?;

    let parts: Vec<ImageBatch> = clusters.iter().map(|h| h.load(&test_idx, &spec)).collect::<Result<_, _>>()?;
    let images = ImageBatch::concat(&parts.iter().collect::<Vec<_>>())?;
    let labels: Vec<Decision> = (0..4)
        .flat_map(|k| std::iter::repeat_n(if k == 0 { Decision::Others } else { Decision::Class(k - 1) }, 100))
        .collect();
    println!("{} sources, accuracy {:.4}", clf.n_sources(), clf.accuracy(&enc, &images, &labels)?);
    Ok(())
}
