//! Three one-class classifiers, one per source, combined into an ensemble
//! that names the source or answers "others".
//!
//! ```bash
//! cargo run --release -p occ-attrib --example ensemble_attribution
//! ```

use occ_attrib::data::{draw_few_shot, reserve_test, synth_clusters, PreprocessSpec};
use occ_attrib::encoder::{ImageBatch, ToyConfig, ToyEncoder};
use occ_attrib::ensemble::{attribute, ensemble_accuracy, Decision, Ensemble};
use occ_attrib::trainer::{train, TrainConfig};

const CENTRES: [[f64; 3]; 4] = [
    [-0.4, -0.4, -0.4],
    [0.5, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.0, 0.5],
];

fn main() -> occ_attrib::Result<()> {
    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let spec = PreprocessSpec::toy();
    let clusters = synth_clusters(&CENTRES, 200, 0.03, (8, 8), 1)?;
    let pools: Vec<_> = clusters.iter().map(|h| reserve_test(h, 100)).collect();
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    };

    // cluster 0 plays the real images every classifier sees as non-target
    let mut classifiers = Vec::new();
    for (train_pool, _) in &pools[1..] {
        let split = draw_few_shot(train_pool, &pools[0].0, 50, 0, &spec)?;
        classifiers.push(train(&split, &enc, &cfg)?);
    }
    let names: Vec<String> = ["sd", "glide", "progan"].map(String::from).to_vec();

    let tests: Vec<ImageBatch> = pools.iter().map(|(_, t)| t.load_all(&spec)).collect::<Result<_, _>>()?;
    let images = ImageBatch::concat(&tests.iter().collect::<Vec<_>>())?;
    let labels: Vec<Decision> = (0..4)
        .flat_map(|k| {
            let d = if k == 0 { Decision::Others } else { Decision::Class(k - 1) };
            std::iter::repeat_n(d, 100)
        })
        .collect();

    for theta in [0.3, 0.5, 0.7, 0.9] {
        let ens = Ensemble::new(classifiers.clone(), theta, names.clone())?;
        println!("threshold {theta}: accuracy {:.4}", ensemble_accuracy(&ens, &enc, &images, &labels)?);
    }

    let ens = Ensemble::new(classifiers, 0.5, names.clone())?;
    for (i, r) in attribute(&ens, &enc, &images.select(&[0, 150, 250, 350]))?.iter().enumerate() {
        let who = match r.decision {
            Decision::Class(k) => names[k].as_str(),
            Decision::Others => "others",
        };
        println!("image {i}: {who:<7} scores {:?}", r.scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}
