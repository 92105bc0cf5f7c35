//! End to end on image folders: ingest, train, save checkpoints, write an
//! ensemble manifest, attribute files, export embeddings.
//!
//! ```bash
//! cargo run --release -p occ-attrib --example image_folders
//! ```

use std::path::Path;

use occ_attrib::cli::{cmd_attribute, cmd_export_embeddings};
use occ_attrib::config::ExperimentConfig;
use occ_attrib::data::{draw_few_shot, ingest, reserve_test};
use occ_attrib::encoder::{DualEncoder, ToyConfig, ToyEncoder};
use occ_attrib::ensemble::{EnsembleManifest, ManifestClass};
use occ_attrib::trainer::{train, TrainConfig};

fn write_folder(dir: &Path, n: u32, rgb: [u8; 3]) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = image::RgbImage::from_fn(16, 16, |x, y| {
            image::Rgb(rgb.map(|c| c.wrapping_add(((x * 7 + y * 13 + i * 31) % 23) as u8)))
        });
        img.save(dir.join(format!("{i:04}.png"))).unwrap();
    }
}

fn main() -> occ_attrib::Result<()> {
    let root = std::env::temp_dir().join("occ-image-folders");
    write_folder(&root.join("real"), 80, [40, 90, 180]);
    write_folder(&root.join("sd"), 80, [200, 120, 40]);
    write_folder(&root.join("glide"), 80, [150, 150, 40]);

    let enc = ToyEncoder::new(ToyConfig::new(7))?;
    let spec = enc.preprocess_spec();
    let (real_train, _) = reserve_test(&ingest(&root.join("real"), "real")?, 20);
    let cfg = TrainConfig {
        base_lr: 100.0,
        warm_lr: 10.0,
        shots: 20,
        ..TrainConfig::default()
    };

    let mut classes = Vec::new();
    for name in ["sd", "glide"] {
        let (train_pool, _) = reserve_test(&ingest(&root.join(name), name)?, 20);
        let clf = train(&draw_few_shot(&train_pool, &real_train, cfg.shots, 0, &spec)?, &enc, &cfg)?;
        let path = root.join(format!("{name}.json"));
        clf.save(&path)?;
        classes.push(ManifestClass {
            name: name.into(),
            checkpoint: path,
        });
    }
    let manifest = root.join("ensemble.toml");
    EnsembleManifest { threshold: 0.5, classes }.write(&manifest)?;

    let queries = [root.join("sd/0000.png"), root.join("glide/0001.png"), root.join("real/0002.png")];
    for rec in cmd_attribute(&manifest, &queries)? {
        println!("{}", serde_json::to_string(&rec).unwrap());
    }

    let exp = ExperimentConfig::from_toml(
        &format!(
            "encoder_id = \"toy:7\"\ntarget_dataset = {:?}\nnon_target_dataset = {:?}\noutput_dir = {:?}\n",
            root.join("sd"),
            root.join("real"),
            root.join("out")
        ),
        &[],
    )?;
    let rows = cmd_export_embeddings(&exp, &[], &root.join("embeddings.tsv"))?;
    println!("{rows} embedding rows in {}", root.join("embeddings.tsv").display());
    Ok(())
}
