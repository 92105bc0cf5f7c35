//! Dataset ingestion, test-pool reservation, few-shot draws, preprocessing,
//! and synthetic toy datasets.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};
use log::warn;
use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::ImageBatch;
use crate::error::{Error, Result};

/// A decoded image before preprocessing, `[3, height, width]`, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub pixels: Array3<f64>,
}

impl RawImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn decode(path: &Path) -> Result<RawImage> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64
        });
        Ok(RawImage { pixels })
    }

    fn resized(&self, size: usize) -> RawImage {
        if self.height() == size && self.width() == size {
            return self.clone();
        }
        let (h, w) = (self.height() as u32, self.width() as u32);
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                self.pixels[[0, y, x]] as f32,
                self.pixels[[1, y, x]] as f32,
                self.pixels[[2, y, x]] as f32,
            ])
        });
        let out = image::imageops::resize(&buf, size as u32, size as u32, FilterType::Triangle);
        RawImage {
            pixels: Array3::from_shape_fn((3, size, size), |(c, y, x)| {
                out.get_pixel(x as u32, y as u32)[c] as f64
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSpec {
    pub size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessSpec {
    /// 224 pixels with the usual CLIP normalization constants.
    fn default() -> Self {
        PreprocessSpec {
            size: 224,
            mean: [0.48145466, 0.4578275, 0.40821073],
            std: [0.26862954, 0.26130258, 0.27577711],
        }
    }
}

impl PreprocessSpec {
    /// Small images normalized with mean 0.5 and std 0.5 per channel.
    pub fn toy() -> Self {
        PreprocessSpec {
            size: 8,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("preprocess size must be positive"));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid(format!("preprocess std must be positive, got {:?}", self.std)));
        }
        Ok(())
    }
}

/// Resize to `spec.size` square, then `(x - mean) / std` per channel.
pub fn preprocess(images: &[RawImage], spec: &PreprocessSpec) -> Result<ImageBatch> {
    spec.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("no images to preprocess"));
    }
    let s = spec.size;
    let mut out = Array4::zeros((images.len(), 3, s, s));
    for (mut dst, img) in out.axis_iter_mut(Axis(0)).zip(images) {
        if img.pixels.shape()[0] != 3 {
            return Err(Error::invalid("raw images must have 3 channels"));
        }
        let r = img.resized(s);
        for c in 0..3 {
            let (m, sd) = (spec.mean[c], spec.std[c]);
            dst.index_axis_mut(Axis(0), c)
                .assign(&r.pixels.index_axis(Axis(0), c).mapv(|x| (x - m) / sd));
        }
    }
    let batch = ImageBatch::new(out);
    batch.check_finite()?;
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Full,
    TrainPool,
    TestPool,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Full => "full",
            Split::TrainPool => "train_pool",
            Split::TestPool => "test_pool",
        })
    }
}

#[derive(Debug, Clone)]
pub enum EntrySource {
    File(PathBuf),
    Memory(Arc<RawImage>),
}

#[derive(Debug, Clone)]
pub struct Entry {
    /// File path, or a synthetic identifier.
    pub id: String,
    pub source: EntrySource,
}

impl Entry {
    pub fn load(&self) -> Result<RawImage> {
        match &self.source {
            EntrySource::File(p) => RawImage::decode(p),
            EntrySource::Memory(img) => Ok((**img).clone()),
        }
    }
}

/// An ordered, immutable list of images from one source.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub name: String,
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<Entry>,
}

impl DatasetHandle {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn from_memory(name: &str, images: Vec<RawImage>) -> Result<DatasetHandle> {
        if images.is_empty() {
            return Err(Error::invalid(format!("dataset {name:?} has no images")));
        }
        let entries = images
            .into_iter()
            .enumerate()
            .map(|(i, img)| Entry {
                id: format!("{name}/{i:06}"),
                source: EntrySource::Memory(Arc::new(img)),
            })
            .collect();
        Ok(DatasetHandle {
            name: name.to_string(),
            root: PathBuf::from(format!("memory:{name}")),
            split: Split::Full,
            entries,
        })
    }

    fn subset(&self, range: std::ops::Range<usize>, split: Split) -> DatasetHandle {
        DatasetHandle {
            name: self.name.clone(),
            root: self.root.clone(),
            split,
            entries: self.entries[range].to_vec(),
        }
    }

    /// Load and preprocess the entries at `idx`.
    pub fn load(&self, idx: &[usize], spec: &PreprocessSpec) -> Result<ImageBatch> {
        let raws = idx
            .par_iter()
            .map(|&i| self.entries[i].load())
            .collect::<Result<Vec<_>>>()?;
        preprocess(&raws, spec)
    }

    pub fn load_all(&self, spec: &PreprocessSpec) -> Result<ImageBatch> {
        self.load(&(0..self.count()).collect::<Vec<_>>(), spec)
    }
}

const IMAGE_EXTENSIONS: &[&str] = &[
    "png", "jpg", "jpeg", "bmp", "gif", "webp", "tif", "tiff",
];

/// Enumerate decodable images directly under `root`, sorted by file name.
/// Files that fail to decode are skipped with a warning.
pub fn ingest(root: &Path, name: &str) -> Result<DatasetHandle> {
    if !root.is_dir() {
        return Err(Error::invalid(format!(
            "dataset directory {} does not exist",
            root.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let ok: Vec<bool> = files
        .par_iter()
        .map(|p| match RawImage::decode(p) {
            Ok(_) => true,
            Err(e) => {
                warn!("skipping {e}");
                false
            }
        })
        .collect();
    let entries: Vec<Entry> = files
        .into_iter()
        .zip(ok)
        .filter(|(_, ok)| *ok)
        .map(|(p, _)| Entry {
            id: p.display().to_string(),
            source: EntrySource::File(p),
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::invalid(format!(
            "no decodable images in {}",
            root.display()
        )));
    }
    Ok(DatasetHandle {
        name: name.to_string(),
        root: root.to_path_buf(),
        split: Split::Full,
        entries,
    })
}

/// Reserve the first `n_test` entries for testing; the rest form the training pool.
pub fn reserve_test(handle: &DatasetHandle, n_test: usize) -> (DatasetHandle, DatasetHandle) {
    let n = handle.count();
    if n_test > n {
        warn!(
            "dataset {} has {n} images, fewer than the {n_test} requested for testing; using all of them",
            handle.name
        );
    }
    let k = n_test.min(n);
    (
        handle.subset(k..n, Split::TrainPool),
        handle.subset(0..k, Split::TestPool),
    )
}

/// Training images for one repetition.
#[derive(Debug, Clone)]
pub struct FewShotSplit {
    pub target: ImageBatch,
    pub non_target: ImageBatch,
    pub shots: usize,
    pub draw_seed: u64,
    /// `(target, non_target)` dataset names.
    pub source_names: (String, String),
    pub target_ids: Vec<String>,
    pub non_target_ids: Vec<String>,
}

/// Indices of `shots` entries from a pool of `n`, for `seed`.
///
/// The pool is shuffled once per window of `n / shots` consecutive seeds and
/// each seed in the window takes its own block, so seeds `0, 1, …` draw
/// disjoint sets while the pool lasts.
pub fn few_shot_indices(n: usize, shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 || shots > n {
        return Err(Error::invalid(format!("cannot draw {shots} shots from {n} images")));
    }
    let blocks = (n / shots) as u64;
    let (window, block) = (seed / blocks, (seed % blocks) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(window));
    let mut idx = order[block * shots..(block + 1) * shots].to_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn draw_few_shot(
    target: &DatasetHandle,
    non_target: &DatasetHandle,
    shots: usize,
    seed: u64,
    spec: &PreprocessSpec,
) -> Result<FewShotSplit> {
    let pick = |h: &DatasetHandle| {
        few_shot_indices(h.count(), shots, seed).map_err(|_| {
            Error::invalid(format!(
                "pool {:?} has {} training images, fewer than {shots} shots",
                h.name,
                h.count()
            ))
        })
    };
    let ti = pick(target)?;
    let ni = pick(non_target)?;
    Ok(FewShotSplit {
        target: target.load(&ti, spec)?,
        non_target: non_target.load(&ni, spec)?,
        shots,
        draw_seed: seed,
        source_names: (target.name.clone(), non_target.name.clone()),
        target_ids: ti.iter().map(|&i| target.entries[i].id.clone()).collect(),
        non_target_ids: ni.iter().map(|&i| non_target.entries[i].id.clone()).collect(),
    })
}

/// One line of the audit manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub split: Split,
    pub repetitions: Vec<usize>,
}

/// Which entries each repetition draws and which are held out for testing.
pub fn manifest_rows(
    test_pool: &DatasetHandle,
    train_pool: &DatasetHandle,
    shots: usize,
    seeds: &[u64],
) -> Result<Vec<ManifestRow>> {
    let mut rows: Vec<ManifestRow> = test_pool
        .entries
        .iter()
        .map(|e| ManifestRow {
            path: e.id.clone(),
            split: Split::TestPool,
            repetitions: Vec::new(),
        })
        .collect();
    let mut reps = vec![Vec::new(); train_pool.count()];
    for (r, &seed) in seeds.iter().enumerate() {
        for i in few_shot_indices(train_pool.count(), shots, seed)? {
            reps[i].push(r);
        }
    }
    rows.extend(train_pool.entries.iter().zip(reps).map(|(e, r)| ManifestRow {
        path: e.id.clone(),
        split: Split::TrainPool,
        repetitions: r,
    }));
    Ok(rows)
}

pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from("path\tsplit\trepetitions\n");
    for r in rows {
        let reps: Vec<String> = r.repetitions.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", r.path, r.split, reps.join(",")));
    }
    out
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    // splitmix64 of (seed, tag) so streams for different datasets do not overlap
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Image whose normalized pixels are `colour + pixel_noise · N(0,1)`,
/// stored in raw `[0,1]`-style units for the toy normalization.
fn colour_image(colour: [f64; 3], size: (usize, usize), pixel_noise: f64, rng: &mut ChaCha8Rng) -> RawImage {
    let spec = PreprocessSpec::toy();
    let pixels = Array3::from_shape_fn((3, size.0, size.1), |(c, _, _)| {
        let z = colour[c] + pixel_noise * normal(rng);
        z * spec.std[c] + spec.mean[c]
    });
    RawImage { pixels }
}

const SYNTH_CLASS_STD: f64 = 0.04;
const SYNTH_PIXEL_NOISE: f64 = 0.05;

/// Two classes of flat-colour images with pixel noise. Class colours are
/// `±separation/2` along the grey axis plus per-image jitter.
/// Returns `(target, non_target)`.
pub fn synth_toy_dataset(
    n_per_class: usize,
    separation: f64,
    dim: (usize, usize),
    seed: u64,
) -> Result<(DatasetHandle, DatasetHandle)> {
    if n_per_class == 0 || dim.0 == 0 || dim.1 == 0 {
        return Err(Error::invalid("synthetic dataset needs images of positive size"));
    }
    let axis = 1.0 / 3f64.sqrt();
    let make = |sign: f64, tag: u64, name: &str| {
        let mut rng = stream(seed, tag);
        let images = (0..n_per_class)
            .map(|_| {
                let mut colour = [0.0; 3];
                for c in &mut colour {
                    *c = sign * 0.5 * separation * axis + SYNTH_CLASS_STD * normal(&mut rng);
                }
                colour_image(colour, dim, SYNTH_PIXEL_NOISE, &mut rng)
            })
            .collect();
        DatasetHandle::from_memory(name, images)
    };
    Ok((make(1.0, 1, "toy_target")?, make(-1.0, 2, "toy_non_target")?))
}

/// Layout of the under-covered task in normalized colour space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnderCoveredGeometry {
    /// Spread of target colours around the origin.
    pub target_std: f64,
    /// Spread of training non-target colours.
    pub non_target_std: f64,
    /// Offset of the training non-targets along the first channel.
    pub non_target_shift: f64,
    /// Radius of the shell holding unseen non-targets.
    pub outside_radius: f64,
    pub pixel_noise: f64,
}

impl Default for UnderCoveredGeometry {
    fn default() -> Self {
        UnderCoveredGeometry {
            target_std: 0.012,
            non_target_std: 0.04,
            non_target_shift: 0.12,
            outside_radius: 0.06,
            pixel_noise: 0.05,
        }
    }
}

/// Datasets of a task whose training non-targets cover only one side of the target.
#[derive(Debug, Clone)]
pub struct UnderCoveredTask {
    pub target: DatasetHandle,
    /// Non-target images available for training.
    pub non_target: DatasetHandle,
    /// Non-target images that sit between the target and the training
    /// non-targets, or beside the target; never used for training.
    pub outside: DatasetHandle,
}

/// Target colours cluster at the origin. Training non-targets sit at
/// `-shift` on the first channel. Unseen non-targets lie on a shell of
/// `outside_radius` around the target, on the non-target side.
pub fn synth_under_covered_task(
    n_target: usize,
    n_non_target: usize,
    n_outside: usize,
    dim: (usize, usize),
    geometry: &UnderCoveredGeometry,
    seed: u64,
) -> Result<UnderCoveredTask> {
    let g = geometry;
    let mut rng = stream(seed, 11);
    let target = (0..n_target)
        .map(|_| {
            let c = [0, 1, 2].map(|_| g.target_std * normal(&mut rng));
            colour_image(c, dim, g.pixel_noise, &mut rng)
        })
        .collect();
    let mut rng = stream(seed, 12);
    let non_target = (0..n_non_target)
        .map(|_| {
            let mut c = [0, 1, 2].map(|_| g.non_target_std * normal(&mut rng));
            c[0] -= g.non_target_shift;
            colour_image(c, dim, g.pixel_noise, &mut rng)
        })
        .collect();
    let mut rng = stream(seed, 13);
    let outside = (0..n_outside)
        .map(|_| {
            let mut u = [0, 1, 2].map(|_| normal(&mut rng));
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut u {
                *v /= norm;
            }
            u[0] = -u[0].abs();
            let c = [0, 1, 2].map(|i| g.outside_radius * u[i] + g.target_std * normal(&mut rng));
            colour_image(c, dim, g.pixel_noise, &mut rng)
        })
        .collect();
    Ok(UnderCoveredTask {
        target: DatasetHandle::from_memory("uc_target", target)?,
        non_target: DatasetHandle::from_memory("uc_non_target", non_target)?,
        outside: DatasetHandle::from_memory("uc_outside", outside)?,
    })
}

/// `k` flat-colour clusters at well separated colours, for multi-source tests.
pub fn synth_clusters(
    centres: &[[f64; 3]],
    n_per_cluster: usize,
    spread: f64,
    dim: (usize, usize),
    seed: u64,
) -> Result<Vec<DatasetHandle>> {
    centres
        .iter()
        .enumerate()
        .map(|(k, centre)| {
            let mut rng = stream(seed, 100 + k as u64);
            let images = (0..n_per_cluster)
                .map(|_| {
                    let c = [0, 1, 2].map(|i| centre[i] + spread * normal(&mut rng));
                    colour_image(c, dim, SYNTH_PIXEL_NOISE, &mut rng)
                })
                .collect();
            DatasetHandle::from_memory(&format!("cluster{k}"), images)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_mean_image_normalizes_to_zero() {
        let spec = PreprocessSpec::default();
        let img = RawImage {
            pixels: Array3::from_shape_fn((3, 224, 224), |(c, _, _)| spec.mean[c]),
        };
        let b = preprocess(&[img], &spec).unwrap();
        assert_eq!(b.dims(), (1, 3, 224, 224));
        assert!(b.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_to_spec_size() {
        let spec = PreprocessSpec {
            size: 16,
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let img = RawImage {
            pixels: Array3::from_elem((3, 40, 30), 0.25),
        };
        let b = preprocess(&[img], &spec).unwrap();
        assert_eq!(b.dims(), (1, 3, 16, 16));
        assert!(b.pixels.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn identity_spec_keeps_values() {
        let spec = PreprocessSpec {
            size: 4,
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let img = RawImage {
            pixels: Array3::from_shape_fn((3, 4, 4), |(c, y, x)| (c + y * 4 + x) as f64 / 40.0),
        };
        let b = preprocess(&[img.clone()], &spec).unwrap();
        assert_eq!(b.pixels.index_axis(Axis(0), 0), img.pixels);
    }

    #[test]
    fn zero_std_rejected() {
        let spec = PreprocessSpec {
            size: 4,
            mean: [0.0; 3],
            std: [1.0, 0.0, 1.0],
        };
        let img = RawImage {
            pixels: Array3::zeros((3, 4, 4)),
        };
        assert!(preprocess(&[img], &spec).is_err());
    }

    #[test]
    fn draws_are_seeded_and_disjoint() {
        let a = few_shot_indices(500, 50, 3).unwrap();
        assert_eq!(a, few_shot_indices(500, 50, 3).unwrap());
        let mut seen = std::collections::HashSet::new();
        for seed in 0..10 {
            for i in few_shot_indices(500, 50, seed).unwrap() {
                assert!(seen.insert(i), "index {i} drawn twice");
            }
        }
        assert_eq!(few_shot_indices(7, 7, 4).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(few_shot_indices(5, 6, 0).is_err());
    }

    #[test]
    fn reservation_takes_leading_entries() {
        let (t, _) = synth_toy_dataset(10, 1.0, (2, 2), 0).unwrap();
        let (train, test) = reserve_test(&t, 4);
        assert_eq!(test.ids(), t.ids()[..4].to_vec());
        assert_eq!(train.ids(), t.ids()[4..].to_vec());
        let (train, test) = reserve_test(&t, 20);
        assert_eq!((train.count(), test.count()), (0, 10));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let (a, b) = synth_toy_dataset(5, 0.5, (4, 4), 9).unwrap();
        let (c, d) = synth_toy_dataset(5, 0.5, (4, 4), 9).unwrap();
        let spec = PreprocessSpec::toy();
        assert_eq!(a.load_all(&spec).unwrap(), c.load_all(&spec).unwrap());
        assert_eq!(b.load_all(&spec).unwrap(), d.load_all(&spec).unwrap());
    }

    #[test]
    fn manifest_lists_every_entry() {
        let (t, _) = synth_toy_dataset(30, 1.0, (2, 2), 0).unwrap();
        let (train, test) = reserve_test(&t, 10);
        let rows = manifest_rows(&test, &train, 5, &[0, 1, 2]).unwrap();
        assert_eq!(rows.len(), 30);
        let drawn: usize = rows.iter().map(|r| r.repetitions.len()).sum();
        assert_eq!(drawn, 15);
        assert!(rows[..10].iter().all(|r| r.split == Split::TestPool && r.repetitions.is_empty()));
        assert!(render_manifest(&rows).starts_with("path\tsplit\trepetitions\n"));
    }
}
