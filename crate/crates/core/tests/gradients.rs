//! Analytic gradients against central finite differences on the toy encoder.

use ndarray::{Array2, Array4};
use occ_attrib::encoder::{SimilarityConfig, SimilarityKind, ToyConfig, ToyEncoder};
use occ_attrib::prompt::{init_context, PromptContext};
use occ_attrib::trainer::{evaluate_loss, LabeledImageBatch};
use occ_attrib::{DualEncoder, ImageBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names() -> Vec<String> {
    vec!["real".to_string(), "fake".to_string()]
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, side: usize, spread: f64) -> LabeledImageBatch {
    let px = Array4::from_shape_simple_fn((n, 3, side, side), || rng.random_range(-spread..spread));
    let labels = (0..n).map(|i| i % 2).collect();
    LabeledImageBatch::new(ImageBatch::new(px), labels).unwrap()
}

fn loss(enc: &ToyEncoder, ctx: &PromptContext, sim: &SimilarityConfig, b: &LabeledImageBatch) -> f64 {
    evaluate_loss(enc, ctx, &names(), sim, b, false, false).unwrap().loss
}

fn context_check(kind: SimilarityKind) {
    let enc = ToyEncoder::new(ToyConfig::parse("toy:5:grid=2").unwrap()).unwrap();
    let sim = SimilarityConfig { kind, temperature: 3.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let batch = random_batch(&mut rng, 6, 4, 0.3);
    let ctx = init_context(4, enc.ctx_dim(), 0.5, 2).unwrap();
    let g = evaluate_loss(&enc, &ctx, &names(), &sim, &batch, true, false)
        .unwrap()
        .context_grad
        .unwrap();
    let h = 1e-5;
    for _ in 0..32 {
        let (i, j) = (rng.random_range(0..ctx.n_ctx()), rng.random_range(0..ctx.ctx_dim()));
        let shifted = |d: f64| {
            let mut v: Array2<f64> = ctx.values().clone();
            v[[i, j]] += d;
            PromptContext::from_values(v, 0.5).unwrap()
        };
        let fd = (loss(&enc, &shifted(h), &sim, &batch) - loss(&enc, &shifted(-h), &sim, &batch)) / (2.0 * h);
        let a = g[[i, j]];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        assert!(rel <= 1e-4, "{kind:?} coordinate ({i},{j}): analytic {a} vs fd {fd}, rel {rel}");
    }
}

#[test]
fn context_gradient_dot() {
    context_check(SimilarityKind::Dot);
}

#[test]
fn context_gradient_cosine() {
    context_check(SimilarityKind::Cosine);
}

fn image_sign_agreement(kind: SimilarityKind) -> (usize, usize) {
    let enc = ToyEncoder::new(ToyConfig::new(8)).unwrap();
    let sim = SimilarityConfig { kind, temperature: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut agree, mut total) = (0, 0);
    for b in 0..20 {
        let batch = random_batch(&mut rng, 4, 4, 0.2);
        let ctx = init_context(4, enc.ctx_dim(), 1.0, b).unwrap();
        let g = evaluate_loss(&enc, &ctx, &names(), &sim, &batch, false, true)
            .unwrap()
            .image_grad
            .unwrap();
        let h = 1e-4;
        for (idx, &a) in g.indexed_iter() {
            if a.abs() <= 1e-4 {
                continue;
            }
            let shifted = |d: f64| {
                let mut px = batch.images.pixels.clone();
                px[idx] += d;
                LabeledImageBatch::new(ImageBatch::new(px), batch.labels.clone()).unwrap()
            };
            let fd = (loss(&enc, &ctx, &sim, &shifted(h)) - loss(&enc, &ctx, &sim, &shifted(-h))) / (2.0 * h);
            total += 1;
            if fd.signum() == a.signum() {
                agree += 1;
            }
        }
    }
    (agree, total)
}

#[test]
fn image_gradient_sign_dot() {
    let (agree, total) = image_sign_agreement(SimilarityKind::Dot);
    assert!(total > 100, "only {total} entries above threshold");
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
}

#[test]
fn image_gradient_sign_cosine() {
    let (agree, total) = image_sign_agreement(SimilarityKind::Cosine);
    assert!(total > 100, "only {total} entries above threshold");
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
}
