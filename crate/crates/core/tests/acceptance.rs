//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! ```bash
//! cargo test --release -p occ-attrib --test acceptance
//! ```

use std::cell::RefCell;
use std::time::{Duration, Instant};

use ndarray::Array4;
use occ_attrib::ada::{gradient_sign_perturbation, AdaConfig, AdaMode};
use occ_attrib::data::{draw_few_shot, synth_under_covered_task, PreprocessSpec, UnderCoveredGeometry};
use occ_attrib::encoder::{SimilarityConfig, ToyConfig, ToyEncoder};
use occ_attrib::ensemble::{decide, Decision};
use occ_attrib::evaluator::{auc, run_protocol, EvalTask, ScoreSet};
use occ_attrib::prompt::init_context;
use occ_attrib::trainer::{
    evaluate_loss, learning_rate_at, train, train_observed, train_prompt_tuning, LabeledImageBatch,
    TrainConfig,
};
use occ_attrib::{DualEncoder, ImageBatch, OneClassClassifier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AUC_SETS: usize = 1000;
const AUC_MAX_SIDE: usize = 200;
const AUC_BUDGET: Duration = Duration::from_secs(30);
const GRAD_BATCHES: u64 = 20;
const GRAD_H: f64 = 1e-4;
const GRAD_MIN: f64 = 1e-4;
const GRAD_AGREEMENT: f64 = 0.99;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const BOUND_EPOCHS: usize = 50;
const ORDER_SEEDS: usize = 10;
const ORDER_MIN_WINS: usize = 7;
const ORDER_BUDGET: Duration = Duration::from_secs(600);
const TREND_SHOTS: [usize; 3] = [10, 20, 50];

/// Criteria that fail at desk scale; see the README.
const KNOWN_UNMET: &[&str] = &["ada_mode_ordering"];

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        base_lr: 100.0,
        warm_lr: 10.0,
        ..TrainConfig::default()
    }
}

thread_local! {
    static DIGESTS: RefCell<Vec<(String, bool)>> = const { RefCell::new(Vec::new()) };
}

/// Train while recording whether the encoder digest survived the run.
fn tracked<T>(what: &str, enc: &dyn DualEncoder, f: impl FnOnce() -> T) -> T {
    let before = enc.fingerprint();
    let out = f();
    DIGESTS.with(|d| d.borrow_mut().push((what.to_string(), enc.fingerprint() == before)));
    out
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn auc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for i in 0..AUC_SETS {
        let levels = [4, 50, 1000, u32::MAX][i % 4];
        let (np, nn) = (rng.random_range(1..=AUC_MAX_SIDE), rng.random_range(1..=AUC_MAX_SIDE));
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect()
        };
        let pos = draw(np);
        let neg = draw(nn);
        let got = auc(&ScoreSet {
            positives: pos.clone(),
            negatives: neg.clone(),
        })
        .unwrap();
        if got != brute_auc(&pos, &neg) {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: mismatches == 0 && t < AUC_BUDGET,
        detail: format!("{mismatches} mismatches over {AUC_SETS} sets, {:.2}s", t.as_secs_f64()),
    }
}

fn sign_gradient() -> Outcome {
    let start = Instant::now();
    let enc = ToyEncoder::new(ToyConfig::parse("toy:7:grid=2").unwrap()).unwrap();
    let sim = SimilarityConfig::default();
    let names = vec!["real".to_string(), "fake".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut agree, mut total) = (0usize, 0usize);
    for b in 0..GRAD_BATCHES {
        let px = Array4::from_shape_simple_fn((4, 3, 8, 8), || rng.random_range(-0.3..0.3));
        let batch = LabeledImageBatch::new(ImageBatch::new(px), vec![0, 0, 1, 1]).unwrap();
        let ctx = init_context(16, enc.ctx_dim(), 1.0, b).unwrap();
        let g = evaluate_loss(&enc, &ctx, &names, &sim, &batch, false, true)
            .unwrap()
            .image_grad
            .unwrap();
        let delta = gradient_sign_perturbation(&g, &[true; 4], 1.0).unwrap().delta;
        let loss_at = |idx: (usize, usize, usize, usize), d: f64| {
            let mut px = batch.images.pixels.clone();
            px[idx] += d;
            let shifted = LabeledImageBatch::new(ImageBatch::new(px), batch.labels.clone()).unwrap();
            evaluate_loss(&enc, &ctx, &names, &sim, &shifted, false, false).unwrap().loss
        };
        for (idx, &a) in g.indexed_iter() {
            if a.abs() <= GRAD_MIN {
                continue;
            }
            let fd = (loss_at(idx, GRAD_H) - loss_at(idx, -GRAD_H)) / (2.0 * GRAD_H);
            total += 1;
            if fd.signum() == delta[idx] {
                agree += 1;
            }
        }
    }
    let t = start.elapsed();
    let frac = agree as f64 / total.max(1) as f64;
    Outcome {
        pass: total > 0 && frac >= GRAD_AGREEMENT && t < GRAD_BUDGET,
        detail: format!("{agree}/{total} entries agree ({:.4}), {:.2}s", frac, t.as_secs_f64()),
    }
}

fn under_covered(seed: u64) -> EvalTask {
    let task = synth_under_covered_task(700, 700, 200, (8, 8), &UnderCoveredGeometry::default(), seed).unwrap();
    EvalTask::new("under_covered", &task.target, &task.non_target, &task.outside, 200, PreprocessSpec::toy())
}

fn perturbation_bound(enc: &ToyEncoder) -> Outcome {
    let task = under_covered(1);
    let split = draw_few_shot(&task.target_train, &task.non_target_train, 50, 0, &task.preprocess).unwrap();
    let mut checked = 0usize;
    let mut violations = Vec::new();
    for mode in [AdaMode::NonTarget, AdaMode::Target, AdaMode::Both, AdaMode::TargetAsNonTarget] {
        let mut cfg = toy_train(BOUND_EPOCHS);
        cfg.ada.mode = mode;
        let eps = cfg.ada.epsilon;
        tracked("bound", enc, || {
            train_observed(&split, enc, &cfg, &mut |state, out| {
                checked += 1;
                let (Some(p), Some(g)) = (&out.perturbation, &out.image_grad) else {
                    violations.push(format!("{mode}: step without perturbation"));
                    return;
                };
                if p.mask != state.mask {
                    violations.push(format!("{mode}: mask changed"));
                }
                for (i, (d, gi)) in p.delta.outer_iter().zip(g.outer_iter()).enumerate() {
                    let inf = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let ok = if !state.mask[i] {
                        d.iter().all(|v| *v == 0.0)
                    } else if gi.iter().any(|v| *v != 0.0) {
                        inf == eps
                    } else {
                        inf <= eps
                    };
                    if !ok {
                        violations.push(format!("{mode} epoch {} image {i}: |delta| {inf}", state.epoch));
                    }
                }
            })
            .unwrap()
        });
    }
    Outcome {
        pass: violations.is_empty() && checked == 4 * BOUND_EPOCHS,
        detail: format!(
            "{checked} iterations over 4 modes, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    }
}

fn coop_reduction(enc: &ToyEncoder) -> Outcome {
    let task = under_covered(2);
    let split = draw_few_shot(&task.target_train, &task.non_target_train, 50, 3, &task.preprocess).unwrap();
    let cfg = toy_train(100);
    let plain = tracked("coop", enc, || train_prompt_tuning(&split, enc, &cfg).unwrap());
    let mut none_cfg = cfg.clone();
    none_cfg.ada.mode = AdaMode::None;
    let none = tracked("coop", enc, || train(&split, enc, &none_cfg).unwrap());
    let mut zero_cfg = cfg.clone();
    zero_cfg.ada = AdaConfig {
        epsilon: 0.0,
        ..AdaConfig::default()
    };
    let zero = tracked("coop", enc, || train(&split, enc, &zero_cfg).unwrap());
    let bits = |c: &OneClassClassifier| c.context.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let (a, b) = (bits(&plain) == bits(&none), bits(&plain) == bits(&zero));
    Outcome {
        pass: a && b,
        detail: format!("mode none identical: {a}, epsilon 0 identical: {b}"),
    }
}

fn decision_oracle() -> Outcome {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let (mut cases, mut wrong) = (0, 0);
    for k in 1..=3u32 {
        for code in 0..5usize.pow(k) {
            let scores: Vec<f64> = (0..k).map(|j| grid[code / 5usize.pow(j) % 5]).collect();
            for theta in [0.3, 0.5, 0.7] {
                let mut best = 0;
                for j in 1..scores.len() {
                    if scores[j] > scores[best] {
                        best = j;
                    }
                }
                let expect = if scores[best] > theta {
                    Decision::Class(best)
                } else {
                    Decision::Others
                };
                cases += 1;
                if decide(&scores, theta) != expect {
                    wrong += 1;
                }
            }
        }
    }
    Outcome {
        pass: wrong == 0,
        detail: format!("{wrong} disagreements over {cases} grid cases"),
    }
}

fn wins(a: &[f64], b: &[f64], strict: bool) -> usize {
    a.iter().zip(b).filter(|(x, y)| if strict { x > y } else { x >= y }).count()
}

fn ada_mode_ordering(enc: &ToyEncoder) -> Outcome {
    let start = Instant::now();
    let task = under_covered(1);
    let run = |mode: AdaMode| {
        let mut cfg = toy_train(200);
        cfg.ada.mode = mode;
        tracked("ada_modes", enc, || run_protocol(&task, ORDER_SEEDS, enc, &cfg).unwrap())
    };
    let nt = run(AdaMode::NonTarget);
    let tnt = run(AdaMode::TargetAsNonTarget);
    let none = run(AdaMode::None);
    let t = run(AdaMode::Target);
    let g1 = wins(&nt.per_run_auc, &tnt.per_run_auc, false);
    let g2 = wins(&tnt.per_run_auc, &none.per_run_auc, true);
    let g3 = wins(&none.per_run_auc, &t.per_run_auc, true);
    let means = nt.auc_mean >= tnt.auc_mean && tnt.auc_mean > none.auc_mean && none.auc_mean > t.auc_mean;
    let elapsed = start.elapsed();
    Outcome {
        pass: means && g1 >= ORDER_MIN_WINS && g2 >= ORDER_MIN_WINS && g3 >= ORDER_MIN_WINS && elapsed < ORDER_BUDGET,
        detail: format!(
            "means nt {:.4} t_nt {:.4} none {:.4} t {:.4}; seeds nt>=t_nt {g1}/10, t_nt>none {g2}/10, none>t {g3}/10; {:.1}s",
            nt.auc_mean,
            tnt.auc_mean,
            none.auc_mean,
            t.auc_mean,
            elapsed.as_secs_f64()
        ),
    }
}

fn shot_trend(enc: &ToyEncoder) -> Outcome {
    let task = under_covered(1);
    let stats: Vec<(f64, f64)> = TREND_SHOTS
        .iter()
        .map(|&shots| {
            let cfg = TrainConfig {
                shots,
                ..toy_train(200)
            };
            let r = tracked("shots", enc, || run_protocol(&task, 10, enc, &cfg).unwrap());
            (r.auc_mean, r.auc_std)
        })
        .collect();
    let ok = stats.windows(2).all(|w| {
        let pooled = ((w[0].1.powi(2) + w[1].1.powi(2)) / 2.0).sqrt();
        w[1].0 >= w[0].0 - pooled
    });
    Outcome {
        pass: ok,
        detail: TREND_SHOTS
            .iter()
            .zip(&stats)
            .map(|(s, (m, d))| format!("{s}: {m:.4}±{d:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let first = learning_rate_at(0, &cfg).unwrap();
    let post = learning_rate_at(cfg.warm_epochs, &cfg).unwrap();
    Outcome {
        pass: first == 1e-5 && post == cfg.base_lr,
        detail: format!("epoch 0 -> {first:e}, epoch {} -> {post:e}", cfg.warm_epochs),
    }
}

fn frozen_encoder() -> Outcome {
    let (runs, kept) = DIGESTS.with(|d| {
        let d = d.borrow();
        (d.len(), d.iter().filter(|(_, ok)| *ok).count())
    });
    Outcome {
        pass: runs > 0 && kept == runs,
        detail: format!("digest unchanged across {kept}/{runs} training runs"),
    }
}

fn main() {
    let enc = ToyEncoder::new(ToyConfig::new(7)).unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("auc_oracle", auc_oracle());
    report("sign_gradient", sign_gradient());
    report("perturbation_bound", perturbation_bound(&enc));
    report("coop_reduction", coop_reduction(&enc));
    report("decision_oracle", decision_oracle());
    report("ada_mode_ordering", ada_mode_ordering(&enc));
    report("shot_trend", shot_trend(&enc));
    report("schedule", schedule());
    report("frozen_encoder", frozen_encoder());
    println!("SKIP full_scale_backbone: needs pretrained backbone weights and source image folders");

    let unexpected: Vec<&str> = results
        .iter()
        .filter(|(n, o)| !o.pass && !KNOWN_UNMET.contains(n))
        .map(|(n, _)| *n)
        .collect();
    if !unexpected.is_empty() {
        eprintln!("failed: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
