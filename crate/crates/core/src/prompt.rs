//! Learnable prompt context, class-name pairs, prompt assembly, and checkpoints.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ada::AdaConfig;
use crate::encoder::SimilarityConfig;
use crate::error::{Error, Result};

/// The learnable context vectors `t`, `[n_ctx × ctx_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    context: Array2<f64>,
    pub init_std: f64,
}

pub const DEFAULT_N_CTX: usize = 16;
pub const DEFAULT_INIT_STD: f64 = 0.02;

impl PromptContext {
    pub fn from_values(context: Array2<f64>, init_std: f64) -> Result<Self> {
        if context.nrows() == 0 || context.ncols() == 0 {
            return Err(Error::invalid("context must have positive dims"));
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("context has non-finite entries".into()));
        }
        Ok(PromptContext { context, init_std })
    }

    pub fn n_ctx(&self) -> usize {
        self.context.nrows()
    }

    pub fn ctx_dim(&self) -> usize {
        self.context.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.context
    }
}

/// Draw `n_ctx × ctx_dim` context entries i.i.d. from `N(0, std²)`.
pub fn init_context(n_ctx: usize, ctx_dim: usize, std: f64, seed: u64) -> Result<PromptContext> {
    if n_ctx == 0 || ctx_dim == 0 {
        return Err(Error::invalid(format!(
            "context dims must be positive, got {n_ctx}x{ctx_dim}"
        )));
    }
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("init std must be positive, got {std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let context = Array2::from_shape_simple_fn((n_ctx, ctx_dim), || {
        rng.sample::<f64, _>(StandardNormal) * std
    });
    PromptContext::from_values(context, std)
}

/// Mutable view over the only trainable parameters of a classifier.
pub struct ParameterView<'a> {
    pub values: ndarray::ArrayViewMut2<'a, f64>,
}

impl ParameterView<'_> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn trainable_parameters(ctx: &mut PromptContext) -> ParameterView<'_> {
    ParameterView {
        values: ctx.context.view_mut(),
    }
}

/// Class names; index 0 is the non-target class and index 1 the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassPromptPair {
    pub non_target_name: String,
    pub target_name: String,
}

/// Non-target/target pairs studied for prompt sensitivity.
pub const SUPPLEMENTARY_PAIRS: [(&str, &str); 6] = [
    ("fake", "real"),
    ("negative", "positive"),
    ("other", "this"),
    ("real", "fake"),
    ("positive", "negative"),
    ("this", "other"),
];

pub(crate) fn check_token(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "class name must be a single non-empty token, got {name:?}"
        )));
    }
    Ok(())
}

impl ClassPromptPair {
    pub fn new(non_target: &str, target: &str) -> Result<Self> {
        check_token(non_target)?;
        check_token(target)?;
        if non_target == target {
            return Err(Error::invalid(format!("class names must differ, both are {target:?}")));
        }
        Ok(ClassPromptPair {
            non_target_name: non_target.to_string(),
            target_name: target.to_string(),
        })
    }

    /// Parse `"real-fake"` style pairs (non-target first).
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("prompt pair {s:?} is not of the form a-b")))?;
        Self::new(a, b)
    }

    pub fn names(&self) -> Vec<String> {
        vec![self.non_target_name.clone(), self.target_name.clone()]
    }
}

impl TryFrom<String> for ClassPromptPair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ClassPromptPair> for String {
    fn from(p: ClassPromptPair) -> String {
        p.to_string()
    }
}

impl Default for ClassPromptPair {
    fn default() -> Self {
        ClassPromptPair::new("real", "fake").expect("valid default pair")
    }
}

impl std::fmt::Display for ClassPromptPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.non_target_name, self.target_name)
    }
}

/// K prompts sharing one context; row `i` is `context ⊗ class_names[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPromptBatch {
    pub context: Array2<f64>,
    pub class_names: Vec<String>,
}

pub fn assemble_prompts(ctx: &PromptContext, pair: &ClassPromptPair) -> Result<AssembledPromptBatch> {
    assemble_classes(ctx, &pair.names())
}

pub fn assemble_classes(ctx: &PromptContext, names: &[String]) -> Result<AssembledPromptBatch> {
    if names.len() < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    for (i, n) in names.iter().enumerate() {
        check_token(n)?;
        if names[..i].contains(n) {
            return Err(Error::invalid(format!("duplicate class name {n:?}")));
        }
    }
    Ok(AssembledPromptBatch {
        context: ctx.context.clone(),
        class_names: names.to_vec(),
    })
}

/// A trained prompt bundled with everything needed to score images.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassClassifier {
    pub context: PromptContext,
    /// Class order: non-target first. Longer lists come from direct multi-class training.
    pub class_names: Vec<String>,
    pub encoder_id: String,
    pub encoder_fingerprint: String,
    pub similarity: SimilarityConfig,
    pub ada: AdaConfig,
    pub train_fingerprint: String,
}

impl OneClassClassifier {
    pub fn pair(&self) -> Result<ClassPromptPair> {
        match self.class_names.as_slice() {
            [a, b] => ClassPromptPair::new(a, b),
            _ => Err(Error::invalid("classifier is not binary")),
        }
    }

    pub fn prompts(&self) -> Result<AssembledPromptBatch> {
        assemble_classes(&self.context, &self.class_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            n_ctx: self.context.n_ctx(),
            ctx_dim: self.context.ctx_dim(),
            init_std: self.context.init_std,
            context: self.context.values().iter().copied().collect(),
            class_names: self.class_names.clone(),
            encoder_id: self.encoder_id.clone(),
            encoder_fingerprint: self.encoder_fingerprint.clone(),
            similarity: self.similarity,
            ada: self.ada.clone(),
            train_fingerprint: self.train_fingerprint.clone(),
        };
        let text = serde_json::to_string_pretty(&ck)
            .map_err(|e| Error::invalid(format!("cannot serialize checkpoint: {e}")))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: bad checkpoint: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "{}: not a checkpoint (format {:?})",
                path.display(),
                ck.format
            )));
        }
        let context = Array2::from_shape_vec((ck.n_ctx, ck.ctx_dim), ck.context)
            .map_err(|_| Error::Config(format!("{}: context size mismatch", path.display())))?;
        Ok(OneClassClassifier {
            context: PromptContext::from_values(context, ck.init_std)?,
            class_names: ck.class_names,
            encoder_id: ck.encoder_id,
            encoder_fingerprint: ck.encoder_fingerprint,
            similarity: ck.similarity,
            ada: ck.ada,
            train_fingerprint: ck.train_fingerprint,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "occ-attrib/prompt-checkpoint";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    n_ctx: usize,
    ctx_dim: usize,
    init_std: f64,
    /// Row-major context values.
    context: Vec<f64>,
    class_names: Vec<String>,
    encoder_id: String,
    encoder_fingerprint: String,
    similarity: SimilarityConfig,
    ada: AdaConfig,
    train_fingerprint: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a = init_context(16, 8, 0.02, 5).unwrap();
        let b = init_context(16, 8, 0.02, 5).unwrap();
        let c = init_context(16, 8, 0.02, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_statistics() {
        let ctx = init_context(16, 512, 0.02, 11).unwrap();
        let v = ctx.values();
        let n = v.len() as f64;
        let mean = v.sum() / n;
        let sd = (v.mapv(|x| (x - mean).powi(2)).sum() / n).sqrt();
        assert!((0.017..=0.023).contains(&sd), "sd {sd}");
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(init_context(0, 8, 0.02, 0).is_err());
        assert!(init_context(4, 0, 0.02, 0).is_err());
        assert!(init_context(4, 8, 0.0, 0).is_err());
    }

    #[test]
    fn default_pair_is_real_fake() {
        let p = ClassPromptPair::default();
        assert_eq!(p.names(), vec!["real", "fake"]);
        assert_eq!(p.to_string(), "real-fake");
        assert_eq!(ClassPromptPair::parse("real-fake").unwrap(), p);
        for (a, b) in SUPPLEMENTARY_PAIRS {
            assert!(ClassPromptPair::new(a, b).is_ok());
        }
    }

    #[test]
    fn bad_pairs_rejected() {
        assert!(ClassPromptPair::new("fake", "fake").is_err());
        assert!(ClassPromptPair::new("", "fake").is_err());
        assert!(ClassPromptPair::new("a b", "fake").is_err());
    }

    #[test]
    fn assembled_rows_share_context() {
        let mut ctx = init_context(4, 3, 0.02, 1).unwrap();
        let pair = ClassPromptPair::default();
        let a = assemble_prompts(&ctx, &pair).unwrap();
        assert_eq!(a.class_names, vec!["real", "fake"]);
        assert_eq!(&a.context, ctx.values());
        trainable_parameters(&mut ctx).values.fill(1.5);
        let b = assemble_prompts(&ctx, &pair).unwrap();
        assert!(b.context.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn parameter_count() {
        let mut ctx = init_context(16, 32, 0.02, 1).unwrap();
        assert_eq!(trainable_parameters(&mut ctx).len(), 16 * 32);
    }
}
