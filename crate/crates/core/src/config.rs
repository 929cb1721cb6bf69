//! Run configuration and the two built-in profiles.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Caption,
    Hashtag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    Pool5,
    Res5c,
}

impl ImageMode {
    /// Memory slots occupied by one image.
    pub fn slots(self) -> usize {
        match self {
            ImageMode::Pool5 => 1,
            ImageMode::Res5c => 49,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByUsers,
    ByPosts,
}

/// Which words count as English for the post language filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityRule {
    /// Lowercase ASCII words, digits, emoji, hashtags and `@username`.
    AsciiWords,
    /// Only listed words, plus hashtags, emoji, numbers and `@username`.
    Lexicon(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub min_posts: usize,
    pub max_posts: usize,
    /// Posts with a larger fraction of invalid words are rejected.
    pub max_invalid_fraction: f64,
    /// Users with more than `max(spam_floor, spam_fraction × posts)` rejected posts are dropped.
    pub spam_floor: usize,
    pub spam_fraction: f64,
    pub validity: ValidityRule,
    pub vocab_caption: usize,
    pub vocab_hashtag: usize,
    /// Split fractions (train, val, test).
    pub split_ratios: (f64, f64, f64),
}

impl CorpusConfig {
    pub fn vocab_size(&self, task: Task) -> usize {
        match task {
            Task::Caption => self.vocab_caption,
            Task::Hashtag => self.vocab_hashtag,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub no_cnn: bool,
    pub no_user_context: bool,
    pub no_word_output: bool,
}

impl AblationFlags {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_cnn {
            parts.push("no_cnn");
        }
        if self.no_user_context {
            parts.push("no_uc");
        }
        if self.no_word_output {
            parts.push("no_wo");
        }
        parts.join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_mode: ImageMode,
    pub vocab_size: usize,
    /// User-context slots (D).
    pub d_context: usize,
    /// Word-output slots.
    pub t_max: usize,
    pub feature_dim: usize,
    pub mem_dim: usize,
    pub embed_dim: usize,
    pub conv_depth: usize,
    pub windows: Vec<usize>,
}

impl ModelConfig {
    pub fn image_slots(&self) -> usize {
        self.image_mode.slots()
    }

    pub fn memory_slots(&self) -> usize {
        self.image_slots() + self.d_context + self.t_max
    }

    /// Output width of one segment's conv stack.
    pub fn segment_dim(&self) -> usize {
        self.windows.len() * self.conv_depth
    }

    /// Width of the fused vector fed to the hidden layer.
    pub fn fused_dim(&self) -> usize {
        match self.image_mode {
            ImageMode::Res5c => 3 * self.segment_dim(),
            ImageMode::Pool5 => 2 * self.segment_dim(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let max_window = self.windows.iter().copied().max().unwrap_or(0);
        let err = |m: String| Err(crate::CsmnError::Config(m));
        if self.windows.is_empty() || self.windows.contains(&0) {
            return err("conv windows must be non-empty and positive".into());
        }
        if self.t_max < max_window {
            return err(format!("t_max {} below largest conv window {max_window}", self.t_max));
        }
        if self.d_context == 0 || self.vocab_size <= crate::corpus::NUM_SPECIALS {
            return err("d_context must be positive and the vocabulary must exceed the specials".into());
        }
        if [self.feature_dim, self.mem_dim, self.embed_dim, self.conv_depth].contains(&0) {
            return err("all dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global-norm gradient clipping bound.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lr0 > 0.0
            && self.lr_decay > 1.0
            && self.decay_every > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && self.grad_clip.map_or(true, |c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(crate::CsmnError::Config(format!("invalid training settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub task: Task,
    pub split: SplitMode,
    pub seed: u64,
    pub flags: AblationFlags,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Published hyperparameters.
    pub fn paper(task: Task) -> Self {
        let corpus = CorpusConfig {
            min_len: 3,
            max_len: 15,
            min_posts: 50,
            max_posts: 1000,
            max_invalid_fraction: 0.2,
            spam_floor: 15,
            spam_fraction: 0.15,
            validity: ValidityRule::AsciiWords,
            vocab_caption: 40_000,
            vocab_hashtag: 60_000,
            split_ratios: (0.9, 0.05, 0.05),
        };
        let model = ModelConfig {
            image_mode: ImageMode::Pool5,
            vocab_size: corpus.vocab_size(task),
            d_context: 60,
            t_max: 16,
            feature_dim: 2048,
            mem_dim: 1024,
            embed_dim: 512,
            conv_depth: 300,
            windows: vec![3, 4, 5],
        };
        let train = TrainConfig {
            lr0: 0.001,
            lr_decay: 1.2,
            decay_every: 5,
            epochs: 20,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 200,
            seed: 0,
            grad_clip: None,
        };
        RunConfig {
            profile: "paper".into(),
            task,
            split: SplitMode::ByUsers,
            seed: 0,
            flags: AblationFlags::default(),
            corpus,
            model,
            train,
        }
    }

    /// Small dimensions for tests and synthetic corpora.
    pub fn desk(task: Task) -> Self {
        let mut cfg = RunConfig::paper(task);
        cfg.profile = "desk".into();
        cfg.corpus.max_len = 5;
        cfg.corpus.min_posts = 5;
        cfg.corpus.vocab_caption = 30;
        cfg.corpus.vocab_hashtag = 30;
        cfg.corpus.split_ratios = (0.8, 0.1, 0.1);
        cfg.model = ModelConfig {
            image_mode: ImageMode::Pool5,
            vocab_size: 30,
            d_context: 4,
            t_max: 6,
            feature_dim: 16,
            mem_dim: 32,
            embed_dim: 16,
            conv_depth: 8,
            windows: vec![3, 4, 5],
        };
        cfg.train.batch_size = 32;
        cfg.train.lr0 = 0.01;
        cfg
    }

    pub fn named(profile: &str, task: Task) -> crate::Result<Self> {
        match profile {
            "paper" => Ok(RunConfig::paper(task)),
            "desk" => Ok(RunConfig::desk(task)),
            other => Err(crate::CsmnError::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let c = &self.corpus;
        if c.min_len == 0 || c.min_len > c.max_len || c.min_posts > c.max_posts {
            return Err(crate::CsmnError::Config("length or post-count limits out of order".into()));
        }
        if c.max_len + 1 > self.model.t_max {
            return Err(crate::CsmnError::Config(format!(
                "max_len {} plus EOS exceeds t_max {}",
                c.max_len, self.model.t_max
            )));
        }
        let (a, b, t) = c.split_ratios;
        if a <= 0.0 || b < 0.0 || t <= 0.0 || ((a + b + t) - 1.0).abs() > 1e-9 {
            return Err(crate::CsmnError::Config("split ratios must be positive and sum to 1".into()));
        }
        Ok(())
    }

    /// Stable hash of the model-shaping part of the configuration.
    pub fn model_hash(&self) -> u64 {
        let text = serde_json::to_string(&(&self.model, &self.flags, self.task)).expect("config serializes");
        stable_hash(text.as_bytes())
    }
}

/// First 8 bytes of SHA-256, little-endian.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
