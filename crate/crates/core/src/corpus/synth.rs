//! Deterministic synthetic corpora with a planted signature per user.
//!
//! Each topic owns a few fixed scenes. A scene is a body template, a pair
//! of topic hashtags and an image centroid. Every post by user `u` ends
//! with the word `sigU` and carries the hashtag `#sigU`, so a model can
//! only produce those tokens by reading the user context.

use crate::config::ImageMode;
use crate::numcore::{RngState, Tensor};
use crate::Result;

use super::features::{FeatureStore, GRID_CELLS};
use super::RawPost;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub posts_per_user: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub tags_per_topic: usize,
    pub scenes_per_topic: usize,
    /// Topic words per body, before the signature.
    pub body_words: (usize, usize),
    pub feature_dim: usize,
    pub image_mode: ImageMode,
    /// Standard deviation of per-post image noise around the scene centroid.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 5,
            posts_per_user: 20,
            topics: 4,
            words_per_topic: 6,
            tags_per_topic: 4,
            scenes_per_topic: 3,
            body_words: (2, 4),
            feature_dim: 16,
            image_mode: ImageMode::Pool5,
            noise: 0.3,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub posts: Vec<RawPost>,
    pub features: FeatureStore,
}

pub fn signature_word(user: usize) -> String {
    format!("sig{user:02}")
}

pub fn signature_hashtag(user: usize) -> String {
    format!("#sig{user:02}")
}

fn user_id(user: usize) -> String {
    format!("u{user:02}")
}

const FILLER: [&str; 4] = ["my", "the", "so", "today"];

struct Scene {
    words: Vec<String>,
    tags: Vec<String>,
    centroid: Vec<f64>,
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.users == 0 || cfg.posts_per_user == 0 || cfg.topics == 0 || cfg.scenes_per_topic == 0 {
        return Err(crate::CsmnError::Config("synthetic corpus needs users, posts, topics and scenes".into()));
    }
    if cfg.words_per_topic == 0 || cfg.tags_per_topic < 2 || cfg.body_words.0 > cfg.body_words.1 || cfg.feature_dim == 0 {
        return Err(crate::CsmnError::Config("synthetic corpus vocabulary settings out of range".into()));
    }
    let rng = RngState::new(cfg.seed);
    let mut scene_rng = rng.fork(1);
    let mut scenes = Vec::new();
    for t in 0..cfg.topics {
        let topic_words: Vec<String> = (0..cfg.words_per_topic).map(|w| format!("t{t}w{w}")).collect();
        let topic_tags: Vec<String> = (0..cfg.tags_per_topic).map(|g| format!("#t{t}tag{g}")).collect();
        let topic_centroid: Vec<f64> = (0..cfg.feature_dim).map(|_| scene_rng.normal()).collect();
        for _ in 0..cfg.scenes_per_topic {
            let span = cfg.body_words.1 - cfg.body_words.0 + 1;
            let n = cfg.body_words.0 + scene_rng.below(span);
            let words = (0..n)
                .map(|_| {
                    if scene_rng.uniform(0.0, 1.0) < 0.2 {
                        FILLER[scene_rng.below(FILLER.len())].to_string()
                    } else {
                        topic_words[scene_rng.below(topic_words.len())].clone()
                    }
                })
                .collect();
            let mut tag_idx: Vec<usize> = (0..topic_tags.len()).collect();
            scene_rng.shuffle(&mut tag_idx);
            let tags = tag_idx[..2].iter().map(|&i| topic_tags[i].clone()).collect();
            let centroid = topic_centroid.iter().map(|&c| c + 0.5 * scene_rng.normal()).collect();
            scenes.push(Scene { words, tags, centroid });
        }
    }

    let mut post_rng = rng.fork(2);
    let mut posts = Vec::with_capacity(cfg.users * cfg.posts_per_user);
    let mut features = FeatureStore::new(cfg.image_mode, cfg.feature_dim);
    for u in 0..cfg.users {
        for p in 0..cfg.posts_per_user {
            let scene = &scenes[post_rng.below(scenes.len())];
            let post_id = format!("{}_p{p:03}", user_id(u));
            let mut body = scene.words.join(" ");
            body.push(' ');
            body.push_str(&signature_word(u));
            let mut hashtags = scene.tags.clone();
            hashtags.push(signature_hashtag(u));
            let cells = match cfg.image_mode {
                ImageMode::Pool5 => 1,
                ImageMode::Res5c => GRID_CELLS,
            };
            let data: Vec<f32> = (0..cells)
                .flat_map(|_| scene.centroid.iter().map(|&c| c + cfg.noise * post_rng.normal()).collect::<Vec<_>>())
                .map(|v| v as f32)
                .collect();
            let shape = if cells == 1 { vec![cfg.feature_dim] } else { vec![cells, cfg.feature_dim] };
            features.insert(post_id.clone(), Tensor::new(shape, data)?)?;
            posts.push(RawPost {
                post_id: post_id.clone(),
                user_id: user_id(u),
                body,
                hashtags,
                image_feature_key: post_id,
            });
        }
    }
    Ok(SynthCorpus { posts, features })
}
