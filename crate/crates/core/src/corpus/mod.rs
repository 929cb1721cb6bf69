//! Post ingestion, filtering, vocabularies, user profiles, splits and image features.

mod features;
mod filter;
mod normalize;
mod pipeline;
mod profile;
mod split;
mod synth;
mod vocab;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Task;
use crate::{CsmnError, Result};

pub use features::{load_features, FeatureStore, GRID_CELLS};
pub use filter::{check_post, filter_posts, filter_users, spam_limit, RejectRule, Rejection, UserRule};
pub use normalize::{contains_url, is_emoji, is_valid_word, language_words, normalize, normalize_hashtag, USERNAME_TOKEN};
pub use pipeline::{preprocess, read_encoded_posts, Dataset};
pub use profile::{compute_profiles, ProfileIndex, UserProfile};
pub use split::{make_split, Part, SplitManifest};
pub use synth::{signature_hashtag, signature_word, synthesize, SynthConfig, SynthCorpus};
pub use vocab::{build_vocabulary, Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, UNK, USERNAME};

/// A post as it appears in the corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub post_id: String,
    pub user_id: String,
    pub body: String,
    pub hashtags: Vec<String>,
    pub image_feature_key: String,
}

impl RawPost {
    /// Normalized body tokens for captions, normalized hashtags for the hashtag task.
    pub fn task_tokens(&self, task: Task) -> Vec<String> {
        match task {
            Task::Caption => normalize(&self.body),
            Task::Hashtag => self.hashtags.iter().filter_map(|h| normalize_hashtag(h)).collect(),
        }
    }
}

/// A filtered post encoded against its task vocabulary (no EOS).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Post {
    pub post_id: String,
    pub user_id: String,
    pub tokens: Vec<u32>,
    pub image_feature_key: String,
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<RawPost>> {
    let mut posts = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let post: RawPost = serde_json::from_str(line).map_err(|e| CsmnError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        if !seen.insert(post.post_id.clone()) {
            return Err(CsmnError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("duplicate post_id {:?}", post.post_id),
            });
        }
        posts.push(post);
    }
    Ok(posts)
}

/// Reads a line-delimited JSON corpus.
pub fn read_corpus(path: &Path) -> Result<Vec<RawPost>> {
    let file = std::fs::File::open(path).map_err(|e| CsmnError::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| CsmnError::io(path, e))?);
        text.push('\n');
    }
    parse_corpus(&text, path)
}

pub fn corpus_to_string(posts: &[RawPost]) -> String {
    let mut out = String::new();
    for p in posts {
        out.push_str(&serde_json::to_string(p).expect("raw post serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, posts: &[RawPost]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CsmnError::io(path, e))?;
    f.write_all(corpus_to_string(posts).as_bytes()).map_err(|e| CsmnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let posts = vec![RawPost {
            post_id: "p1".into(),
            user_id: "u1".into(),
            body: "Sunny day ☀ at the beach".into(),
            hashtags: vec!["#Beach".into(), "summer".into()],
            image_feature_key: "p1".into(),
        }];
        let text = corpus_to_string(&posts);
        assert_eq!(parse_corpus(&text, Path::new("x")).unwrap(), posts);
        assert_eq!(posts[0].task_tokens(Task::Hashtag), vec!["#beach", "#summer"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"post_id":"a","user_id":"u","body":"x","hashtags":[],"image_feature_key":"a"}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(parse_corpus(&text, Path::new("c.jsonl")), Err(CsmnError::Parse { line: 2, .. })));
    }
}
