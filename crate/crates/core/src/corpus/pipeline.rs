//! Raw corpus to encoded, split dataset.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::filter::{filter_posts, filter_users, Rejection, UserRule};
use super::profile::{ProfileIndex, UserProfile};
use super::split::{make_split, Part, SplitManifest};
use super::vocab::{build_vocabulary, Vocabulary};
use super::{Post, RawPost};
use crate::config::{RunConfig, Task};
use crate::{CsmnError, Result};

/// Everything the model needs from a preprocessed corpus.
pub struct Dataset {
    pub task: Task,
    pub vocab: Vocabulary,
    pub posts: Vec<Post>,
    pub split: SplitManifest,
    pub profiles: ProfileIndex,
    pub rejections: Vec<Rejection>,
    pub removed_users: BTreeMap<String, UserRule>,
    index: HashMap<String, usize>,
}

/// Filters, builds the task vocabulary over all kept posts, encodes and splits.
pub fn preprocess(raw: Vec<RawPost>, config: &RunConfig) -> Result<Dataset> {
    let task = config.task;
    let (kept, rejections) = filter_posts(raw, task, &config.corpus);
    let (kept, removed_users) = filter_users(kept, &rejections, &config.corpus);
    if kept.is_empty() {
        return Err(CsmnError::Insufficient("no posts survive filtering".into()));
    }
    let tokens: Vec<Vec<String>> = kept.iter().map(|p| p.task_tokens(task)).collect();
    let vocab = build_vocabulary(&tokens, task, config.corpus.vocab_size(task))?;
    let posts: Vec<Post> = kept
        .into_iter()
        .zip(&tokens)
        .map(|(p, t)| Post {
            post_id: p.post_id,
            user_id: p.user_id,
            tokens: vocab.encode(t),
            image_feature_key: p.image_feature_key,
        })
        .collect();
    let split = make_split(&posts, config.split, config.corpus.split_ratios, config.seed)?;
    Dataset::assemble(task, vocab, posts, split, rejections, removed_users)
}

impl Dataset {
    fn assemble(
        task: Task,
        vocab: Vocabulary,
        posts: Vec<Post>,
        split: SplitManifest,
        rejections: Vec<Rejection>,
        removed_users: BTreeMap<String, UserRule>,
    ) -> Result<Self> {
        let profiles = ProfileIndex::new(&posts, &vocab)?;
        let index = posts.iter().enumerate().map(|(i, p)| (p.post_id.clone(), i)).collect();
        Ok(Dataset { task, vocab, posts, split, profiles, rejections, removed_users, index })
    }

    pub fn post(&self, post_id: &str) -> Option<&Post> {
        self.index.get(post_id).map(|&i| &self.posts[i])
    }

    pub fn part(&self, part: Part) -> Vec<&Post> {
        self.split.part(part).iter().filter_map(|id| self.post(id)).collect()
    }

    /// Active words of the post's author with the post itself left out.
    pub fn profile_for(&self, post: &Post, d: usize) -> Result<UserProfile> {
        self.profiles.profile(&post.user_id, d, Some(post))
    }

    /// Writes `vocab.tsv`, `posts.tsv`, `split.tsv`, `profiles.tsv` and `rejections.tsv`.
    pub fn write(&self, dir: &Path, d: usize) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CsmnError::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| CsmnError::io(&path, e))
        };
        write("vocab.tsv", self.vocab.to_tsv())?;
        write("posts.tsv", self.posts_tsv())?;
        write("split.tsv", self.split.to_tsv())?;
        write("profiles.tsv", self.profiles_tsv(d)?)?;
        write("rejections.tsv", self.rejections_tsv())
    }

    /// Line format: `post_id<TAB>user_id<TAB>image_key<TAB>space-separated ids`.
    pub fn posts_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.posts {
            let ids: Vec<String> = p.tokens.iter().map(u32::to_string).collect();
            writeln!(out, "{}\t{}\t{}\t{}", p.post_id, p.user_id, p.image_feature_key, ids.join(" ")).expect("write to string");
        }
        out
    }

    /// Full-history profiles, one user per line: `user_id<TAB>id:score ...`.
    pub fn profiles_tsv(&self, d: usize) -> Result<String> {
        let mut out = String::new();
        for user in self.profiles.users() {
            let profile = self.profiles.profile(user, d, None)?;
            let words: Vec<String> = profile.words.iter().map(|(id, s)| format!("{id}:{s:.6}")).collect();
            writeln!(out, "{user}\t{}", words.join(" ")).expect("write to string");
        }
        Ok(out)
    }

    /// Rejected posts (`post<TAB>post_id<TAB>user_id<TAB>rule`) then removed users (`user<TAB>-<TAB>user_id<TAB>rule`).
    pub fn rejections_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rejections {
            writeln!(out, "post\t{}\t{}\t{}", r.post_id, r.user_id, r.rule.as_str()).expect("write to string");
        }
        for (user, rule) in &self.removed_users {
            writeln!(out, "user\t-\t{user}\t{}", rule.as_str()).expect("write to string");
        }
        out
    }

    /// Reloads a directory written by [`Dataset::write`]. The rejection log is not reloaded.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map(|t| (t, path.clone())).map_err(|e| CsmnError::io(&path, e))
        };
        let (text, path) = read("vocab.tsv")?;
        let vocab = Vocabulary::from_tsv(&text, &path)?;
        let (text, path) = read("posts.tsv")?;
        let posts = read_encoded_posts(&text, &path, vocab.len())?;
        let (text, path) = read("split.tsv")?;
        let split = SplitManifest::from_tsv(&text, &path)?;
        Dataset::assemble(vocab.task, vocab, posts, split, Vec::new(), BTreeMap::new())
    }
}

pub fn read_encoded_posts(text: &str, path: &Path, vocab_len: usize) -> Result<Vec<Post>> {
    let mut posts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let perr = |detail: String| CsmnError::Parse { path: path.into(), line: n + 1, detail };
        let fields: Vec<&str> = line.split('\t').collect();
        let [post_id, user_id, key, ids] = fields[..] else { return Err(perr("expected 4 fields".into())) };
        let tokens = ids
            .split_whitespace()
            .map(|s| match s.parse::<u32>() {
                Ok(id) if (id as usize) < vocab_len => Ok(id),
                _ => Err(perr(format!("bad token id {s:?}"))),
            })
            .collect::<Result<Vec<u32>>>()?;
        posts.push(Post { post_id: post_id.into(), user_id: user_id.into(), tokens, image_feature_key: key.into() });
    }
    Ok(posts)
}
