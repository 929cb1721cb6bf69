//! Post- and user-level corpus filters.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::normalize::{contains_url, is_valid_word, language_words};
use super::RawPost;
use crate::config::{CorpusConfig, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    Hyperlink,
    Language,
    MinLength,
    MaxLength,
}

impl RejectRule {
    /// Rules that count toward a user's spam total.
    pub fn is_spam(self) -> bool {
        matches!(self, RejectRule::Hyperlink | RejectRule::Language)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RejectRule::Hyperlink => "hyperlink",
            RejectRule::Language => "language",
            RejectRule::MinLength => "min_length",
            RejectRule::MaxLength => "max_length",
        }
    }
}

impl fmt::Display for RejectRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub post_id: String,
    pub user_id: String,
    pub rule: RejectRule,
}

/// First rule `post` violates, checked in the order hyperlink, language, length.
pub fn check_post(post: &RawPost, task: Task, config: &CorpusConfig) -> Option<RejectRule> {
    if contains_url(&post.body) {
        return Some(RejectRule::Hyperlink);
    }
    let words = language_words(&post.body);
    if !words.is_empty() {
        let invalid = words.iter().filter(|w| !is_valid_word(w, &config.validity)).count();
        if invalid as f64 > config.max_invalid_fraction * words.len() as f64 {
            return Some(RejectRule::Language);
        }
    }
    let len = post.task_tokens(task).len();
    if len < config.min_len {
        Some(RejectRule::MinLength)
    } else if len > config.max_len {
        Some(RejectRule::MaxLength)
    } else {
        None
    }
}

pub fn filter_posts(posts: Vec<RawPost>, task: Task, config: &CorpusConfig) -> (Vec<RawPost>, Vec<Rejection>) {
    let mut kept = Vec::with_capacity(posts.len());
    let mut log = Vec::new();
    for post in posts {
        match check_post(&post, task, config) {
            None => kept.push(post),
            Some(rule) => log.push(Rejection { post_id: post.post_id, user_id: post.user_id, rule }),
        }
    }
    (kept, log)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserRule {
    Spam,
    TooFewPosts,
    TooManyPosts,
}

impl UserRule {
    pub fn as_str(self) -> &'static str {
        match self {
            UserRule::Spam => "spam",
            UserRule::TooFewPosts => "min_posts",
            UserRule::TooManyPosts => "max_posts",
        }
    }
}

/// Spam threshold `max(floor, fraction × total_posts)`.
pub fn spam_limit(total_posts: usize, config: &CorpusConfig) -> f64 {
    (config.spam_floor as f64).max(config.spam_fraction * total_posts as f64)
}

/// Drops spam-heavy users, then users whose kept post count is outside
/// `[min_posts, max_posts]`. Returns surviving posts and removed users.
pub fn filter_users(
    kept: Vec<RawPost>,
    rejections: &[Rejection],
    config: &CorpusConfig,
) -> (Vec<RawPost>, BTreeMap<String, UserRule>) {
    let mut kept_count: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &kept {
        *kept_count.entry(&p.user_id).or_default() += 1;
    }
    let mut rejected: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in rejections {
        let e = rejected.entry(&r.user_id).or_default();
        e.0 += 1;
        if r.rule.is_spam() {
            e.1 += 1;
        }
    }
    let mut removed = BTreeMap::new();
    let users: std::collections::BTreeSet<&str> = kept_count.keys().chain(rejected.keys()).copied().collect();
    for user in users {
        let n_kept = kept_count.get(user).copied().unwrap_or(0);
        let (n_rej, n_spam) = rejected.get(user).copied().unwrap_or((0, 0));
        let rule = if n_spam as f64 > spam_limit(n_kept + n_rej, config) {
            Some(UserRule::Spam)
        } else if n_kept < config.min_posts {
            Some(UserRule::TooFewPosts)
        } else if n_kept > config.max_posts {
            Some(UserRule::TooManyPosts)
        } else {
            None
        };
        if let Some(rule) = rule {
            removed.insert(user.to_string(), rule);
        }
    }
    let posts = kept.into_iter().filter(|p| !removed.contains_key(&p.user_id)).collect();
    (posts, removed)
}
