//! Per-user TF-IDF active-word profiles.

use std::collections::{BTreeMap, HashMap};

use super::vocab::Vocabulary;
use super::Post;
use crate::{CsmnError, Result};

/// A user's top-D active words with their TF-IDF scores, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub words: Vec<(u32, f64)>,
}

impl UserProfile {
    pub fn ids(&self) -> Vec<u32> {
        self.words.iter().map(|&(id, _)| id).collect()
    }

    pub fn empty(user_id: &str) -> Self {
        UserProfile { user_id: user_id.to_string(), words: Vec::new() }
    }
}

#[derive(Default)]
struct UserStats {
    posts: usize,
    /// Occurrences over all of the user's posts.
    tf: HashMap<u32, u64>,
}

/// Term statistics for a corpus, with users as documents.
///
/// `tf(w,u)` counts occurrences of `w` across the user's posts,
/// `idf(w) = ln(U / df(w))` where `df` counts users who used `w`.
/// Special tokens never enter a profile.
pub struct ProfileIndex {
    users: BTreeMap<String, UserStats>,
    df: HashMap<u32, u32>,
    vocab_len: usize,
}

impl ProfileIndex {
    pub fn new(posts: &[Post], vocab: &Vocabulary) -> Result<Self> {
        let mut users: BTreeMap<String, UserStats> = BTreeMap::new();
        for post in posts {
            let stats = users.entry(post.user_id.clone()).or_default();
            stats.posts += 1;
            for &id in &post.tokens {
                if id as usize >= vocab.len() {
                    return Err(CsmnError::TokenRange { id: id as usize, len: vocab.len() });
                }
                if Vocabulary::is_special(id) {
                    continue;
                }
                *stats.tf.entry(id).or_default() += 1;
            }
        }
        let mut df: HashMap<u32, u32> = HashMap::new();
        for stats in users.values() {
            for &id in stats.tf.keys() {
                *df.entry(id).or_default() += 1;
            }
        }
        Ok(ProfileIndex { users, df, vocab_len: vocab.len() })
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    /// Top-`d` profile of `user`, leaving `exclude` (one of the user's posts) out.
    ///
    /// Excluding a post can only lower `df` for words whose user count drops
    /// with it, and those words leave the profile anyway, so `df` is reused.
    pub fn profile(&self, user: &str, d: usize, exclude: Option<&Post>) -> Result<UserProfile> {
        let stats = self
            .users
            .get(user)
            .ok_or_else(|| CsmnError::Insufficient(format!("user {user:?} has no posts")))?;
        let mut removed: HashMap<u32, u64> = HashMap::new();
        if let Some(post) = exclude {
            if post.user_id != user {
                return Err(CsmnError::Insufficient(format!("post {} is not by {user}", post.post_id)));
            }
            if stats.posts <= 1 {
                return Err(CsmnError::Insufficient(format!("user {user:?} has no posts besides {}", post.post_id)));
            }
            for &id in post.tokens.iter().filter(|&&id| !Vocabulary::is_special(id)) {
                *removed.entry(id).or_default() += 1;
            }
        }
        let n_users = self.users.len() as f64;
        let mut scored: Vec<(u32, f64)> = Vec::new();
        for (&id, &count) in &stats.tf {
            let tf = count - removed.get(&id).copied().unwrap_or(0);
            if tf == 0 {
                continue;
            }
            let df = self.df[&id];
            let idf = (n_users / df as f64).ln();
            scored.push((id, tf as f64 * idf));
        }
        if scored.iter().any(|&(_, s)| s > 0.0) {
            scored.retain(|&(_, s)| s > 0.0);
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(d);
        Ok(UserProfile { user_id: user.to_string(), words: scored })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }
}

/// Profiles for every user; `exclude` names a post left out of its author's statistics.
pub fn compute_profiles(
    posts: &[Post],
    vocab: &Vocabulary,
    d: usize,
    exclude: Option<&str>,
) -> Result<BTreeMap<String, UserProfile>> {
    let (kept, excluded): (Vec<Post>, Vec<Post>) = match exclude {
        Some(id) => posts.iter().cloned().partition(|p| p.post_id != id),
        None => (posts.to_vec(), Vec::new()),
    };
    if let Some(post) = excluded.first() {
        if !kept.iter().any(|p| p.user_id == post.user_id) {
            return Err(CsmnError::Insufficient(format!(
                "user {:?} has no posts once {} is excluded",
                post.user_id, post.post_id
            )));
        }
    }
    let index = ProfileIndex::new(&kept, vocab)?;
    index.users().map(|u| Ok((u.to_string(), index.profile(u, d, None)?))).collect()
}
