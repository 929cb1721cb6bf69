//! Nearest-neighbour retrieval baselines over the training split.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{Dataset, FeatureStore, Part, Post, ProfileIndex};
use crate::numcore::{hash_str, mix_seed, RngState};
use crate::{CsmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Baseline {
    /// Nearest training image.
    Im,
    /// A random post of the user whose active words overlap most.
    Usr,
    /// Nearest image among that user's posts.
    UsrIm,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Im => "1nn-im",
            Baseline::Usr => "1nn-usr",
            Baseline::UsrIm => "1nn-usrim",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Baseline::Im, Baseline::Usr, Baseline::UsrIm].into_iter().find(|b| b.name() == name)
    }
}

/// Retrieval index over training posts, ordered by post id so that ties
/// resolve to the smallest id.
pub struct NnIndex<'a> {
    posts: Vec<&'a Post>,
    pooled: Vec<Vec<f32>>,
    by_user: BTreeMap<&'a str, Vec<usize>>,
    /// Active words of each training user, computed from training posts only.
    active: BTreeMap<&'a str, HashSet<u32>>,
    seed: u64,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

impl<'a> NnIndex<'a> {
    pub fn new(data: &'a Dataset, features: &FeatureStore, d: usize, seed: u64) -> Result<Self> {
        let mut posts = data.part(Part::Train);
        if posts.is_empty() {
            return Err(CsmnError::Insufficient("1NN baselines need training posts".into()));
        }
        posts.sort_by(|a, b| a.post_id.cmp(&b.post_id));
        let pooled = posts.iter().map(|p| features.pooled(&p.image_feature_key)).collect::<Result<Vec<_>>>()?;
        let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in posts.iter().enumerate() {
            by_user.entry(p.user_id.as_str()).or_default().push(i);
        }
        let owned: Vec<Post> = posts.iter().map(|&p| p.clone()).collect();
        let index = ProfileIndex::new(&owned, &data.vocab)?;
        let mut active = BTreeMap::new();
        for &user in by_user.keys() {
            active.insert(user, index.profile(user, d, None)?.ids().into_iter().collect());
        }
        Ok(NnIndex { posts, pooled, by_user, active, seed })
    }

    fn nearest_among(&self, query: &[f32], candidates: &[usize]) -> usize {
        let mut best = candidates[0];
        let mut best_d = f64::INFINITY;
        for &i in candidates {
            let d = sq_dist(query, &self.pooled[i]);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Training post with the closest pooled feature.
    pub fn nearest_image(&self, query: &[f32]) -> &'a Post {
        let all: Vec<usize> = (0..self.posts.len()).collect();
        self.posts[self.nearest_among(query, &all)]
    }

    /// Training user sharing the most active words with `profile`; ties go to the lower user id.
    pub fn nearest_user(&self, profile: &[u32]) -> &'a str {
        let mut best: Option<(&'a str, usize)> = None;
        for (&user, words) in &self.active {
            let overlap = profile.iter().collect::<HashSet<_>>().into_iter().filter(|w| words.contains(w)).count();
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((user, overlap));
            }
        }
        best.expect("index has at least one user").0
    }

    /// Retrieved training post for a query with pooled feature `feature` and active words `profile`.
    pub fn retrieve(&self, kind: Baseline, query_id: &str, feature: &[f32], profile: &[u32]) -> &'a Post {
        match kind {
            Baseline::Im => self.nearest_image(feature),
            Baseline::Usr => {
                let posts = &self.by_user[self.nearest_user(profile)];
                let mut rng = RngState::new(mix_seed(self.seed, hash_str(query_id)));
                self.posts[posts[rng.below(posts.len())]]
            }
            Baseline::UsrIm => {
                let posts = &self.by_user[self.nearest_user(profile)];
                self.posts[self.nearest_among(feature, posts)]
            }
        }
    }
}
