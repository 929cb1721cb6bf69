use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::Post;
use crate::config::SplitMode;
use crate::numcore::{hash_str, RngState};
use crate::{CsmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Counts for `n` items under `ratios`; every part with a positive ratio gets ≥ 1.
fn allocate(n: usize, ratios: (f64, f64, f64)) -> Option<(usize, usize, usize)> {
    let want_val = ratios.1 > 0.0;
    let min_total = 2 + usize::from(want_val);
    if n < min_total {
        return None;
    }
    let mut test = ((ratios.2 * n as f64).round() as usize).max(1);
    let mut val = if want_val { ((ratios.1 * n as f64).round() as usize).max(1) } else { 0 };
    while test + val >= n {
        if val > 1 {
            val -= 1;
        } else if test > 1 {
            test -= 1;
        } else {
            return None;
        }
    }
    Some((n - val - test, val, test))
}

/// Assigns posts to train/val/test.
///
/// `ByUsers` shuffles whole users so train and test authors are disjoint;
/// `ByPosts` shuffles each user's posts separately so every user appears
/// in every part.
pub fn make_split(posts: &[Post], mode: SplitMode, ratios: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    let mut by_user: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in posts {
        by_user.entry(&p.user_id).or_default().push(&p.post_id);
    }
    for ids in by_user.values_mut() {
        ids.sort_unstable();
    }
    let rng = RngState::new(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match mode {
        SplitMode::ByUsers => {
            let mut users: Vec<&str> = by_user.keys().copied().collect();
            let (n_train, n_val, _) = allocate(users.len(), ratios).ok_or_else(|| {
                CsmnError::Insufficient(format!("{} users cannot fill a by-users split", users.len()))
            })?;
            rng.fork(0).shuffle(&mut users);
            for (i, u) in users.iter().enumerate() {
                let dst = if i < n_train {
                    &mut train
                } else if i < n_train + n_val {
                    &mut val
                } else {
                    &mut test
                };
                dst.extend(by_user[u].iter().map(|s| s.to_string()));
            }
        }
        SplitMode::ByPosts => {
            for (user, ids) in &by_user {
                let (n_train, n_val, _) = allocate(ids.len(), ratios).ok_or_else(|| {
                    CsmnError::Insufficient(format!("user {user:?} has {} posts, too few for a by-posts split", ids.len()))
                })?;
                let mut ids = ids.clone();
                rng.fork(hash_str(user)).shuffle(&mut ids);
                train.extend(ids[..n_train].iter().map(|s| s.to_string()));
                val.extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
                test.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
            }
        }
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort();
    }
    Ok(SplitManifest { mode, seed, train, val, test })
}

impl SplitManifest {
    pub fn part(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn part_of(&self) -> BTreeMap<&str, Part> {
        let mut out = BTreeMap::new();
        for part in [Part::Train, Part::Val, Part::Test] {
            for id in self.part(part) {
                out.insert(id.as_str(), part);
            }
        }
        out
    }

    /// Authors of the posts in `part`.
    pub fn users<'a>(&self, part: Part, posts: &'a [Post]) -> BTreeSet<&'a str> {
        let ids: BTreeSet<&str> = self.part(part).iter().map(String::as_str).collect();
        posts.iter().filter(|p| ids.contains(p.post_id.as_str())).map(|p| p.user_id.as_str()).collect()
    }

    /// `#mode<TAB>seed` header, then `part<TAB>post_id` lines.
    pub fn to_tsv(&self) -> String {
        let mode = match self.mode {
            SplitMode::ByUsers => "by_users",
            SplitMode::ByPosts => "by_posts",
        };
        let mut out = format!("#{mode}\t{}\n", self.seed);
        for part in [Part::Train, Part::Val, Part::Test] {
            for id in self.part(part) {
                writeln!(out, "{}\t{id}", part.as_str()).expect("write to string");
            }
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, detail: &str| CsmnError::Parse { path: path.into(), line, detail: detail.into() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty manifest"))?;
        let (mode, seed) = header.strip_prefix('#').and_then(|h| h.split_once('\t')).ok_or_else(|| perr(1, "bad header"))?;
        let mode = match mode {
            "by_users" => SplitMode::ByUsers,
            "by_posts" => SplitMode::ByPosts,
            _ => return Err(perr(1, "unknown split mode")),
        };
        let seed = seed.parse().map_err(|_| perr(1, "bad seed"))?;
        let mut m = SplitManifest { mode, seed, train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for (n, line) in lines.enumerate() {
            let (part, id) = line.split_once('\t').ok_or_else(|| perr(n + 2, "expected part<TAB>post_id"))?;
            match part {
                "train" => m.train.push(id.into()),
                "val" => m.val.push(id.into()),
                "test" => m.test.push(id.into()),
                _ => return Err(perr(n + 2, "unknown part")),
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(users: usize, per_user: usize) -> Vec<Post> {
        (0..users)
            .flat_map(|u| {
                (0..per_user).map(move |i| Post {
                    post_id: format!("u{u}p{i}"),
                    user_id: format!("u{u}"),
                    tokens: vec![5, 6, 7],
                    image_feature_key: format!("u{u}p{i}"),
                })
            })
            .collect()
    }

    #[test]
    fn by_users_is_disjoint_with_expected_counts() {
        let posts = corpus(10, 4);
        let m = make_split(&posts, SplitMode::ByUsers, (0.8, 0.1, 0.1), 3).unwrap();
        let (tr, va, te) = (m.users(Part::Train, &posts), m.users(Part::Val, &posts), m.users(Part::Test, &posts));
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
        assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && va.is_disjoint(&te));
        assert_eq!(m.train.len() + m.val.len() + m.test.len(), posts.len());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let posts = corpus(10, 4);
        let a = make_split(&posts, SplitMode::ByUsers, (0.8, 0.1, 0.1), 11).unwrap();
        let b = make_split(&posts, SplitMode::ByUsers, (0.8, 0.1, 0.1), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_tsv(), b.to_tsv());
        let diff = (0..20).any(|s| make_split(&posts, SplitMode::ByUsers, (0.8, 0.1, 0.1), s).unwrap() != a);
        assert!(diff);
    }

    #[test]
    fn by_posts_shares_users() {
        let posts = corpus(5, 10);
        let m = make_split(&posts, SplitMode::ByPosts, (0.8, 0.1, 0.1), 1).unwrap();
        let train = m.users(Part::Train, &posts);
        for u in m.users(Part::Test, &posts) {
            assert!(train.contains(u));
        }
        assert_eq!(m.test.len(), 5);
    }

    #[test]
    fn insufficient_data() {
        assert!(make_split(&corpus(2, 5), SplitMode::ByUsers, (0.8, 0.1, 0.1), 0).is_err());
        assert!(make_split(&corpus(4, 2), SplitMode::ByPosts, (0.8, 0.1, 0.1), 0).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let posts = corpus(6, 3);
        let m = make_split(&posts, SplitMode::ByPosts, (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(SplitManifest::from_tsv(&m.to_tsv(), Path::new("s")).unwrap(), m);
    }
}
