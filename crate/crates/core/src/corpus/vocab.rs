use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::normalize::USERNAME_TOKEN;
use crate::config::{stable_hash, Task};
use crate::{CsmnError, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const USERNAME: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

const SPECIALS: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>", USERNAME_TOKEN];

/// Dense token↔id map; non-special ids are ordered by descending corpus
/// frequency with lexicographic ties.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub task: Task,
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    /// Occurrences of non-special tokens in the corpus the vocabulary was built from.
    total_occurrences: u64,
}

impl Vocabulary {
    fn from_parts(task: Task, tokens: Vec<String>, counts: Vec<u64>, total_occurrences: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { task, tokens, counts, index, total_occurrences }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[UNK as usize], String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Fraction of non-special token occurrences covered by the vocabulary.
    pub fn coverage(&self) -> f64 {
        if self.total_occurrences == 0 {
            return 1.0;
        }
        let covered: u64 = self.counts[NUM_SPECIALS..].iter().sum();
        covered as f64 / self.total_occurrences as f64
    }

    /// Line format: `id<TAB>token<TAB>count`, ids in order; first line is `#task<TAB>total`.
    pub fn to_tsv(&self) -> String {
        let task = match self.task {
            Task::Caption => "caption",
            Task::Hashtag => "hashtag",
        };
        let mut out = format!("#{task}\t{}\n", self.total_occurrences);
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{i}\t{t}\t{c}").expect("write to string");
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, detail: &str| CsmnError::Parse { path: path.into(), line, detail: detail.into() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty vocabulary"))?;
        let (task, total) = header
            .strip_prefix('#')
            .and_then(|h| h.split_once('\t'))
            .ok_or_else(|| perr(1, "expected #task<TAB>total"))?;
        let task = match task {
            "caption" => Task::Caption,
            "hashtag" => Task::Hashtag,
            _ => return Err(perr(1, "unknown task")),
        };
        let total = total.parse().map_err(|_| perr(1, "bad total"))?;
        let (mut tokens, mut counts) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, tok, count] = fields[..] else { return Err(perr(n + 2, "expected 3 fields")) };
            if id.parse::<usize>().ok() != Some(tokens.len()) {
                return Err(perr(n + 2, "ids must be dense and ordered"));
            }
            tokens.push(tok.to_string());
            counts.push(count.parse().map_err(|_| perr(n + 2, "bad count"))?);
        }
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIALS {
            return Err(perr(2, "special tokens missing"));
        }
        Ok(Vocabulary::from_parts(task, tokens, counts, total))
    }

    pub fn hash(&self) -> u64 {
        stable_hash(self.to_tsv().as_bytes())
    }
}

/// Keeps the `size − NUM_SPECIALS` most frequent non-special tokens.
pub fn build_vocabulary<S: AsRef<str>>(posts: &[Vec<S>], task: Task, size: usize) -> Result<Vocabulary> {
    if size <= NUM_SPECIALS {
        return Err(CsmnError::Config(format!("vocabulary size {size} leaves no room beyond {NUM_SPECIALS} specials")));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut total = 0u64;
    for post in posts {
        for t in post {
            let t = t.as_ref();
            if SPECIALS.contains(&t) {
                continue;
            }
            *freq.entry(t).or_default() += 1;
            total += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(size - NUM_SPECIALS);
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut counts = vec![0u64; NUM_SPECIALS];
    for (t, c) in ranked {
        tokens.push(t.to_string());
        counts.push(c);
    }
    Ok(Vocabulary::from_parts(task, tokens, counts, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(counts: &[(&str, usize)]) -> Vec<Vec<String>> {
        counts.iter().map(|(t, n)| vec![t.to_string(); *n]).collect()
    }

    #[test]
    fn frequency_cut_maps_rest_to_unk() {
        let posts = corpus(&[("a", 5), ("b", 3), ("c", 1)]);
        let v = build_vocabulary(&posts, Task::Caption, NUM_SPECIALS + 2).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.id("a"), NUM_SPECIALS as u32);
        assert_eq!(v.id("b"), NUM_SPECIALS as u32 + 1);
        assert_eq!(v.id("c"), UNK);
        assert!((v.coverage() - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ties_are_lexicographic() {
        let posts = corpus(&[("zeta", 2), ("alpha", 2), ("mid", 3)]);
        let v = build_vocabulary(&posts, Task::Hashtag, 10).unwrap();
        assert_eq!(v.decode(&[5, 6, 7]), vec!["mid", "alpha", "zeta"]);
    }

    #[test]
    fn full_coverage_and_limits() {
        let posts = corpus(&[("a", 1), ("b", 1)]);
        let v = build_vocabulary(&posts, Task::Caption, 100).unwrap();
        assert_eq!(v.coverage(), 1.0);
        assert!(build_vocabulary(&posts, Task::Caption, NUM_SPECIALS).is_err());
        assert!(build_vocabulary(&posts, Task::Caption, 40_000).is_ok());
        assert!(build_vocabulary(&posts, Task::Hashtag, 60_000).is_ok());
    }

    #[test]
    fn username_is_special() {
        let posts = vec![vec!["@username".to_string(), "hi".into()]];
        let v = build_vocabulary(&posts, Task::Caption, 10).unwrap();
        assert_eq!(v.id("@username"), USERNAME);
        assert_eq!(v.len(), NUM_SPECIALS + 1);
    }

    #[test]
    fn tsv_round_trip() {
        let posts = corpus(&[("a", 5), ("b", 3), ("c", 1)]);
        let v = build_vocabulary(&posts, Task::Caption, 7).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv(), Path::new("v.tsv")).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
    }

    proptest! {
        #[test]
        fn encode_decode_replaces_only_oov(
            words in proptest::collection::vec("[a-e]{1,2}", 1..40),
            size in 6usize..20,
        ) {
            let v = build_vocabulary(&[words.clone()], Task::Caption, size).unwrap();
            let back = v.decode(&v.encode(&words));
            for (orig, dec) in words.iter().zip(&back) {
                if v.lookup(orig).is_some() {
                    prop_assert_eq!(orig, dec);
                } else {
                    prop_assert_eq!(dec.as_str(), "<unk>");
                }
            }
        }
    }
}
