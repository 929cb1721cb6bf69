//! Metrics, retrieval baselines and evaluation reports.

mod baselines;
mod metrics;

pub use baselines::{Baseline, NnIndex};
pub use metrics::{bleu, f1_hashtags, lcs_len, rouge_l, rouge_l_pair, sentence_bleu_smoothed, ROUGE_BETA};

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{AblationFlags, ModelConfig, SplitMode, Task};
use crate::corpus::{Dataset, FeatureStore, Part, Vocabulary};
use crate::model::{dedup_hashtags, Csmn};
use crate::training::Checkpoint;
use crate::{CsmnError, Result};

/// One generated or retrieved sequence next to its reference.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub post_id: String,
    pub predicted: Vec<u32>,
    pub reference: Vec<u32>,
}

pub enum Method<'a> {
    Csmn(&'a Csmn<f32>),
    Nn(Baseline),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Csmn(m) if m.flags == AblationFlags::default() => "csmn".into(),
            Method::Csmn(m) => format!("csmn-{}", m.flags.label().replace('+', "-")),
            Method::Nn(b) => b.name().into(),
        }
    }
}

/// Model for `ck`, refusing checkpoints trained on a different vocabulary.
pub fn load_model(ck: &Checkpoint, config: &ModelConfig, flags: AblationFlags, vocab: &Vocabulary) -> Result<Csmn<f32>> {
    ck.check_vocab(vocab.hash())?;
    Csmn::from_params(config.clone(), flags, ck.params.clone())
}

/// Predictions for every post of `part`, in split order.
///
/// Profiles leave the query post out of its author's statistics. Hashtag
/// outputs are deduplicated. `seed` drives the random post choice of 1NN-Usr.
pub fn predict(
    method: &Method,
    data: &Dataset,
    features: &FeatureStore,
    part: Part,
    d: usize,
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    let posts = data.part(part);
    if posts.is_empty() {
        return Err(CsmnError::Insufficient(format!("{} split is empty", part.as_str())));
    }
    let index = match method {
        Method::Nn(_) => Some(NnIndex::new(data, features, d, seed)?),
        Method::Csmn(_) => None,
    };
    posts
        .par_iter()
        .map(|post| {
            let profile = data.profile_for(post, d)?.ids();
            let predicted = match method {
                Method::Csmn(m) => {
                    let words = m.greedy_decode(features.get(&post.image_feature_key)?, &profile, m.config.t_max)?;
                    match data.task {
                        Task::Hashtag => dedup_hashtags(&words),
                        Task::Caption => words,
                    }
                }
                Method::Nn(kind) => {
                    let feature = features.pooled(&post.image_feature_key)?;
                    let index = index.as_ref().expect("index built for baselines");
                    index.retrieve(*kind, &post.post_id, &feature, &profile).tokens.clone()
                }
            };
            Ok(PredictionRecord { post_id: post.post_id.clone(), predicted, reference: post.tokens.clone() })
        })
        .collect()
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Caption => "caption",
        Task::Hashtag => "hashtag",
    }
}

pub fn split_name(split: SplitMode) -> &'static str {
    match split {
        SplitMode::ByUsers => "by_users",
        SplitMode::ByPosts => "by_posts",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub task: Task,
    pub split: SplitMode,
    pub n: usize,
    /// Metric name and value, in report order.
    pub metrics: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == metric).map(|&(_, v)| v)
    }

    /// Rows of `method,task,split,metric,value,n` without a header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (metric, value) in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{metric},{value},{}",
                self.method,
                task_name(self.task),
                split_name(self.split),
                self.n
            );
        }
        out
    }
}

pub const REPORT_HEADER: &str = "method,task,split,metric,value,n";

/// Report file contents for several methods.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Hashtag runs are scored by mean F1; caption runs by corpus BLEU-1..4 and mean ROUGE-L.
pub fn score(method: &str, task: Task, split: SplitMode, records: &[PredictionRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(CsmnError::Metric("no predictions to score".into()));
    }
    let metrics = match task {
        Task::Hashtag => {
            let mut total = 0.0;
            for r in records {
                total += f1_hashtags(&r.predicted, &r.reference)?;
            }
            vec![("f1".to_string(), total / records.len() as f64)]
        }
        Task::Caption => {
            let pairs: Vec<(Vec<u32>, Vec<u32>)> =
                records.iter().map(|r| (r.predicted.clone(), r.reference.clone())).collect();
            let mut m = Vec::new();
            for n in 1..=4 {
                m.push((format!("bleu{n}"), bleu(&pairs, n)?));
            }
            m.push(("rouge_l".to_string(), rouge_l(&pairs)?));
            m
        }
    };
    Ok(MetricReport { method: method.to_string(), task, split, n: records.len(), metrics })
}

/// Predicts and scores `part` of `data`.
pub fn evaluate(
    method: &Method,
    data: &Dataset,
    features: &FeatureStore,
    part: Part,
    d: usize,
    seed: u64,
) -> Result<(MetricReport, Vec<PredictionRecord>)> {
    let records = predict(method, data, features, part, d, seed)?;
    let report = score(&method.name(), data.task, data.split.mode, &records)?;
    Ok((report, records))
}

/// Lines of `post_id<TAB>space-joined tokens`.
pub fn predictions_dump(records: &[PredictionRecord], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}", r.post_id, vocab.decode(&r.predicted).join(" "));
    }
    out
}

#[cfg(test)]
mod tests;
