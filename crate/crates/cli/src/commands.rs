use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use csmn::config::{RunConfig, Task};
use csmn::corpus::{load_features, preprocess, read_corpus, synthesize, write_corpus, Dataset, FeatureStore, Part, SynthConfig};
use csmn::eval::{evaluate, load_model, predictions_dump, reports_csv, Baseline, Method};
use csmn::model::{dedup_hashtags, Csmn};
use csmn::numcore::RngState;
use csmn::training::{build_samples, gradient_check, jitter_biases, log_to_csv, train, Checkpoint, Trainer};
use csmn::CsmnError;

use crate::settings::{persist, ConfigArgs};
use crate::{Command, Conflict, GradcheckFailed};

pub const F64_TOLERANCE: f64 = 1e-5;
pub const F32_TOLERANCE: f64 = 1e-3;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { users, posts, topics, feature_dim, noise, image_mode, seed, out } => {
            let cfg = SynthConfig {
                users,
                posts_per_user: posts,
                topics,
                feature_dim,
                noise,
                image_mode: image_mode.into(),
                seed,
                ..SynthConfig::default()
            };
            synth(&cfg, &out)
        }
        Command::Preprocess { cfg, corpus, out } => {
            let mut cfg = cfg.resolve(None)?;
            let raw = read_corpus(&corpus)?;
            let data = preprocess(raw, &cfg)?;
            cfg.model.vocab_size = data.vocab.len();
            data.write(&out, cfg.model.d_context)?;
            persist(&cfg, &out)?;
            println!(
                "kept {} posts from {} users ({} rejected, {} users removed); vocabulary {}",
                data.posts.len(),
                data.profiles.user_count(),
                data.rejections.len(),
                data.removed_users.len(),
                data.vocab.len()
            );
            Ok(())
        }
        Command::Train { cfg, data, features, epochs, max_steps, resume, out } => {
            let (mut run, dataset, store) = load_inputs(&cfg, &data, &features)?;
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            if max_steps.is_some() {
                run.train.max_steps = max_steps;
            }
            run.train.validate()?;
            fit(&run, &dataset, &store, resume.as_deref(), &out)
        }
        Command::Generate { cfg, data, features, checkpoint, post_id, feature_key, user, out } => {
            let (run, dataset, store) = load_inputs(&cfg, &data, &features)?;
            let model = load_model(&Checkpoint::load(&checkpoint)?, &run.model, run.flags, &dataset.vocab)?;
            let d = run.model.d_context;
            let (id, key, profile) = match (post_id, feature_key, user) {
                (Some(id), _, _) => {
                    let post = dataset.post(&id).ok_or_else(|| CsmnError::Insufficient(format!("unknown post {id:?}")))?;
                    (id.clone(), post.image_feature_key.clone(), dataset.profile_for(post, d)?)
                }
                (None, Some(key), Some(user)) => (key.clone(), key, dataset.profiles.profile(&user, d, None)?),
                _ => return Err(Conflict("give --post-id, or --feature-key with --user".into()).into()),
            };
            let mut words = model.greedy_decode(store.get(&key)?, &profile.ids(), run.model.t_max)?;
            if run.task == Task::Hashtag {
                words = dedup_hashtags(&words);
            }
            let line = format!("{id}\t{}\n", dataset.vocab.decode(&words).join(" "));
            print!("{line}");
            if let Some(out) = out {
                persist(&run, &out)?;
                write(&out.join("generated.tsv"), &line)?;
            }
            Ok(())
        }
        Command::Evaluate { cfg, data, features, checkpoint, method, part, out } => {
            let (run, dataset, store) = load_inputs(&cfg, &data, &features)?;
            let part = match part.as_str() {
                "train" => Part::Train,
                "val" => Part::Val,
                "test" => Part::Test,
                other => return Err(Conflict(format!("unknown part {other:?}")).into()),
            };
            let d = run.model.d_context;
            let mut reports = Vec::new();
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for name in &method {
                let (report, records) = if name == "csmn" {
                    let path = checkpoint.as_ref().ok_or_else(|| Conflict("--method csmn needs --checkpoint".into()))?;
                    let model = load_model(&Checkpoint::load(path)?, &run.model, run.flags, &dataset.vocab)?;
                    evaluate(&Method::Csmn(&model), &dataset, &store, part, d, run.seed)?
                } else {
                    let kind = Baseline::parse(name).ok_or_else(|| Conflict(format!("unknown method {name:?}")))?;
                    evaluate(&Method::Nn(kind), &dataset, &store, part, d, run.seed)?
                };
                write(&out.join(format!("predictions_{}.tsv", report.method)), &predictions_dump(&records, &dataset.vocab))?;
                reports.push(report);
            }
            let csv = reports_csv(&reports);
            write(&out.join("report.csv"), &csv)?;
            persist(&run, &out)?;
            print!("{csv}");
            Ok(())
        }
        Command::Gradcheck { cfg, samples, out } => gradcheck(&cfg.resolve(None)?, samples, out.as_deref()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SynthRecord {
    users: usize,
    posts_per_user: usize,
    topics: usize,
    words_per_topic: usize,
    tags_per_topic: usize,
    scenes_per_topic: usize,
    body_words: (usize, usize),
    feature_dim: usize,
    image_mode: csmn::config::ImageMode,
    noise: f64,
    seed: u64,
}

fn synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let corpus = synthesize(cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_corpus(&out.join("corpus.jsonl"), &corpus.posts)?;
    corpus.features.write(&out.join("features.bin"))?;
    let record = SynthRecord {
        users: cfg.users,
        posts_per_user: cfg.posts_per_user,
        topics: cfg.topics,
        words_per_topic: cfg.words_per_topic,
        tags_per_topic: cfg.tags_per_topic,
        scenes_per_topic: cfg.scenes_per_topic,
        body_words: cfg.body_words,
        feature_dim: cfg.feature_dim,
        image_mode: cfg.image_mode,
        noise: cfg.noise,
        seed: cfg.seed,
    };
    write(&out.join("synth.toml"), &toml::to_string(&record)?)?;
    println!("wrote {} posts by {} users to {}", corpus.posts.len(), cfg.users, out.display());
    Ok(())
}

/// Dataset, features and a configuration consistent with both.
///
/// The configuration saved by `preprocess` is the default base. The model
/// vocabulary size follows the dataset.
fn load_inputs(args: &ConfigArgs, data: &Path, features: &Path) -> Result<(RunConfig, Dataset, FeatureStore)> {
    let dataset = Dataset::load(data)?;
    let mut cfg = args.resolve(Some(&data.join("config.toml")))?;
    if cfg.task != dataset.task {
        return Err(Conflict(format!(
            "configuration task is {:?} but {} holds {:?} data",
            cfg.task,
            data.display(),
            dataset.task
        ))
        .into());
    }
    cfg.model.vocab_size = dataset.vocab.len();
    let store = load_features(features, cfg.model.image_mode, Some(cfg.model.feature_dim))?;
    Ok((cfg, dataset, store))
}

fn fit(cfg: &RunConfig, data: &Dataset, features: &FeatureStore, resume: Option<&Path>, out: &Path) -> Result<()> {
    let d = cfg.model.d_context;
    let train_s = build_samples(data, features, Part::Train, d)?;
    let val = build_samples(data, features, Part::Val, d)?;
    let trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_vocab(data.vocab.hash())?;
            Trainer::resume(ck, cfg.model.clone(), cfg.flags, cfg.model_hash())?
        }
        None => {
            let model = Csmn::new(cfg.model.clone(), cfg.flags, &mut RngState::new(cfg.seed))?;
            Trainer::new(model, cfg.model_hash(), data.vocab.hash())
        }
    };
    let outcome = train(trainer, &train_s, &val, &cfg.train)?;
    persist(cfg, out)?;
    outcome.best.save(&out.join("model.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    write(&out.join("train_log.csv"), &log_to_csv(&outcome.log))?;
    println!(
        "trained {} epochs, {} steps; best val loss {:.6} at epoch {}, last {:.6}",
        outcome.last.epoch, outcome.last.adam.step, outcome.best_val, outcome.best.epoch, outcome.last_val
    );
    Ok(())
}

fn gradcheck(cfg: &RunConfig, samples: usize, out: Option<&Path>) -> Result<()> {
    let synth = synthesize(&SynthConfig {
        feature_dim: cfg.model.feature_dim,
        image_mode: cfg.model.image_mode,
        seed: cfg.seed,
        ..SynthConfig::default()
    })?;
    let mut cfg = cfg.clone();
    cfg.corpus.vocab_caption = cfg.model.vocab_size;
    cfg.corpus.vocab_hashtag = cfg.model.vocab_size;
    let data = preprocess(synth.posts, &cfg)?;
    cfg.model.vocab_size = data.vocab.len();
    let train_s = build_samples(&data, &synth.features, Part::Train, cfg.model.d_context)?;
    if samples == 0 || samples > train_s.len() {
        return Err(Conflict(format!("--samples must be in 1..={}", train_s.len())).into());
    }
    let batch: Vec<_> = train_s.iter().take(samples).collect();
    let mut model: Csmn<f64> = Csmn::new(cfg.model.clone(), cfg.flags, &mut RngState::new(cfg.seed))?;
    jitter_biases(&mut model.params, 0.05, &mut RngState::new(cfg.seed).fork(1));
    let (wide, narrow) = gradient_check(&model, &batch, 1e-6)?;
    let mut table = String::from("parameter\tchecked\tskipped\trel_err_f64\trel_err_f32\n");
    let mut failed = 0;
    for (a, b) in wide.iter().zip(&narrow) {
        let bad = a.rel_err > F64_TOLERANCE || b.rel_err > F32_TOLERANCE;
        failed += usize::from(bad);
        writeln!(table, "{}\t{}\t{}\t{:.3e}\t{:.3e}", a.name, a.checked, a.skipped, a.rel_err, b.rel_err)?;
    }
    print!("{table}");
    if let Some(out) = out {
        persist(&cfg, out)?;
        write(&out.join("gradcheck.tsv"), &table)?;
    }
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}
