use super::*;
use crate::config::RunConfig;
use crate::corpus::{preprocess, synthesize, SynthConfig};
use crate::numcore::RngState;

fn fixture(task: Task, split: SplitMode) -> (RunConfig, Dataset, FeatureStore) {
    let synth = synthesize(&SynthConfig { seed: 4, ..SynthConfig::default() }).unwrap();
    let mut cfg = RunConfig::desk(task);
    cfg.corpus.vocab_caption = 50;
    cfg.corpus.vocab_hashtag = 50;
    cfg.split = split;
    let data = preprocess(synth.posts, &cfg).unwrap();
    cfg.model.vocab_size = data.vocab.len();
    (cfg, data, synth.features)
}

#[test]
fn identical_image_retrieves_its_post() {
    let (cfg, data, features) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let index = NnIndex::new(&data, &features, cfg.model.d_context, 0).unwrap();
    for post in data.part(Part::Train).into_iter().take(10) {
        let f = features.pooled(&post.image_feature_key).unwrap();
        assert_eq!(index.nearest_image(&f).post_id, post.post_id);
    }
}

#[test]
fn duplicated_image_resolves_to_smaller_post_id() {
    let (cfg, data, features) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let mut train: Vec<&str> = data.split.part(Part::Train).iter().map(String::as_str).collect();
    train.sort_unstable();
    let (first, second) = (train[3], train[7]);
    let mut dup = FeatureStore::new(features.mode(), features.dim());
    for key in features.keys() {
        let source = if key == second { first } else { key.as_str() };
        dup.insert(key.clone(), features.get(source).unwrap().clone()).unwrap();
    }
    let index = NnIndex::new(&data, &dup, cfg.model.d_context, 0).unwrap();
    let query = dup.pooled(second).unwrap();
    for _ in 0..3 {
        assert_eq!(index.nearest_image(&query).post_id, first);
    }
}

#[test]
fn overlap_ties_go_to_lower_user_id() {
    let (cfg, data, features) = fixture(Task::Caption, SplitMode::ByPosts);
    let index = NnIndex::new(&data, &features, cfg.model.d_context, 0).unwrap();
    assert_eq!(index.nearest_user(&[]), "u00");
    assert_eq!(index.nearest_user(&[u32::MAX]), "u00");
}

#[test]
fn usrim_author_matches_usr_neighbour() {
    let (cfg, data, features) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let d = cfg.model.d_context;
    let index = NnIndex::new(&data, &features, d, 9).unwrap();
    for post in data.part(Part::Test) {
        let profile = data.profile_for(post, d).unwrap().ids();
        let f = features.pooled(&post.image_feature_key).unwrap();
        let user = index.nearest_user(&profile);
        assert_eq!(index.retrieve(Baseline::UsrIm, &post.post_id, &f, &profile).user_id, user);
        assert_eq!(index.retrieve(Baseline::Usr, &post.post_id, &f, &profile).user_id, user);
    }
}

#[test]
fn baseline_reports_are_reproducible() {
    let (cfg, data, features) = fixture(Task::Caption, SplitMode::ByUsers);
    let d = cfg.model.d_context;
    for kind in [Baseline::Im, Baseline::Usr, Baseline::UsrIm] {
        let (a, ra) = evaluate(&Method::Nn(kind), &data, &features, Part::Test, d, 5).unwrap();
        let (b, rb) = evaluate(&Method::Nn(kind), &data, &features, Part::Test, d, 5).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.csv_rows(), b.csv_rows());
        assert!(a.metrics.iter().all(|&(_, v)| (0.0..=1.0).contains(&v)));
        assert_eq!(Baseline::parse(kind.name()), Some(kind));
    }
}

#[test]
fn perfect_memorizer_scores_one() {
    let memorize = |data: &Dataset| -> Vec<PredictionRecord> {
        data.part(Part::Train)
            .into_iter()
            .map(|p| PredictionRecord { post_id: p.post_id.clone(), predicted: p.tokens.clone(), reference: p.tokens.clone() })
            .collect()
    };
    let (_, data, _) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let report = score("memo", Task::Hashtag, SplitMode::ByPosts, &memorize(&data)).unwrap();
    assert_eq!(report.metrics.len(), 1);
    assert_eq!(report.get("f1"), Some(1.0));
    let (_, data, _) = fixture(Task::Caption, SplitMode::ByPosts);
    let caption = score("memo", Task::Caption, SplitMode::ByPosts, &memorize(&data)).unwrap();
    let names: Vec<&str> = caption.metrics.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(names, ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"]);
    assert!(caption.metrics.iter().all(|&(_, v)| v == 1.0));
}

#[test]
fn report_and_dump_formats() {
    let report = MetricReport {
        method: "csmn-no_uc".into(),
        task: Task::Hashtag,
        split: SplitMode::ByPosts,
        n: 3,
        metrics: vec![("f1".into(), 0.5)],
    };
    assert_eq!(reports_csv(&[report]), "method,task,split,metric,value,n\ncsmn-no_uc,hashtag,by_posts,f1,0.5,3\n");
    let (_, data, _) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let post = &data.posts[0];
    let rec = PredictionRecord { post_id: post.post_id.clone(), predicted: post.tokens.clone(), reference: post.tokens.clone() };
    let line = predictions_dump(&[rec], &data.vocab);
    assert_eq!(line, format!("{}\t{}\n", post.post_id, data.vocab.decode(&post.tokens).join(" ")));
}

#[test]
fn csmn_evaluation_is_deterministic_and_checks_vocab() {
    let (cfg, data, features) = fixture(Task::Hashtag, SplitMode::ByPosts);
    let model: Csmn<f32> = Csmn::new(cfg.model.clone(), cfg.flags, &mut RngState::new(2)).unwrap();
    let d = cfg.model.d_context;
    let (a, ra) = evaluate(&Method::Csmn(&model), &data, &features, Part::Test, d, 0).unwrap();
    let (b, rb) = evaluate(&Method::Csmn(&model), &data, &features, Part::Test, d, 0).unwrap();
    assert_eq!((a.csv_rows(), ra), (b.csv_rows(), rb));
    assert_eq!(a.method, "csmn");

    let ck = Checkpoint {
        config_hash: 0,
        vocab_hash: data.vocab.hash() ^ 1,
        epoch: 0,
        params: model.params.clone(),
        adam: crate::training::AdamState::new(&model.params),
    };
    assert!(matches!(load_model(&ck, &cfg.model, cfg.flags, &data.vocab), Err(CsmnError::VocabMismatch { .. })));
    let ck = Checkpoint { vocab_hash: data.vocab.hash(), ..ck };
    let loaded = load_model(&ck, &cfg.model, cfg.flags, &data.vocab).unwrap();
    let flags = AblationFlags { no_user_context: true, ..AblationFlags::default() };
    assert_eq!(Method::Csmn(&Csmn { flags, ..loaded }).name(), "csmn-no_uc");
}
