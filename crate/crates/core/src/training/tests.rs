use super::*;
use crate::config::{RunConfig, Task};
use crate::corpus::{preprocess, synthesize, SynthConfig};
use crate::numcore::finite_diff_check;

fn corpus(task: Task, seed: u64) -> (RunConfig, Vec<Sample>, Vec<Sample>) {
    let synth = synthesize(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let mut cfg = RunConfig::desk(task);
    cfg.corpus.vocab_caption = 50;
    cfg.corpus.vocab_hashtag = 50;
    cfg.seed = seed;
    let data = preprocess(synth.posts, &cfg).unwrap();
    cfg.model.vocab_size = data.vocab.len();
    let d = cfg.model.d_context;
    let train = build_samples(&data, &synth.features, Part::Train, d).unwrap();
    let val = build_samples(&data, &synth.features, Part::Val, d).unwrap();
    (cfg, train, val)
}

fn model<T: Scalar>(cfg: &RunConfig, seed: u64) -> Csmn<T> {
    Csmn::new(cfg.model.clone(), cfg.flags, &mut RngState::new(seed)).unwrap()
}

fn loss_with(m: &Csmn<f64>, batch: &[&Sample], perturb: Option<&LogitPerturbation<f64>>) -> (Tape<f64>, LossTrace) {
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, true).unwrap();
    let trace = teacher_forced_loss(&mut tape, &w, m, batch, perturb).unwrap();
    (tape, trace)
}

#[test]
fn pure_buckets_when_lengths_fill_batches() {
    let lengths: Vec<usize> = [3; 8].into_iter().chain([5; 8]).collect();
    let batches = make_batches(&lengths, 8, &mut RngState::new(1));
    assert_eq!(batches.len(), 2);
    for b in &batches {
        assert_eq!(b.len(), 8);
        let l = lengths[b[0]];
        assert!(b.iter().all(|&i| lengths[i] == l));
    }
    assert_eq!(batches, make_batches(&lengths, 8, &mut RngState::new(1)));
}

#[test]
fn leftovers_form_mixed_batches() {
    let lengths = [3, 3, 3, 4, 4, 5, 5, 5, 5, 6];
    let batches = make_batches(&lengths, 3, &mut RngState::new(2));
    let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert!(batches.iter().any(|b| b.iter().any(|&i| lengths[i] != lengths[b[0]])));
    assert!(batches.iter().all(|b| b.len() <= 3));
}

#[test]
fn zero_output_layer_gives_log_vocab_loss() {
    let (cfg, train, _) = corpus(Task::Caption, 0);
    let mut m: Csmn<f64> = model(&cfg, 0);
    for v in m.params.get_mut("vocab.weight").unwrap().data_mut() {
        *v = 0.0;
    }
    let batch: Vec<&Sample> = train.iter().take(5).collect();
    let loss = batch_loss(&m, &batch).unwrap();
    assert!((loss - (cfg.model.vocab_size as f64).ln()).abs() < 1e-12);
}

#[test]
fn single_sample_loss_is_mean_of_steps() {
    let (cfg, train, _) = corpus(Task::Caption, 1);
    let m: Csmn<f64> = model(&cfg, 1);
    let (tape, trace) = loss_with(&m, &[&train[0]], None);
    let steps: Vec<f64> = trace.steps[0].iter().map(|s| tape.value(s.loss).item()).collect();
    assert_eq!(steps.len(), train[0].target.len());

    // Chain the steps by hand with fresh memory each time.
    let mut manual = Vec::new();
    for t in 0..train[0].target.len() {
        let mut tape = Tape::new();
        let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
        let mut state = m.memory(&mut tape, &w, &train[0].feature, &train[0].profile).unwrap();
        for &y in &train[0].target[..t] {
            state = state.append_output_word(&mut tape, &w.memory, y).unwrap();
        }
        let y_prev = if t == 0 { BOS } else { train[0].target[t - 1] };
        let logits = forward_step(&mut tape, &w, y_prev, &state).unwrap().logits;
        let l = tape.value(logits).data().to_vec();
        let lse = l.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = lse + l.iter().map(|v| (v - lse).exp()).sum::<f64>().ln();
        manual.push(lse - l[train[0].target[t] as usize]);
    }
    for (a, b) in steps.iter().zip(&manual) {
        assert!((a - b).abs() < 1e-12);
    }
    let mean = manual.iter().sum::<f64>() / manual.len() as f64;
    assert!((tape.value(trace.loss).item() - mean).abs() < 1e-12);
}

#[test]
fn later_steps_ignore_earlier_logits() {
    let (cfg, train, _) = corpus(Task::Caption, 2);
    let m: Csmn<f64> = model(&cfg, 2);
    let batch: Vec<&Sample> = train.iter().take(3).collect();
    let (base_tape, base) = loss_with(&m, &batch, None);
    let mut rng = RngState::new(9);
    for _ in 0..20 {
        let i = rng.below(batch.len());
        let len = batch[i].target.len();
        let t = 1 + rng.below(len - 1);
        let delta: Vec<f64> = (0..cfg.model.vocab_size).map(|_| 100.0 * rng.normal()).collect();
        let delta = Tensor::vector(delta);
        let perturb = move |s: usize, step: usize| (s == i && step == t - 1).then(|| delta.clone());
        let (tape, trace) = loss_with(&m, &batch, Some(&perturb));
        let before = base_tape.value(base.steps[i][t].loss).item();
        let after = tape.value(trace.steps[i][t].loss).item();
        assert_eq!(before.to_bits(), after.to_bits());
        assert_ne!(
            base_tape.value(base.steps[i][t - 1].loss).item(),
            tape.value(trace.steps[i][t - 1].loss).item()
        );
    }
}

#[test]
fn step_loss_has_no_gradient_into_earlier_logits() {
    let (cfg, train, _) = corpus(Task::Caption, 3);
    let m: Csmn<f64> = model(&cfg, 3);
    let (tape, trace) = loss_with(&m, &[&train[0]], None);
    let steps = &trace.steps[0];
    for t in 1..steps.len() {
        let grads = tape.backward(steps[t].loss).unwrap();
        for earlier in &steps[..t] {
            assert!(grads.get(earlier.logits).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
        }
        assert!(grads.get(steps[t].logits).is_some());
    }
}

#[test]
fn pad_steps_do_not_change_loss() {
    let (cfg, train, _) = corpus(Task::Caption, 4);
    let m: Csmn<f64> = model(&cfg, 4);
    let mut padded = train[0].clone();
    padded.target.extend([PAD, PAD, PAD]);
    let a = batch_loss(&m, &[&train[0]]).unwrap();
    let b = batch_loss(&m, &[&padded]).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());

    let short = train.iter().find(|s| s.target.len() == 4).unwrap();
    let long = train.iter().find(|s| s.target.len() == 6).unwrap();
    let mixed = batch_loss(&m, &[short, long]).unwrap();
    let each = (batch_loss(&m, &[short]).unwrap() + batch_loss(&m, &[long]).unwrap()) / 2.0;
    assert!((mixed - each).abs() < 1e-12);
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let (mut cfg, train, _) = corpus(Task::Caption, 5);
    cfg.model.vocab_size = cfg.model.vocab_size.min(30);
    let samples: Vec<Sample> = train
        .iter()
        .filter(|s| s.target.iter().chain(&s.profile).all(|&y| (y as usize) < cfg.model.vocab_size))
        .take(2)
        .cloned()
        .collect();
    assert_eq!(samples.len(), 2);
    let m: Csmn<f64> = model(&cfg, 5);
    let batch: Vec<&Sample> = samples.iter().collect();
    let checks = finite_diff_check(&m.params, 1e-6, |tape, vars| {
        let w = Weights::resolve(&m.params, vars, &m.config, &m.flags)?;
        Ok::<_, CsmnError>(teacher_forced_loss(tape, &w, &m, &batch, None)?.loss)
    })
    .unwrap();
    assert_eq!(checks.len(), m.params.len());
    for c in checks {
        assert!(c.rel_err <= 1e-5, "{c:?}");
    }
}

#[test]
fn first_adam_step_moves_by_lr() {
    let cfg = RunConfig::paper(Task::Caption).train;
    let mut p = ParamSet::<f64>::new();
    p.insert("x", Tensor::vector(vec![0.5, -0.5])).unwrap();
    let mut g = ParamSet::<f64>::new();
    g.insert("x", Tensor::vector(vec![1.0, 0.0])).unwrap();
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &g, &mut state, 0.001, &cfg).unwrap();
    let x = p.get("x").unwrap().data();
    assert!((x[0] - (0.5 - 0.001 / (1.0 + 1e-8))).abs() < 1e-15);
    assert_eq!(x[1], -0.5);
    assert_eq!(state.step, 1);

    state.m.get_mut("x").unwrap().data_mut()[1] = 1.0;
    let zero = g.zeros_like();
    let before = state.v.get("x").unwrap().data()[0];
    adam_step(&mut p, &zero, &mut state, 0.001, &cfg).unwrap();
    assert!((state.m.get("x").unwrap().data()[1] - 0.9).abs() < 1e-15);
    assert!((state.v.get("x").unwrap().data()[0] - 0.999 * before).abs() < 1e-18);
}

#[test]
fn non_finite_gradient_names_parameter() {
    let cfg = RunConfig::paper(Task::Caption).train;
    let mut p = ParamSet::<f32>::new();
    p.insert("w", Tensor::vector(vec![1.0])).unwrap();
    p.insert("bad", Tensor::vector(vec![1.0])).unwrap();
    let mut g = p.zeros_like();
    g.get_mut("bad").unwrap().data_mut()[0] = f32::NAN;
    let mut state = AdamState::new(&p);
    let err = adam_step(&mut p, &g, &mut state, 0.001, &cfg).unwrap_err();
    assert!(matches!(err, CsmnError::NonFiniteGradient(ref n) if n == "bad"));
}

#[test]
fn clipping_bounds_the_update_input() {
    let mut cfg = RunConfig::paper(Task::Caption).train;
    cfg.grad_clip = Some(1.0);
    let mut p = ParamSet::<f64>::new();
    p.insert("x", Tensor::vector(vec![0.0, 0.0])).unwrap();
    let mut g = p.zeros_like();
    g.get_mut("x").unwrap().data_mut().copy_from_slice(&[30.0, 40.0]);
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &g, &mut state, 0.001, &cfg).unwrap();
    let m = state.m.get("x").unwrap().data();
    assert!((m[0] - 0.1 * 0.6).abs() < 1e-12 && (m[1] - 0.1 * 0.8).abs() < 1e-12);
}

#[test]
fn learning_rate_schedule() {
    let cfg = RunConfig::paper(Task::Caption).train;
    for e in 0..5 {
        assert_eq!(lr_at(&cfg, e), 0.001);
    }
    assert!((lr_at(&cfg, 5) - 8.3333e-4).abs() < 1e-8);
    assert!((lr_at(&cfg, 10) - 6.9444e-4).abs() < 1e-8);
}

fn quick_train(task: Task, seed: u64, epochs: usize) -> (RunConfig, Vec<Sample>, Vec<Sample>, TrainOutcome) {
    let (mut cfg, train, val) = corpus(task, seed);
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    let trainer = Trainer::new(model(&cfg, seed), cfg.model_hash(), 7);
    let out = super::train(trainer, &train, &val, &cfg.train).unwrap();
    (cfg, train, val, out)
}

#[test]
fn full_batch_loss_mostly_decreases() {
    let (mut cfg, train, val) = corpus(Task::Caption, 6);
    cfg.train.batch_size = train.len();
    cfg.train.epochs = 50;
    cfg.train.lr0 = 0.003;
    let trainer = Trainer::new(model(&cfg, 6), cfg.model_hash(), 0);
    let out = super::train(trainer, &train, &val, &cfg.train).unwrap();
    let losses: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert_eq!(losses.len(), 50);
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 5, "{rises} rises in {losses:?}");
    assert!(losses[49] < losses[0]);
}

#[test]
fn reruns_are_bit_identical_and_best_is_best() {
    let (_, _, _, a) = quick_train(Task::Hashtag, 7, 3);
    let (_, _, _, b) = quick_train(Task::Hashtag, 7, 3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert!(a.best_val <= a.last_val);
    let vals: Vec<f64> = a.log.iter().filter(|r| r.split == "val").map(|r| r.loss).collect();
    assert_eq!(vals.len(), 3);
    assert_eq!(a.best_val, vals.iter().cloned().fold(f64::INFINITY, f64::min));
    assert!(log_to_csv(&a.log).starts_with("epoch,step,split,loss,lr\n0,1,train,"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (cfg, train, val, full) = quick_train(Task::Caption, 8, 4);
    let mut first = cfg.train.clone();
    first.epochs = 2;
    let trainer = Trainer::new(model(&cfg, 8), cfg.model_hash(), 7);
    let half = super::train(trainer, &train, &val, &first).unwrap();
    let bytes = half.last.to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let trainer = Trainer::resume(ck, cfg.model.clone(), cfg.flags, cfg.model_hash()).unwrap();
    let rest = super::train(trainer, &train, &val, &cfg.train).unwrap();
    assert_eq!(rest.last.to_bytes(), full.last.to_bytes());
    let joined: Vec<LogRecord> = half.log.iter().chain(&rest.log).cloned().collect();
    assert_eq!(joined, full.log);

    let other = Trainer::resume(half.last, cfg.model.clone(), cfg.flags, cfg.model_hash() ^ 1);
    assert!(other.is_err());
}

#[test]
fn max_steps_caps_training() {
    let (mut cfg, train, val) = corpus(Task::Caption, 9);
    cfg.train.max_steps = Some(5);
    cfg.train.batch_size = 8;
    let trainer = Trainer::new(model(&cfg, 9), cfg.model_hash(), 0);
    let out = super::train(trainer, &train, &val, &cfg.train).unwrap();
    assert_eq!(out.last.adam.step, 5);
    assert_eq!(out.log.iter().filter(|r| r.split == "train").count(), 5);
}
