use proptest::prelude::*;

use super::*;
use crate::config::{RunConfig, Task};
use crate::numcore::masked_softmax_values;

fn desk() -> ModelConfig {
    RunConfig::desk(Task::Caption).model
}

fn model(config: ModelConfig, flags: AblationFlags, seed: u64) -> Csmn<f64> {
    Csmn::new(config, flags, &mut RngState::new(seed)).unwrap()
}

fn feature(config: &ModelConfig, seed: u64) -> Tensor<f32> {
    let mut rng = RngState::new(seed);
    let rows = config.image_slots();
    let data: Vec<f32> = (0..rows * config.feature_dim).map(|_| rng.normal() as f32).collect();
    match config.image_mode {
        ImageMode::Pool5 => Tensor::vector(data),
        ImageMode::Res5c => Tensor::new(vec![rows, config.feature_dim], data).unwrap(),
    }
}

fn set(m: &mut Csmn<f64>, name: &str, f: impl Fn(usize) -> f64) {
    let t = m.params.get_mut(name).unwrap();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Step distribution after feeding `history` (starting after BOS) through the memory.
fn distribution_after(m: &Csmn<f64>, feat: &Tensor<f32>, profile: &[u32], history: &[u32]) -> Vec<f64> {
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let mut state = m.memory(&mut tape, &w, feat, profile).unwrap();
    let mut y_prev = BOS;
    for &y in history {
        if !m.flags.no_word_output {
            state = state.append_output_word(&mut tape, &w.memory, y).unwrap();
        }
        y_prev = y;
    }
    decode_step(&mut tape, &w, &m.flags, y_prev, &state).unwrap().0.s
}

#[test]
fn zero_query_weights_give_zero_query() {
    let mut m = model(desk(), AblationFlags::default(), 1);
    set(&mut m, "query.weight", |_| 0.0);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let q = make_query(&mut tape, &w, &m.layout(), 7).unwrap();
    assert_eq!(tape.shape(q), &[1, m.config.mem_dim]);
    assert_eq!(tape.value(q).max_abs(), 0.0);
}

#[test]
fn distinct_previous_words_give_distinct_queries() {
    let mut m = model(desk(), AblationFlags::default(), 2);
    set(&mut m, "query.bias", |_| 0.5);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let a = make_query(&mut tape, &w, &m.layout(), 6).unwrap();
    let b = make_query(&mut tape, &w, &m.layout(), 9).unwrap();
    assert_ne!(tape.value(a), tape.value(b));
    assert!(make_query(&mut tape, &w, &m.layout(), 30).is_err());
}

#[test]
fn query_width_at_paper_dims() {
    let mut cfg = RunConfig::paper(Task::Caption).model;
    cfg.vocab_size = 20;
    let layout = MemoryLayout::new(&cfg);
    let mut tape = Tape::<f32>::new();
    let mut rng = RngState::new(0);
    let e = tape.leaf(Tensor::new(vec![20, 512], (0..20 * 512).map(|_| rng.normal() as f32).collect()).unwrap(), false).unwrap();
    let wq = tape.leaf(Tensor::zeros(&[1024, 512]), false).unwrap();
    let bq = tape.leaf(Tensor::zeros(&[1024]), false).unwrap();
    let dummy = tape.constant(Tensor::zeros(&[1])).unwrap();
    let w = Weights {
        memory: crate::memory::MemoryWeights {
            img_a: (dummy, dummy),
            img_c: (dummy, dummy),
            embed_a: dummy,
            embed_c: dummy,
            word_proj: (dummy, dummy),
        },
        embed_b: e,
        query: (wq, bq),
        segments: Vec::new(),
        img_fuse: None,
        hidden: (dummy, dummy),
        vocab: dummy,
    };
    let q = make_query(&mut tape, &w, &layout, 3).unwrap();
    assert_eq!(tape.shape(q), &[1, 1024]);
}

#[test]
fn attention_is_masked_probability() {
    let m = model(desk(), AblationFlags::default(), 3);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let state = m.memory(&mut tape, &w, &feature(&m.config, 1), &[5, 6]).unwrap();
    let state = state.append_output_word(&mut tape, &w.memory, 8).unwrap();
    let q = make_query(&mut tape, &w, &m.layout(), 8).unwrap();
    let (p, mo) = attend(&mut tape, q, &state).unwrap();
    let p = tape.value(p).data().to_vec();
    let mask = state.mask();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (pi, mi) in p.iter().zip(&mask) {
        if *mi {
            assert!(*pi > 0.0);
        } else {
            assert_eq!(*pi, 0.0);
        }
    }
    assert_eq!(tape.shape(mo), &[m.config.memory_slots(), m.config.mem_dim]);
}

#[test]
fn uniform_attention_scales_rows_by_inverse_count() {
    let mut m = model(desk(), AblationFlags::default(), 4);
    set(&mut m, "query.weight", |_| 0.0);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let state = m.memory(&mut tape, &w, &feature(&m.config, 2), &[5, 6, 7]).unwrap();
    let q = make_query(&mut tape, &w, &m.layout(), BOS).unwrap();
    let (p, mo) = attend(&mut tape, q, &state).unwrap();
    let (_, mc) = state.assemble(&mut tape).unwrap();
    let j = 4.0;
    for (i, &mi) in state.mask().iter().enumerate() {
        let expect = if mi { 1.0 / j } else { 0.0 };
        assert!((tape.value(p).data()[i] - expect).abs() < 1e-15);
        for (o, c) in tape.value(mo).row(i).iter().zip(tape.value(mc).row(i)) {
            assert!((o - c * expect).abs() < 1e-15);
        }
    }
}

#[test]
fn one_hot_attention_selects_a_row() {
    let mut tape = Tape::<f64>::new();
    let mc = tape.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
    let p = tape.constant(Tensor::new(vec![3, 1], vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
    let mo = tape.scale_rows(p, mc).unwrap();
    assert_eq!(tape.value(mo).data(), &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
}

#[test]
fn fused_width_scales_with_depth() {
    for (mode, factor) in [(ImageMode::Pool5, 6), (ImageMode::Res5c, 9)] {
        let cfg = ModelConfig { image_mode: mode, ..desk() };
        let m = model(cfg.clone(), AblationFlags::default(), 5);
        let mut tape = Tape::new();
        let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
        let state = m.memory(&mut tape, &w, &feature(&cfg, 3), &[5]).unwrap();
        let vars = forward_step(&mut tape, &w, BOS, &state).unwrap();
        assert_eq!(tape.shape(vars.c), &[factor * cfg.conv_depth]);
        assert_eq!(tape.shape(vars.h), &[factor * cfg.conv_depth]);
        assert_eq!(tape.shape(vars.logits), &[cfg.vocab_size]);
    }
}

#[test]
fn zero_attended_memory_gives_zero_fused_vector() {
    for mode in [ImageMode::Pool5, ImageMode::Res5c] {
        for no_cnn in [false, true] {
            let cfg = ModelConfig { image_mode: mode, ..desk() };
            let flags = AblationFlags { no_cnn, ..AblationFlags::default() };
            let m = model(cfg.clone(), flags, 6);
            let mut tape = Tape::new();
            let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
            let mo = tape.constant(Tensor::zeros(&[cfg.memory_slots(), cfg.mem_dim])).unwrap();
            let mask = vec![true; cfg.memory_slots()];
            let c = memory_cnn(&mut tape, &w, &m.layout(), mo, &mask).unwrap();
            assert_eq!(tape.value(c).max_abs(), 0.0, "{mode:?} no_cnn={no_cnn}");
        }
    }
}

#[test]
fn zero_hidden_gives_uniform_distribution() {
    let mut m = model(desk(), AblationFlags::default(), 7);
    set(&mut m, "hidden.weight", |_| 0.0);
    let s = distribution_after(&m, &feature(&m.config, 4), &[5, 6], &[]);
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for v in s {
        assert!((v - 1.0 / 30.0).abs() < 1e-15);
    }
}

#[test]
fn crafted_logits_softmax() {
    let s = softmax_values(&[1.0f64, 2.0, 3.0, 4.0]);
    let z: f64 = (1..=4).map(|k| (k as f64).exp()).sum();
    for (k, v) in s.iter().enumerate() {
        assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-15);
    }
    assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

/// Hidden units fixed at 1 and a vocabulary row that picks `winner`.
fn forced_winner(winner: u32) -> Csmn<f64> {
    let mut m = model(desk(), AblationFlags::default(), 8);
    set(&mut m, "hidden.weight", |_| 0.0);
    set(&mut m, "hidden.bias", |_| 1.0);
    let fused = m.config.fused_dim();
    set(&mut m, "vocab.weight", |i| if i / fused == winner as usize { 1.0 } else { 0.0 });
    m
}

#[test]
fn eos_leaves_memory_unchanged() {
    let m = forced_winner(EOS);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let state = m.memory(&mut tape, &w, &feature(&m.config, 5), &[5]).unwrap();
    let (out, next) = decode_step(&mut tape, &w, &m.flags, BOS, &state).unwrap();
    assert_eq!(out.y, EOS);
    assert_eq!(next.t(), 0);
    assert_eq!(next.mask(), state.mask());
    assert!(m.greedy_decode(&feature(&m.config, 5), &[5], 5).unwrap().is_empty());
}

#[test]
fn non_eos_step_grows_memory() {
    let m = forced_winner(11);
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
    let state = m.memory(&mut tape, &w, &feature(&m.config, 5), &[5]).unwrap();
    let (out, next) = decode_step(&mut tape, &w, &m.flags, BOS, &state).unwrap();
    assert_eq!(out.y, 11);
    assert_eq!(next.t(), 1);
    assert!((out.s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let p_sum: f64 = out.p.iter().sum();
    assert!((p_sum - 1.0).abs() < 1e-12);
    assert_eq!(m.greedy_decode(&feature(&m.config, 5), &[5], 4).unwrap(), vec![11; 4]);
}

#[test]
fn greedy_decode_is_deterministic_and_bounded() {
    let m = model(desk(), AblationFlags::default(), 9);
    let feat = feature(&m.config, 6);
    for max_len in 0..=m.config.t_max {
        let a = m.greedy_decode(&feat, &[5, 6, 7], max_len).unwrap();
        let b = m.greedy_decode(&feat, &[5, 6, 7], max_len).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= max_len);
    }
    assert!(m.greedy_decode(&feat, &[5], m.config.t_max + 1).is_err());
}

#[test]
fn dedup_examples() {
    assert_eq!(dedup_hashtags(&[10, 11, 10, 12]), vec![10, 11, 12]);
    assert_eq!(dedup_hashtags(&[10, 11, 12]), vec![10, 11, 12]);
    assert_eq!(dedup_hashtags(&[10, 10, 10]), vec![10]);
}

#[test]
fn no_user_context_ignores_profile() {
    let flags = AblationFlags { no_user_context: true, ..AblationFlags::default() };
    let m = model(desk(), flags, 10);
    let feat = feature(&m.config, 7);
    let a = distribution_after(&m, &feat, &[5, 6, 7, 8], &[9]);
    let b = distribution_after(&m, &feat, &[20, 21], &[9]);
    let c = distribution_after(&m, &feat, &[], &[9]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(m.greedy_decode(&feat, &[5, 6], 5).unwrap(), m.greedy_decode(&feat, &[22], 5).unwrap());
}

#[test]
fn no_word_output_ignores_history() {
    let feat = feature(&desk(), 8);
    let ablated = model(desk(), AblationFlags { no_word_output: true, ..AblationFlags::default() }, 11);
    assert_eq!(
        distribution_after(&ablated, &feat, &[5, 6], &[12, 13, 9]),
        distribution_after(&ablated, &feat, &[5, 6], &[17, 9])
    );
    let full = Csmn { flags: AblationFlags::default(), ..ablated };
    assert_ne!(
        distribution_after(&full, &feat, &[5, 6], &[12, 13, 9]),
        distribution_after(&full, &feat, &[5, 6], &[17, 9])
    );
}

#[test]
fn user_slot_order_matters() {
    let m = model(desk(), AblationFlags::default(), 12);
    let feat = feature(&m.config, 9);
    let forward = distribution_after(&m, &feat, &[5, 6, 7, 8], &[]);
    let reversed = distribution_after(&m, &feat, &[8, 7, 6, 5], &[]);
    assert_ne!(forward, reversed);
}

#[test]
fn paper_dims_fused_widths() {
    for (mode, width) in [(ImageMode::Pool5, 1800), (ImageMode::Res5c, 2700)] {
        let mut cfg = RunConfig::paper(Task::Caption).model;
        cfg.image_mode = mode;
        cfg.vocab_size = 16;
        let m: Csmn<f32> = Csmn::new(cfg.clone(), AblationFlags::default(), &mut RngState::new(0)).unwrap();
        let mut tape = Tape::new();
        let (w, _) = Weights::bind(&mut tape, &m.params, &m.config, &m.flags, false).unwrap();
        let state = m.memory(&mut tape, &w, &feature(&cfg, 1), &[5, 6]).unwrap();
        let vars = forward_step(&mut tape, &w, BOS, &state).unwrap();
        assert_eq!(tape.shape(vars.c), &[width]);
    }
}

proptest! {
    #[test]
    fn argmax_ignores_logit_shift(logits in proptest::collection::vec(-5.0f64..5.0, 2..12), shift in -50.0f64..50.0) {
        let mask = vec![true; logits.len()];
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = argmax(&masked_softmax_values(&logits, &mask).unwrap());
        let b = argmax(&masked_softmax_values(&shifted, &mask).unwrap());
        prop_assert_eq!(argmax(&logits), argmax(&shifted));
        prop_assert_eq!(a, argmax(&logits));
        prop_assert_eq!(b, argmax(&shifted));
    }
}
