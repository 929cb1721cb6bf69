//! Teacher-forced training: batching, loss, Adam and the epoch loop.

mod checkpoint;

pub use checkpoint::{AdamState, Checkpoint};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::{AblationFlags, ModelConfig, TrainConfig};
use crate::corpus::{Dataset, FeatureStore, Part, BOS, EOS, PAD};
use crate::model::{forward_step, Csmn, Weights};
use crate::numcore::{analytic_gradients, compare, numeric_gradients, NumError, ParamCheck, ParamSet, RngState, Scalar, Tape, Tensor, Var};
use crate::{CsmnError, Result};

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub post_id: String,
    pub user_id: String,
    pub feature: Tensor<f32>,
    /// Leave-one-out active words of the author.
    pub profile: Vec<u32>,
    /// Post tokens followed by EOS.
    pub target: Vec<u32>,
}

/// Samples for every post of `part`, in split order.
pub fn build_samples(data: &Dataset, features: &FeatureStore, part: Part, d: usize) -> Result<Vec<Sample>> {
    data.part(part)
        .into_iter()
        .map(|post| {
            let mut target = post.tokens.clone();
            target.push(EOS);
            Ok(Sample {
                post_id: post.post_id.clone(),
                user_id: post.user_id.clone(),
                feature: features.get(&post.image_feature_key)?.clone(),
                profile: data.profile_for(post, d)?.ids(),
                target,
            })
        })
        .collect()
}

/// Targets of `samples` right-padded with PAD to a common length.
pub fn pad_targets(samples: &[&Sample]) -> Vec<Vec<u32>> {
    let len = samples.iter().map(|s| s.target.len()).max().unwrap_or(0);
    samples
        .iter()
        .map(|s| {
            let mut t = s.target.clone();
            t.resize(len, PAD);
            t
        })
        .collect()
}

/// Groups sample indices into batches of similar target length.
///
/// Indices are bucketed by length and shuffled within each bucket; full
/// batches are cut from each bucket, the remainders are pooled (shortest
/// first) into mixed batches, and the batch order is shuffled.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lengths.iter().enumerate() {
        buckets.entry(len).or_default().push(i);
    }
    let mut batches = Vec::new();
    let mut leftover = Vec::new();
    for bucket in buckets.values_mut() {
        rng.shuffle(bucket);
        let mut chunks = bucket.chunks_exact(batch_size.max(1));
        batches.extend(chunks.by_ref().map(<[usize]>::to_vec));
        leftover.extend_from_slice(chunks.remainder());
    }
    batches.extend(leftover.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    rng.shuffle(&mut batches);
    batches
}

/// Offset added to the logits of `(sample, step)`; used to probe the
/// independence of steps under teacher forcing.
pub type LogitPerturbation<'a, T> = dyn Fn(usize, usize) -> Option<Tensor<T>> + 'a;

/// Tape handles of one scored step.
#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub logits: Var,
    pub loss: Var,
}

pub struct LossTrace {
    pub loss: Var,
    /// Per sample, per non-PAD step.
    pub steps: Vec<Vec<StepTrace>>,
}

/// Mean over samples of the mean cross-entropy over each sample's non-PAD steps.
///
/// Every step sees the ground-truth prefix in its word-output memory and
/// the previous ground-truth word as its query input, never a prediction.
pub fn teacher_forced_loss<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights,
    model: &Csmn<T>,
    batch: &[&Sample],
    perturb: Option<&LogitPerturbation<T>>,
) -> Result<LossTrace> {
    if batch.is_empty() {
        return Err(CsmnError::Insufficient("empty batch".into()));
    }
    let targets = pad_targets(batch);
    let mut sample_losses = Vec::with_capacity(batch.len());
    let mut steps = Vec::with_capacity(batch.len());
    for (i, (sample, target)) in batch.iter().zip(&targets).enumerate() {
        let real = target.iter().take_while(|&&y| y != PAD).count();
        if real == 0 || target[real - 1] != EOS {
            return Err(CsmnError::Insufficient(format!("target of {} does not end with EOS", sample.post_id)));
        }
        let mut state = model.memory(tape, w, &sample.feature, &sample.profile)?;
        let mut y_prev = BOS;
        let mut trace = Vec::with_capacity(real);
        for (t, &y) in target.iter().enumerate() {
            if y == PAD {
                continue;
            }
            let mut logits = forward_step(tape, w, y_prev, &state)?.logits;
            if let Some(delta) = perturb.and_then(|f| f(i, t)) {
                logits = tape.add_const(logits, &delta)?;
            }
            let loss = tape.cross_entropy(logits, y as usize)?;
            trace.push(StepTrace { logits, loss });
            if t + 1 < real && !model.flags.no_word_output {
                state = state.append_output_word(tape, &w.memory, y)?;
            }
            y_prev = y;
        }
        let losses: Vec<Var> = trace.iter().map(|s| s.loss).collect();
        sample_losses.push(tape.mean(&losses)?);
        steps.push(trace);
    }
    let loss = tape.mean(&sample_losses)?;
    Ok(LossTrace { loss, steps })
}

/// Loss value and parameter gradients for one batch.
pub fn batch_gradients<T: Scalar>(model: &Csmn<T>, batch: &[&Sample]) -> Result<(f64, ParamSet<T>)> {
    let mut tape = Tape::new();
    let (w, vars) = Weights::bind(&mut tape, &model.params, &model.config, &model.flags, true)?;
    let trace = teacher_forced_loss(&mut tape, &w, model, batch, None)?;
    let grads = tape.backward(trace.loss)?;
    Ok((tape.value(trace.loss).item().to_f64(), model.params.gradients(&tape, &grads, &vars)))
}

/// Loss without gradients.
pub fn batch_loss<T: Scalar>(model: &Csmn<T>, batch: &[&Sample]) -> Result<f64> {
    let mut tape = Tape::new();
    let (w, _) = Weights::bind(&mut tape, &model.params, &model.config, &model.flags, false)?;
    let trace = teacher_forced_loss(&mut tape, &w, model, batch, None)?;
    Ok(tape.value(trace.loss).item().to_f64())
}

/// Gradient errors of the full teacher-forced loss on `batch`, per parameter.
///
/// Returns 64-bit and 32-bit tape gradients, each compared against 64-bit
/// central differences with step `eps`.
pub fn gradient_check(model: &Csmn<f64>, batch: &[&Sample], eps: f64) -> Result<(Vec<ParamCheck>, Vec<ParamCheck>)> {
    fn loss_fn<'a, T: Scalar>(
        model: &'a Csmn<T>,
        batch: &'a [&'a Sample],
    ) -> impl Fn(&mut Tape<T>, &[Var]) -> Result<Var> + Sync + 'a {
        move |tape, vars| {
            let w = Weights::resolve(&model.params, vars, &model.config, &model.flags)?;
            Ok(teacher_forced_loss(tape, &w, model, batch, None)?.loss)
        }
    }
    let narrow: Csmn<f32> = model.cast();
    let wide_loss = loss_fn(model, batch);
    let (_, signature, wide) = analytic_gradients(&model.params, &wide_loss)?;
    let numeric = numeric_gradients(&model.params, eps, signature, &wide_loss)?;
    let (_, _, narrow_grads) = analytic_gradients(&narrow.params, &loss_fn(&narrow, batch))?;
    Ok((compare(&wide, &numeric), compare(&narrow_grads, &numeric)))
}

/// Adds `scale`-sized noise to every bias vector.
///
/// Zero biases leave each ReLU over the empty output memory exactly on its
/// kink, where finite differences are undefined.
pub fn jitter_biases(params: &mut ParamSet<f64>, scale: f64, rng: &mut RngState) {
    for t in params.tensors_mut() {
        if t.rank() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v += scale * rng.normal());
        }
    }
}

/// `lr0 / decay^⌊epoch / decay_every⌋`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 / cfg.lr_decay.powi((epoch / cfg.decay_every) as i32)
}

/// Bias-corrected Adam update, with optional global-norm clipping first.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(CsmnError::NonFiniteGradient(name.to_string()));
        }
    }
    let scale = match cfg.grad_clip {
        Some(bound) => {
            let norm = grads.iter().flat_map(|(_, g)| g.data()).map(|&v| Scalar::to_f64(v).powi(2)).sum::<f64>().sqrt();
            if norm > bound {
                bound / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let (b1, b2, eps, lr, scale) = (T::of(b1), T::of(b2), T::of(cfg.eps), T::of(lr), T::of(scale));
    let (c1, c2) = (T::of(c1), T::of(c2));
    let one = T::one();
    let grads: Vec<&Tensor<T>> = grads.iter().map(|(_, g)| g).collect();
    for (((p, m), v), g) in params.tensors_mut().zip(state.m.tensors_mut()).zip(state.v.tensors_mut()).zip(grads) {
        for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            let g = g * scale;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub lr: f64,
}

/// Comma-separated metric log with header `epoch,step,split,loss,lr`.
pub fn log_to_csv(log: &[LogRecord]) -> String {
    let mut out = String::from("epoch,step,split,loss,lr\n");
    for r in log {
        writeln!(out, "{},{},{},{:.9},{:.9e}", r.epoch, r.step, r.split, r.loss, r.lr).expect("write to string");
    }
    out
}

/// Mean per-sample loss over `samples`, evaluated in chunks.
pub fn mean_loss(model: &Csmn<f32>, samples: &[Sample], chunk: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(CsmnError::Insufficient("no samples to score".into()));
    }
    let mut total = 0.0;
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&Sample> = part.iter().collect();
        total += batch_loss(model, &refs)? * part.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Optimizer state that can be checkpointed between epochs.
pub struct Trainer {
    pub model: Csmn<f32>,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub config_hash: u64,
    pub vocab_hash: u64,
}

impl Trainer {
    pub fn new(model: Csmn<f32>, config_hash: u64, vocab_hash: u64) -> Self {
        let adam = AdamState::new(&model.params);
        Trainer { model, adam, epoch: 0, config_hash, vocab_hash }
    }

    pub fn resume(ck: Checkpoint, config: ModelConfig, flags: AblationFlags, config_hash: u64) -> Result<Self> {
        if ck.config_hash != config_hash {
            return Err(CsmnError::CheckpointFormat(format!(
                "checkpoint was trained with config {:016x}, current config is {config_hash:016x}",
                ck.config_hash
            )));
        }
        let model = Csmn::from_params(config, flags, ck.params)?;
        Ok(Trainer { model, adam: ck.adam, epoch: ck.epoch as usize, config_hash, vocab_hash: ck.vocab_hash })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config_hash,
            vocab_hash: self.vocab_hash,
            epoch: self.epoch as u32,
            params: self.model.params.clone(),
            adam: self.adam.clone(),
        }
    }

    /// One pass over `train`; stops early once the Adam step count reaches `max_steps`.
    pub fn run_epoch(&mut self, train: &[Sample], cfg: &TrainConfig, log: &mut Vec<LogRecord>) -> Result<()> {
        let epoch = self.epoch;
        let lr = lr_at(cfg, epoch);
        let lengths: Vec<usize> = train.iter().map(|s| s.target.len()).collect();
        let mut rng = RngState::new(cfg.seed).fork(epoch as u64 + 1);
        for batch in make_batches(&lengths, cfg.batch_size, &mut rng) {
            if cfg.max_steps.is_some_and(|m| self.adam.step >= m as u64) {
                break;
            }
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let diverged = |loss: f64| CsmnError::Diverged { epoch, step: self.adam.step as usize, loss };
            let (loss, grads) = match batch_gradients(&self.model, &refs) {
                Err(CsmnError::Num(NumError::NonFinite { .. })) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            adam_step(&mut self.model.params, &grads, &mut self.adam, lr, cfg)?;
            log.push(LogRecord { epoch, step: self.adam.step, split: "train", loss, lr });
        }
        self.epoch += 1;
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss (earliest on ties).
    pub best: Checkpoint,
    pub best_val: f64,
    pub last: Checkpoint,
    pub last_val: f64,
    pub log: Vec<LogRecord>,
}

/// Runs epochs until `cfg.epochs` or `cfg.max_steps`, scoring `val` after each.
pub fn train(mut trainer: Trainer, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CsmnError::Insufficient("training needs non-empty train and validation parts".into()));
    }
    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last_val = f64::NAN;
    while trainer.epoch < cfg.epochs {
        let step_before = trainer.adam.step;
        trainer.run_epoch(train, cfg, &mut log)?;
        last_val = mean_loss(&trainer.model, val, cfg.batch_size)?;
        let epoch = trainer.epoch - 1;
        log.push(LogRecord { epoch, step: trainer.adam.step, split: "val", loss: last_val, lr: lr_at(cfg, epoch) });
        if best.as_ref().map_or(true, |(b, _)| last_val < *b) {
            best = Some((last_val, trainer.checkpoint()));
        }
        let capped = cfg.max_steps.is_some_and(|m| trainer.adam.step >= m as u64);
        if capped || trainer.adam.step == step_before {
            break;
        }
    }
    if best.is_none() {
        last_val = mean_loss(&trainer.model, val, cfg.batch_size)?;
    }
    let last = trainer.checkpoint();
    let (best_val, best) = best.unwrap_or((last_val, last.clone()));
    Ok(TrainOutcome { best, best_val, last, last_val, log })
}

#[cfg(test)]
mod tests;
