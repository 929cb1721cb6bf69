//! One decoding step: query, attention over memory, memory CNN, fusion and
//! the word distribution. Greedy generation and the ablation switches.

mod params;

pub use params::{init_params, param_layout, pooled_segments, Segment, SegmentWeights, Weights};

use crate::config::{AblationFlags, ImageMode, ModelConfig};
use crate::corpus::{BOS, EOS};
use crate::memory::{MemoryLayout, MemoryState};
use crate::numcore::{softmax_values, ParamSet, RngState, Scalar, Tape, Tensor, Var};
use crate::{CsmnError, Result};

/// `q = relu(W_q · W_e^b · y_prev + b_q)` as `[1×mem]`.
pub fn make_query<T: Scalar>(tape: &mut Tape<T>, w: &Weights, layout: &MemoryLayout, y_prev: u32) -> Result<Var> {
    if y_prev as usize >= layout.vocab_size {
        return Err(CsmnError::TokenRange { id: y_prev as usize, len: layout.vocab_size });
    }
    let e = tape.gather_rows(w.embed_b, &[y_prev as usize])?;
    let q = tape.linear(e, w.query.0, Some(w.query.1))?;
    Ok(tape.relu(q)?)
}

/// Attention `p = softmax(M_a · q)` over unmasked slots, and `M_c` with
/// row `i` scaled by `p[i]`. Returns `(p [m×1], Mo [m×mem])`.
pub fn attend<T: Scalar>(tape: &mut Tape<T>, q: Var, state: &MemoryState) -> Result<(Var, Var)> {
    let (ma, mc) = state.assemble(tape)?;
    let logits = tape.linear(ma, q, None)?;
    let p = tape.masked_softmax(logits, &state.mask())?;
    let mo = tape.scale_rows(p, mc)?;
    Ok((p, mo))
}

/// Conv stack or mean-pool map over one `[L×mem]` segment, giving `[windows·depth]`.
fn pool_segment<T: Scalar>(tape: &mut Tape<T>, weights: &SegmentWeights, seg: Var, mask: &[bool]) -> Result<Var> {
    match weights {
        SegmentWeights::MeanMap(w, b) => {
            let mean = tape.masked_mean_rows(seg, mask)?;
            Ok(tape.linear(mean, *w, Some(*b))?)
        }
        SegmentWeights::Conv(convs) => {
            let rows = tape.shape(seg)[0];
            let mut parts = Vec::with_capacity(convs.len());
            for &(h, w, b) in convs {
                // Segments shorter than the window are zero-padded to one full window.
                let x = if rows < h { tape.pad_rows(seg, h)? } else { seg };
                let y = tape.conv1d_valid(x, w, b)?;
                let y = tape.relu(y)?;
                parts.push(tape.maxpool_time(y)?);
            }
            Ok(tape.concat(&parts)?)
        }
    }
}

/// Fused vector `c_t` from the attended memory `Mo`.
///
/// res5c concatenates the three pooled segments (`9·depth`). pool5 maps the
/// single image row through a dense ReLU layer to `6·depth` and adds it to
/// the concatenated user and output features.
pub fn memory_cnn<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights,
    layout: &MemoryLayout,
    mo: Var,
    mask: &[bool],
) -> Result<Var> {
    let (_, user_at, out_at) = layout.offsets();
    let bounds = |seg: Segment| match seg {
        Segment::Image => (0, layout.image_slots()),
        Segment::User => (user_at, layout.d_context),
        Segment::Output => (out_at, layout.t_max),
    };
    let mut pooled = Vec::new();
    for (seg, sw) in pooled_segments(layout.image_mode).iter().zip(&w.segments) {
        let (start, len) = bounds(*seg);
        let rows = tape.slice_rows(mo, start, len)?;
        pooled.push(pool_segment(tape, sw, rows, &mask[start..start + len])?);
    }
    let rest = tape.concat(&pooled)?;
    match (layout.image_mode, w.img_fuse) {
        (ImageMode::Res5c, _) => Ok(rest),
        (ImageMode::Pool5, Some((fw, fb))) => {
            let img = tape.slice_rows(mo, 0, 1)?;
            let c_im = tape.linear(img, fw, Some(fb))?;
            let c_im = tape.relu(c_im)?;
            let width = tape.shape(c_im)[1];
            let c_im = tape.reshape(c_im, &[width])?;
            Ok(tape.add(c_im, rest)?)
        }
        (ImageMode::Pool5, None) => Err(CsmnError::MissingParam("img_fuse.weight".into())),
    }
}

/// `h = relu(W_o c + b_o)` and vocabulary logits `W_f h`.
pub fn output_logits<T: Scalar>(tape: &mut Tape<T>, w: &Weights, c: Var) -> Result<(Var, Var)> {
    let h = tape.linear(c, w.hidden.0, Some(w.hidden.1))?;
    let h = tape.relu(h)?;
    let logits = tape.linear(h, w.vocab, None)?;
    Ok((h, logits))
}

/// Tape handles for one step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub p: Var,
    pub c: Var,
    pub h: Var,
    pub logits: Var,
}

/// Query through logits for the next word after `y_prev`.
pub fn forward_step<T: Scalar>(tape: &mut Tape<T>, w: &Weights, y_prev: u32, state: &MemoryState) -> Result<StepVars> {
    let layout = *state.layout();
    let q = make_query(tape, w, &layout, y_prev)?;
    let (p, mo) = attend(tape, q, state)?;
    let c = memory_cnn(tape, w, &layout, mo, &state.mask())?;
    let (h, logits) = output_logits(tape, w, c)?;
    Ok(StepVars { p, c, h, logits })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Values produced by one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T> {
    pub p: Vec<T>,
    pub c: Vec<T>,
    pub h: Vec<T>,
    pub s: Vec<T>,
    pub y: u32,
}

/// Full step with greedy choice. The chosen word is written to memory unless
/// it is EOS or the word-output memory is ablated.
pub fn decode_step<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights,
    flags: &AblationFlags,
    y_prev: u32,
    state: &MemoryState,
) -> Result<(StepOutput<T>, MemoryState)> {
    if state.t() >= state.layout().t_max {
        return Err(CsmnError::Memory("no free output slot for another step".into()));
    }
    let vars = forward_step(tape, w, y_prev, state)?;
    let s = softmax_values(tape.value(vars.logits).data());
    let y = argmax(&s) as u32;
    let out = StepOutput {
        p: tape.value(vars.p).data().to_vec(),
        c: tape.value(vars.c).data().to_vec(),
        h: tape.value(vars.h).data().to_vec(),
        s,
        y,
    };
    let next = if y == EOS || flags.no_word_output { state.clone() } else { state.append_output_word(tape, &w.memory, y)? };
    Ok((out, next))
}

/// A model instance: configuration, ablations and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Csmn<T> {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Csmn<T> {
    pub fn new(config: ModelConfig, flags: AblationFlags, rng: &mut RngState) -> Result<Self> {
        let params = init_params(&config, &flags, rng)?;
        Ok(Csmn { config, flags, params })
    }

    pub fn from_params(config: ModelConfig, flags: AblationFlags, params: ParamSet<T>) -> Result<Self> {
        let mut tape = Tape::new();
        Weights::bind(&mut tape, &params, &config, &flags, false)?;
        Ok(Csmn { config, flags, params })
    }

    pub fn layout(&self) -> MemoryLayout {
        MemoryLayout::new(&self.config)
    }

    pub fn cast<U: Scalar>(&self) -> Csmn<U> {
        Csmn { config: self.config.clone(), flags: self.flags, params: self.params.cast() }
    }

    /// User-context words as the model sees them: dropped under `no_user_context`.
    pub fn effective_profile<'a>(&self, profile: &'a [u32]) -> &'a [u32] {
        if self.flags.no_user_context {
            &[]
        } else {
            &profile[..profile.len().min(self.config.d_context)]
        }
    }

    /// Fresh memory for one post on `tape`.
    pub fn memory(&self, tape: &mut Tape<T>, w: &Weights, feature: &Tensor<f32>, profile: &[u32]) -> Result<MemoryState> {
        MemoryState::new(tape, &w.memory, &self.layout(), feature, self.effective_profile(profile))
    }

    /// Greedy generation from BOS until EOS or `max_len` words; BOS and EOS are not returned.
    pub fn greedy_decode(&self, feature: &Tensor<f32>, profile: &[u32], max_len: usize) -> Result<Vec<u32>> {
        Ok(self.greedy_steps(feature, profile, max_len)?.into_iter().map(|s| s.y).filter(|&y| y != EOS).collect())
    }

    /// Every step of a greedy decode, including the final EOS step if reached.
    pub fn greedy_steps(&self, feature: &Tensor<f32>, profile: &[u32], max_len: usize) -> Result<Vec<StepOutput<T>>> {
        if max_len > self.config.t_max {
            return Err(CsmnError::Config(format!("max_len {max_len} exceeds t_max {}", self.config.t_max)));
        }
        let mut tape = Tape::new();
        let (w, _) = Weights::bind(&mut tape, &self.params, &self.config, &self.flags, false)?;
        let mut state = self.memory(&mut tape, &w, feature, profile)?;
        let mut y_prev = BOS;
        let mut steps = Vec::new();
        let mut words = 0;
        while words < max_len {
            let (out, next) = decode_step(&mut tape, &w, &self.flags, y_prev, &state)?;
            let y = out.y;
            steps.push(out);
            if y == EOS {
                break;
            }
            words += 1;
            state = next;
            y_prev = y;
        }
        Ok(steps)
    }
}

/// Keeps the first occurrence of each tag, in order.
pub fn dedup_hashtags(tags: &[u32]) -> Vec<u32> {
    let mut seen = std::collections::HashSet::new();
    tags.iter().copied().filter(|t| seen.insert(*t)).collect()
}

#[cfg(test)]
mod tests;
