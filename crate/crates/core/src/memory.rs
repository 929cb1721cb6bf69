//! The three-segment context memory: image, user context and word output,
//! each held in an input (`a`) and an output (`c`) representation.

use crate::config::{ImageMode, ModelConfig};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::{CsmnError, Result};

/// Parameter handles used to write memory rows.
#[derive(Clone, Copy, Debug)]
pub struct MemoryWeights {
    pub img_a: (Var, Var),
    pub img_c: (Var, Var),
    pub embed_a: Var,
    pub embed_c: Var,
    /// Shared projection from word embeddings into memory space.
    pub word_proj: (Var, Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryLayout {
    pub image_mode: ImageMode,
    pub feature_dim: usize,
    pub mem_dim: usize,
    pub vocab_size: usize,
    pub d_context: usize,
    pub t_max: usize,
}

impl MemoryLayout {
    pub fn new(config: &ModelConfig) -> Self {
        MemoryLayout {
            image_mode: config.image_mode,
            feature_dim: config.feature_dim,
            mem_dim: config.mem_dim,
            vocab_size: config.vocab_size,
            d_context: config.d_context,
            t_max: config.t_max,
        }
    }

    pub fn image_slots(&self) -> usize {
        self.image_mode.slots()
    }

    pub fn slots(&self) -> usize {
        self.image_slots() + self.d_context + self.t_max
    }

    /// First slot of the image, user and output segments.
    pub fn offsets(&self) -> (usize, usize, usize) {
        (0, self.image_slots(), self.image_slots() + self.d_context)
    }
}

/// Image rows: one per grid cell for res5c, a single row for pool5.
pub fn build_image_memory<T: Scalar>(
    tape: &mut Tape<T>,
    w: &MemoryWeights,
    layout: &MemoryLayout,
    feature: &Tensor<f32>,
) -> Result<(Var, Var)> {
    let rows = layout.image_slots();
    let expected: Vec<usize> = match layout.image_mode {
        ImageMode::Pool5 => vec![layout.feature_dim],
        ImageMode::Res5c => vec![rows, layout.feature_dim],
    };
    if feature.shape() != expected.as_slice() {
        return Err(CsmnError::Memory(format!("image feature shape {:?}, expected {expected:?}", feature.shape())));
    }
    let x = tape.constant(feature.cast::<T>().reshape(vec![rows, layout.feature_dim])?)?;
    let a = tape.linear(x, w.img_a.0, Some(w.img_a.1))?;
    let a = tape.relu(a)?;
    let c = tape.linear(x, w.img_c.0, Some(w.img_c.1))?;
    let c = tape.relu(c)?;
    Ok((a, c))
}

/// `relu(W_h · W_e · y + b_h)` for each id, in both representations, as `[n×mem]`.
pub fn word_rows<T: Scalar>(
    tape: &mut Tape<T>,
    w: &MemoryWeights,
    layout: &MemoryLayout,
    ids: &[u32],
) -> Result<(Var, Var)> {
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= layout.vocab_size) {
        return Err(CsmnError::TokenRange { id: bad as usize, len: layout.vocab_size });
    }
    let ids: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
    let mut out = [None, None];
    for (slot, table) in out.iter_mut().zip([w.embed_a, w.embed_c]) {
        let e = tape.gather_rows(table, &ids)?;
        let h = tape.linear(e, w.word_proj.0, Some(w.word_proj.1))?;
        *slot = Some(tape.relu(h)?);
    }
    let [a, c] = out;
    Ok((a.expect("filled"), c.expect("filled")))
}

/// User segment of `D` rows; slots past the profile stay zero.
pub fn build_user_memory<T: Scalar>(
    tape: &mut Tape<T>,
    w: &MemoryWeights,
    layout: &MemoryLayout,
    profile: &[u32],
) -> Result<(Var, Var)> {
    let d = layout.d_context;
    if profile.len() > d {
        return Err(CsmnError::Memory(format!("profile of {} words exceeds {d} user slots", profile.len())));
    }
    if profile.is_empty() {
        let z = tape.constant(Tensor::zeros(&[d, layout.mem_dim]))?;
        return Ok((z, z));
    }
    let (a, c) = word_rows(tape, w, layout, profile)?;
    Ok((tape.pad_rows(a, d)?, tape.pad_rows(c, d)?))
}

/// Memory for one post. Image and user segments are fixed at construction;
/// only the output segment grows.
#[derive(Clone, Debug)]
pub struct MemoryState {
    layout: MemoryLayout,
    image: (Var, Var),
    user: (Var, Var),
    user_len: usize,
    output: Vec<(Var, Var)>,
    output_zero: Var,
}

impl MemoryState {
    /// Image and user segments plus an empty output segment.
    pub fn new<T: Scalar>(
        tape: &mut Tape<T>,
        w: &MemoryWeights,
        layout: &MemoryLayout,
        feature: &Tensor<f32>,
        profile: &[u32],
    ) -> Result<Self> {
        let image = build_image_memory(tape, w, layout, feature)?;
        let user = build_user_memory(tape, w, layout, profile)?;
        let output_zero = init_output_memory(tape, layout)?;
        Ok(MemoryState { layout: *layout, image, user, user_len: profile.len(), output: Vec::new(), output_zero })
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    /// Number of words written to the output segment.
    pub fn t(&self) -> usize {
        self.output.len()
    }

    pub fn image(&self) -> (Var, Var) {
        self.image
    }

    pub fn user(&self) -> (Var, Var) {
        self.user
    }

    pub fn mask(&self) -> Vec<bool> {
        let l = &self.layout;
        let mut mask = vec![true; l.image_slots()];
        mask.extend((0..l.d_context).map(|j| j < self.user_len));
        mask.extend((0..l.t_max).map(|j| j < self.output.len()));
        mask
    }

    /// Output segment as `[T_max×mem]` in both representations.
    pub fn output<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<(Var, Var)> {
        if self.output.is_empty() {
            return Ok((self.output_zero, self.output_zero));
        }
        let t_max = self.layout.t_max;
        let a: Vec<Var> = self.output.iter().map(|r| r.0).collect();
        let c: Vec<Var> = self.output.iter().map(|r| r.1).collect();
        let a = tape.concat(&a)?;
        let c = tape.concat(&c)?;
        Ok((tape.pad_rows(a, t_max)?, tape.pad_rows(c, t_max)?))
    }

    /// Full `[m×mem]` input and output memories.
    pub fn assemble<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<(Var, Var)> {
        let (oa, oc) = self.output(tape)?;
        let a = tape.concat(&[self.image.0, self.user.0, oa])?;
        let c = tape.concat(&[self.image.1, self.user.1, oc])?;
        Ok((a, c))
    }

    /// Writes `y` into the next output slot.
    pub fn append_output_word<T: Scalar>(&self, tape: &mut Tape<T>, w: &MemoryWeights, y: u32) -> Result<Self> {
        if self.output.len() >= self.layout.t_max {
            return Err(CsmnError::Memory(format!("output memory full at {} words", self.layout.t_max)));
        }
        let row = word_rows(tape, w, &self.layout, &[y])?;
        let mut next = self.clone();
        next.output.push(row);
        Ok(next)
    }
}

/// Zero `[T_max×mem]` block standing for an empty output segment.
pub fn init_output_memory<T: Scalar>(tape: &mut Tape<T>, layout: &MemoryLayout) -> Result<Var> {
    Ok(tape.constant(Tensor::zeros(&[layout.t_max, layout.mem_dim]))?)
}
