//! Parameter layout, initialization and binding to a tape.

use crate::config::{AblationFlags, ImageMode, ModelConfig};
use crate::memory::MemoryWeights;
use crate::numcore::{ParamSet, RngState, Scalar, Tape, Tensor, Var};
use crate::{CsmnError, Result};

/// Memory segment fed to the memory CNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Image,
    User,
    Output,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Image => "img",
            Segment::User => "user",
            Segment::Output => "out",
        }
    }
}

/// Segments that get their own conv stack (or mean-pool map under `no_cnn`).
/// A pool5 image occupies one slot and goes through a dense map instead.
pub fn pooled_segments(mode: ImageMode) -> &'static [Segment] {
    match mode {
        ImageMode::Res5c => &[Segment::Image, Segment::User, Segment::Output],
        ImageMode::Pool5 => &[Segment::User, Segment::Output],
    }
}

type Entry = (String, Vec<usize>, usize);

fn dense(out: &mut Vec<Entry>, name: &str, rows: usize, cols: usize, bias: bool) {
    out.push((format!("{name}.weight"), vec![rows, cols], cols));
    if bias {
        out.push((format!("{name}.bias"), vec![rows], cols));
    }
}

/// Name, shape and fan-in of every parameter, in storage order.
pub fn param_layout(config: &ModelConfig, flags: &AblationFlags) -> Vec<Entry> {
    let (v, e, mem, feat) = (config.vocab_size, config.embed_dim, config.mem_dim, config.feature_dim);
    let depth = config.conv_depth;
    let fused = config.fused_dim();
    let mut out = Vec::new();
    dense(&mut out, "img_a", mem, feat, true);
    dense(&mut out, "img_c", mem, feat, true);
    for name in ["embed_a", "embed_c", "embed_b"] {
        out.push((name.to_string(), vec![v, e], v));
    }
    dense(&mut out, "word_proj", mem, e, true);
    dense(&mut out, "query", mem, e, true);
    for seg in pooled_segments(config.image_mode) {
        if flags.no_cnn {
            dense(&mut out, &format!("nocnn_{}", seg.as_str()), config.segment_dim(), mem, true);
        } else {
            for &h in &config.windows {
                let name = format!("conv_{}_{h}", seg.as_str());
                out.push((format!("{name}.weight"), vec![h, mem, depth], h * mem));
                out.push((format!("{name}.bias"), vec![depth], h * mem));
            }
        }
    }
    if config.image_mode == ImageMode::Pool5 {
        dense(&mut out, "img_fuse", 2 * config.segment_dim(), mem, true);
    }
    dense(&mut out, "hidden", fused, fused, true);
    dense(&mut out, "vocab", v, fused, false);
    out
}

/// Weights uniform in `±√(3/fan_in)`, biases zero.
pub fn init_params<T: Scalar>(config: &ModelConfig, flags: &AblationFlags, rng: &mut RngState) -> Result<ParamSet<T>> {
    config.validate()?;
    let mut params = ParamSet::new();
    for (name, shape, fan_in) in param_layout(config, flags) {
        let n: usize = shape.iter().product();
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let bound = (3.0 / fan_in as f64).sqrt();
            let data = (0..n).map(|_| T::of(rng.uniform(-bound, bound))).collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor)?;
    }
    Ok(params)
}

/// One segment's pooling weights.
#[derive(Clone, Debug)]
pub enum SegmentWeights {
    /// `(window, filters, bias)` per conv window.
    Conv(Vec<(usize, Var, Var)>),
    MeanMap(Var, Var),
}

/// Every parameter of one model, recorded on a tape.
#[derive(Clone, Debug)]
pub struct Weights {
    pub memory: MemoryWeights,
    pub embed_b: Var,
    pub query: (Var, Var),
    /// Parallel to [`pooled_segments`].
    pub segments: Vec<SegmentWeights>,
    pub img_fuse: Option<(Var, Var)>,
    pub hidden: (Var, Var),
    pub vocab: Var,
}

impl Weights {
    /// Binds `params` as leaves and resolves them by name.
    pub fn bind<T: Scalar>(
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        config: &ModelConfig,
        flags: &AblationFlags,
        requires_grad: bool,
    ) -> Result<(Self, Vec<Var>)> {
        let vars = params.bind(tape, requires_grad)?;
        let w = Weights::resolve(params, &vars, config, flags)?;
        Ok((w, vars))
    }

    /// Looks up vars produced by binding `params` in order.
    pub fn resolve<T: Scalar>(
        params: &ParamSet<T>,
        vars: &[Var],
        config: &ModelConfig,
        flags: &AblationFlags,
    ) -> Result<Self> {
        for (name, shape, _) in param_layout(config, flags) {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(CsmnError::Config(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(CsmnError::MissingParam(name)),
            }
        }
        let var = |name: &str| -> Result<Var> {
            params.position(name).map(|i| vars[i]).ok_or_else(|| CsmnError::MissingParam(name.to_string()))
        };
        let dense = |name: &str| -> Result<(Var, Var)> { Ok((var(&format!("{name}.weight"))?, var(&format!("{name}.bias"))?)) };
        let mut segments = Vec::new();
        for seg in pooled_segments(config.image_mode) {
            segments.push(if flags.no_cnn {
                let (w, b) = dense(&format!("nocnn_{}", seg.as_str()))?;
                SegmentWeights::MeanMap(w, b)
            } else {
                let mut convs = Vec::new();
                for &h in &config.windows {
                    let (w, b) = dense(&format!("conv_{}_{h}", seg.as_str()))?;
                    convs.push((h, w, b));
                }
                SegmentWeights::Conv(convs)
            });
        }
        Ok(Weights {
            memory: MemoryWeights {
                img_a: dense("img_a")?,
                img_c: dense("img_c")?,
                embed_a: var("embed_a")?,
                embed_c: var("embed_c")?,
                word_proj: dense("word_proj")?,
            },
            embed_b: var("embed_b")?,
            query: dense("query")?,
            segments,
            img_fuse: match config.image_mode {
                ImageMode::Pool5 => Some(dense("img_fuse")?),
                ImageMode::Res5c => None,
            },
            hidden: dense("hidden")?,
            vocab: var("vocab.weight")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RunConfig, Task};

    #[test]
    fn init_bound_for_fan_in_512() {
        let bound = (3.0f64 / 512.0).sqrt();
        assert!((bound - 0.076547).abs() < 1e-6);
        let mut cfg = RunConfig::desk(Task::Caption).model;
        cfg.embed_dim = 512;
        let p: ParamSet<f64> = init_params(&cfg, &AblationFlags::default(), &mut RngState::new(0)).unwrap();
        let w = p.get("query.weight").unwrap();
        assert_eq!(w.shape(), &[32, 512]);
        let (lo, hi) = w.data().iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(lo >= -bound && hi <= bound);
        assert!(lo < -0.9 * bound && hi > 0.9 * bound);
        assert_eq!(p.get("query.bias").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = RunConfig::desk(Task::Hashtag).model;
        let flags = AblationFlags::default();
        let a: ParamSet<f32> = init_params(&cfg, &flags, &mut RngState::new(9)).unwrap();
        let b: ParamSet<f32> = init_params(&cfg, &flags, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        let c: ParamSet<f32> = init_params(&cfg, &flags, &mut RngState::new(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layout_depends_on_mode_and_flags() {
        let mut cfg = RunConfig::paper(Task::Caption).model;
        let flags = AblationFlags::default();
        let names = |cfg: &ModelConfig, flags: &AblationFlags| -> Vec<String> {
            param_layout(cfg, flags).into_iter().map(|(n, _, _)| n).collect()
        };
        let pool5 = names(&cfg, &flags);
        assert!(pool5.contains(&"img_fuse.weight".to_string()));
        assert!(!pool5.iter().any(|n| n.starts_with("conv_img")));
        let hidden = param_layout(&cfg, &flags).into_iter().find(|(n, _, _)| n == "hidden.weight").unwrap();
        assert_eq!(hidden.1, vec![1800, 1800]);
        cfg.image_mode = ImageMode::Res5c;
        let res5c = param_layout(&cfg, &flags);
        let hidden = res5c.iter().find(|(n, _, _)| n == "hidden.weight").unwrap();
        assert_eq!(hidden.1, vec![2700, 2700]);
        let conv = res5c.iter().find(|(n, _, _)| n == "conv_img_3.weight").unwrap();
        assert_eq!(conv.1, vec![3, 1024, 300]);
        let no_cnn = names(&cfg, &AblationFlags { no_cnn: true, ..flags });
        assert!(no_cnn.contains(&"nocnn_user.weight".to_string()));
        assert!(!no_cnn.iter().any(|n| n.starts_with("conv_")));
    }
}
