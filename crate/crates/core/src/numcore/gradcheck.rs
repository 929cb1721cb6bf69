//! Central-difference verification of tape gradients.

use rayon::prelude::*;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use super::NumError;

/// Per-parameter comparison between tape and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `max|a−n| / max(max|a|, max|n|)` over the checked elements; 0 when both are zero.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Elements whose ±eps evaluation crossed a ReLU or max-pool decision.
    pub skipped: usize,
}

/// Finite-difference gradient of one parameter set; `None` marks a kink crossing.
pub struct NumericGradients<T> {
    pub grads: Vec<Vec<Option<T>>>,
}

/// Evaluates `f` once with gradients recorded.
pub fn analytic_gradients<T, E, F>(params: &ParamSet<T>, f: &F) -> Result<(T, u64, ParamSet<T>), E>
where
    T: Scalar,
    E: From<NumError>,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true)?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((value, tape.decision_signature(), params.gradients(&tape, &grads, &vars)))
}

fn evaluate<T, E, F>(params: &ParamSet<T>, p: usize, e: usize, delta: T, f: &F) -> Result<(T, u64), E>
where
    T: Scalar,
    E: From<NumError>,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars = params.bind_perturbed(&mut tape, p, e, delta)?;
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "finite_diff_check" }.into());
    }
    Ok((value, tape.decision_signature()))
}

/// Central differences `(f(p+eps) − f(p−eps)) / 2eps` for every element.
///
/// `base_signature` is the decision signature of the unperturbed
/// evaluation; elements whose perturbed runs disagree with it are `None`.
pub fn numeric_gradients<T, E, F>(
    params: &ParamSet<T>,
    eps: T,
    base_signature: u64,
    f: &F,
) -> Result<NumericGradients<T>, E>
where
    T: Scalar,
    E: From<NumError> + Send,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E> + Sync,
{
    let two_eps = eps + eps;
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let n = params.by_index(p).1.len();
        let column: Result<Vec<Option<T>>, E> = (0..n)
            .into_par_iter()
            .map(|e| {
                let (plus, sig_plus) = evaluate(params, p, e, eps, f)?;
                let (minus, sig_minus) = evaluate(params, p, e, -eps, f)?;
                if sig_plus != base_signature || sig_minus != base_signature {
                    return Ok(None);
                }
                Ok(Some((plus - minus) / two_eps))
            })
            .collect();
        grads.push(column?);
    }
    Ok(NumericGradients { grads })
}

/// Compares analytic gradients (any precision) to numeric ones.
pub fn compare<A: Scalar, N: Scalar>(analytic: &ParamSet<A>, numeric: &NumericGradients<N>) -> Vec<ParamCheck> {
    analytic
        .iter()
        .zip(&numeric.grads)
        .map(|((name, a), n)| compare_one(name, a, n))
        .collect()
}

fn compare_one<A: Scalar, N: Scalar>(name: &str, a: &Tensor<A>, n: &[Option<N>]) -> ParamCheck {
    let (mut max_diff, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
    let (mut checked, mut skipped) = (0, 0);
    for (&av, nv) in a.data().iter().zip(n) {
        match *nv {
            Some(nv) => {
                let (av, nv) = (av.to_f64(), nv.to_f64());
                max_diff = max_diff.max((av - nv).abs());
                max_a = max_a.max(av.abs());
                max_n = max_n.max(nv.abs());
                checked += 1;
            }
            None => skipped += 1,
        }
    }
    let scale = max_a.max(max_n);
    let rel_err = if scale == 0.0 { 0.0 } else { max_diff / scale };
    ParamCheck { name: name.to_string(), rel_err, max_abs_err: max_diff, checked, skipped }
}

/// Tape gradients of `f` against central differences at the same precision.
pub fn finite_diff_check<T, E, F>(params: &ParamSet<T>, eps: T, f: F) -> Result<Vec<ParamCheck>, E>
where
    T: Scalar,
    E: From<NumError> + Send,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E> + Sync,
{
    let (value, signature, analytic) = analytic_gradients(params, &f)?;
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "finite_diff_check" }.into());
    }
    let numeric = numeric_gradients(params, eps, signature, &f)?;
    Ok(compare(&analytic, &numeric))
}
