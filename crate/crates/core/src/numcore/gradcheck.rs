//! Central finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Worst disagreement found within one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck<S> {
    pub block: usize,
    pub max_rel_error: S,
    pub worst_coord: usize,
    pub analytic: S,
    pub numeric: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport<S> {
    pub blocks: Vec<BlockCheck<S>>,
}

impl<S: Scalar> GradCheckReport<S> {
    pub fn max_rel_error(&self) -> S {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(S::zero(), S::max)
    }

    pub fn worst(&self) -> Option<&BlockCheck<S>> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.partial_cmp(&b.max_rel_error).expect("finite errors"))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error<S: Scalar>(analytic: S, numeric: S) -> S {
    let denom = analytic.abs().max(numeric.abs()).max(S::of(1e-8));
    (analytic - numeric).abs() / denom
}

fn evaluate<S: Scalar, F>(loss_fn: &F, params: &[Tensor<S>]) -> Result<(Tape<S>, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = loss_fn(&mut tape, &ids)?;
    Ok((tape, ids, out))
}

/// Compares the tape gradient of `loss_fn` against central differences
/// `(f(θ + h) − f(θ − h)) / 2h`, perturbing every coordinate of every block.
///
/// `loss_fn` receives a fresh tape with `params` already recorded as
/// parameter leaves (in order) and must return a scalar node.
pub fn finite_diff_check<S: Scalar, F>(loss_fn: F, params: &[Tensor<S>], step: S) -> Result<GradCheckReport<S>>
where
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    if !(step > S::zero()) {
        return Err(crate::Error::contract("finite difference step must be positive"));
    }
    let (tape, ids, out) = evaluate(&loss_fn, params)?;
    let mut grads = tape.backward(out)?;
    let two_h = step + step;

    let mut blocks = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for (b, &id) in ids.iter().enumerate() {
        let analytic = grads.take(id)?;
        let mut check = BlockCheck {
            block: b,
            max_rel_error: S::zero(),
            worst_coord: 0,
            analytic: S::zero(),
            numeric: S::zero(),
        };
        for j in 0..params[b].len() {
            let orig = params[b].data()[j];
            work[b].data_mut()[j] = orig + step;
            let (t, _, o) = evaluate(&loss_fn, &work)?;
            let plus = t.scalar(o)?;
            work[b].data_mut()[j] = orig - step;
            let (t, _, o) = evaluate(&loss_fn, &work)?;
            let minus = t.scalar(o)?;
            work[b].data_mut()[j] = orig;

            let numeric = (plus - minus) / two_h;
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || j == 0 {
                check = BlockCheck {
                    block: b,
                    max_rel_error: err,
                    worst_coord: j,
                    analytic: a,
                    numeric,
                };
            }
        }
        blocks.push(check);
    }
    Ok(GradCheckReport { blocks })
}
