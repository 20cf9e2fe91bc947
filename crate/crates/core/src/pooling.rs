//! Temporal poolers over frame-feature sequences.
//!
//! The adaptive scan keeps a running importance-weighted mean of the frames
//! seen so far. For each new frame it scores the residual between the frame
//! and the current pooled vector, then folds the frame in with that weight:
//!
//! ```text
//! ψ₁ = φ₁,  γ₁ = 1
//! γₜ₊₁ = f(φₜ₊₁ − ψₜ)
//! ψₜ₊₁ = (γ̂ₜ ψₜ + γₜ₊₁ φₜ₊₁) / γ̂ₜ₊₁,   γ̂ₜ = γ₁ + … + γₜ
//! ```
//!
//! Unrolled, `ψ_T = Σ γₜ φₜ / Σ γₜ`; [`weighted_mean_closed_form`] computes
//! that directly and serves as the reference for the recursion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// A `T × D` sequence of per-frame feature vectors with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<S> {
    pub id: String,
    pub label: usize,
    frames: Tensor<S>,
    signal_mask: Option<Vec<bool>>,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(
        id: impl Into<String>,
        label: usize,
        frames: Tensor<S>,
        signal_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::shape(
                "FeatureSequence",
                format!("frames must be T×D, got {:?}", frames.shape()),
            ));
        }
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::contract("a sequence needs T ≥ 1 frames of D ≥ 1 features"));
        }
        if let Some(mask) = &signal_mask {
            if mask.len() != frames.rows() {
                return Err(Error::shape(
                    "FeatureSequence",
                    format!("signal mask has {} entries for {} frames", mask.len(), frames.rows()),
                ));
            }
        }
        Ok(Self {
            id: id.into(),
            label,
            frames,
            signal_mask,
        })
    }

    pub fn from_rows(id: impl Into<String>, label: usize, rows: &[Vec<S>]) -> Result<Self> {
        Self::new(id, label, Tensor::from_rows(rows)?, None)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Tensor<S> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[S] {
        self.frames.row(t)
    }

    pub fn signal_mask(&self) -> Option<&[bool]> {
        self.signal_mask.as_deref()
    }

    /// Records each frame as a constant leaf.
    pub fn record(&self, tape: &mut Tape<S>) -> Result<Vec<NodeId>> {
        (0..self.len())
            .map(|t| tape.constant(Tensor::vector(self.frame(t).to_vec())))
            .collect()
    }
}

/// The four pooling strategies sharing one classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooler {
    #[serde(rename = "adascan")]
    AdaScan,
    Mean,
    Max,
    Mil,
}

impl Pooler {
    pub const ALL: [Pooler; 4] = [Pooler::AdaScan, Pooler::Mean, Pooler::Max, Pooler::Mil];

    pub fn name(self) -> &'static str {
        match self {
            Pooler::AdaScan => "adascan",
            Pooler::Mean => "mean",
            Pooler::Max => "max",
            Pooler::Mil => "mil",
        }
    }
}

impl fmt::Display for Pooler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooler::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown pooler '{s}' (adascan, mean, max, mil)")))
    }
}

/// Running state of an online adaptive scan.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolState<S> {
    psi: Vec<S>,
    gamma_hat: S,
    trace: Vec<S>,
}

impl<S: Scalar> PoolState<S> {
    /// Starts a scan at the first frame with `γ₁ = 1`.
    pub fn new(first_frame: &[S]) -> Self {
        Self {
            psi: first_frame.to_vec(),
            gamma_hat: S::one(),
            trace: vec![S::one()],
        }
    }

    pub fn psi(&self) -> &[S] {
        &self.psi
    }

    pub fn gamma_hat(&self) -> S {
        self.gamma_hat
    }

    pub fn trace(&self) -> &[S] {
        &self.trace
    }

    /// Folds in `frame` with a known importance `gamma ∈ (0, 1]`.
    pub fn push(&mut self, frame: &[S], gamma: S) -> Result<()> {
        if frame.len() != self.psi.len() {
            return Err(Error::shape(
                "PoolState::push",
                format!("frame has {} features, state {}", frame.len(), self.psi.len()),
            ));
        }
        check_gamma(gamma)?;
        let next_hat = self.gamma_hat + gamma;
        for (p, &x) in self.psi.iter_mut().zip(frame) {
            *p = (self.gamma_hat * *p + gamma * x) / next_hat;
        }
        self.gamma_hat = next_hat;
        self.trace.push(gamma);
        Ok(())
    }

    /// Scores the residual `frame − ψ` with `f_imp`, then folds the frame in.
    pub fn observe(&mut self, frame: &[S], f_imp: impl FnOnce(&[S]) -> S) -> Result<S> {
        if frame.len() != self.psi.len() {
            return Err(Error::shape(
                "PoolState::observe",
                format!("frame has {} features, state {}", frame.len(), self.psi.len()),
            ));
        }
        let residual: Vec<S> = frame.iter().zip(&self.psi).map(|(&x, &p)| x - p).collect();
        let gamma = f_imp(&residual);
        self.push(frame, gamma)?;
        Ok(gamma)
    }
}

fn check_gamma<S: Scalar>(gamma: S) -> Result<()> {
    if gamma > S::zero() && gamma <= S::one() {
        Ok(())
    } else {
        Err(Error::contract(format!("importance {gamma} outside (0, 1]")))
    }
}

/// A frame-importance function evaluated on the tape.
pub trait Importance<S: Scalar> {
    /// Importance of frame `step` (0-based, `step ≥ 1`) given the residual
    /// node `φ_step − ψ_{step−1}`. Must return a one-element node.
    fn score(&self, tape: &mut Tape<S>, step: usize, residual: NodeId) -> Result<NodeId>;
}

/// Ignores the residual and returns the same importance for every frame.
#[derive(Clone, Copy, Debug)]
pub struct ConstantImportance<S>(pub S);

impl<S: Scalar> Importance<S> for ConstantImportance<S> {
    fn score(&self, tape: &mut Tape<S>, _step: usize, _residual: NodeId) -> Result<NodeId> {
        tape.constant(Tensor::scalar(self.0))
    }
}

/// Replays a fixed importance sequence; entry `t` is used at step `t`.
/// Entry 0 is ignored since the first frame always has weight 1.
#[derive(Clone, Debug)]
pub struct ReplayImportance<S>(pub Vec<S>);

impl<S: Scalar> Importance<S> for ReplayImportance<S> {
    fn score(&self, tape: &mut Tape<S>, step: usize, _residual: NodeId) -> Result<NodeId> {
        let g = *self
            .0
            .get(step)
            .ok_or_else(|| Error::contract(format!("no replayed importance for step {step}")))?;
        tape.constant(Tensor::scalar(g))
    }
}

/// Output of [`adascan_pool`].
#[derive(Clone, Debug)]
pub struct AdaScanOutput<S> {
    /// Final pooled vector `ψ(X, T)`.
    pub psi: NodeId,
    /// The `T` importances as one vector node.
    pub gammas: NodeId,
    /// Values of the scan as it ended.
    pub state: PoolState<S>,
}

/// Adaptive scan pooling over recorded frame nodes.
pub fn adascan_pool<S: Scalar, F: Importance<S> + ?Sized>(
    tape: &mut Tape<S>,
    frames: &[NodeId],
    f_imp: &F,
) -> Result<AdaScanOutput<S>> {
    let first = *frames
        .first()
        .ok_or_else(|| Error::contract("adaptive pooling of an empty sequence"))?;
    let mut state = PoolState::new(tape.value(first).data());
    let mut psi = first;
    let mut gamma_hat = tape.constant(Tensor::scalar(S::one()))?;
    let mut gamma_nodes = vec![gamma_hat];

    for (t, &frame) in frames.iter().enumerate().skip(1) {
        let residual = tape.sub(frame, psi)?;
        let gamma = f_imp.score(tape, t, residual)?;
        let g = tape.scalar(gamma)?;
        check_gamma(g)?;
        let next_hat = tape.add(gamma_hat, gamma)?;
        let kept = tape.scale(psi, gamma_hat)?;
        let incoming = tape.scale(frame, gamma)?;
        let numer = tape.add(kept, incoming)?;
        psi = tape.div_scalar(numer, next_hat)?;
        gamma_hat = next_hat;
        gamma_nodes.push(gamma);

        state.trace.push(g);
        state.gamma_hat = tape.scalar(gamma_hat)?;
    }
    state.psi = tape.value(psi).data().to_vec();
    let gammas = tape.stack(&gamma_nodes)?;
    Ok(AdaScanOutput { psi, gammas, state })
}

/// `Σ γₜ φₜ / Σ γₜ` computed directly.
pub fn weighted_mean_closed_form<S: Scalar>(frames: &Tensor<S>, gammas: &[S]) -> Result<Vec<S>> {
    if frames.shape().len() != 2 || frames.rows() != gammas.len() {
        return Err(Error::shape(
            "weighted_mean_closed_form",
            format!("{} weights for frames {:?}", gammas.len(), frames.shape()),
        ));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > S::zero())) {
        return Err(Error::contract(format!("weights must be positive, got {g}")));
    }
    let total: S = gammas.iter().copied().sum();
    if total == S::zero() {
        return Err(Error::contract("weights sum to zero"));
    }
    let mut acc = vec![S::zero(); frames.cols()];
    for (t, &g) in gammas.iter().enumerate() {
        for (a, &x) in acc.iter_mut().zip(frames.row(t)) {
            *a = *a + g * x;
        }
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}

/// Arithmetic mean of the frame nodes.
pub fn mean_pool<S: Scalar>(tape: &mut Tape<S>, frames: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = frames
        .split_first()
        .ok_or_else(|| Error::contract("mean pooling of an empty sequence"))?;
    let mut acc = first;
    for &f in rest {
        acc = tape.add(acc, f)?;
    }
    tape.scale_const(acc, S::one() / S::of(frames.len() as f64))
}

/// Coordinate-wise maximum of the frame nodes.
pub fn max_pool<S: Scalar>(tape: &mut Tape<S>, frames: &[NodeId]) -> Result<NodeId> {
    if frames.is_empty() {
        return Err(Error::contract("max pooling of an empty sequence"));
    }
    tape.coordinate_max(frames)
}

/// Multiple-instance scoring: apply `classifier` to every frame, then take
/// the per-class maximum over frames.
pub fn mil_forward<S: Scalar>(
    tape: &mut Tape<S>,
    frames: &[NodeId],
    mut classifier: impl FnMut(&mut Tape<S>, NodeId) -> Result<NodeId>,
) -> Result<NodeId> {
    if frames.is_empty() {
        return Err(Error::contract("MIL scoring of an empty sequence"));
    }
    let scores = frames
        .iter()
        .map(|&f| classifier(tape, f))
        .collect::<Result<Vec<_>>>()?;
    tape.coordinate_max(&scores)
}

/// Untraced arithmetic mean of the frames.
pub fn mean_of_frames<S: Scalar>(seq: &FeatureSequence<S>) -> Vec<S> {
    let n = S::of(seq.len() as f64);
    let mut acc = vec![S::zero(); seq.dim()];
    for t in 0..seq.len() {
        for (a, &x) in acc.iter_mut().zip(seq.frame(t)) {
            *a = *a + x;
        }
    }
    acc.into_iter().map(|a| a / n).collect()
}

/// Untraced coordinate-wise maximum of the frames.
pub fn max_of_frames<S: Scalar>(seq: &FeatureSequence<S>) -> Vec<S> {
    let mut acc = seq.frame(0).to_vec();
    for t in 1..seq.len() {
        for (a, &x) in acc.iter_mut().zip(seq.frame(t)) {
            *a = a.max(x);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence<f64> {
        FeatureSequence::from_rows("s", 0, rows).unwrap()
    }

    #[test]
    fn single_frame_scan_is_identity() {
        let s = seq(&[vec![2.0, -1.0]]);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let out = adascan_pool(&mut tape, &frames, &ConstantImportance(0.3)).unwrap();
        assert_eq!(tape.value(out.psi).data(), &[2.0, -1.0]);
        assert_eq!(tape.value(out.gammas).data(), &[1.0]);
        assert_eq!(out.state.trace(), &[1.0]);
    }

    #[test]
    fn half_weight_second_frame() {
        let s = seq(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let out = adascan_pool(&mut tape, &frames, &ConstantImportance(0.5)).unwrap();
        let psi = tape.value(out.psi).data();
        assert!((psi[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((psi[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(out.state.gamma_hat(), 1.5);
    }

    #[test]
    fn unit_importance_is_mean() {
        let s = seq(&[vec![1.0, 2.0], vec![3.0, 0.0], vec![-1.0, 4.0]]);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let out = adascan_pool(&mut tape, &frames, &ConstantImportance(1.0)).unwrap();
        let psi = tape.value(out.psi).data();
        assert!((psi[0] - 1.0).abs() < 1e-15 && (psi[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn baselines() {
        let s = seq(&[vec![1.0, 2.0], vec![3.0, 0.0]]);
        assert_eq!(mean_of_frames(&s), vec![2.0, 1.0]);
        assert_eq!(max_of_frames(&s), vec![3.0, 2.0]);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let m = mean_pool(&mut tape, &frames).unwrap();
        let x = max_pool(&mut tape, &frames).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 1.0]);
        assert_eq!(tape.value(x).data(), &[3.0, 2.0]);

        let one = seq(&[vec![5.0, -3.0]]);
        assert_eq!(mean_of_frames(&one), vec![5.0, -3.0]);
        assert_eq!(max_of_frames(&one), vec![5.0, -3.0]);
    }

    #[test]
    fn mil_takes_per_class_max() {
        // identity "classifier": scores are the frames themselves
        let s = seq(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let logits = mil_forward(&mut tape, &frames, |_, f| Ok(f)).unwrap();
        assert_eq!(tape.value(logits).data(), &[1.0, 2.0]);

        let single = seq(&[vec![0.5, -0.5]]);
        let mut tape = Tape::new();
        let frames = single.record(&mut tape).unwrap();
        let logits = mil_forward(&mut tape, &frames, |t, f| t.scale_const(f, 2.0)).unwrap();
        assert_eq!(tape.value(logits).data(), &[1.0, -1.0]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let mut tape = Tape::<f64>::new();
        assert!(adascan_pool(&mut tape, &[], &ConstantImportance(1.0)).is_err());
        assert!(mean_pool(&mut tape, &[]).is_err());
        assert!(max_pool(&mut tape, &[]).is_err());
        assert!(mil_forward(&mut tape, &[], |_, f| Ok(f)).is_err());
        assert!(FeatureSequence::<f64>::new("e", 0, Tensor::zeros(&[0, 3]), None).is_err());
        assert!(FeatureSequence::<f64>::new(
            "m",
            0,
            Tensor::zeros(&[2, 3]),
            Some(vec![true])
        )
        .is_err());
    }

    #[test]
    fn closed_form_limits() {
        let frames = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]]).unwrap();
        let eq: Vec<f64> = weighted_mean_closed_form(&frames, &[0.4, 0.4, 0.4]).unwrap();
        assert!((eq[0] - 3.0).abs() < 1e-15 && (eq[1] - 2.0).abs() < 1e-15);
        let peaked: Vec<f64> = weighted_mean_closed_form(&frames, &[1e-300, 1.0, 1e-300]).unwrap();
        assert!((peaked[0] - 3.0).abs() < 1e-12 && (peaked[1] - 4.0).abs() < 1e-12);
        assert!(weighted_mean_closed_form(&frames, &[1.0, 0.0, 1.0]).is_err());
        assert!(weighted_mean_closed_form(&frames, &[1.0]).is_err());
    }

    #[test]
    fn pool_state_matches_tape() {
        let rows = vec![vec![0.1, 0.9], vec![-0.4, 0.3], vec![2.0, -1.0], vec![0.0, 0.5]];
        let gammas = vec![1.0, 0.2, 0.9, 0.6];
        let s = seq(&rows);
        let mut tape = Tape::new();
        let frames = s.record(&mut tape).unwrap();
        let out = adascan_pool(&mut tape, &frames, &ReplayImportance(gammas.clone())).unwrap();

        let mut state = PoolState::new(&rows[0]);
        for (row, &g) in rows.iter().zip(&gammas).skip(1) {
            state.observe(row, |_| g).unwrap();
        }
        assert_eq!(state.trace(), out.state.trace());
        assert_eq!(state.psi(), out.state.psi());
        assert!((state.gamma_hat() - 2.7).abs() < 1e-12);
        assert!(state.push(&rows[0], 0.0).is_err());
        assert!(state.push(&rows[0], 1.5).is_err());
    }

    #[test]
    fn pooler_names() {
        for p in Pooler::ALL {
            assert_eq!(p.name().parse::<Pooler>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
    }
}
