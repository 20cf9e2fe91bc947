//! Importance network, classifier head, and the regularized loss.

mod persist;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{finite_diff_check, sigmoid, GradCheckReport, NodeId, OpKind, Tape, Tensor};
use crate::pooling::{self, ConstantImportance, FeatureSequence, Importance, Pooler};
use crate::rng::mix_seed;
use crate::scalar::Scalar;

pub use persist::FORMAT_VERSION;

/// Floor on the pooled-vector norm before ℓ2 normalization.
pub const L2_EPS: f64 = 1e-12;

/// Affine map `x ↦ W x + b` with `W` stored `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Parameter nodes of a [`Linear`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl BoundLinear {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: NodeId) -> Result<NodeId> {
        tape.affine(self.weight, x, self.bias)
    }
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = glorot_bound(inputs, outputs);
        let data = (0..inputs * outputs)
            .map(|_| S::of(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            weight: Tensor::new_unchecked(vec![outputs, inputs], data).expect("glorot shape"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Result<BoundLinear> {
        Ok(BoundLinear {
            weight: tape.param(self.weight.clone())?,
            bias: tape.param(self.bias.clone())?,
        })
    }

    fn eval(&self, x: &[S]) -> Vec<S> {
        (0..self.outputs())
            .map(|i| {
                let dot: S = self.weight.row(i).iter().zip(x).map(|(&w, &v)| w * v).sum();
                dot + self.bias.data()[i]
            })
            .collect()
    }
}

/// `√(6 / (fan_in + fan_out))`, the half-width of the Glorot-uniform range.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Three-layer importance network `D → h₁ → h₂ → 1` with tanh, tanh, and
/// sigmoid activations.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMlp<S> {
    pub layers: [Linear<S>; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub layers: [BoundLinear; 3],
}

impl<S: Scalar> ImportanceMlp<S> {
    pub fn zeros(dim: usize, hidden: (usize, usize)) -> Self {
        Self {
            layers: [
                Linear::zeros(dim, hidden.0),
                Linear::zeros(hidden.0, hidden.1),
                Linear::zeros(hidden.1, 1),
            ],
        }
    }

    pub fn glorot<R: Rng>(dim: usize, hidden: (usize, usize), rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::glorot(dim, hidden.0, rng),
                Linear::glorot(hidden.0, hidden.1, rng),
                Linear::glorot(hidden.1, 1, rng),
            ],
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Result<BoundMlp> {
        Ok(BoundMlp {
            layers: [
                self.layers[0].bind(tape)?,
                self.layers[1].bind(tape)?,
                self.layers[2].bind(tape)?,
            ],
        })
    }

    /// Importance of a residual without recording anything.
    pub fn score(&self, residual: &[S]) -> Result<S> {
        if residual.len() != self.layers[0].inputs() {
            return Err(Error::shape(
                "ImportanceMlp::score",
                format!("residual has {} values, expected {}", residual.len(), self.layers[0].inputs()),
            ));
        }
        let h1: Vec<S> = self.layers[0].eval(residual).into_iter().map(S::tanh).collect();
        let h2: Vec<S> = self.layers[1].eval(&h1).into_iter().map(S::tanh).collect();
        Ok(sigmoid(self.layers[2].eval(&h2)[0]))
    }
}

/// `σ(W₃ tanh(W₂ tanh(W₁ r + b₁) + b₂) + b₃)` on the tape.
pub fn f_imp_forward<S: Scalar>(tape: &mut Tape<S>, residual: NodeId, mlp: &BoundMlp) -> Result<NodeId> {
    let a1 = mlp.layers[0].apply(tape, residual)?;
    let h1 = tape.tanh(a1)?;
    let a2 = mlp.layers[1].apply(tape, h1)?;
    let h2 = tape.tanh(a2)?;
    let a3 = mlp.layers[2].apply(tape, h2)?;
    tape.sigmoid(a3)
}

impl<S: Scalar> Importance<S> for BoundMlp {
    fn score(&self, tape: &mut Tape<S>, _step: usize, residual: NodeId) -> Result<NodeId> {
        f_imp_forward(tape, residual, self)
    }
}

/// ℓ2-normalize, apply the affine classifier, softmax. Returns `(logits, probs)`.
pub fn classify<S: Scalar>(tape: &mut Tape<S>, psi: NodeId, classifier: &BoundLinear) -> Result<(NodeId, NodeId)> {
    let unit = tape.l2_normalize(psi, S::of(L2_EPS))?;
    let logits = classifier.apply(tape, unit)?;
    let probs = tape.softmax(logits)?;
    Ok((logits, probs))
}

/// Entropy of `softmax(Γ)`; lower means a peakier importance profile.
pub fn entropy_reg<S: Scalar>(tape: &mut Tape<S>, gammas: NodeId) -> Result<NodeId> {
    let p = tape.softmax(gammas)?;
    let ne = tape.neg_entropy(p)?;
    tape.scale_const(ne, -S::one())
}

/// `Σ |γₜ|`.
pub fn l1_reg<S: Scalar>(tape: &mut Tape<S>, gammas: NodeId) -> Result<NodeId> {
    let a = tape.abs(gammas)?;
    tape.sum(a)
}

/// Which penalty is applied to the importance trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Entropy,
    L1,
    None,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::Entropy => "entropy",
            RegKind::L1 => "l1",
            RegKind::None => "none",
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(RegKind::Entropy),
            "l1" => Ok(RegKind::L1),
            "none" => Ok(RegKind::None),
            _ => Err(Error::contract(format!("unknown regularizer '{s}' (entropy, l1, none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda: f64,
    pub lr_pool: f64,
    pub lr_classifier: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub reg_kind: RegKind,
    pub hidden: (usize, usize),
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr_pool: 1e-3,
            lr_classifier: 1e-3,
            clip_norm: 5.0,
            epochs: 30,
            batch_size: 32,
            dropout_p: 0.0,
            reg_kind: RegKind::Entropy,
            hidden: (64, 32),
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::contract(format!("lambda must be a finite value ≥ 0, got {}", self.lambda)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::contract("clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::contract(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return Err(Error::contract("hidden sizes must be positive"));
        }
        if !(self.lr_pool > 0.0 && self.lr_classifier > 0.0) {
            return Err(Error::contract("learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "D")]
    pub feat_dim: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub h1: usize,
    pub h2: usize,
}

impl Dims {
    pub fn new(feat_dim: usize, num_classes: usize, hidden: (usize, usize)) -> Self {
        Self {
            feat_dim,
            num_classes,
            h1: hidden.0,
            h2: hidden.1,
        }
    }
}

/// Optimizer parameter group of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Pool,
    Classifier,
}

pub const BLOCK_NAMES: [&str; 8] = [
    "imp.w1", "imp.b1", "imp.w2", "imp.b2", "imp.w3", "imp.b3", "cls.w", "cls.b",
];

pub fn block_group(block: usize) -> ParamGroup {
    if block < 6 {
        ParamGroup::Pool
    } else {
        ParamGroup::Classifier
    }
}

/// Everything needed to run and persist a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub version: String,
    pub pooler: Pooler,
    pub dims: Dims,
    pub hyper: HyperParams,
    pub imp: ImportanceMlp<S>,
    pub classifier: Linear<S>,
}

/// Parameter nodes of a whole model; `blocks` follows [`BLOCK_NAMES`].
#[derive(Clone, Copy, Debug)]
pub struct BoundModel {
    pub imp: BoundMlp,
    pub classifier: BoundLinear,
}

impl BoundModel {
    /// Inverse of [`BoundModel::blocks`].
    pub fn from_blocks(ids: &[NodeId]) -> Result<Self> {
        let &[w1, b1, w2, b2, w3, b3, cw, cb] = ids else {
            return Err(Error::contract(format!("expected 8 parameter nodes, got {}", ids.len())));
        };
        Ok(Self {
            imp: BoundMlp {
                layers: [
                    BoundLinear { weight: w1, bias: b1 },
                    BoundLinear { weight: w2, bias: b2 },
                    BoundLinear { weight: w3, bias: b3 },
                ],
            },
            classifier: BoundLinear { weight: cw, bias: cb },
        })
    }

    pub fn blocks(&self) -> [NodeId; 8] {
        let [l1, l2, l3] = self.imp.layers;
        [
            l1.weight,
            l1.bias,
            l2.weight,
            l2.bias,
            l3.weight,
            l3.bias,
            self.classifier.weight,
            self.classifier.bias,
        ]
    }
}

impl<S: Scalar> ModelParams<S> {
    pub fn blocks(&self) -> [&Tensor<S>; 8] {
        let [l1, l2, l3] = &self.imp.layers;
        [
            &l1.weight,
            &l1.bias,
            &l2.weight,
            &l2.bias,
            &l3.weight,
            &l3.bias,
            &self.classifier.weight,
            &self.classifier.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Tensor<S>; 8] {
        let [l1, l2, l3] = &mut self.imp.layers;
        [
            &mut l1.weight,
            &mut l1.bias,
            &mut l2.weight,
            &mut l2.bias,
            &mut l3.weight,
            &mut l3.bias,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
        ]
    }

    /// Replaces every block, keeping shapes.
    pub fn with_blocks(&self, blocks: &[Tensor<S>]) -> Result<Self> {
        let mut out = self.clone();
        if blocks.len() != 8 {
            return Err(Error::contract(format!("expected 8 parameter blocks, got {}", blocks.len())));
        }
        for (dst, src) in out.blocks_mut().into_iter().zip(blocks) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("with_blocks", format!("{:?} vs {:?}", dst.shape(), src.shape())));
            }
            *dst = src.clone();
        }
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Result<BoundModel> {
        Ok(BoundModel {
            imp: self.imp.bind(tape)?,
            classifier: self.classifier.bind(tape)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let d = self.dims;
        if d.num_classes < 2 || d.feat_dim == 0 {
            return Err(Error::contract("need D ≥ 1 and C ≥ 2"));
        }
        if (d.h1, d.h2) != self.hyper.hidden {
            return Err(Error::contract("dims and hyper.hidden disagree"));
        }
        let expect: [[usize; 2]; 4] = [
            [d.h1, d.feat_dim],
            [d.h2, d.h1],
            [1, d.h2],
            [d.num_classes, d.feat_dim],
        ];
        let layers = [
            &self.imp.layers[0],
            &self.imp.layers[1],
            &self.imp.layers[2],
            &self.classifier,
        ];
        for (l, e) in layers.iter().zip(expect) {
            if l.weight.shape() != e || l.bias.shape() != [e[0]] {
                return Err(Error::shape(
                    "ModelParams",
                    format!("layer {:?}/{:?} does not match {e:?}", l.weight.shape(), l.bias.shape()),
                ));
            }
        }
        if self.blocks().iter().any(|b| !b.is_finite()) {
            return Err(Error::non_finite("model weights"));
        }
        Ok(())
    }
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_params<S: Scalar>(dims: Dims, hyper: HyperParams, pooler: Pooler, seed: u64) -> Result<ModelParams<S>> {
    let hidden = (dims.h1, dims.h2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imp = ImportanceMlp::glorot(dims.feat_dim, hidden, &mut rng);
    let classifier = Linear::glorot(dims.feat_dim, dims.num_classes, &mut rng);
    let params = ModelParams {
        version: FORMAT_VERSION.to_string(),
        pooler,
        dims,
        hyper,
        imp,
        classifier,
    };
    params.validate()?;
    Ok(params)
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 − p)`.
pub fn dropout_keep_mask<S: Scalar>(len: usize, p: f64, seed: u64) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = S::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { S::zero() } else { keep })
        .collect()
}

/// Applies inverted dropout in training mode; identity otherwise.
pub fn dropout_mask<S: Scalar>(v: &[S], p: f64, seed: u64, train: bool) -> Vec<S> {
    if !train || p == 0.0 {
        return v.to_vec();
    }
    v.iter()
        .zip(dropout_keep_mask::<S>(v.len(), p, seed))
        .map(|(&x, m)| x * m)
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Enables dropout.
    pub train: bool,
    pub dropout_seed: u64,
    /// Replaces the importance network by a constant (adaptive pooler only).
    pub importance_override: Option<f64>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }
}

/// Nodes produced by [`total_loss`].
#[derive(Clone, Debug)]
pub struct Forward<S> {
    pub bound: BoundModel,
    pub loss: NodeId,
    pub cross_entropy: NodeId,
    pub reg: Option<NodeId>,
    pub logits: NodeId,
    pub probs: NodeId,
    /// Importance trace of the adaptive pooler.
    pub gammas: Option<Vec<S>>,
}

fn maybe_drop<S: Scalar>(tape: &mut Tape<S>, node: NodeId, p: f64, seed: u64, opts: &ForwardOptions) -> Result<NodeId> {
    if opts.train && p > 0.0 {
        let len = tape.value(node).len();
        tape.mask(node, dropout_keep_mask(len, p, seed))
    } else {
        Ok(node)
    }
}

/// Records pooling, classification, and `L_CE + λ·reg(Γ)` for one sequence.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    seq: &FeatureSequence<S>,
    params: &ModelParams<S>,
    opts: &ForwardOptions,
) -> Result<Forward<S>> {
    let bound = params.bind(tape)?;
    total_loss_bound(tape, seq, params, bound, opts)
}

/// Like [`total_loss`], reading weights from already recorded nodes.
/// `params` supplies the pooler, shapes, and hyperparameters.
pub fn total_loss_bound<S: Scalar>(
    tape: &mut Tape<S>,
    seq: &FeatureSequence<S>,
    params: &ModelParams<S>,
    bound: BoundModel,
    opts: &ForwardOptions,
) -> Result<Forward<S>> {
    let dims = params.dims;
    if seq.dim() != dims.feat_dim {
        return Err(Error::shape(
            "total_loss",
            format!("sequence '{}' has D = {}, model expects {}", seq.id, seq.dim(), dims.feat_dim),
        ));
    }
    if seq.label >= dims.num_classes {
        return Err(Error::contract(format!(
            "label {} of '{}' is not below C = {}",
            seq.label, seq.id, dims.num_classes
        )));
    }
    let p = params.hyper.dropout_p;
    let mut frames = seq.record(tape)?;
    for (t, f) in frames.iter_mut().enumerate() {
        *f = maybe_drop(tape, *f, p, mix_seed(opts.dropout_seed, t as u64), opts)?;
    }
    let post_pool_seed = mix_seed(opts.dropout_seed, u64::MAX);

    let mut gammas = None;
    let mut gamma_node = None;
    let (logits, probs) = match params.pooler {
        Pooler::Mil => {
            let classifier = bound.classifier;
            let logits = pooling::mil_forward(tape, &frames, |tape, f| {
                let unit = tape.l2_normalize(f, S::of(L2_EPS))?;
                classifier.apply(tape, unit)
            })?;
            let probs = tape.softmax(logits)?;
            (logits, probs)
        }
        pooler => {
            let psi = match pooler {
                Pooler::AdaScan => {
                    let out = match opts.importance_override {
                        Some(c) => pooling::adascan_pool(tape, &frames, &ConstantImportance(S::of(c)))?,
                        None => pooling::adascan_pool(tape, &frames, &bound.imp)?,
                    };
                    gammas = Some(out.state.trace().to_vec());
                    gamma_node = Some(out.gammas);
                    out.psi
                }
                Pooler::Mean => pooling::mean_pool(tape, &frames)?,
                _ => pooling::max_pool(tape, &frames)?,
            };
            let psi = maybe_drop(tape, psi, p, post_pool_seed, opts)?;
            classify(tape, psi, &bound.classifier)?
        }
    };

    let picked = tape.pick(probs, seq.label)?;
    let log_p = tape.log(picked)?;
    let cross_entropy = tape.scale_const(log_p, -S::one())?;

    let reg = match (gamma_node, params.hyper.reg_kind) {
        (Some(g), RegKind::Entropy) => Some(entropy_reg(tape, g)?),
        (Some(g), RegKind::L1) => Some(l1_reg(tape, g)?),
        _ => None,
    };
    let lambda = params.hyper.lambda;
    let loss = match reg {
        Some(r) if lambda != 0.0 => {
            let weighted = tape.scale_const(r, S::of(lambda))?;
            tape.add(cross_entropy, weighted)?
        }
        _ => cross_entropy,
    };
    Ok(Forward {
        bound,
        loss,
        cross_entropy,
        reg,
        logits,
        probs,
        gammas,
    })
}

/// Per-block gradients in [`BLOCK_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<S> {
    pub blocks: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn zeros_like(params: &ModelParams<S>) -> Self {
        Self {
            blocks: params.blocks().iter().map(|b| Tensor::zeros_like(b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: S) {
        for b in &mut self.blocks {
            b.scale_in_place(c);
        }
    }

    pub fn global_norm(&self) -> S {
        global_norm(&self.blocks)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Tensor::is_finite)
    }
}

pub(crate) fn global_norm<S: Scalar>(blocks: &[Tensor<S>]) -> S {
    blocks
        .iter()
        .flat_map(|b| b.data())
        .map(|&v| v * v)
        .sum::<S>()
        .sqrt()
}

/// Loss, gradients, and outputs of one sequence.
#[derive(Clone, Debug)]
pub struct SampleOutcome<S> {
    pub loss: S,
    pub grads: ParamGrads<S>,
    pub probs: Vec<S>,
    pub gammas: Option<Vec<S>>,
}

pub fn sample_gradients<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ModelParams<S>,
    opts: &ForwardOptions,
) -> Result<SampleOutcome<S>> {
    let mut tape = Tape::new();
    let fwd = total_loss(&mut tape, seq, params, opts)?;
    let mut grads = tape.backward(fwd.loss)?;
    let blocks = fwd
        .bound
        .blocks()
        .into_iter()
        .map(|id| grads.take(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleOutcome {
        loss: tape.scalar(fwd.loss)?,
        grads: ParamGrads { blocks },
        probs: tape.value(fwd.probs).data().to_vec(),
        gammas: fwd.gammas,
    })
}

/// Eval-mode prediction for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S> {
    pub probs: Vec<S>,
    pub predicted: usize,
    pub loss: S,
    pub gammas: Option<Vec<S>>,
}

pub fn predict<S: Scalar>(seq: &FeatureSequence<S>, params: &ModelParams<S>, opts: &ForwardOptions) -> Result<Prediction<S>> {
    let mut tape = Tape::new();
    let fwd = total_loss(&mut tape, seq, params, opts)?;
    let probs = tape.value(fwd.probs).data().to_vec();
    Ok(Prediction {
        predicted: argmax(&probs),
        probs,
        loss: tape.scalar(fwd.loss)?,
        gammas: fwd.gammas,
    })
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Finite-difference check of the full training loss of `seq` with respect
/// to every parameter block, in [`BLOCK_NAMES`] order.
///
/// `corrupt` deliberately breaks one backward rule; the check must then fail.
pub fn check_gradients<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ModelParams<S>,
    opts: &ForwardOptions,
    step: S,
    corrupt: Option<OpKind>,
) -> Result<GradCheckReport<S>> {
    let blocks: Vec<Tensor<S>> = params.blocks().into_iter().cloned().collect();
    finite_diff_check(
        |tape, ids| {
            tape.corrupt_gradient(corrupt);
            let bound = BoundModel::from_blocks(ids)?;
            Ok(total_loss_bound(tape, seq, params, bound, opts)?.loss)
        },
        &blocks,
        step,
    )
}
