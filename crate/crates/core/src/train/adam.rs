use crate::error::{Error, Result};
use crate::model::{block_group, HyperParams, ModelParams, ParamGrads, ParamGroup, BLOCK_NAMES};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Per-parameter Adam moments with bias-correction step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments shaped like `params`, with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<S>>) -> Self {
        let m: Vec<Tensor<S>> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(params: &ModelParams<S>) -> Self {
        Self::new(params.blocks())
    }

    /// One bias-corrected Adam update; `lrs[i]` is the step size of block `i`.
    ///
    /// Fails without touching anything if a gradient is non-finite.
    pub fn update(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>], lrs: &[f64]) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n || lrs.len() != n {
            return Err(Error::contract(format!(
                "adam expects {n} blocks, got {} params / {} grads / {} rates",
                params.len(),
                grads.len(),
                lrs.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != g.shape() {
                return Err(Error::shape("adam_step", format!("block {i}: {:?} vs {:?}", p.shape(), g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::non_finite(format!("gradient of block {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        let eps = S::of(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let lr = S::of(lrs[i]);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning rates of the two parameter groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrMap {
    pub pool: f64,
    pub classifier: f64,
}

impl LrMap {
    pub fn from_hyper(h: &HyperParams) -> Self {
        Self {
            pool: h.lr_pool,
            classifier: h.lr_classifier,
        }
    }

    pub fn for_block(&self, block: usize) -> f64 {
        match block_group(block) {
            ParamGroup::Pool => self.pool,
            ParamGroup::Classifier => self.classifier,
        }
    }
}

/// Adam step on a whole model: importance-network blocks use `lr.pool`,
/// classifier blocks `lr.classifier`.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ParamGrads<S>,
    state: &mut AdamState<S>,
    lr: LrMap,
) -> Result<()> {
    if let Some(i) = grads.blocks.iter().position(|g| !g.is_finite()) {
        return Err(Error::non_finite(format!("gradient of {}", BLOCK_NAMES[i])));
    }
    let lrs: Vec<f64> = (0..BLOCK_NAMES.len()).map(|b| lr.for_block(b)).collect();
    let mut blocks = params.blocks_mut();
    state.update(&mut blocks, &grads.blocks, &lrs)
}

/// Rescales all blocks so their joint ℓ2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<S: Scalar>(grads: &mut [Tensor<S>], clip_norm: S) -> Result<S> {
    if !(clip_norm > S::zero()) {
        return Err(Error::contract("clip norm must be positive"));
    }
    let norm = crate::model::global_norm(grads);
    if norm > clip_norm {
        let c = clip_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(c);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::vector(vec![1.5f64, -2.0]);
        let mut st = AdamState::new([&w]);
        st.update(&mut [&mut w], &[Tensor::vector(vec![0.0, 0.0])], &[0.1]).unwrap();
        assert_eq!(w.data(), &[1.5, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::scalar(0.0f64);
        let mut st = AdamState::new([&w]);
        st.update(&mut [&mut w], &[Tensor::scalar(1.0)], &[0.1]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15, "{}", w.data()[0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = ½‖w − w*‖², ∇f = w − w*
        let target = [3.0f64, -1.0, 0.5];
        let mut w = Tensor::vector(vec![0.0; 3]);
        let mut st = AdamState::new([&w]);
        for _ in 0..200 {
            let g: Vec<f64> = w.data().iter().zip(&target).map(|(a, b)| a - b).collect();
            st.update(&mut [&mut w], &[Tensor::vector(g)], &[0.1]).unwrap();
        }
        let err: f64 = w.data().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-3, "distance {err}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = Tensor::vector(vec![1.0f64]);
        let mut st = AdamState::new([&w]);
        let err = st
            .update(&mut [&mut w], &[Tensor::new_unchecked(vec![1], vec![f64::NAN]).unwrap()], &[0.1])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(st.step, 0);
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![3.0f64, 4.0])];
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(norm, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);

        let mut small = vec![Tensor::vector(vec![0.3f64]), Tensor::vector(vec![0.4])];
        clip_gradients(&mut small, 1.0).unwrap();
        assert_eq!(small[0].data(), &[0.3]);
        assert_eq!(small[1].data(), &[0.4]);
        assert!(clip_gradients(&mut small, 0.0).is_err());
    }
}
