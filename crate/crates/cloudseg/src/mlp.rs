//! Shared point-wise blocks: linear map, per-row layer normalization,
//! leaky-ReLU activation, dropout.
//!
//! Normalization is per point (layer norm), not per batch: training crops
//! are single correlated regions whose batch statistics vary wildly from
//! crop to crop, which stalls optimization; row statistics are stable and
//! keep train and eval forwards identical.

use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::TensorError;
use crate::tensor::TensorId;
use crate::{Graph, Scalar};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LEAKY_SLOPE: Scalar = 0.2;
pub const NORM_EPS: Scalar = 1e-6;

/// Per-forward state: phase and dropout randomness.
pub struct ForwardCtx<'r> {
    pub training: bool,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            rng: None,
        }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx {
            training: true,
            rng: Some(rng),
        }
    }
}

/// Linear map over the last axis, optionally followed by layer
/// normalization and leaky-ReLU. The final classifier layer and the
/// similarity map use the bare variants.
#[derive(Debug, Clone)]
pub struct MlpBlock {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub norm: Option<NormParams>,
    pub activation: bool,
    pub in_width: usize,
    pub out_width: usize,
}

#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl MlpBlock {
    /// Standard block: linear + layer norm + leaky-ReLU.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> MlpBlock {
        let weight = store.glorot(format!("{name}.weight"), in_width, out_width, rng);
        let bias = Some(store.zeros(format!("{name}.bias"), vec![out_width], true));
        let norm = Some(NormParams {
            gamma: store.ones(format!("{name}.gamma"), vec![out_width], true),
            beta: store.zeros(format!("{name}.beta"), vec![out_width], true),
        });
        MlpBlock {
            weight,
            bias,
            norm,
            activation: true,
            in_width,
            out_width,
        }
    }

    /// Linear + activation without normalization (the global-descriptor
    /// projection, where a one-element row would normalize to zero).
    pub fn new_unnormalized(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> MlpBlock {
        let weight = store.glorot(format!("{name}.weight"), in_width, out_width, rng);
        let bias = Some(store.zeros(format!("{name}.bias"), vec![out_width], true));
        MlpBlock {
            weight,
            bias,
            norm: None,
            activation: true,
            in_width,
            out_width,
        }
    }

    /// Plain affine map: no normalization, no activation (logits layer).
    pub fn linear(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> MlpBlock {
        let weight = store.glorot(format!("{name}.weight"), in_width, out_width, rng);
        let bias = Some(store.zeros(format!("{name}.bias"), vec![out_width], true));
        MlpBlock {
            weight,
            bias,
            norm: None,
            activation: false,
            in_width,
            out_width,
        }
    }

    /// Bias-free linear map (softmax shift invariance makes a bias
    /// unidentifiable in the similarity path).
    pub fn linear_no_bias(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> MlpBlock {
        let weight = store.glorot(format!("{name}.weight"), in_width, out_width, rng);
        MlpBlock {
            weight,
            bias: None,
            norm: None,
            activation: false,
            in_width,
            out_width,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Graph,
        bound: &Bound,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let w = bound.id(self.weight);
        let mut y = tape.matmul(x, w)?;
        if let Some(bias) = self.bias {
            y = tape.add(y, bound.id(bias))?;
        }
        if let Some(norm) = &self.norm {
            let gamma = bound.id(norm.gamma);
            let beta = bound.id(norm.beta);
            y = tape.layer_norm(y, gamma, beta, NORM_EPS)?;
        }
        if self.activation {
            y = tape.leaky_relu(y, LEAKY_SLOPE)?;
        }
        Ok(y)
    }
}

/// Inverted dropout: in training, zero each element with probability `p`
/// and scale survivors by 1/(1-p); identity otherwise.
pub fn dropout(
    tape: &mut Graph,
    ctx: &mut ForwardCtx,
    x: TensorId,
    p: Scalar,
) -> Result<TensorId, TensorError> {
    if !ctx.training || p <= 0.0 {
        return Ok(x);
    }
    let rng = ctx
        .rng
        .as_mut()
        .expect("training forward carries an rng for dropout");
    let keep = 1.0 - p;
    let n = tape.value(x).len();
    let mask: Vec<Scalar> = (0..n)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    tape.mul_const(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, ReduceMode};
    use rand::SeedableRng;

    #[test]
    fn block_shapes_and_phases() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = MlpBlock::new(&mut store, "b", 3, 5, &mut rng);
        let mut tape = Graph::new();
        let bound = crate::params::bind_all(&store, &mut tape);
        let data: Vec<Scalar> = (0..12).map(|i| 0.25 * (i % 5) as Scalar - 0.4).collect();
        let x = tape.constant(&[4, 3], data).unwrap();
        let y = block.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.shape(y), &[4, 5]);
        let _ = rng;
    }

    #[test]
    fn dropout_mask_scales_gradient() {
        let mut tape = Graph::new();
        let x = tape.leaf(&[8], vec![1.0; 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ctx = ForwardCtx::train(&mut rng);
        let y = dropout(&mut tape, &mut ctx, x, 0.5).unwrap();
        let root = tape.reduce_all(y, ReduceMode::Sum).unwrap();
        tape.backward(root).unwrap();
        let grads = tape.grad(x).unwrap();
        let vals = tape.value(y);
        // Gradient equals the mask: 0 where dropped, 2 where kept.
        for (g, v) in grads.iter().zip(vals.iter()) {
            assert_eq!(g, v);
            assert!(*g == 0.0 || *g == 2.0);
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Graph::new();
        let x = tape.leaf(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut ctx = ForwardCtx::eval();
        let y = dropout(&mut tape, &mut ctx, x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        // Whole block (linear + layer norm + activation) against central
        // differences, for input and every trainable parameter.
        let build = |g: &mut Graph, v: &[Scalar]| {
            let x = g.leaf(&[4, 2], v[..8].to_vec()).unwrap();
            let w = g.leaf(&[2, 3], v[8..14].to_vec()).unwrap();
            let b = g.leaf(&[3], v[14..17].to_vec()).unwrap();
            let gamma_data: Vec<Scalar> = v[17..20].iter().map(|u| u + 1.2).collect();
            let gamma = g.leaf(&[3], gamma_data).unwrap();
            let beta = g.leaf(&[3], v[20..23].to_vec()).unwrap();
            let h = g.matmul(x, w).unwrap();
            let h = g.add(h, b).unwrap();
            let h = g.layer_norm(h, gamma, beta, NORM_EPS).unwrap();
            let h = g.leaky_relu(h, LEAKY_SLOPE).unwrap();
            let wgt = g
                .constant(&[4, 3], (0..12).map(|i| 0.21 * i as Scalar - 1.1).collect())
                .unwrap();
            let p = g.mul(h, wgt).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<Scalar> = (0..23).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let f = |v: &[Scalar]| {
            let mut g = Graph::new();
            let root = build(&mut g, v);
            g.value(root)[0]
        };
        let numeric = gradcheck::central_diff(f, &x, 1e-5);
        let mut g = Graph::new();
        let root = build(&mut g, &x);
        g.backward(root).unwrap();
        let mut analytic = Vec::new();
        for i in 0..5 {
            analytic.extend_from_slice(g.grad(crate::tensor::TensorId(i)).unwrap());
        }
        let err = gradcheck::max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "mlp block gradient error {err}");
    }
}
