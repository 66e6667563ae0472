//! Small layer building blocks shared by the attention, fusion and backbone
//! modules.

use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::params::{xavier_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Affine map `x · W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(rng, [inputs, outputs], inputs, outputs),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.matmul(p.var(self.weight))?.add_row_bias(p.var(self.bias))
    }

    /// Sets weight and bias to zero.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store
            .set(self.weight, Tensor::zeros([self.inputs, self.outputs]))
            .expect("same shape");
        store.set(self.bias, Tensor::zeros([self.outputs])).expect("same shape");
    }

    /// Sets the weight to the identity (square layers only) and the bias to zero.
    pub fn identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        assert_eq!(self.inputs, self.outputs, "identity on non-square layer");
        store.set(self.weight, Tensor::eye(self.inputs)).expect("same shape");
        store.set(self.bias, Tensor::zeros([self.outputs])).expect("same shape");
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, eps: f64) -> Self {
        LayerNormParams {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([width])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([width])),
            eps,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), T::lit(self.eps))
    }
}

/// Two linear layers with GELU in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        hidden: usize,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), width, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, width),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.up.forward(p, x)?.gelu();
        self.down.forward(p, h)
    }
}
