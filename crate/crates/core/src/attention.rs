//! Multi-branch top-k sparse self-attention and the transformer block built
//! on it.
//!
//! Each branch keeps the `k = floor(alpha * N)` largest scaled scores of
//! every query row, softmaxes over the survivors and aggregates the values.
//! Branch outputs are mixed with one learnable scalar per branch.

use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNormParams, Linear};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Default sparsity fractions, one per branch.
pub const DEFAULT_ALPHAS: [f64; 4] = [1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0, 4.0 / 5.0];

/// Absorbs representation error in fractions such as 2/3 so that exact
/// multiples floor to the intended integer.
const FLOOR_SLACK: f64 = 1e-9;

/// Checks that `alphas` is non-empty, strictly increasing and inside (0, 1].
pub fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("at least one sparsity fraction is required".into()));
    }
    for &a in alphas {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Config(format!("sparsity fraction {a} outside (0, 1]")));
        }
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "sparsity fractions must be strictly increasing, got {alphas:?}"
        )));
    }
    Ok(())
}

/// Per-branch top-k sizes `floor(alpha * n_tokens)`, clamped to `n_tokens`.
pub fn sparsity_levels(n_tokens: usize, alphas: &[f64]) -> Result<Vec<usize>> {
    if n_tokens < 2 {
        return Err(Error::Config(format!(
            "sparse attention needs at least 2 tokens, got {n_tokens}"
        )));
    }
    alphas
        .iter()
        .map(|&a| {
            let k = ((a * n_tokens as f64) + FLOOR_SLACK).floor() as usize;
            match k.min(n_tokens) {
                0 => Err(Error::Config(format!(
                    "fraction {a} keeps no tokens out of {n_tokens}"
                ))),
                k => Ok(k),
            }
        })
        .collect()
}

/// `Q Kᵀ / sqrt(D)`.
pub fn attention_scores<'g, T: Scalar>(q: Var<'g, T>, k: Var<'g, T>) -> Result<Var<'g, T>> {
    let (qs, ks) = (q.shape(), k.shape());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::ShapeMismatch {
            op: "attention_scores",
            lhs: qs,
            rhs: ks,
        });
    }
    let scale = T::one() / T::from_usize(qs[1]).expect("width").sqrt();
    Ok(q.matmul(k.transpose()?)?.scale(scale))
}

/// Keeps the `k` largest scores per row and masks the rest.
pub fn sparse_row_mask<'g, T: Scalar>(score: Var<'g, T>, k: usize) -> Result<Var<'g, T>> {
    score.topk_mask(k)
}

/// Standard scaled dot-product attention.
pub fn dense_attention<'g, T: Scalar>(q: Var<'g, T>, k: Var<'g, T>, v: Var<'g, T>) -> Result<Var<'g, T>> {
    attention_scores(q, k)?.row_softmax()?.matmul(v)
}

#[derive(Debug, Clone)]
pub struct SparseAttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Projection applied after branch mixing.
    pub output: Linear,
    /// One mixing scalar per branch, shape `[n]`.
    pub branch_weights: ParamId,
    pub alphas: Vec<f64>,
}

impl SparseAttentionParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        alphas: &[f64],
    ) -> Result<Self> {
        validate_alphas(alphas)?;
        let n = alphas.len();
        Ok(SparseAttentionParams {
            query: Linear::new(store, rng, &format!("{name}.query"), width, width),
            key: Linear::new(store, rng, &format!("{name}.key"), width, width),
            value: Linear::new(store, rng, &format!("{name}.value"), width, width),
            output: Linear::new(store, rng, &format!("{name}.output"), width, width),
            branch_weights: store.add(
                format!("{name}.branch_weights"),
                Tensor::full([n], T::lit(1.0 / n as f64)),
            ),
            alphas: alphas.to_vec(),
        })
    }
}

/// Multi-branch sparse self-attention over `x[N×D]`.
pub fn sparse_attention<'g, T: Scalar>(
    p: &Bound<'g, T>,
    params: &SparseAttentionParams,
    x: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let n_tokens = x.shape()[0];
    let levels = sparsity_levels(n_tokens, &params.alphas)?;
    let q = params.query.forward(p, x)?;
    let k = params.key.forward(p, x)?;
    let v = params.value.forward(p, x)?;
    let score = attention_scores(q, k)?;
    let weights = p.var(params.branch_weights);
    let mut mixed: Option<Var<'g, T>> = None;
    for (branch, &keep) in levels.iter().enumerate() {
        let m = sparse_row_mask(score, keep)?.row_softmax()?;
        let z = m.matmul(v)?.scale_by(weights, branch)?;
        mixed = Some(match mixed {
            Some(acc) => acc.add(z)?,
            None => z,
        });
    }
    params.output.forward(p, mixed.expect("at least one branch"))
}

/// Pre-norm transformer block whose attention is [`sparse_attention`].
#[derive(Debug, Clone)]
pub struct StbParams {
    pub attn: SparseAttentionParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ffn: FeedForward,
}

impl StbParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        ffn_width: usize,
        alphas: &[f64],
        eps: f64,
    ) -> Result<Self> {
        if ffn_width < width {
            return Err(Error::Config(format!(
                "feed-forward width {ffn_width} smaller than token width {width}"
            )));
        }
        Ok(StbParams {
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), width, eps),
            attn: SparseAttentionParams::new(store, rng, &format!("{name}.attn"), width, alphas)?,
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), width, eps),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), width, ffn_width),
        })
    }

    /// Zeroes the two layers that end a residual branch, turning the block
    /// into the identity.
    pub fn zero_residual_terminals<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.attn.output.zero(store);
        self.ffn.down.zero(store);
    }
}

/// `y = x + attn(LN1(x)); out = y + FFN(LN2(y))`.
pub fn stb_forward<'g, T: Scalar>(p: &Bound<'g, T>, params: &StbParams, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let a = sparse_attention(p, &params.attn, params.ln1.forward(p, x)?)?;
    let y = x.add(a)?;
    let f = params.ffn.forward(p, params.ln2.forward(p, y)?)?;
    y.add(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use rand::SeedableRng;

    #[test]
    fn levels_for_default_fractions() {
        assert_eq!(sparsity_levels(8, &DEFAULT_ALPHAS).unwrap(), vec![4, 5, 6, 6]);
        assert_eq!(sparsity_levels(4, &DEFAULT_ALPHAS).unwrap(), vec![2, 2, 3, 3]);
        assert_eq!(sparsity_levels(3, &[2.0 / 3.0, 1.0]).unwrap(), vec![2, 3]);
    }

    #[test]
    fn levels_reject_empty_branches() {
        assert!(matches!(sparsity_levels(1, &[0.5]), Err(Error::Config(_))));
        assert!(matches!(sparsity_levels(3, &[0.2]), Err(Error::Config(_))));
    }

    #[test]
    fn alpha_validation() {
        assert!(validate_alphas(&DEFAULT_ALPHAS).is_ok());
        assert!(validate_alphas(&[]).is_err());
        assert!(validate_alphas(&[0.5, 0.5]).is_err());
        assert!(validate_alphas(&[0.0, 0.5]).is_err());
        assert!(validate_alphas(&[0.5, 1.2]).is_err());
    }

    #[test]
    fn scores_of_identity_inputs() {
        let g = Graph::<f64>::new();
        let q = g.constant(Tensor::eye(2));
        let s = attention_scores(q, q).unwrap().value();
        let r = 1.0 / 2f64.sqrt();
        assert_eq!(s.data(), &[r, 0.0, 0.0, r]);
        let z = g.constant(Tensor::zeros([2, 2]));
        assert!(attention_scores(z, q).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_row_softmax_values() {
        let g = Graph::<f64>::new();
        let s = g.constant(Tensor::from_f64([1, 3], &[0.9, 0.1, 0.5]).unwrap());
        let masked = sparse_row_mask(s, 2).unwrap();
        assert_eq!(masked.value().data(), &[0.9, f64::sentinel(), 0.5]);
        let m = masked.row_softmax().unwrap().value();
        assert!((m.data()[0] - 0.5987).abs() < 1e-4);
        assert_eq!(m.data()[1], 0.0);
        assert!((m.data()[2] - 0.4013).abs() < 1e-4);
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stb = StbParams::new(&mut store, &mut rng, "stb", 4, 8, &DEFAULT_ALPHAS, 1e-5).unwrap();
        stb.zero_residual_terminals(&mut store);
        let g = Graph::new();
        let p = store.bind(&g, false);
        let xv = crate::params::uniform(&mut rng, [5, 4], 1.0);
        let x = g.constant(xv.clone());
        let out = stb_forward(&p, &stb, x).unwrap().value();
        assert!(out.bit_eq(&xv));
    }
}
