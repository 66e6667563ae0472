//! Cross-attention fusion of the hyperspectral and auxiliary token streams.
//!
//! Each stream is normalized and projected to queries, keys and values. The
//! hyperspectral update attends with auxiliary queries over hyperspectral
//! keys and values; the auxiliary update uses hyperspectral queries over
//! auxiliary keys and values. Both updates are added back as residuals, run
//! through a pre-norm feed-forward layer, and concatenated along features.

use rand_chacha::ChaCha8Rng;

use crate::attention::dense_attention;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNormParams, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::Scalar;

/// Projections, norms and feed-forward layers of one stream.
#[derive(Debug, Clone)]
pub struct StreamParams {
    pub ln: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub ln2: LayerNormParams,
    pub ffn: FeedForward,
}

impl StreamParams {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        ffn_width: usize,
        eps: f64,
    ) -> Self {
        StreamParams {
            ln: LayerNormParams::new(store, &format!("{name}.ln"), width, eps),
            query: Linear::new(store, rng, &format!("{name}.query"), width, width),
            key: Linear::new(store, rng, &format!("{name}.key"), width, width),
            value: Linear::new(store, rng, &format!("{name}.value"), width, width),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), width, eps),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), width, ffn_width),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CafbParams {
    pub hsi: StreamParams,
    pub aux: StreamParams,
    /// Add the hyperspectral residual to the auxiliary output as well, the
    /// way the fusion recurrence is sometimes written. Off by default.
    pub shared_hsi_residual: bool,
}

impl CafbParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        ffn_width: usize,
        eps: f64,
    ) -> Self {
        CafbParams {
            hsi: StreamParams::new(store, rng, &format!("{name}.hsi"), width, ffn_width, eps),
            aux: StreamParams::new(store, rng, &format!("{name}.aux"), width, ffn_width, eps),
            shared_hsi_residual: false,
        }
    }

    /// Zeroes both value projections and both feed-forward output layers,
    /// which makes the block return `Concat(t_h, t_x)`.
    pub fn zero_residual_terminals<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for s in [&self.hsi, &self.aux] {
            s.value.zero(store);
            s.ffn.down.zero(store);
        }
    }

    /// Same block with the two parameter groups exchanged.
    pub fn swapped(&self) -> Self {
        CafbParams {
            hsi: self.aux.clone(),
            aux: self.hsi.clone(),
            shared_hsi_residual: self.shared_hsi_residual,
        }
    }
}

fn check_streams<T: Scalar>(t_h: Var<'_, T>, t_x: Var<'_, T>) -> Result<()> {
    let (hs, xs) = (t_h.shape(), t_x.shape());
    if hs.len() != 2 || hs != xs {
        return Err(Error::ShapeMismatch {
            op: "cross_attention",
            lhs: hs,
            rhs: xs,
        });
    }
    Ok(())
}

/// Cross attention on already-normalized streams. Returns the hyperspectral
/// update `softmax(Q_x K_hᵀ/√D) V_h` and the auxiliary update
/// `softmax(Q_h K_xᵀ/√D) V_x`.
pub fn cross_attention<'g, T: Scalar>(
    p: &Bound<'g, T>,
    params: &CafbParams,
    t_h: Var<'g, T>,
    t_x: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    check_streams(t_h, t_x)?;
    let (h, x) = (&params.hsi, &params.aux);
    let (q_h, k_h, v_h) = (h.query.forward(p, t_h)?, h.key.forward(p, t_h)?, h.value.forward(p, t_h)?);
    let (q_x, k_x, v_x) = (x.query.forward(p, t_x)?, x.key.forward(p, t_x)?, x.value.forward(p, t_x)?);
    let upd_h = dense_attention(q_x, k_h, v_h)?;
    let upd_x = dense_attention(q_h, k_x, v_x)?;
    Ok((upd_h, upd_x))
}

/// Full fusion block, `[N×D] × [N×D] → [N×2D]`.
pub fn cafb_forward<'g, T: Scalar>(
    p: &Bound<'g, T>,
    params: &CafbParams,
    t_h: Var<'g, T>,
    t_x: Var<'g, T>,
) -> Result<Var<'g, T>> {
    check_streams(t_h, t_x)?;
    let (h, x) = (&params.hsi, &params.aux);
    let (upd_h, upd_x) = cross_attention(p, params, h.ln.forward(p, t_h)?, x.ln.forward(p, t_x)?)?;
    let res_h = t_h.add(upd_h)?;
    let res_x = t_x.add(upd_x)?;
    let out_h = h.ffn.forward(p, h.ln2.forward(p, res_h)?)?.add(res_h)?;
    let skip_x = if params.shared_hsi_residual { res_h } else { res_x };
    let out_x = x.ffn.forward(p, x.ln2.forward(p, res_x)?)?.add(skip_x)?;
    out_h.concat_cols(out_x)
}
