//! Slice-level forward and backward kernels. Loop orders are fixed so that
//! results are bit-reproducible on one platform.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `dout[m×n] · bᵀ`, the gradient with respect to the left operand.
pub fn matmul_grad_lhs<T: Scalar>(dout: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&d, &bv) in drow.iter().zip(brow) {
                acc = acc + d * bv;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `aᵀ · dout[m×n]`, the gradient with respect to the right operand.
pub fn matmul_grad_rhs<T: Scalar>(a: &[T], dout: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &d) in orow.iter_mut().zip(drow) {
                *o = *o + av * d;
            }
        }
    }
    out
}

pub fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Row-wise softmax with max subtraction. Entries equal to the mask sentinel
/// map to exactly zero.
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Result<Vec<T>> {
    let sentinel = T::sentinel();
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row
            .iter()
            .copied()
            .filter(|&v| v != sentinel)
            .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
            .ok_or(Error::DegenerateRow { row: r })?;
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut total = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            if v != sentinel {
                *o = (v - max).exp();
                total = total + *o;
            }
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    Ok(out)
}

/// Softmax backward given the forward output `y`.
pub fn softmax_rows_grad<T: Scalar>(y: &[T], dy: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let dyr = &dy[r * cols..(r + 1) * cols];
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for c in 0..cols {
            dx[r * cols + c] = yr[c] * (dyr[c] - dot);
        }
    }
    dx
}

/// Keeps the `k` largest entries of each row, replacing the rest with the
/// mask sentinel. Ties keep the lowest column index. Returns the masked
/// values and the keep mask.
pub fn topk_rows<T: Scalar>(x: &[T], rows: usize, cols: usize, k: usize) -> (Vec<T>, Vec<bool>) {
    let mut out = vec![T::sentinel(); rows * cols];
    let mut kept = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        order.clear();
        order.extend(0..cols);
        if k < cols {
            // total order: value descending, then column ascending
            order.select_nth_unstable_by(k - 1, |&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        }
        for &c in &order[..k] {
            out[r * cols + c] = row[c];
            kept[r * cols + c] = true;
        }
    }
    (out, kept)
}

pub struct LayerNormOut<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Per-row standardization (population variance) followed by an affine map.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    rows: usize,
    cols: usize,
    eps: T,
) -> LayerNormOut<T> {
    let n = T::from_usize(cols).expect("width");
    let mut y = vec![T::zero(); rows * cols];
    let mut xhat = vec![T::zero(); rows * cols];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (row[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    LayerNormOut { y, xhat, rstd }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::lit(0.044_715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4);
    let a = T::lit(0.044_715);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Zero padding mode for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the kernel must fit inside the input.
    Valid,
    /// Zero padding so that the output extent is `ceil(input / stride)`.
    Same,
}

/// Output extent and leading pad for one spatial axis.
pub fn conv_axis(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

/// Geometry of a 3-D convolution over `[C, B, H, W]` inputs with
/// `[F, C, KB, KH, KW]` kernels. 2-D convolutions use depth 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub filters: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub pad: [usize; 3],
    pub stride: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        filters: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for d in 0..3 {
            let (o, p) = conv_axis(input[d], kernel[d], stride, padding)?;
            output[d] = o;
            pad[d] = p;
        }
        Some(ConvGeom {
            channels,
            filters,
            input,
            kernel,
            output,
            pad,
            stride,
        })
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    fn kernel_len(&self) -> usize {
        self.filters * self.channels * self.kernel.iter().product::<usize>()
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.output.iter().product::<usize>()
    }

    /// Range of output positions `o` with `0 <= o*stride + offset - pad < input`
    /// along axis `d`.
    fn valid(&self, d: usize, offset: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let p = self.pad[d];
        let n = self.input[d];
        let lo = if p > offset { (p - offset).div_ceil(s) } else { 0 };
        let hi = if n + p > offset {
            ((n + p - offset - 1) / s + 1).min(self.output[d])
        } else {
            0
        };
        lo..hi.max(lo)
    }

    /// Visits every (kernel index, input index, output index) triple that
    /// contributes to the convolution.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [ib, ih, iw] = self.input;
        let [kb, kh, kw] = self.kernel;
        let [ob, oh, ow] = self.output;
        let s = self.stride;
        for fi in 0..self.filters {
            for c in 0..self.channels {
                for db in 0..kb {
                    let rb = self.valid(0, db);
                    for dh in 0..kh {
                        let rh = self.valid(1, dh);
                        for dw in 0..kw {
                            let rw = self.valid(2, dw);
                            let kidx = (((fi * self.channels + c) * kb + db) * kh + dh) * kw + dw;
                            for o0 in rb.clone() {
                                let i0 = o0 * s + db - self.pad[0];
                                for o1 in rh.clone() {
                                    let i1 = o1 * s + dh - self.pad[1];
                                    let xbase = ((c * ib + i0) * ih + i1) * iw;
                                    let obase = ((fi * ob + o0) * oh + o1) * ow;
                                    for o2 in rw.clone() {
                                        let i2 = o2 * s + dw - self.pad[2];
                                        f(kidx, xbase + i2, obase + o2);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &[T], k: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.input_len());
        debug_assert_eq!(k.len(), self.kernel_len());
        let mut out = vec![T::zero(); self.output_len()];
        self.for_each_tap(|ki, xi, oi| out[oi] = out[oi] + k[ki] * x[xi]);
        out
    }

    pub fn grad_input<T: Scalar>(&self, k: &[T], dout: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.input_len()];
        self.for_each_tap(|ki, xi, oi| dx[xi] = dx[xi] + k[ki] * dout[oi]);
        dx
    }

    pub fn grad_kernel<T: Scalar>(&self, x: &[T], dout: &[T]) -> Vec<T> {
        let mut dk = vec![T::zero(); self.kernel_len()];
        self.for_each_tap(|ki, xi, oi| dk[ki] = dk[ki] + x[xi] * dout[oi]);
        dk
    }
}
