//! Wall-clock timing of the sparse attention branches against dense
//! attention on random inputs.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{attention_scores, dense_attention, sparse_row_mask, sparsity_levels};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::params::uniform;
use crate::tensor::{Scalar, Tensor};

pub const WARMUP_RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchTiming {
    pub alpha: f64,
    pub k: usize,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub d: usize,
    pub iters: usize,
    pub dense_median_ms: f64,
    pub branches: Vec<BranchTiming>,
    /// Largest absolute difference between the `α = 1` branch and dense
    /// attention.
    pub max_deviation: f64,
}

/// Median wall-clock milliseconds of `f` over `iters` runs after
/// [`WARMUP_RUNS`] untimed runs.
pub fn median_ms<R>(iters: usize, mut f: impl FnMut() -> R) -> f64 {
    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(f());
    }
    let mut times: Vec<f64> = (0..iters.max(1))
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    if times.len() % 2 == 0 {
        (times[mid - 1] + times[mid]) / 2.0
    } else {
        times[mid]
    }
}

/// `softmax(topk(Q Kᵀ / sqrt(D), k)) V` without gradient tracking.
pub fn branch_output<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, keep: usize) -> Result<Tensor<T>> {
    let g = Graph::new();
    let s = attention_scores(g.constant(q.clone()), g.constant(k.clone()))?;
    Ok(sparse_row_mask(s, keep)?.row_softmax()?.matmul(g.constant(v.clone()))?.value())
}

pub fn dense_output<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Graph::new();
    Ok(dense_attention(g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()))?.value())
}

pub fn run_bench<T: Scalar>(n: usize, d: usize, iters: usize, alphas: &[f64], seed: u64) -> Result<BenchReport> {
    if d == 0 || iters == 0 {
        return Err(Error::Config("bench needs positive width and iteration count".into()));
    }
    let levels = sparsity_levels(n, alphas)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: Tensor<T> = uniform(&mut rng, [n, d], 1.0);
    let k: Tensor<T> = uniform(&mut rng, [n, d], 1.0);
    let v: Tensor<T> = uniform(&mut rng, [n, d], 1.0);

    let dense = dense_output(&q, &k, &v)?;
    let full = branch_output(&q, &k, &v, n)?;
    let max_deviation = full.max_abs_diff(&dense).to_f64().unwrap_or(f64::INFINITY);

    let dense_median_ms = median_ms(iters, || dense_output(&q, &k, &v));
    let branches = alphas
        .iter()
        .zip(&levels)
        .map(|(&alpha, &keep)| BranchTiming {
            alpha,
            k: keep,
            median_ms: median_ms(iters, || branch_output(&q, &k, &v, keep)),
        })
        .collect();
    Ok(BenchReport {
        n,
        d,
        iters,
        dense_median_ms,
        branches,
        max_deviation,
    })
}
