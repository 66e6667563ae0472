//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the library's numeric kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfnet::data::RasterPair;
use sfnet::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Row-major `a[m×k] · b[k×n]`, dot-product form.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

/// Output length and leading pad; `same` pads to `ceil(n / s)` outputs and
/// splits the padding with the smaller half first.
fn axis(n: usize, k: usize, s: usize, same: bool) -> (usize, isize) {
    if same {
        let out = n.div_ceil(s);
        let need = ((out - 1) * s + k) as isize - n as isize;
        (out, need.max(0) / 2)
    } else {
        ((n - k) / s + 1, 0)
    }
}

/// Cross-correlation of `x[C×B×H×W]` with `k[F×C×KB×KH×KW]`, zero padded.
pub fn conv3d(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 5], stride: usize, same: bool) -> (Vec<f64>, [usize; 4]) {
    let [c, b, h, w] = xs;
    let [f, kc, kb, kh, kw] = ks;
    assert_eq!(c, kc);
    let (ob, pb) = axis(b, kb, stride, same);
    let (oh, ph) = axis(h, kh, stride, same);
    let (ow, pw) = axis(w, kw, stride, same);
    let get = |ci: usize, z: isize, y: isize, xx: isize| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= b as isize || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x[((ci * b + z as usize) * h + y as usize) * w + xx as usize]
        }
    };
    let mut out = vec![0.0; f * ob * oh * ow];
    for fi in 0..f {
        for o0 in 0..ob {
            for o1 in 0..oh {
                for o2 in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for t0 in 0..kb {
                            for t1 in 0..kh {
                                for t2 in 0..kw {
                                    let z = (o0 * stride + t0) as isize - pb;
                                    let y = (o1 * stride + t1) as isize - ph;
                                    let xx = (o2 * stride + t2) as isize - pw;
                                    let kv = k[(((fi * c + ci) * kb + t0) * kh + t1) * kw + t2];
                                    acc += kv * get(ci, z, y, xx);
                                }
                            }
                        }
                    }
                    out[((fi * ob + o0) * oh + o1) * ow + o2] = acc;
                }
            }
        }
    }
    (out, [f, ob, oh, ow])
}

pub fn conv2d(x: &[f64], xs: [usize; 3], k: &[f64], ks: [usize; 4], stride: usize, same: bool) -> (Vec<f64>, [usize; 3]) {
    let (out, [f, _, oh, ow]) = conv3d(x, [xs[0], 1, xs[1], xs[2]], k, [ks[0], ks[1], 1, ks[2], ks[3]], stride, same);
    (out, [f, oh, ow])
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `softmax(Q Kᵀ / sqrt(D)) V` by explicit loops.
pub fn dense_attention(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() * scale)
            .collect();
        let p = softmax(&scores);
        for j in 0..n {
            for t in 0..d {
                out[i * d + t] += p[j] * v[j * d + t];
            }
        }
    }
    out
}

/// Leading eigenpairs of the sample covariance of `rows[M×B]` by power
/// iteration with deflation. Vectors are sign-normalized so their
/// largest-magnitude entry is positive.
pub fn power_pca(rows: &[f64], bands: usize, r: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let m = rows.len() / bands;
    let mut mean = vec![0.0; bands];
    for row in rows.chunks(bands) {
        for b in 0..bands {
            mean[b] += row[b] / m as f64;
        }
    }
    let mut cov = vec![vec![0.0; bands]; bands];
    for row in rows.chunks(bands) {
        for i in 0..bands {
            for j in 0..bands {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (m - 1) as f64;
            }
        }
    }
    let mut vectors = Vec::new();
    let mut values = Vec::new();
    for comp in 0..r {
        let mut v: Vec<f64> = (0..bands).map(|i| 1.0 + (i * 7 + comp * 3) as f64 % 5.0).collect();
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let mut w: Vec<f64> = (0..bands).map(|i| (0..bands).map(|j| cov[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= norm);
            let delta = max_abs_diff(&w, &v);
            v = w;
            lambda = norm;
            if delta < 1e-15 {
                break;
            }
        }
        let pivot = (0..bands).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..bands {
            for j in 0..bands {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        vectors.push(v);
        values.push(lambda);
    }
    (mean, vectors, values)
}

/// Confusion counts, per-class recall and overall accuracy by direct
/// counting.
pub fn recount(truth: &[usize], pred: &[usize], c: usize) -> (Vec<Vec<u64>>, Vec<f64>, f64) {
    let mut conf = vec![vec![0u64; c]; c];
    let mut hits = 0usize;
    for i in 0..truth.len() {
        conf[truth[i]][pred[i]] += 1;
        if truth[i] == pred[i] {
            hits += 1;
        }
    }
    let per: Vec<f64> = (0..c)
        .map(|k| {
            let n = truth.iter().filter(|&&t| t == k).count();
            let ok = (0..truth.len()).filter(|&i| truth[i] == k && pred[i] == k).count();
            if n == 0 {
                0.0
            } else {
                ok as f64 / n as f64
            }
        })
        .collect();
    (conf, per, hits as f64 / truth.len() as f64)
}

/// Which per-pixel features the centroid classifier sees.
#[derive(Clone, Copy, Debug)]
pub enum Sources {
    Hsi,
    Aux,
    Both,
}

fn features(raster: &RasterPair, i: usize, sources: Sources) -> Vec<f64> {
    let mut f = Vec::new();
    if matches!(sources, Sources::Hsi | Sources::Both) {
        f.extend(raster.hsi_pixel(i).iter().map(|&v| v as f64));
    }
    if matches!(sources, Sources::Aux | Sources::Both) {
        f.extend(raster.aux_pixel(i).iter().map(|&v| v as f64));
    }
    f
}

/// Test accuracy of a nearest-class-mean classifier fit on `train`.
pub fn centroid_accuracy(raster: &RasterPair, train: &[usize], test: &[usize], sources: Sources) -> f64 {
    let c = raster.n_classes();
    let dim = features(raster, train[0], sources).len();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for &i in train {
        let k = raster.labels()[i] as usize - 1;
        for (s, v) in sums[k].iter_mut().zip(features(raster, i, sources)) {
            *s += v;
        }
        counts[k] += 1;
    }
    for k in 0..c {
        sums[k].iter_mut().for_each(|s| *s /= counts[k] as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let f = features(raster, i, sources);
            let best = (0..c)
                .min_by(|&a, &b| {
                    let da: f64 = f.iter().zip(&sums[a]).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = f.iter().zip(&sums[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            best + 1 == raster.labels()[i] as usize
        })
        .count();
    correct as f64 / test.len() as f64
}
