//! Principal component reduction of the spectral axis.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::RasterPair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean and leading principal axes of a set of spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `bands × r`, row-major; columns are orthonormal.
    components: Vec<f64>,
    variances: Vec<f64>,
    bands: usize,
    retained: usize,
}

impl PcaModel {
    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let bands = mean.len();
        let retained = variances.len();
        if bands == 0 || retained == 0 || components.len() != bands * retained {
            return Err(Error::InvalidData(format!(
                "pca parts: mean {bands}, components {}, variances {retained}",
                components.len()
            )));
        }
        Ok(PcaModel {
            mean,
            components,
            variances,
            bands,
            retained,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Variance explained by each retained component, non-increasing.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Component `j` as a vector over bands.
    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.components[b * self.retained + j]).collect()
    }

    /// Copy with every stored value passed through `round`.
    pub fn rounded(&self, round: impl Fn(f64) -> f64) -> Self {
        PcaModel {
            mean: self.mean.iter().map(|&v| round(v)).collect(),
            components: self.components.iter().map(|&v| round(v)).collect(),
            variances: self.variances.iter().map(|&v| round(v)).collect(),
            ..self.clone()
        }
    }

    /// `(x − mean) · components` for row-major `x[M×bands]`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % self.bands != 0 {
            return Err(Error::Shape {
                op: "pca_transform",
                msg: format!("{} values is not a whole number of {}-band rows", x.len(), self.bands),
            });
        }
        let r = self.retained;
        let mut out = Vec::with_capacity(x.len() / self.bands * r);
        let mut centered = vec![0.0; self.bands];
        for row in x.chunks(self.bands) {
            for (c, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&self.mean)) {
                *c = v - m;
            }
            for j in 0..r {
                let mut acc = 0.0;
                for b in 0..self.bands {
                    acc += centered[b] * self.components[b * r + j];
                }
                out.push(acc);
            }
        }
        Ok(out)
    }

    /// `components · y + mean` for row-major `y[M×r]`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        let r = self.retained;
        if y.len() % r != 0 {
            return Err(Error::Shape {
                op: "pca_inverse",
                msg: format!("{} values is not a whole number of {r}-component rows", y.len()),
            });
        }
        let mut out = Vec::with_capacity(y.len() / r * self.bands);
        for row in y.chunks(r) {
            for b in 0..self.bands {
                let acc: f64 = (0..r).map(|j| self.components[b * r + j] * row[j]).sum();
                out.push(acc + self.mean[b]);
            }
        }
        Ok(out)
    }

    /// Replaces the hyperspectral cube of `raster` by its `r` component
    /// scores.
    pub fn transform_raster(&self, raster: &RasterPair) -> Result<RasterPair> {
        if raster.bands() != self.bands {
            return Err(Error::Shape {
                op: "pca_transform",
                msg: format!("raster has {} bands, model expects {}", raster.bands(), self.bands),
            });
        }
        let plane = raster.height() * raster.width();
        let pixels = pixel_rows(raster);
        let scores = self.transform(&pixels)?;
        let r = self.retained;
        let mut cube = vec![0f32; r * plane];
        for (i, row) in scores.chunks(r).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cube[j * plane + i] = v as f32;
            }
        }
        raster.with_hsi(Tensor::new([r, raster.height(), raster.width()], cube)?)
    }
}

/// Row-major `[H·W × bands]` matrix of pixel spectra.
pub fn pixel_rows(raster: &RasterPair) -> Vec<f64> {
    let plane = raster.height() * raster.width();
    let bands = raster.bands();
    let data = raster.hsi().data();
    let mut out = vec![0.0; plane * bands];
    for b in 0..bands {
        for i in 0..plane {
            out[i * bands + b] = data[b * plane + i] as f64;
        }
    }
    out
}

/// Fits `r` principal components to row-major `samples[M×bands]`.
///
/// Components are sorted by descending eigenvalue of the sample covariance
/// and sign-normalized so that each one's largest-magnitude entry is
/// positive.
pub fn pca_fit(samples: &[f64], bands: usize, r: usize) -> Result<PcaModel> {
    if bands == 0 || samples.len() % bands != 0 {
        return Err(Error::Shape {
            op: "pca_fit",
            msg: format!("{} values do not form {bands}-band rows", samples.len()),
        });
    }
    let m = samples.len() / bands;
    if r == 0 || r > bands {
        return Err(Error::Config(format!("cannot retain {r} components of {bands} bands")));
    }
    if m <= r {
        return Err(Error::Config(format!("{m} samples are too few for {r} components")));
    }
    let mut mean = vec![0.0; bands];
    for row in samples.chunks(bands) {
        mean.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);

    let mut cov = DMatrix::<f64>::zeros(bands, bands);
    for row in samples.chunks(bands) {
        for i in 0..bands {
            let di = row[i] - mean[i];
            for j in i..bands {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..bands {
        for j in i..bands {
            let v = cov[(i, j)] / (m - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut components = vec![0.0; bands * r];
    let mut variances = Vec::with_capacity(r);
    for (j, &src) in order.iter().take(r).enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = (0..bands).fold(0, |best, b| if col[b].abs() > col[best].abs() { b } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for b in 0..bands {
            components[b * r + j] = sign * col[b];
        }
        variances.push(eig.eigenvalues[src].max(0.0));
    }
    PcaModel::from_parts(mean, components, variances)
}
