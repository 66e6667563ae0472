//! Co-registered multi-source rasters, their file format, train/test splits
//! and a synthetic scene generator.

pub(crate) mod format;
mod split;
mod synth;

pub use format::{decode_raster, encode_raster, read_raster, write_raster, RASTER_MAGIC, RASTER_VERSION};
pub use split::{stratified_split, SplitSpec, MAX_TRAIN_FRACTION};
pub use synth::{synth_generate, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperspectral cube, auxiliary (SAR or LiDAR) raster and label map on one
/// pixel grid. Label 0 marks unlabeled pixels; classes are `1..=C`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterPair {
    hsi: Tensor<f32>,
    aux: Tensor<f32>,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl RasterPair {
    /// `hsi` is `[bands×H×W]`, `aux` is `[channels×H×W]`, `labels` holds
    /// `H·W` entries in row-major order.
    pub fn new(hsi: Tensor<f32>, aux: Tensor<f32>, labels: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        if hsi.rank() != 3 || aux.rank() != 3 || hsi.shape()[1..] != aux.shape()[1..] {
            return Err(Error::InvalidData(format!(
                "hsi {:?} and aux {:?} are not co-registered",
                hsi.shape(),
                aux.shape()
            )));
        }
        let (h, w) = (hsi.shape()[1], hsi.shape()[2]);
        if labels.len() != h * w {
            return Err(Error::InvalidData(format!(
                "label map has {} entries for a {h}x{w} grid",
                labels.len()
            )));
        }
        if class_names.is_empty() || class_names.len() > u16::MAX as usize {
            return Err(Error::InvalidData(format!("{} classes", class_names.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > class_names.len()) {
            return Err(Error::InvalidData(format!(
                "label {bad} exceeds class count {}",
                class_names.len()
            )));
        }
        Ok(RasterPair {
            hsi,
            aux,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.hsi.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.hsi.shape()[2]
    }

    pub fn bands(&self) -> usize {
        self.hsi.shape()[0]
    }

    pub fn aux_channels(&self) -> usize {
        self.aux.shape()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn hsi(&self) -> &Tensor<f32> {
        &self.hsi
    }

    pub fn aux(&self) -> &Tensor<f32> {
        &self.aux
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Row-major indices of all pixels with a nonzero label.
    pub fn labeled_pixels(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] > 0).collect()
    }

    /// Spectrum of one pixel (row-major index).
    pub fn hsi_pixel(&self, index: usize) -> Vec<f32> {
        let plane = self.height() * self.width();
        (0..self.bands()).map(|b| self.hsi.data()[b * plane + index]).collect()
    }

    pub fn aux_pixel(&self, index: usize) -> Vec<f32> {
        let plane = self.height() * self.width();
        (0..self.aux_channels()).map(|c| self.aux.data()[c * plane + index]).collect()
    }

    /// Copy with the hyperspectral cube replaced (e.g. by its reduced form).
    pub fn with_hsi(&self, hsi: Tensor<f32>) -> Result<Self> {
        RasterPair::new(hsi, self.aux.clone(), self.labels.clone(), self.class_names.clone())
    }

    /// Copy with every auxiliary value set to zero.
    pub fn with_aux_zeroed(&self) -> Self {
        RasterPair {
            aux: Tensor::zeros(self.aux.shape().to_vec()),
            ..self.clone()
        }
    }
}
