//! Square neighborhoods around labeled pixels, mirror-padded at borders.

use crate::data::RasterPair;
use crate::error::{Error, Result};

/// Neighborhood of one labeled pixel from both sources.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// Row-major pixel index of the center.
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub label: u16,
    /// `bands × p × p`.
    pub hsi: Vec<f32>,
    /// `channels × p × p`.
    pub aux: Vec<f32>,
}

/// Reflects an out-of-range coordinate back into `0..n` without repeating
/// the edge sample (`-1 → 1`, `n → n − 2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn window(plane_data: &[f32], planes: usize, height: usize, width: usize, row: usize, col: usize, p: usize) -> Vec<f32> {
    let half = (p / 2) as isize;
    let plane = height * width;
    let mut out = Vec::with_capacity(planes * p * p);
    for k in 0..planes {
        let base = k * plane;
        for dr in -half..=half {
            let r = reflect(row as isize + dr, height);
            for dc in -half..=half {
                let c = reflect(col as isize + dc, width);
                out.push(plane_data[base + r * width + c]);
            }
        }
    }
    out
}

/// Patch centered on pixel `index` (any pixel, labeled or not).
pub fn patch_at(raster: &RasterPair, index: usize, patch_size: usize) -> Result<PatchSample> {
    check_patch_size(patch_size)?;
    let (h, w) = (raster.height(), raster.width());
    if index >= h * w {
        return Err(Error::Contract(format!("pixel {index} outside {h}x{w} raster")));
    }
    let (row, col) = (index / w, index % w);
    Ok(PatchSample {
        index,
        row,
        col,
        label: raster.labels()[index],
        hsi: window(raster.hsi().data(), raster.bands(), h, w, row, col, patch_size),
        aux: window(raster.aux().data(), raster.aux_channels(), h, w, row, col, patch_size),
    })
}

fn check_patch_size(patch_size: usize) -> Result<()> {
    if patch_size % 2 == 0 {
        return Err(Error::Config(format!("patch size {patch_size} must be odd")));
    }
    Ok(())
}

/// One sample per labeled pixel, in row-major order.
pub fn extract_patches(raster: &RasterPair, patch_size: usize) -> Result<Vec<PatchSample>> {
    check_patch_size(patch_size)?;
    let labeled = raster.labeled_pixels();
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    labeled.into_iter().map(|i| patch_at(raster, i, patch_size)).collect()
}
