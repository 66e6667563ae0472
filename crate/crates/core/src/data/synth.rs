//! Synthetic two-source scenes with a controlled fusion dependence.
//!
//! Classes occupy rectangular tiles separated by unlabeled background
//! strips. Class `c` (0-based) gets hyperspectral signature group `c / 2`
//! and auxiliary level `c % 2`: two classes in the same signature group are
//! told apart only by the auxiliary raster, and classes with the same level
//! only by the spectrum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RasterPair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HSI_NOISE: f64 = 0.05;
const AUX_NOISE: f64 = 0.05;
const BASELINE: f64 = 0.2;
const BUMP_HEIGHT: f64 = 0.8;
const AUX_LEVELS: [f64; 2] = [0.25, 0.75];
const AUX_BACKGROUND: f64 = 0.5;
const TEXTURE_AMPLITUDE: f64 = 0.1;
/// (border margin, gap between tiles), tried in order until tiles fit.
const SPACINGS: [(usize, usize); 3] = [(2, 4), (1, 2), (0, 1)];
const MIN_TILE: usize = 2;

/// Generator arguments. Defaults give the 6-class, 64×64, 32-band,
/// 2-channel reference scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub aux_channels: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 6,
            height: 64,
            width: 64,
            bands: 32,
            aux_channels: 2,
            seed: 7,
        }
    }
}

struct Layout {
    cols: usize,
    margin: usize,
    gap: usize,
    tile_h: usize,
    tile_w: usize,
}

impl Layout {
    fn fit(n_classes: usize, height: usize, width: usize) -> Result<Self> {
        let cols = (n_classes as f64).sqrt().ceil() as usize;
        let rows = n_classes.div_ceil(cols);
        let tile = |extent: usize, count: usize, margin: usize, gap: usize| {
            extent
                .checked_sub(2 * margin + (count - 1) * gap)
                .map(|free| free / count)
                .filter(|&t| t >= MIN_TILE)
        };
        for (margin, gap) in SPACINGS {
            if let (Some(tile_h), Some(tile_w)) = (tile(height, rows, margin, gap), tile(width, cols, margin, gap)) {
                return Ok(Layout {
                    cols,
                    margin,
                    gap,
                    tile_h,
                    tile_w,
                });
            }
        }
        Err(Error::Config(format!(
            "cannot pack {n_classes} class regions of at least {MIN_TILE}x{MIN_TILE} into {height}x{width}"
        )))
    }

    fn label_map(&self, n_classes: usize, height: usize, width: usize) -> Vec<u16> {
        let mut labels = vec![0u16; height * width];
        for class in 0..n_classes {
            let (tr, tc) = (class / self.cols, class % self.cols);
            let r0 = self.margin + tr * (self.tile_h + self.gap);
            let c0 = self.margin + tc * (self.tile_w + self.gap);
            for r in r0..r0 + self.tile_h {
                for c in c0..c0 + self.tile_w {
                    labels[r * width + c] = class as u16 + 1;
                }
            }
        }
        labels
    }
}

/// Mean spectrum of signature group `group` out of `groups`; `None` is the
/// flat background.
fn signature(group: Option<usize>, groups: usize, bands: usize) -> Vec<f64> {
    match group {
        None => vec![BASELINE; bands],
        Some(g) => {
            let center = (g as f64 + 0.5) / groups as f64 * (bands as f64 - 1.0);
            let width = (bands as f64 / (3.0 * groups as f64)).max(0.5);
            (0..bands)
                .map(|b| {
                    let d = (b as f64 - center) / width;
                    BASELINE + BUMP_HEIGHT * (-0.5 * d * d).exp()
                })
                .collect()
        }
    }
}

fn texture(row: usize, col: usize, channel: usize) -> f64 {
    let phase = std::f64::consts::TAU * (row as f64 / 7.0 + col as f64 / 11.0) + channel as f64 * std::f64::consts::FRAC_PI_3;
    TEXTURE_AMPLITUDE * phase.sin()
}

/// Generates a deterministic scene for `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<RasterPair> {
    let SynthSpec {
        n_classes,
        height,
        width,
        bands,
        aux_channels,
        seed,
    } = *spec;
    if n_classes < 2 || n_classes > u16::MAX as usize {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    if bands == 0 || aux_channels == 0 || height == 0 || width == 0 {
        return Err(Error::Config("all extents must be positive".into()));
    }
    let layout = Layout::fit(n_classes, height, width)?;
    let labels = layout.label_map(n_classes, height, width);

    let groups = n_classes.div_ceil(2);
    let spectra: Vec<Vec<f64>> = std::iter::once(signature(None, groups, bands))
        .chain((0..n_classes).map(|c| signature(Some(c / 2), groups, bands)))
        .collect();
    let levels: Vec<f64> = std::iter::once(AUX_BACKGROUND)
        .chain((0..n_classes).map(|c| AUX_LEVELS[c % 2]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hsi_noise = Normal::new(0.0, HSI_NOISE).expect("valid sigma");
    let aux_noise = Normal::new(0.0, AUX_NOISE).expect("valid sigma");
    let plane = height * width;

    let mut hsi = Vec::with_capacity(bands * plane);
    for b in 0..bands {
        for &label in &labels {
            let v = spectra[label as usize][b] + hsi_noise.sample(&mut rng);
            hsi.push(v as f32);
        }
    }
    let mut aux = Vec::with_capacity(aux_channels * plane);
    for ch in 0..aux_channels {
        for (i, &label) in labels.iter().enumerate() {
            let v = levels[label as usize] + texture(i / width, i % width, ch) + aux_noise.sample(&mut rng);
            aux.push(v as f32);
        }
    }

    RasterPair::new(
        Tensor::new([bands, height, width], hsi)?,
        Tensor::new([aux_channels, height, width], aux)?,
        labels,
        (1..=n_classes).map(|c| format!("class-{c}")).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let spec = SynthSpec::default();
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert!(a.hsi().bit_eq(b.hsi()) && a.aux().bit_eq(b.aux()));
        assert_eq!(a.labels(), b.labels());
        let c = synth_generate(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert!(!a.hsi().bit_eq(c.hsi()));
    }

    #[test]
    fn default_scene_has_large_balanced_regions() {
        let scene = synth_generate(&SynthSpec::default()).unwrap();
        let mut counts = vec![0usize; 7];
        for &l in scene.labels() {
            counts[l as usize] += 1;
        }
        assert!(counts[0] > 0, "background strips exist");
        for c in 1..=6 {
            assert!(counts[c] >= 11 * 11, "class {c} has {} pixels", counts[c]);
            assert_eq!(counts[c], counts[1]);
        }
    }

    #[test]
    fn tiny_grids_fall_back_or_fail() {
        let small = SynthSpec {
            n_classes: 2,
            height: 4,
            width: 6,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&small).is_ok());
        let impossible = SynthSpec {
            n_classes: 9,
            height: 4,
            width: 4,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_generate(&impossible), Err(Error::Config(_))));
        assert!(synth_generate(&SynthSpec { n_classes: 1, ..SynthSpec::default() }).is_err());
    }
}
