use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest accepted training fraction; the test split must stay non-empty.
pub const MAX_TRAIN_FRACTION: f64 = 0.9;

/// Disjoint train and test pixel indices (row-major, ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Samples `max(1, round(fraction · n_c))` training pixels without
/// replacement from every class `c`; the rest form the test split.
pub fn stratified_split(labels: &[u16], n_classes: usize, fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction <= MAX_TRAIN_FRACTION) {
        return Err(Error::Split(format!(
            "train fraction {fraction} outside (0, {MAX_TRAIN_FRACTION}]; the test split would be empty"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        match l as usize {
            0 => {}
            c if c <= n_classes => by_class[c - 1].push(i),
            c => return Err(Error::Split(format!("label {c} exceeds class count {n_classes}"))),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut pixels) in by_class.into_iter().enumerate() {
        if pixels.len() < 2 {
            return Err(Error::Split(format!(
                "class {} has {} labeled pixels, at least 2 are required",
                c + 1,
                pixels.len()
            )));
        }
        let take = ((fraction * pixels.len() as f64).round() as usize).max(1);
        pixels.shuffle(&mut rng);
        train.extend_from_slice(&pixels[..take]);
        test.extend_from_slice(&pixels[take..]);
    }
    if test.is_empty() {
        return Err(Error::Split("test split is empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train_fraction: fraction,
        seed,
        train,
        test,
    })
}
