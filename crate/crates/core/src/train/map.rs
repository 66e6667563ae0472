//! Classification maps as binary portable pixmaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Colors for classes 1..=20; larger class ids wrap around.
pub const PALETTE: [[u8; 3]; 20] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
];

/// Class 0 (unlabeled) is black.
pub fn class_color(class: usize) -> [u8; 3] {
    if class == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(class - 1) % PALETTE.len()]
    }
}

/// P6 image of a row-major map of 1-based class ids.
pub fn render_ppm(height: usize, width: usize, classes: &[usize]) -> Result<Vec<u8>> {
    if height == 0 || width == 0 || classes.len() != height * width {
        return Err(Error::Contract(format!(
            "{} classes for a {height}x{width} map",
            classes.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * classes.len());
    for &c in classes {
        out.extend_from_slice(&class_color(c));
    }
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, height: usize, width: usize, classes: &[usize]) -> Result<()> {
    fs::write(path, render_ppm(height, width, classes)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixels() {
        let img = render_ppm(1, 3, &[0, 1, 21]).unwrap();
        let header = b"P6\n3 1\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(&img[header.len()..], &[0, 0, 0, 230, 25, 75, 230, 25, 75]);
        assert!(render_ppm(2, 2, &[1]).is_err());
    }
}
