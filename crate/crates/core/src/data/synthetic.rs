//! Seeded two-class image generator used by tests and smoke runs.
//!
//! `Normal` images are uniform noise. `TB` images carry the same noise plus
//! one bright Gaussian blob placed in the central half of the frame.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

use super::batch::Sample;
use super::image::save_png;
use super::manifest::Label;

/// Upper bound of the background noise.
pub const NOISE_MAX: f64 = 0.6;

/// One `[3, size, size]` image with pixels in [0, 1].
pub fn generate_image(label: Label, size: usize, seed: u64, index: u64) -> Result<Tensor<f32>> {
    if size < 8 {
        return Err(Error::Config(format!(
            "synthetic images need size >= 8, got {size}"
        )));
    }
    let mut r = rng::stream(seed, &[label.index() as u64, index]);
    let mut gray: Vec<f64> = (0..size * size)
        .map(|_| r.gen::<f64>() * NOISE_MAX)
        .collect();
    if label == Label::Tb {
        let lo = size as f64 * 0.25;
        let hi = size as f64 * 0.75;
        let cy = r.gen_range(lo..hi);
        let cx = r.gen_range(lo..hi);
        let sigma = r.gen_range(4.0..8.0) * size as f64 / 64.0;
        let amp = r.gen_range(0.6..1.0);
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                gray[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let plane: Vec<f32> = gray.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(&[3, size, size], data)
}

/// `n_tb` positives followed by `n_normal` negatives, in memory.
pub fn synthetic_samples(
    n_tb: usize,
    n_normal: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(n_tb + n_normal);
    for (label, n) in [(Label::Tb, n_tb), (Label::Normal, n_normal)] {
        for i in 0..n {
            out.push(Sample {
                pixels: generate_image(label, size, seed, i as u64)?,
                label,
                path: format!("synthetic/{}/{i:05}.png", label.as_str()),
            });
        }
    }
    Ok(out)
}

/// Writes `<root>/TB/*.png` and `<root>/Normal/*.png`.
///
/// PNG stores 8-bit pixels, so files decode to the in-memory images rounded
/// to the nearest 1/255.
pub fn write_synthetic_dataset(
    root: impl AsRef<Path>,
    n_tb: usize,
    n_normal: usize,
    size: usize,
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    for (label, n) in [(Label::Tb, n_tb), (Label::Normal, n_normal)] {
        let dir = root.join(label.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n {
            let img = generate_image(label, size, seed, i as u64)?;
            save_png(dir.join(format!("{i:05}.png")), &img)?;
        }
    }
    Ok(())
}
