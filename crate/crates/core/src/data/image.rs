use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 64;
pub const DEFAULT_RESCALE: f64 = 1.0 / 255.0;

/// Bilinear resize of a channel-first buffer with half-pixel centers
/// (`src = (dst + 0.5) * in / out - 0.5`), clamping samples to the border.
pub fn resize_bilinear(
    src: &[f64],
    channels: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    assert_eq!(src.len(), channels * h * w);
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = axis(oh, h);
    let cols = axis(ow, w);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &src[c * h * w..][..h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let top = plane[r0 * w + c0] * (1.0 - fx) + plane[r0 * w + c1] * fx;
                let bottom = plane[r1 * w + c0] * (1.0 - fx) + plane[r1 * w + c1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Decodes an 8-bit RGB or grayscale image, resizes it to `size`×`size`
/// and multiplies by `rescale`, giving a `[3, size, size]` tensor.
pub fn load_image(path: impl AsRef<Path>, size: usize, rescale: f64) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = ::image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut chw = vec![0.0f64; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            chw[c * h * w + i] = px[c] as f64;
        }
    }
    let resized = resize_bilinear(&chw, 3, (h, w), (size, size));
    let data = resized
        .into_iter()
        .map(|v| (v.clamp(0.0, 255.0) * rescale) as f32)
        .collect();
    Tensor::new(&[3, size, size], data)
}

/// Writes a `[3, H, W]` tensor with values in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_png(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let [c, h, w] = match image.shape() {
        &[c, h, w] => [c, h, w],
        other => {
            return Err(Error::shape(
                "save_png",
                format!("expected [3, H, W], got {other:?}"),
            ))
        }
    };
    if c != 3 {
        return Err(Error::shape(
            "save_png",
            format!("expected 3 channels, got {c}"),
        ));
    }
    let d = image.data();
    let mut buf = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            buf.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    ::image::save_buffer(path, &buf, w as u32, h as u32, ::image::ColorType::Rgb8).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_to_one_samples_the_center() {
        let out = resize_bilinear(&[0.0, 255.0, 255.0, 255.0], 1, (2, 2), (1, 1));
        assert_eq!(out, vec![191.25]);
        assert!((out[0] * DEFAULT_RESCALE - 0.75).abs() < 1e-12);
    }

    #[test]
    fn constant_image_stays_constant() {
        let out = resize_bilinear(&vec![7.0; 3 * 10 * 10], 3, (10, 10), (4, 4));
        assert!(out.iter().all(|v| *v == 7.0));
    }

    #[test]
    fn white_and_black_png() {
        let dir = tempfile::tempdir().unwrap();
        for (value, expected) in [(255u8, 1.0f32), (0, 0.0)] {
            let p = dir.path().join(format!("{value}.png"));
            let buf = vec![value; 512 * 512 * 3];
            ::image::save_buffer(&p, &buf, 512, 512, ::image::ColorType::Rgb8).unwrap();
            let t = load_image(&p, IMAGE_SIZE, DEFAULT_RESCALE).unwrap();
            assert_eq!(t.shape(), &[3, 64, 64]);
            assert!(t.data().iter().all(|v| *v == expected));
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let buf: Vec<u8> = (0..16 * 16).map(|i| (i % 256) as u8).collect();
        ::image::save_buffer(&p, &buf, 16, 16, ::image::ColorType::L8).unwrap();
        let t = load_image(&p, 8, DEFAULT_RESCALE).unwrap();
        let plane = 64;
        assert_eq!(&t.data()[..plane], &t.data()[plane..2 * plane]);
        assert_eq!(&t.data()[..plane], &t.data()[2 * plane..]);
    }

    #[test]
    fn undecodable_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not an image").unwrap();
        match load_image(&p, 64, DEFAULT_RESCALE) {
            Err(Error::Image { path, .. }) => assert_eq!(path, p),
            other => panic!("expected image error, got {other:?}"),
        }
    }
}
