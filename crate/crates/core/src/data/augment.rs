//! Randomized affine augmentation applied as a single resampling pass.
//!
//! Sampled parameters are composed about the image center as
//! `q = F(R · Sh · Z · p + t)`: zoom `Z`, shear `Sh` (`x += shear · y`),
//! rotation `R` (positive angles turn the image counter-clockwise on
//! screen), translation `t`, then the optional horizontal flip `F`. Each
//! output pixel is filled by bilinear sampling at the inverse-mapped source
//! position, with coordinates clamped to the nearest edge.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::DEFAULT_RESCALE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillMode {
    /// Replicate the closest edge pixel.
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Pixel scale applied when images are loaded.
    pub rescale: f64,
    /// Rotation drawn from `U(-rotation_deg, rotation_deg)`.
    pub rotation_deg: f64,
    /// Shifts drawn from `U(-shift_frac, shift_frac)` times width / height.
    pub shift_frac: f64,
    /// Shear factor drawn from `U(-shear_frac, shear_frac)`.
    pub shear_frac: f64,
    /// Isotropic scale drawn from `U(1 - zoom_frac, 1 + zoom_frac)`.
    pub zoom_frac: f64,
    /// Mirror left-right with probability 0.5.
    pub horizontal_flip: bool,
    pub fill: FillMode,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rescale: DEFAULT_RESCALE,
            rotation_deg: 40.0,
            shift_frac: 0.2,
            shear_frac: 0.2,
            zoom_frac: 0.2,
            horizontal_flip: true,
            fill: FillMode::Nearest,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All ranges zero and no flip.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            shift_frac: 0.0,
            shear_frac: 0.0,
            zoom_frac: 0.0,
            horizontal_flip: false,
            ..AugmentConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation", self.rotation_deg),
            ("shift", self.shift_frac),
            ("shear", self.shear_frac),
            ("zoom", self.zoom_frac),
        ];
        for (name, v) in ranges {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} range must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.zoom_frac >= 1.0 {
            return Err(Error::Config(format!(
                "zoom range {} must stay below 1",
                self.zoom_frac
            )));
        }
        if !(self.rescale.is_finite() && self.rescale > 0.0) {
            return Err(Error::Config(format!(
                "rescale must be positive, got {}",
                self.rescale
            )));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// Translation in pixels (x right, y down).
    pub tx: f64,
    pub ty: f64,
    pub shear: f64,
    pub zoom: f64,
    pub flip: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    // always consume one draw so streams stay aligned across configs
    let u: f64 = rng.gen();
    (2.0 * u - 1.0) * half_width
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            rotation_deg: 0.0,
            tx: 0.0,
            ty: 0.0,
            shear: 0.0,
            zoom: 1.0,
            flip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        cfg: &AugmentConfig,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let rotation_deg = uniform(rng, cfg.rotation_deg);
        let tx = uniform(rng, cfg.shift_frac) * width as f64;
        let ty = uniform(rng, cfg.shift_frac) * height as f64;
        let shear = uniform(rng, cfg.shear_frac);
        let zoom = 1.0 + uniform(rng, cfg.zoom_frac);
        let coin: f64 = rng.gen();
        AffineParams {
            rotation_deg,
            tx,
            ty,
            shear,
            zoom,
            flip: cfg.horizontal_flip && coin < 0.5,
        }
    }

    /// Linear part `R · Sh · Z` of the forward map on centered coordinates.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let rot = [[c, s], [-s, c]];
        let shear = [[1.0, self.shear], [0.0, 1.0]];
        let zoom = [[self.zoom, 0.0], [0.0, self.zoom]];
        matmul(matmul(rot, shear), zoom)
    }

    /// Destination position of a source pixel `(row, col)`.
    pub fn forward_point(&self, (row, col): (f64, f64), height: usize, width: usize) -> (f64, f64) {
        let (cy, cx) = center(height, width);
        let m = self.linear();
        let (x, y) = (col - cx, row - cy);
        let mut qx = m[0][0] * x + m[0][1] * y + self.tx;
        let qy = m[1][0] * x + m[1][1] * y + self.ty;
        if self.flip {
            qx = -qx;
        }
        (qy + cy, qx + cx)
    }
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn center(height: usize, width: usize) -> (f64, f64) {
    ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0)
}

/// Resamples a `[C, H, W]` image under `params`; output is clamped to [0, 1].
pub fn apply_affine(image: &Tensor<f32>, params: &AffineParams) -> Result<Tensor<f32>> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::shape(
                "augment",
                format!("expected [C, H, W], got {other:?}"),
            ))
        }
    };
    let m = params.linear();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::Config("augmentation matrix is singular".into()));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let (cy, cx) = center(h, w);
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        for col in 0..w {
            let mut qx = col as f64 - cx;
            let qy = r as f64 - cy;
            if params.flip {
                qx = -qx;
            }
            let (dx, dy) = (qx - params.tx, qy - params.ty);
            let sx = (inv[0][0] * dx + inv[0][1] * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (inv[1][0] * dx + inv[1][1] * dy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let p = &src[ch * h * w..][..h * w];
                let at = |y: usize, x: usize| p[y * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[ch * h * w + r * w + col] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Draws parameters from `cfg` and applies them.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let (h, w) = match image.shape() {
        &[_, h, w] => (h, w),
        other => {
            return Err(Error::shape(
                "augment",
                format!("expected [C, H, W], got {other:?}"),
            ))
        }
    };
    let params = AffineParams::sample(cfg, h, w, rng);
    apply_affine(image, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(r: usize, c: usize) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[3, 64, 64]).unwrap();
        for ch in 0..3 {
            t.data_mut()[ch * 4096 + r * 64 + c] = 1.0;
        }
        t
    }

    fn argmax(t: &Tensor<f32>) -> (usize, usize) {
        let i =
            t.data()[..4096]
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > t.data()[best] { i } else { best });
        (i / 64, i % 64)
    }

    #[test]
    fn zero_ranges_are_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::new(
            &[3, 64, 64],
            (0..3 * 4096).map(|i| (i % 97) as f32 / 96.0).collect(),
        )
        .unwrap();
        let out = augment(&img, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = one_hot(5, 12);
        let params = AffineParams {
            flip: true,
            ..AffineParams::identity()
        };
        let out = apply_affine(&img, &params).unwrap();
        assert_eq!(argmax(&out), (5, 64 - 1 - 12));
        assert_eq!(out.data()[5 * 64 + 51], 1.0);
    }

    #[test]
    fn quarter_turn_matches_point_oracle() {
        let (r, c) = (10usize, 20usize);
        let params = AffineParams {
            rotation_deg: 90.0,
            ..AffineParams::identity()
        };
        // counter-clockwise on screen: right of center moves up
        let (cy, cx) = (31.5, 31.5);
        let expected = (cy - (c as f64 - cx), cx + (r as f64 - cy));
        assert_eq!(expected, (43.0, 10.0));
        let predicted = params.forward_point((r as f64, c as f64), 64, 64);
        assert!((predicted.0 - expected.0).abs() < 1e-9 && (predicted.1 - expected.1).abs() < 1e-9);
        let out = apply_affine(&one_hot(r, c), &params).unwrap();
        assert_eq!(argmax(&out), (43, 10));
        assert!(out.data()[43 * 64 + 10] > 0.999);
    }

    #[test]
    fn seeded_runs_repeat() {
        let img = one_hot(30, 30);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_ranges_respect_config() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = AffineParams::sample(&cfg, 64, 64, &mut rng);
            assert!(p.rotation_deg.abs() <= 40.0);
            assert!(p.tx.abs() <= 0.2 * 64.0 && p.ty.abs() <= 0.2 * 64.0);
            assert!(p.shear.abs() <= 0.2);
            assert!((0.8..=1.2).contains(&p.zoom));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = AugmentConfig {
            shift_frac: -0.1,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            rescale: 0.0,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
