//! Random affine augmentation: flip, rotation, shear, zoom and shift as one
//! warp about the image centre.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::sample_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub flip_probability: f64,
    /// Rotation drawn from `±rotation_deg`.
    pub rotation_deg: f64,
    /// Per-axis shift drawn from `±shift` of the extent.
    pub shift: f64,
    pub shear_deg: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            flip_probability: 0.5,
            rotation_deg: 15.0,
            shift: 0.10,
            shear_deg: 10.0,
            zoom_min: 0.90,
            zoom_max: 1.10,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_probability)
            && (0.0..180.0).contains(&self.rotation_deg)
            && (0.0..1.0).contains(&self.shift)
            && (0.0..80.0).contains(&self.shear_deg)
            && self.zoom_min > 0.0
            && self.zoom_min <= self.zoom_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation ranges {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub rotation_deg: f64,
    /// Fractions of width and height.
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear_deg: f64,
    pub zoom: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip: false,
            rotation_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            shear_deg: 0.0,
            zoom: 1.0,
        }
    }

    pub fn sample(ranges: &AugmentRanges, rng: &mut impl Rng) -> Self {
        let sym = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        AugmentParams {
            flip: rng.random_bool(ranges.flip_probability),
            rotation_deg: sym(rng, ranges.rotation_deg),
            shift_x: sym(rng, ranges.shift),
            shift_y: sym(rng, ranges.shift),
            shear_deg: sym(rng, ranges.shear_deg),
            zoom: if ranges.zoom_max > ranges.zoom_min {
                rng.random_range(ranges.zoom_min..=ranges.zoom_max)
            } else {
                ranges.zoom_min
            },
        }
    }

    /// Forward 2×2 map `flip · rotate · shear · zoom` on `(x, y)`.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let f = if self.flip { -1.0 } else { 1.0 };
        let z = self.zoom;
        // rotate · shear = [[c, c·k − s], [s, s·k + c]]
        let rs = [[c, c * k - s], [s, s * k + c]];
        [[f * rs[0][0] * z, f * rs[0][1] * z], [rs[1][0] * z, rs[1][1] * z]]
    }
}

/// Warp `(H, W, 3)` by `params`, sampling bilinearly with edge clamping.
pub fn augment(img: &Tensor, params: &AugmentParams) -> Result<Tensor> {
    let &[h, w, 3] = img.shape() else {
        return Err(Error::Shape(format!("expected (H, W, 3) image, got {:?}", img.shape())));
    };
    let [[a, b], [c, d]] = params.linear();
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(Error::Numeric("augmentation warp is singular".into()));
    }
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let (tx, ty) = (params.shift_x * w as f64, params.shift_y * h as f64);
    let mut out = Vec::with_capacity(h * w * 3);
    let mut px = [0f32; 3];
    for oy in 0..h {
        let dy = oy as f64 - cy - ty;
        for ox in 0..w {
            let dx = ox as f64 - cx - tx;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            sample_bilinear(img.data(), h, w, sy, sx, &mut px);
            out.extend_from_slice(&px);
        }
    }
    Tensor::from_vec(&[h, w, 3], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use crate::seed;

    fn img() -> Tensor {
        random_tensor(&[99, 99, 3], 8, 0.0, 255.0).cast()
    }

    #[test]
    fn identity_is_bit_exact() {
        let x = img();
        assert_eq!(augment(&x, &AugmentParams::identity()).unwrap(), x);
    }

    #[test]
    fn double_flip_restores() {
        let x = img();
        let flip = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        let once = augment(&x, &flip).unwrap();
        assert_ne!(once, x);
        let twice = augment(&once, &flip).unwrap();
        for (a, b) in twice.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        // Mirror: column 0 of the flip is column 98 of the source.
        assert_eq!(&once.data()[..3], &x.data()[98 * 3..99 * 3]);
    }

    #[test]
    fn constant_images_stay_constant() {
        let x = Tensor::from_vec(&[99, 99, 3], [12.0, 200.0, 77.0].repeat(99 * 99)).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            let p = AugmentParams::sample(&AugmentRanges::default(), &mut rng);
            assert_eq!(augment(&x, &p).unwrap(), x, "{p:?}");
        }
    }

    #[test]
    fn draws_respect_ranges_and_seed() {
        let r = AugmentRanges::default();
        let draw = |s| {
            let mut rng = seed::rng(s);
            (0..200)
                .map(|_| AugmentParams::sample(&r, &mut rng))
                .collect::<Vec<_>>()
        };
        let a = draw(1);
        assert_eq!(a, draw(1));
        for p in &a {
            assert!(p.rotation_deg.abs() <= 15.0 && p.shear_deg.abs() <= 10.0);
            assert!(p.shift_x.abs() <= 0.1 && p.shift_y.abs() <= 0.1);
            assert!((0.9..=1.1).contains(&p.zoom));
        }
        let flips = a.iter().filter(|p| p.flip).count();
        assert!((60..140).contains(&flips));
        let x = img();
        assert_eq!(augment(&x, &a[0]).unwrap(), augment(&x, &draw(1)[0]).unwrap());
    }

    #[test]
    fn range_validation() {
        assert!(AugmentRanges::default().validate().is_ok());
        let bad = AugmentRanges {
            zoom_min: 1.2,
            ..AugmentRanges::default()
        };
        assert!(bad.validate().is_err());
    }
}
