//! Paired ellipse phantoms with two contrast renderings.
//!
//! A seeded set of 3 to 7 ellipses defines a density map `d` in `[0, 1]`:
//! one large "head" ellipse that bounds the support, plus inner ellipses
//! that add or remove density inside it. The two modalities render the
//! same `d`:
//!
//! - A (soft-tissue emphasis): `0.15 + 0.8 * (1 - exp(-3d)) / (1 - exp(-3))`
//!   plus a smooth sinusoidal texture of amplitude 0.03;
//! - B (bone/edge emphasis): `0.12 + 0.55 d^2 + 0.25 [d > 0.75] + 0.6 |grad d|`.
//!
//! Outside the support A is a dim constant background and B is 0.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::image::ImageGray;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

use super::ImagePair;

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Sizes accepted by the phantom generator.
pub fn check_size(size: usize) -> Result<()> {
    if (8..=256).contains(&size) && size.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "unsupported phantom size {size}; expected a power of two in 8..=256"
        )))
    }
}

pub fn generate_phantom_pair(seed: u64, size: usize) -> Result<ImagePair> {
    generate_with_id(seed, size, 0)
}

pub(crate) fn generate_with_id(seed: u64, size: usize, pair_id: u64) -> Result<ImagePair> {
    check_size(size)?;
    let mut rng = rng_from_seed(seed);
    let count = rng.random_range(3..=7usize);

    let theta = rng.random_range(-0.3..0.3f64);
    let head = Ellipse {
        cx: rng.random_range(-0.05..0.05),
        cy: rng.random_range(-0.05..0.05),
        a: rng.random_range(0.6..0.85),
        b: rng.random_range(0.7..0.9),
        cos: theta.cos(),
        sin: theta.sin(),
        intensity: rng.random_range(0.45..0.7),
    };
    let mut inner = Vec::with_capacity(count - 1);
    for _ in 1..count {
        let theta = rng.random_range(0.0..PI);
        inner.push(Ellipse {
            cx: head.cx + rng.random_range(-0.45..0.45),
            cy: head.cy + rng.random_range(-0.5..0.5),
            a: rng.random_range(0.08..0.35),
            b: rng.random_range(0.08..0.35),
            cos: theta.cos(),
            sin: theta.sin(),
            intensity: rng.random_range(-0.4..0.45),
        });
    }
    let background = rng.random_range(0.01..0.03);
    let (fx, fy) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
    let (px, py) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));

    let coord = |i: usize| (i as f64 + 0.5) / size as f64 * 2.0 - 1.0;
    let n = size * size;
    let mut support = vec![false; n];
    let mut density = vec![0.0; n];
    for r in 0..size {
        let y = coord(r);
        for c in 0..size {
            let x = coord(c);
            if !head.contains(x, y) {
                continue;
            }
            let mut d = head.intensity;
            for e in &inner {
                if e.contains(x, y) {
                    d += e.intensity;
                }
            }
            support[r * size + c] = true;
            density[r * size + c] = d.clamp(0.0, 1.0);
        }
    }

    let soft_norm = 1.0 - (-3.0f64).exp();
    let mut a = vec![background; n];
    let mut b = vec![0.0; n];
    for r in 0..size {
        let y = coord(r);
        for c in 0..size {
            let i = r * size + c;
            if !support[i] {
                continue;
            }
            let x = coord(c);
            let d = density[i];
            let texture = 0.03 * (fx * x + px).sin() * (fy * y + py).cos();
            a[i] = (0.15 + 0.8 * (1.0 - (-3.0 * d).exp()) / soft_norm + texture).clamp(0.0, 1.0);

            let at = |rr: usize, cc: usize| density[rr * size + cc];
            let gx = (at(r, (c + 1).min(size - 1)) - at(r, c.saturating_sub(1))) / 2.0;
            let gy = (at((r + 1).min(size - 1), c) - at(r.saturating_sub(1), c)) / 2.0;
            let grad = (gx * gx + gy * gy).sqrt();
            let bone = if d > 0.75 { 0.25 } else { 0.0 };
            b[i] = (0.12 + 0.55 * d * d + bone + 0.6 * grad).clamp(0.0, 1.0);
        }
    }

    Ok(ImagePair {
        pair_id,
        seed,
        modality_a: ImageGray::new(size, size, a)?,
        modality_b: ImageGray::new(size, size, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(img: &ImageGray) -> Vec<bool> {
        img.pixels().iter().map(|&p| p > 0.1).collect()
    }

    pub(crate) fn iou(a: &[bool], b: &[bool]) -> f64 {
        let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        for size in [8, 16, 32, 64] {
            let p = generate_phantom_pair(42, size).unwrap();
            assert_eq!(p, generate_phantom_pair(42, size).unwrap());
            assert_eq!(p.modality_a.height(), size);
            for img in [&p.modality_a, &p.modality_b] {
                assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        assert_ne!(generate_phantom_pair(1, 16).unwrap(), generate_phantom_pair(2, 16).unwrap());
    }

    #[test]
    fn unsupported_sizes() {
        for s in [0, 4, 24, 100, 512] {
            assert!(generate_phantom_pair(1, s).is_err());
        }
    }

    #[test]
    fn modalities_share_support() {
        for seed in 0..100 {
            let p = generate_phantom_pair(seed, 32).unwrap();
            let v = iou(&mask(&p.modality_a), &mask(&p.modality_b));
            assert!(v >= 0.8, "seed {seed}: IoU {v}");
        }
    }

    #[test]
    fn modalities_differ_in_contrast() {
        let p = generate_phantom_pair(3, 32).unwrap();
        assert_ne!(p.modality_a.pixels(), p.modality_b.pixels());
    }
}
