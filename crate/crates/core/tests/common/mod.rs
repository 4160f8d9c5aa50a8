//! Independent nested-loop metric oracles shared by the integration tests.

use kgan_core::ImageGray;

pub fn sf_oracle(img: &ImageGray) -> f64 {
    let (h, w) = (img.height(), img.width());
    let p = |r: usize, c: usize| 255.0 * img.get(r, c);
    let mut rf = 0.0;
    for r in 0..h {
        for c in 1..w {
            rf += (p(r, c) - p(r, c - 1)).powi(2);
        }
    }
    let mut cf = 0.0;
    for c in 0..w {
        for r in 1..h {
            cf += (p(r, c) - p(r - 1, c)).powi(2);
        }
    }
    ((rf + cf) / (h * w) as f64).sqrt()
}

/// Two-pass window statistics, no summed-area tables.
pub fn ssim_oracle(a: &ImageGray, b: &ImageGray) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    let k = 8;
    let mut acc = 0.0;
    let mut count = 0;
    for r0 in 0..=a.height() - k {
        for c0 in 0..=a.width() - k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in r0..r0 + k {
                for c in c0..c0 + k {
                    xs.push(a.get(r, c));
                    ys.push(b.get(r, c));
                }
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
            let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let dx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let dy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    num / (dx * dy).sqrt()
}

pub fn scd_oracle(f: &ImageGray, a: &ImageGray, b: &ImageGray) -> f64 {
    let diff = |p: &ImageGray, q: &ImageGray| -> Vec<f64> {
        p.pixels().iter().zip(q.pixels()).map(|(u, v)| u - v).collect()
    };
    pearson_oracle(&diff(f, b), a.pixels()) + pearson_oracle(&diff(f, a), b.pixels())
}
