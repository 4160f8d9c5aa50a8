//! Image quality measures.
//!
//! - SF: `sqrt(RF^2 + CF^2)` with `RF^2 = sum (p(i,j) - p(i,j-1))^2 / (H W)`
//!   and `CF` over columns, on pixels scaled to `[0, 255]`.
//! - SSIM: mean over all 8x8 windows (stride 1, uniform weights) of the
//!   luminance-contrast-structure product, `C1 = 0.01^2`, `C2 = 0.03^2`.
//! - SCD: `r(F - B, A) + r(F - A, B)` with Pearson `r`; a zero-variance
//!   side makes that term 0.

use crate::data::ImagePair;
use crate::gan::{Conditioning, GanModel};
use crate::image::ImageGray;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Mean squared deviation at or below this counts as zero variance.
const ZERO_VARIANCE: f64 = 1e-20;

pub const CSV_HEADER: &str = "id,sf,ssim,scd";

pub fn spatial_frequency(img: &ImageGray) -> Result<f64> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("spatial frequency needs at least 2x2, got {h}x{w}")));
    }
    let mut rows = 0.0;
    let mut cols = 0.0;
    for r in 0..h {
        for c in 0..w {
            let p = img.get(r, c) * 255.0;
            if c > 0 {
                let d = p - img.get(r, c - 1) * 255.0;
                rows += d * d;
            }
            if r > 0 {
                let d = p - img.get(r - 1, c) * 255.0;
                cols += d * d;
            }
        }
    }
    let n = (h * w) as f64;
    Ok((rows / n + cols / n).sqrt())
}

/// Summed-area table with a zero first row and column.
fn integral(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let stride = w + 1;
    let mut s = vec![0.0; (h + 1) * stride];
    for r in 0..h {
        let mut run = 0.0;
        for c in 0..w {
            run += f(r, c);
            s[(r + 1) * stride + c + 1] = s[r * stride + c + 1] + run;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let stride = w + 1;
    s[(r + k) * stride + c + k] - s[r * stride + c + k] - s[(r + k) * stride + c] + s[r * stride + c]
}

pub fn ssim(a: &ImageGray, b: &ImageGray) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::shape(format!(
            "ssim of {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::shape(format!("ssim needs at least {k}x{k}, got {h}x{w}")));
    }
    let sa = integral(h, w, |r, c| a.get(r, c));
    let sb = integral(h, w, |r, c| b.get(r, c));
    let saa = integral(h, w, |r, c| a.get(r, c) * a.get(r, c));
    let sbb = integral(h, w, |r, c| b.get(r, c) * b.get(r, c));
    let sab = integral(h, w, |r, c| a.get(r, c) * b.get(r, c));
    let n = (k * k) as f64;
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let ma = window_sum(&sa, w, r, c, k) / n;
            let mb = window_sum(&sb, w, r, c, k) / n;
            let va = window_sum(&saa, w, r, c, k) / n - ma * ma;
            let vb = window_sum(&sbb, w, r, c, k) / n - mb * mb;
            let cov = window_sum(&sab, w, r, c, k) / n - ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx / n <= ZERO_VARIANCE || syy / n <= ZERO_VARIANCE {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

pub fn scd(fused: &ImageGray, src_a: &ImageGray, src_b: &ImageGray) -> Result<f64> {
    if !fused.same_size(src_a) || !fused.same_size(src_b) {
        return Err(Error::shape("scd inputs must share dimensions"));
    }
    let (f, a, b) = (fused.pixels(), src_a.pixels(), src_b.pixels());
    if f.len() < 4 {
        return Err(Error::shape("scd needs at least 2x2 images"));
    }
    let f_minus_b: Vec<f64> = f.iter().zip(b).map(|(f, b)| f - b).collect();
    let f_minus_a: Vec<f64> = f.iter().zip(a).map(|(f, a)| f - a).collect();
    Ok(pearson(&f_minus_b, a) + pearson(&f_minus_a, b))
}

/// Anything that maps a modality-A image to a synthesised image.
pub trait Synthesizer {
    fn synthesize(&self, source: &ImageGray) -> Result<ImageGray>;
}

impl Synthesizer for GanModel {
    fn synthesize(&self, source: &ImageGray) -> Result<ImageGray> {
        if self.conditioning != Conditioning::Image {
            return Err(Error::invalid("only image-conditioned models can be evaluated on pairs"));
        }
        if source.height() != self.image_size || source.width() != self.image_size {
            return Err(Error::shape(format!(
                "model expects {0}x{0} images, got {1}x{2}",
                self.image_size,
                source.height(),
                source.width()
            )));
        }
        let out = self.generate(&source.to_tensor())?;
        ImageGray::from_tensor(&out, source.height(), source.width())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub sf: f64,
    pub ssim: f64,
    pub scd: f64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 3] {
        [self.sf, self.ssim, self.scd]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn mean_std(rows: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

/// Rounds to 6 significant digits and prints the shortest decimal that
/// reads back as the rounded value.
pub fn fmt6(x: f64) -> String {
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

impl MetricsReport {
    /// Column means `[sf, ssim, scd]`.
    pub fn mean(&self) -> [f64; 3] {
        mean_std(&self.rows.iter().map(MetricsRow::values).collect::<Vec<_>>()).0
    }

    /// Population standard deviations `[sf, ssim, scd]`.
    pub fn std(&self) -> [f64; 3] {
        mean_std(&self.rows.iter().map(MetricsRow::values).collect::<Vec<_>>()).1
    }

    /// `id,sf,ssim,scd` rows followed by `mean` and `std`. The aggregates
    /// are computed from the printed (6-digit) row values.
    pub fn to_csv(&self) -> String {
        let rounded: Vec<[f64; 3]> = self
            .rows
            .iter()
            .map(|r| r.values().map(|v| fmt6(v).parse().unwrap()))
            .collect();
        let mut out = format!("{CSV_HEADER}\n");
        for (row, vals) in self.rows.iter().zip(&rounded) {
            out.push_str(&format!("{},{},{},{}\n", row.id, fmt6(vals[0]), fmt6(vals[1]), fmt6(vals[2])));
        }
        let (mean, std) = mean_std(&rounded);
        for (label, v) in [("mean", mean), ("std", std)] {
            out.push_str(&format!("{label},{},{},{}\n", fmt6(v[0]), fmt6(v[1]), fmt6(v[2])));
        }
        out
    }
}

/// Synthesises every test pair from modality A and scores the output:
/// SF of the output, SSIM against modality B, SCD against both sources.
pub fn evaluate<S: Synthesizer + ?Sized>(model: &S, test: &[ImagePair]) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut rows = Vec::with_capacity(test.len());
    for pair in test {
        let out = model.synthesize(&pair.modality_a)?;
        rows.push(MetricsRow {
            id: pair.pair_id.to_string(),
            sf: spatial_frequency(&out)?,
            ssim: ssim(&out, &pair.modality_b)?,
            scd: scd(&out, &pair.modality_a, &pair.modality_b)?,
        });
    }
    Ok(MetricsReport { rows })
}
