//! Loss-versus-epoch chart rasterised to a greymap.

use crate::gan::TrainingHistory;
use crate::image::ImageGray;
use crate::Result;

const WIDTH: usize = 320;
const HEIGHT: usize = 200;
const MARGIN: usize = 16;

struct Canvas {
    px: Vec<f64>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, v: f64) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            self.px[y as usize * WIDTH + x as usize] = v;
        }
    }

    /// Bresenham line.
    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), v: f64) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, v);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

/// Generator loss in black, discriminator loss in mid grey, on white with
/// axes. The y range spans both curves.
pub fn loss_curve(history: &TrainingHistory) -> Result<ImageGray> {
    let mut c = Canvas {
        px: vec![1.0; WIDTH * HEIGHT],
    };
    let (left, right) = (MARGIN as i64, (WIDTH - MARGIN) as i64);
    let (top, bottom) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    c.line((left, bottom), (right, bottom), 0.0);
    c.line((left, top), (left, bottom), 0.0);

    let recs = &history.records;
    if !recs.is_empty() {
        let all = recs.iter().flat_map(|r| [r.generator_loss, r.discriminator_loss]);
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = recs.len().max(2) - 1;
        let to_px = |i: usize, v: f64| {
            let x = left + ((right - left) as f64 * i as f64 / n as f64).round() as i64;
            let y = bottom - ((bottom - top) as f64 * (v - lo) / span).round() as i64;
            (x, y)
        };
        for (series, shade) in [(0, 0.0), (1, 0.5)] {
            let value = |i: usize| {
                if series == 0 {
                    recs[i].generator_loss
                } else {
                    recs[i].discriminator_loss
                }
            };
            for i in 0..recs.len() {
                let p = to_px(i, value(i));
                let q = if i + 1 < recs.len() { to_px(i + 1, value(i + 1)) } else { p };
                c.line(p, q, shade);
            }
        }
    }
    ImageGray::new(HEIGHT, WIDTH, c.px)
}
