//! Minimal PNG charts: line plots for training curves and sweeps, and a
//! heatmap for confusion matrices. No text rendering; pair each chart with
//! its CSV.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::evaluation::ConfusionMatrix;
use crate::explain::{encode_png, jet};

pub const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];

const MARGIN: i64 = 24;

pub struct Series<'a> {
    pub ys: &'a [f64],
    pub color: [u8; 3],
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

/// Line chart of one or more series sharing the x axis (index).
pub fn line_chart(series: &[Series<'_>], width: u32, height: u32) -> Result<RgbImage> {
    let finite = series.iter().flat_map(|s| s.ys.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return Err(Error::Empty("nothing to plot".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let n = series.iter().map(|s| s.ys.len()).max().unwrap_or(0).max(2);
    let (w, h) = (width as i64, height as i64);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let axis = [90, 90, 90];
    line(&mut img, (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), axis);
    line(&mut img, (MARGIN, MARGIN), (MARGIN, h - MARGIN), axis);
    let to_px = |i: usize, v: f64| {
        let x = MARGIN + (i as i64) * (w - 2 * MARGIN) / (n as i64 - 1);
        let y = h - MARGIN - ((v - lo) / (hi - lo) * (h - 2 * MARGIN) as f64).round() as i64;
        (x, y)
    };
    for s in series {
        let pts: Vec<_> = s.ys.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| to_px(i, v)).collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], s.color);
        }
    }
    Ok(img)
}

/// Cell brightness follows the row-normalized count.
pub fn confusion_heatmap(m: &ConfusionMatrix, cell: u32) -> RgbImage {
    let n = m.n_classes() as u32;
    let mut img = RgbImage::new(n * cell, n * cell);
    for t in 0..n as usize {
        let row = m.row_sum(t).max(1) as f64;
        for p in 0..n as usize {
            let c = jet(m.counts[t][p] as f64 / row);
            let px = Rgb(c.map(|v| (v * 255.0).round() as u8));
            for dy in 1..cell.saturating_sub(1) {
                for dx in 1..cell.saturating_sub(1) {
                    img.put_pixel(p as u32 * cell + dx, t as u32 * cell + dy, px);
                }
            }
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}
