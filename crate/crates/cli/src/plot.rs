//! Minimal raster plots.

use std::path::Path;

use anyhow::Result;
use image::{Rgb, RgbImage};

use imooe::evaluation::IdOodFit;

const SCALE: u32 = 4;
const GAP: u32 = 8;

/// Diverging blue-white-red map on `[-1, 1]`.
fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 { (1.0 + t, 1.0 + t, 1.0) } else { (1.0, 1.0 - t, 1.0 - t) };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// Side-by-side panels sharing one symmetric colour range.
pub fn field_panels(fields: &[&[f64]], h: usize, w: usize, out: &Path) -> Result<()> {
    let lim = fields.iter().flat_map(|f| f.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let pw = w as u32 * SCALE;
    let ph = h as u32 * SCALE;
    let n = fields.len() as u32;
    let mut img = RgbImage::from_pixel(n * pw + (n + 1) * GAP, ph + 2 * GAP, Rgb([255, 255, 255]));
    for (k, f) in fields.iter().enumerate() {
        let x0 = GAP + k as u32 * (pw + GAP);
        for y in 0..ph {
            for x in 0..pw {
                let v = f[(y / SCALE) as usize * w + (x / SCALE) as usize];
                img.put_pixel(x0 + x, GAP + y, diverging(v / lim));
            }
        }
    }
    img.save(out)?;
    Ok(())
}

/// ID error against OOD error with the fitted line.
pub fn scatter_with_line(fit: &IdOodFit, out: &Path) -> Result<()> {
    let size = 400u32;
    let pad = 30.0;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let xs: Vec<f64> = fit.points.iter().map(|p| p.id_error).collect();
    let ys: Vec<f64> = fit.points.iter().map(|p| p.ood_error).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        (lo - 0.1 * span, hi + 0.1 * span)
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let span = size as f64 - 2.0 * pad;
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| size as f64 - pad - (y - y0) / (y1 - y0) * span;
    let axis = Rgb([0, 0, 0]);
    for i in pad as u32..size - pad as u32 {
        img.put_pixel(i, size - pad as u32, axis);
        img.put_pixel(pad as u32, i, axis);
    }
    for i in 0..(span as u32 * 2) {
        let x = x0 + (x1 - x0) * i as f64 / (span * 2.0);
        let (u, v) = (px(x), py(fit.slope * x + fit.intercept));
        if v >= pad && v < size as f64 - pad {
            img.put_pixel(u as u32, v as u32, Rgb([200, 30, 30]));
        }
    }
    for (x, y) in xs.iter().zip(&ys) {
        let (u, v) = (px(*x) as i64, py(*y) as i64);
        for dy in -3..=3 {
            for dx in -3..=3 {
                let (a, b) = (u + dx, v + dy);
                if a >= 0 && b >= 0 && (a as u32) < size && (b as u32) < size {
                    img.put_pixel(a as u32, b as u32, Rgb([30, 60, 200]));
                }
            }
        }
    }
    img.save(out)?;
    Ok(())
}
