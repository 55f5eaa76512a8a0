//! Raster grids of translated patches. RGB is composed from bands
//! B04/B03/B02 (red/green/blue); display value is
//! `round(255 * clamp(gain * reflectance, 0, 1))`.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};

/// Pixels between tiles and around the border.
pub const GRID_GAP: u32 = 2;

/// One X-cycle: source, translated, restored.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSample {
    pub x: Array3<f32>,
    pub y_hat: Array3<f32>,
    pub x_rec: Array3<f32>,
}

/// Channel indices of B04, B03 and B02 within `channel_order`.
pub fn rgb_indices(channel_order: &[String]) -> Result<[usize; 3]> {
    let find = |b: &str| {
        channel_order
            .iter()
            .position(|c| c == b)
            .ok_or_else(|| Error::BadConfig(format!("channel order lacks {b} for RGB display")))
    };
    Ok([find("B04")?, find("B03")?, find("B02")?])
}

fn to_u8(v: f32, gain: f64) -> u8 {
    (255.0 * (gain * v as f64).clamp(0.0, 1.0)).round() as u8
}

fn paint(img: &mut RgbImage, tile: &Array3<f32>, rgb: [usize; 3], gain: f64, ox: u32, oy: u32) {
    let (_, h, w) = tile.dim();
    for i in 0..h {
        for j in 0..w {
            let px = Rgb(rgb.map(|c| to_u8(tile[(c, i, j)], gain)));
            img.put_pixel(ox + j as u32, oy + i as u32, px);
        }
    }
}

/// Lays out `rows` of equally sized tiles on a black background.
pub fn render_grid(rows: &[Vec<&Array3<f32>>], rgb: [usize; 3], gain: f64) -> Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::BadConfig("empty grid".into()))?;
    let (c, h, w) = first.dim();
    if rgb.iter().any(|i| *i >= c) {
        return Err(Error::shape(format!("at least {} channels", rgb.iter().max().unwrap() + 1), c));
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let (h, w) = (h as u32, w as u32);
    let width = cols * w + (cols + 1) * GRID_GAP;
    let height = rows.len() as u32 * h + (rows.len() as u32 + 1) * GRID_GAP;
    let mut img = RgbImage::new(width, height);
    for (r, row) in rows.iter().enumerate() {
        for (k, tile) in row.iter().enumerate() {
            if tile.dim() != first.dim() {
                return Err(Error::shape(first.dim(), tile.dim()));
            }
            let ox = GRID_GAP + k as u32 * (w + GRID_GAP);
            let oy = GRID_GAP + r as u32 * (h + GRID_GAP);
            paint(&mut img, tile, rgb, gain, ox, oy);
        }
    }
    Ok(img)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        e => Error::Image(e),
    })
}

/// One row per sample: source | translated | restored.
pub fn export_cycle_grid(samples: &[CycleSample], rgb: [usize; 3], gain: f64, path: &Path) -> Result<()> {
    let rows: Vec<Vec<&Array3<f32>>> = samples.iter().map(|s| vec![&s.x, &s.y_hat, &s.x_rec]).collect();
    save(&render_grid(&rows, rgb, gain)?, path)
}

/// Translated images only, `cols` per row.
pub fn export_translated_grid(
    images: &[Array3<f32>],
    cols: usize,
    rgb: [usize; 3],
    gain: f64,
    path: &Path,
) -> Result<()> {
    let rows: Vec<Vec<&Array3<f32>>> = images.chunks(cols.max(1)).map(|c| c.iter().collect()).collect();
    save(&render_grid(&rows, rgb, gain)?, path)
}
