//! Bare-bones PNG charts: line series, coloured scatter and image grids.
//! No text rendering; axes span the data range.

use image::{Rgb, RgbImage};

use crate::error::{MarlError, Result};

const MARGIN: u32 = 24;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);

/// Categorical colours, cycled by index.
pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub fn palette(i: usize) -> Rgb<u8> {
    Rgb(PALETTE[i % PALETTE.len()])
}

struct Frame {
    w: u32,
    h: u32,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(w: u32, h: u32, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame { w, h, x: range(&mut xs.clone()), y: range(&mut ys.clone()) }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let pw = (self.w - 2 * MARGIN) as f64;
        let ph = (self.h - 2 * MARGIN) as f64;
        let px = MARGIN as f64 + (x - self.x.0) / (self.x.1 - self.x.0) * pw;
        let py = (self.h - MARGIN) as f64 - (y - self.y.0) / (self.y.1 - self.y.0) * ph;
        (px, py)
    }

    fn canvas(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.w, self.h, BACKGROUND);
        for x in MARGIN..self.w - MARGIN {
            img.put_pixel(x, self.h - MARGIN, AXIS);
        }
        for y in MARGIN..=self.h - MARGIN {
            img.put_pixel(MARGIN, y, AXIS);
        }
        img
    }
}

fn plot_dot(img: &mut RgbImage, x: f64, y: f64, r: i64, c: Rgb<u8>) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, c);
                }
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        plot_dot(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), 0, c);
    }
}

fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).map_err(|e| MarlError::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// One polyline with markers per series, all sharing axes.
pub fn line_chart_png(series: &[Vec<(f64, f64)>], w: u32, h: u32) -> Result<Vec<u8>> {
    let all = || series.iter().flatten();
    let frame = Frame::new(w, h, all().map(|p| p.0), all().map(|p| p.1));
    let mut img = frame.canvas();
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s.iter().map(|&(x, y)| frame.map(x, y)).collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], palette(i));
        }
        for p in &pts {
            plot_dot(&mut img, p.0, p.1, 2, palette(i));
        }
    }
    encode(&img)
}

/// Points coloured by their group index.
pub fn scatter_png(points: &[(f64, f64)], groups: &[usize], w: u32, h: u32) -> Result<Vec<u8>> {
    if points.len() != groups.len() {
        return Err(MarlError::dimension("scatter groups", points.len(), groups.len()));
    }
    let frame = Frame::new(w, h, points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut img = frame.canvas();
    for (p, &g) in points.iter().zip(groups) {
        let (x, y) = frame.map(p.0, p.1);
        plot_dot(&mut img, x, y, 2, palette(g));
    }
    encode(&img)
}

/// Tiles equally sized grayscale images (values in `[0, 1]`) into rows of
/// `columns`, separated by a one-pixel white gutter.
pub fn image_grid_png(tiles: &[Vec<f32>], side: usize, columns: usize) -> Result<Vec<u8>> {
    if tiles.is_empty() || columns == 0 {
        return Err(MarlError::Input("image grid needs at least one tile".into()));
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != side * side) {
        return Err(MarlError::dimension("grid tile", side * side, t.len()));
    }
    let rows = tiles.len().div_ceil(columns);
    let cell = side as u32 + 1;
    let mut img = RgbImage::from_pixel(columns as u32 * cell + 1, rows as u32 * cell + 1, BACKGROUND);
    for (i, t) in tiles.iter().enumerate() {
        let (ox, oy) = (1 + (i % columns) as u32 * cell, 1 + (i / columns) as u32 * cell);
        for (j, v) in t.iter().enumerate() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(ox + (j % side) as u32, oy + (j / side) as u32, Rgb([g, g, g]));
        }
    }
    encode(&img)
}
