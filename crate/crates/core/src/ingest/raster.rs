use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::FootprintRecord;
use crate::error::{MarlError, Result};
use crate::geometry;

/// Square grayscale canvas, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    side: usize,
    pixels: Vec<f32>,
    meters_per_pixel: f64,
}

impl RasterImage {
    pub fn new(side: usize, pixels: Vec<f32>, meters_per_pixel: f64) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(MarlError::dimension("raster", side * side, pixels.len()));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(MarlError::Input("raster pixel outside [0, 1]".into()));
        }
        Ok(RasterImage {
            side,
            pixels,
            meters_per_pixel,
        })
    }

    pub fn filled(side: usize, value: f32, meters_per_pixel: f64) -> Self {
        RasterImage {
            side,
            pixels: vec![value.clamp(0.0, 1.0); side * side],
            meters_per_pixel,
        }
    }

    pub fn width(&self) -> usize {
        self.side
    }

    pub fn height(&self) -> usize {
        self.side
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.meters_per_pixel
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.side + col]
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_gray_png(self.side, self.side, &self.pixels)
    }
}

pub fn encode_gray_png(width: usize, height: usize, values: &[f32]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| MarlError::Image("buffer size mismatch".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| MarlError::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let bytes = encode_gray_png(width, height, values)?;
    crate::io::write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightBounds {
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for HeightBounds {
    fn default() -> Self {
        HeightBounds {
            h_min: 0.0,
            h_max: 100.0,
        }
    }
}

/// Maps a height onto `0..=255`, clamping into the bounds and rounding half up.
pub fn encode_height_grayscale(height_m: f64, h_min: f64, h_max: f64) -> Result<u8> {
    if !(h_max > h_min) || !h_min.is_finite() || !h_max.is_finite() {
        return Err(MarlError::InvalidBounds { h_min, h_max });
    }
    let t = (height_m.clamp(h_min, h_max) - h_min) / (h_max - h_min);
    Ok((255.0 * t + 0.5).floor().min(255.0) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub canvas_px: usize,
    pub meters_per_pixel: f64,
    pub heights: HeightBounds,
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec {
            canvas_px: 1410,
            meters_per_pixel: 0.5,
            heights: HeightBounds::default(),
        }
    }
}

/// Burns a footprint into a canvas centered on the polygon centroid.
///
/// A pixel is set when its center lies inside the ring (even-odd, boundary
/// inclusive); its value is the height grayscale divided by 255.
pub fn rasterize_footprint(record: &FootprintRecord, spec: &RasterSpec) -> Result<RasterImage> {
    let side = spec.canvas_px;
    let mpp = spec.meters_per_pixel;
    if side == 0 || !(mpp > 0.0) {
        return Err(MarlError::Config("canvas_px and meters_per_pixel must be positive".into()));
    }
    let (cx, cy) = geometry::centroid(&record.polygon);
    let ring: Vec<(f64, f64)> = record
        .polygon
        .iter()
        .map(|&(x, y)| ((x - cx) / mpp, (y - cy) / mpp))
        .collect();

    let half = side as f64 / 2.0;
    let (min_x, min_y, max_x, max_y) = geometry::bounds(&ring);
    if min_x < -half || max_x > half || min_y < -half || max_y > half {
        return Err(MarlError::OutOfCanvas {
            id: record.id.clone(),
            canvas_px: side,
        });
    }

    let gray = encode_height_grayscale(record.height_m, spec.heights.h_min, spec.heights.h_max)?;
    let value = gray as f32 / 255.0;

    let mut pixels = vec![0.0f32; side * side];
    let row_lo = ((half - max_y - 0.5).floor().max(0.0)) as usize;
    let row_hi = ((half - min_y + 0.5).ceil() as usize).min(side);
    let col_lo = ((min_x + half - 0.5).floor().max(0.0)) as usize;
    let col_hi = ((max_x + half + 0.5).ceil() as usize).min(side);
    for row in row_lo..row_hi {
        // Row 0 is the top of the canvas (largest y).
        let py = half - (row as f64 + 0.5);
        for col in col_lo..col_hi {
            let px = col as f64 + 0.5 - half;
            if geometry::contains(&ring, (px, py)) {
                pixels[row * side + col] = value;
            }
        }
    }
    Ok(RasterImage {
        side,
        pixels,
        meters_per_pixel: mpp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::record::{test_record, UseClass};

    fn spec(px: usize, mpp: f64) -> RasterSpec {
        RasterSpec {
            canvas_px: px,
            meters_per_pixel: mpp,
            heights: HeightBounds { h_min: 0.0, h_max: 100.0 },
        }
    }

    /// Brute force over every pixel center, no bounding-box shortcut.
    fn brute_count(record: &FootprintRecord, spec: &RasterSpec) -> usize {
        let (cx, cy) = geometry::centroid(&record.polygon);
        let half = spec.canvas_px as f64 / 2.0;
        let mut n = 0;
        for r in 0..spec.canvas_px {
            for c in 0..spec.canvas_px {
                let x = (c as f64 + 0.5 - half) * spec.meters_per_pixel + cx;
                let y = (half - r as f64 - 0.5) * spec.meters_per_pixel + cy;
                if geometry::contains(&record.polygon, (x, y)) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn grayscale_endpoints_and_midpoint() {
        assert_eq!(encode_height_grayscale(0.0, 0.0, 100.0).unwrap(), 0);
        assert_eq!(encode_height_grayscale(100.0, 0.0, 100.0).unwrap(), 255);
        assert_eq!(encode_height_grayscale(50.0, 0.0, 100.0).unwrap(), 128);
        assert_eq!(encode_height_grayscale(12.0, 0.0, 60.0).unwrap(), 51);
        assert_eq!(encode_height_grayscale(500.0, 0.0, 100.0).unwrap(), 255);
        assert_eq!(encode_height_grayscale(-3.0, 0.0, 100.0).unwrap(), 0);
        assert!(matches!(
            encode_height_grayscale(1.0, 5.0, 5.0),
            Err(MarlError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn square_sets_exactly_one_hundred_pixels() {
        let rec = test_record("sq", UseClass::Sfh);
        let s = spec(20, 1.0);
        let img = rasterize_footprint(&rec, &s).unwrap();
        let set = img.pixels().iter().filter(|&&p| p > 0.0).count();
        assert_eq!(set, 100);
        assert_eq!(set, brute_count(&rec, &s));
        let expected = encode_height_grayscale(10.0, 0.0, 100.0).unwrap() as f32 / 255.0;
        assert!(img.pixels().iter().all(|&p| p == 0.0 || p == expected));
    }

    #[test]
    fn rotated_square_close_to_analytic_area() {
        let h = 10.0 / 2f64.sqrt();
        let mut rec = test_record("rot", UseClass::Sfh);
        rec.polygon = vec![(0.0, -h), (h, 0.0), (0.0, h), (-h, 0.0)];
        let s = spec(20, 1.0);
        let img = rasterize_footprint(&rec, &s).unwrap();
        let set = img.pixels().iter().filter(|&&p| p > 0.0).count();
        assert_eq!(set, brute_count(&rec, &s));
        assert!((set as f64 - 100.0).abs() <= 40.0, "set = {set}");
    }

    #[test]
    fn out_of_canvas_names_record() {
        let mut rec = test_record("huge", UseClass::Mfh);
        rec.polygon = vec![(0.0, 0.0), (50.0, 0.0), (50.0, 50.0), (0.0, 50.0)];
        match rasterize_footprint(&rec, &spec(20, 1.0)) {
            Err(MarlError::OutOfCanvas { id, .. }) => assert_eq!(id, "huge"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn translation_gives_identical_raster() {
        let mut rec = test_record("l", UseClass::Sfh);
        rec.polygon = vec![(0.3, 0.1), (12.7, 0.1), (12.7, 5.2), (6.1, 5.2), (6.1, 11.9), (0.3, 11.9)];
        let s = spec(32, 0.5);
        let base = rasterize_footprint(&rec, &s).unwrap();
        for k in [1.0, 7.0, -13.0] {
            let mut moved = rec.clone();
            for v in &mut moved.polygon {
                v.0 += k * s.meters_per_pixel;
                v.1 -= 2.0 * k * s.meters_per_pixel;
            }
            assert_eq!(rasterize_footprint(&moved, &s).unwrap(), base);
        }
    }

    #[test]
    fn png_export_is_gray8() {
        let img = RasterImage::filled(4, 0.5, 1.0);
        let png = img.to_png_bytes().unwrap();
        let decoded = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(decoded.dimensions(), (4, 4));
        assert!(decoded.pixels().all(|p| p.0[0] == 128));
    }
}
