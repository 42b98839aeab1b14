use serde::{Deserialize, Serialize};

use super::raster::RasterImage;
use crate::error::{MarlError, Result};

/// Native canvas side and the three crop windows taken from it.
pub const NATIVE_BASE_PX: usize = 1410;
pub const NATIVE_WINDOWS: [usize; 3] = [700, 224, 112];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiScaleSpec {
    pub base_px: usize,
    pub side_px: usize,
}

impl Default for MultiScaleSpec {
    fn default() -> Self {
        MultiScaleSpec {
            base_px: NATIVE_BASE_PX,
            side_px: 112,
        }
    }
}

impl MultiScaleSpec {
    /// Crop sides, widest first, scaled from the native windows.
    ///
    /// Each side is rounded to the nearest integer with the same parity as
    /// `base_px` so that every crop is exactly centered.
    pub fn crop_sides(&self) -> [usize; 3] {
        NATIVE_WINDOWS.map(|w| {
            let exact = self.base_px as f64 * w as f64 / NATIVE_BASE_PX as f64;
            let parity = self.base_px % 2;
            let lo = exact.floor() as usize;
            let lo = if lo % 2 == parity { lo } else { lo.saturating_sub(1) };
            let hi = lo + 2;
            let pick = if (exact - lo as f64) <= (hi as f64 - exact) { lo } else { hi };
            pick.clamp(1.max(parity), self.base_px)
        })
    }
}

/// Three co-registered channels, each `side × side`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleImage {
    side: usize,
    data: Vec<f32>,
    pub source_id: String,
}

impl MultiScaleImage {
    pub fn from_channels(side: usize, data: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        if data.len() != 3 * side * side {
            return Err(MarlError::dimension("multiscale image", 3 * side * side, data.len()));
        }
        Ok(MultiScaleImage {
            side,
            data,
            source_id: source_id.into(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Channel-major `(3, side, side)` values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Serialize, Deserialize)]
struct StackHeader {
    ids: Vec<String>,
    side: usize,
    channels: usize,
}

/// Serializes a preprocessed dataset: JSON header `{ids, side, channels}`
/// followed by every image's values in order.
pub fn encode_image_stack(images: &[MultiScaleImage]) -> Result<Vec<u8>> {
    let side = images.first().map_or(0, |i| i.side);
    if let Some(bad) = images.iter().find(|i| i.side != side) {
        return Err(MarlError::dimension("image stack side", side, bad.side));
    }
    let header = StackHeader { ids: images.iter().map(|i| i.source_id.clone()).collect(), side, channels: 3 };
    let values: Vec<f32> = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    crate::io::encode_container(&header, &values)
}

pub fn decode_image_stack(bytes: &[u8]) -> Result<Vec<MultiScaleImage>> {
    let (h, values): (StackHeader, Vec<f32>) = crate::io::decode_container(bytes)?;
    let per = h.channels * h.side * h.side;
    if h.channels != 3 || values.len() != per * h.ids.len() {
        return Err(MarlError::Parse("image stack size does not match its header".into()));
    }
    h.ids
        .into_iter()
        .zip(values.chunks(per.max(1)))
        .map(|(id, chunk)| MultiScaleImage::from_channels(h.side, chunk.to_vec(), id))
        .collect()
}

/// 1-D box-filter weights mapping `src` samples onto `dst` samples.
/// Row `j` holds `(source index, weight)` pairs summing to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let lo = j as f64 * scale;
            let hi = (j + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize of the `crop × crop` window at (`off`, `off`).
fn resize_window(raster: &RasterImage, off: usize, crop: usize, dst: usize) -> Vec<f32> {
    let src_side = raster.side();
    let px = raster.pixels();
    let weights = area_weights(crop, dst);

    // Horizontal pass over the crop rows, then vertical.
    let mut tmp = vec![0.0f64; crop * dst];
    for r in 0..crop {
        let row = &px[(off + r) * src_side + off..(off + r) * src_side + off + crop];
        for (j, w) in weights.iter().enumerate() {
            tmp[r * dst + j] = w.iter().map(|&(i, wt)| row[i] as f64 * wt).sum();
        }
    }
    let mut out = vec![0.0f32; dst * dst];
    for (i, w) in weights.iter().enumerate() {
        for j in 0..dst {
            let v: f64 = w.iter().map(|&(r, wt)| tmp[r * dst + j] * wt).sum();
            out[i * dst + j] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Stacks the three centered crop windows, each resized to `side_px`.
pub fn build_multiscale(
    raster: &RasterImage,
    spec: &MultiScaleSpec,
    source_id: &str,
) -> Result<MultiScaleImage> {
    if raster.side() != spec.base_px {
        return Err(MarlError::dimension(
            "build_multiscale input side",
            spec.base_px,
            raster.side(),
        ));
    }
    let mut data = Vec::with_capacity(3 * spec.side_px * spec.side_px);
    for crop in spec.crop_sides() {
        let off = (spec.base_px - crop) / 2;
        data.extend(resize_window(raster, off, crop, spec.side_px));
    }
    MultiScaleImage::from_channels(spec.side_px, data, source_id)
}
