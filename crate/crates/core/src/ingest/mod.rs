//! Footprint ingestion: dataset parsing, residential filtering, height
//! grayscale coding, rasterization and the multi-scale image stack.

mod multiscale;
mod parse;
mod raster;
mod record;

pub use multiscale::{build_multiscale, decode_image_stack, encode_image_stack, MultiScaleImage, MultiScaleSpec, NATIVE_BASE_PX, NATIVE_WINDOWS};
pub use parse::{
    parse_csv_str, parse_footprint_dataset, parse_geojson_str, parse_wkt_polygon, to_geojson,
    to_wkt_polygon, write_csv_string, write_geojson_string, DatasetFormat, ParsedDataset,
};
pub use raster::{
    encode_gray_png, encode_height_grayscale, rasterize_footprint, write_png, HeightBounds,
    RasterImage, RasterSpec,
};
pub use record::{filter_residential, FootprintRecord, UseClass, VINTAGE_RANGE};

#[cfg(test)]
pub(crate) use record::test_record;

use crate::error::Result;
use crate::exec::Execution;

/// Rasterizes and stacks every record; output order follows `records`.
pub fn prepare_images(
    records: &[FootprintRecord],
    raster: &RasterSpec,
    scales: &MultiScaleSpec,
    exec: Execution,
) -> Result<Vec<MultiScaleImage>> {
    exec.try_map(records, |r| {
        let img = rasterize_footprint(r, raster)?;
        build_multiscale(&img, scales, &r.id)
    })
}
