//! Per-tile conditioning images: Canny edge maps (CFI) and class-label maps
//! rendered from polygon annotations (SFI).

pub mod canny;
mod sfi;

use std::path::Path;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use canny::CannyParams;
pub use sfi::{isaid_palette, render_sfi, PaletteEntry, PolygonAnnotation, SfiPalette, TileFrame, NUM_CLASSES};

use crate::error::{Error, Result};
use crate::imaging::{Tile, TileGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "CFI")]
    Cfi,
    #[serde(rename = "SFI")]
    Sfi,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Cfi => "CFI",
            FeatureKind::Sfi => "SFI",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureParams {
    Canny(CannyParams),
    Palette(SfiPalette),
}

/// Single-channel conditioning map for one tile.
///
/// CFI data is strictly 0/255 (255 = edge). SFI data holds class indices,
/// 0 being background.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub kind: FeatureKind,
    pub data: GrayImage,
    pub params: FeatureParams,
}

impl FeatureImage {
    pub fn size(&self) -> (u32, u32) {
        (self.data.height(), self.data.width())
    }

    /// Count of nonzero pixels (edges for a CFI).
    pub fn nonzero(&self) -> usize {
        self.data.pixels().filter(|p| p[0] != 0).count()
    }

    /// Map to the generator's input range `[-1, 1]`.
    ///
    /// SFI class indices are spread over 0..=255 first (`index * 17`).
    pub fn to_unit_range(&self) -> Vec<f32> {
        let spread = match self.kind {
            FeatureKind::Cfi => 1.0,
            FeatureKind::Sfi => 17.0,
        };
        self.data.pixels().map(|p| (p[0] as f32 * spread).min(255.0) / 127.5 - 1.0).collect()
    }

    /// Save as single-channel PNG. SFI indices are written as-is.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.data.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Load a CFI written by [`FeatureImage::save_png`]; values are re-binarized.
    pub fn load_cfi(path: impl AsRef<Path>, params: CannyParams) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::UnreadableFile { path: path.to_owned(), reason: e.to_string() })?
            .to_luma8();
        let data = GrayImage::from_fn(img.width(), img.height(), |x, y| image::Luma([if img.get_pixel(x, y)[0] >= 128 { 255 } else { 0 }]));
        Ok(FeatureImage { kind: FeatureKind::Cfi, data, params: FeatureParams::Canny(params) })
    }
}

/// Canny edge map of a tile's full padded raster.
pub fn extract_cfi(tile: &Tile, params: &CannyParams) -> Result<FeatureImage> {
    let data = canny::canny(&tile.pixels, params)?;
    Ok(FeatureImage { kind: FeatureKind::Cfi, data, params: FeatureParams::Canny(*params) })
}

/// CFI for every tile, paired row-major with its tile.
pub fn batch_extract(grid: &TileGrid, params: &CannyParams) -> Result<Vec<(Tile, FeatureImage)>> {
    params.validate()?;
    grid.tiles
        .par_iter()
        .map(|t| extract_cfi(t, params).map(|f| (t.clone(), f)))
        .collect()
}
