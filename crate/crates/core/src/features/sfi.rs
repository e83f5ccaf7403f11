use std::collections::BTreeMap;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{FeatureImage, FeatureKind, FeatureParams};
use crate::error::{Error, Result};
use crate::imaging::TileCoord;
use crate::raster::{polygon_area, rasterize_polygon};

/// Object categories, excluding background.
pub const NUM_CLASSES: u8 = 15;

/// One annotated object outline in scene pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub class_id: u8,
    pub vertices: Vec<(f64, f64)>,
}

impl PolygonAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!("{} vertices", self.vertices.len())));
        }
        if !(1..=NUM_CLASSES).contains(&self.class_id) {
            return Err(Error::InvalidParams(format!("class id {} outside 1..={NUM_CLASSES}", self.class_id)));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }
}

/// Placement of one tile in scene coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileFrame {
    pub coord: TileCoord,
    pub tile_size: u32,
}

impl TileFrame {
    pub fn origin(&self) -> (f64, f64) {
        ((self.coord.col * self.tile_size) as f64, (self.coord.row * self.tile_size) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub name: String,
    pub color: [u8; 3],
}

/// Class index -> display name and color. Index 0 is background.
pub type SfiPalette = BTreeMap<u8, PaletteEntry>;

/// Default palette over the iSAID category set.
pub fn isaid_palette() -> SfiPalette {
    const CLASSES: [(&str, [u8; 3]); 16] = [
        ("background", [0, 0, 0]),
        ("ship", [0, 0, 63]),
        ("storage_tank", [0, 63, 63]),
        ("baseball_diamond", [0, 63, 0]),
        ("tennis_court", [0, 63, 127]),
        ("basketball_court", [0, 63, 191]),
        ("ground_track_field", [0, 63, 255]),
        ("bridge", [0, 127, 63]),
        ("large_vehicle", [0, 127, 127]),
        ("small_vehicle", [0, 0, 127]),
        ("helicopter", [0, 0, 191]),
        ("swimming_pool", [0, 0, 255]),
        ("roundabout", [0, 191, 127]),
        ("soccer_ball_field", [0, 127, 191]),
        ("plane", [0, 127, 255]),
        ("harbor", [0, 100, 155]),
    ];
    CLASSES
        .iter()
        .enumerate()
        .map(|(i, (name, color))| (i as u8, PaletteEntry { name: name.to_string(), color: *color }))
        .collect()
}

/// Rasterize annotations into a tile-sized class map.
///
/// Painting runs from largest to smallest polygon area, so where polygons
/// overlap the smaller one wins. Equal areas keep input order.
pub fn render_sfi(annotations: &[PolygonAnnotation], frame: TileFrame) -> Result<FeatureImage> {
    for a in annotations {
        a.validate()?;
    }
    let ts = frame.tile_size;
    let mut order: Vec<(f64, &PolygonAnnotation)> = annotations.iter().map(|a| (a.area(), a)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut data = GrayImage::new(ts, ts);
    for (_, ann) in order {
        let mask = rasterize_polygon(&ann.vertices, frame.origin(), ts, ts);
        for (p, inside) in data.pixels_mut().zip(mask) {
            if inside {
                p[0] = ann.class_id;
            }
        }
    }
    Ok(FeatureImage { kind: FeatureKind::Sfi, data, params: FeatureParams::Palette(isaid_palette()) })
}
