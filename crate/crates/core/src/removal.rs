//! Object removal: erase feature pixels under a mask, re-translate the tile
//! and paste it back into the scene.

use std::path::Path;

use chrono::{DateTime, Utc};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_cfi, CannyParams, FeatureImage, FeatureKind, FeatureParams};
use crate::imaging::{composite_tile, save_png, Provenance, Scene, Tile, TileCoord, TileGrid};
use crate::raster::rasterize_polygon;
use crate::translate::{translate, TranslatorCheckpoint};

/// Mask outline in tile pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "geometry", rename_all = "snake_case")]
pub enum MaskGeometry {
    /// Inclusive pixel bounds; `x0 == x1 && y0 == y1` covers one pixel.
    Rectangle { x0: u32, y0: u32, x1: u32, y1: u32 },
    /// Vertices `(x, y)`; pixels whose centers fall inside (even-odd rule) are covered.
    Polygon(Vec<(f64, f64)>),
}

/// Serialized as `{"shape": ..., "geometry": ..., "tile": [row, col]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalMask {
    #[serde(flatten)]
    pub geometry: MaskGeometry,
    pub tile: (u32, u32),
}

impl RemovalMask {
    pub fn rectangle(tile: TileCoord, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        RemovalMask { geometry: MaskGeometry::Rectangle { x0, y0, x1, y1 }, tile: (tile.row, tile.col) }
    }

    pub fn polygon(tile: TileCoord, vertices: Vec<(f64, f64)>) -> Self {
        RemovalMask { geometry: MaskGeometry::Polygon(vertices), tile: (tile.row, tile.col) }
    }

    pub fn tile_coord(&self) -> TileCoord {
        TileCoord::new(self.tile.0, self.tile.1)
    }

    /// Check the geometry against a tile of side `tile_size`.
    ///
    /// Polygon vertices may lie on the far tile border (`== tile_size`) so
    /// that a polygon can cover the last row and column of pixel centers.
    pub fn validate(&self, tile_size: u32) -> Result<()> {
        match &self.geometry {
            MaskGeometry::Rectangle { x0, y0, x1, y1 } => {
                if x0 > x1 || y0 > y1 {
                    return Err(Error::MaskOutOfBounds(format!("rectangle ({x0}, {y0})-({x1}, {y1}) is inverted")));
                }
                if *x1 >= tile_size || *y1 >= tile_size {
                    return Err(Error::MaskOutOfBounds(format!("rectangle ({x0}, {y0})-({x1}, {y1}) exceeds tile of {tile_size} px")));
                }
            }
            MaskGeometry::Polygon(vs) => {
                if vs.len() < 3 {
                    return Err(Error::DegeneratePolygon(format!("{} vertices", vs.len())));
                }
                let limit = tile_size as f64;
                if let Some((x, y)) = vs.iter().find(|(x, y)| !(0.0..=limit).contains(x) || !(0.0..=limit).contains(y)) {
                    return Err(Error::MaskOutOfBounds(format!("vertex ({x}, {y}) outside tile of {tile_size} px")));
                }
            }
        }
        Ok(())
    }

    /// Validate against a grid: geometry within the tile and tile within the grid.
    pub fn validate_in(&self, grid: &TileGrid) -> Result<()> {
        let c = self.tile_coord();
        if !grid.meta.contains(c) {
            return Err(Error::MaskOutOfBounds(format!(
                "tile ({}, {}) outside a {}x{} grid",
                c.row, c.col, grid.meta.rows, grid.meta.cols
            )));
        }
        self.validate(grid.meta.tile_size)
    }

    /// Row-major coverage over a `tile_size`² tile.
    pub fn rasterize(&self, tile_size: u32) -> Result<Vec<bool>> {
        self.validate(tile_size)?;
        Ok(match &self.geometry {
            MaskGeometry::Rectangle { x0, y0, x1, y1 } => (0..tile_size)
                .flat_map(|y| (0..tile_size).map(move |x| (*x0..=*x1).contains(&x) && (*y0..=*y1).contains(&y)))
                .collect(),
            MaskGeometry::Polygon(vs) => rasterize_polygon(vs, (0.0, 0.0), tile_size, tile_size),
        })
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of covered pixels, if any.
    pub fn bounding_box(&self, tile_size: u32) -> Result<Option<(u32, u32, u32, u32)>> {
        let cover = self.rasterize(tile_size)?;
        let mut bbox: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in cover.iter().enumerate().filter(|(_, c)| **c) {
            let (x, y) = (i as u32 % tile_size, i as u32 / tile_size);
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
        Ok(bbox)
    }
}

fn zero_masked(feature: &FeatureImage, mask: &RemovalMask) -> Result<FeatureImage> {
    let (h, w) = feature.size();
    if h != w {
        return Err(Error::ShapeMismatch(format!("feature image is {w}x{h}, expected square")));
    }
    let cover = mask.rasterize(w)?;
    let mut data: GrayImage = feature.data.clone();
    for (p, inside) in data.pixels_mut().zip(cover) {
        if inside {
            p[0] = 0;
        }
    }
    Ok(FeatureImage { data, ..feature.clone() })
}

/// Clear every edge pixel under the mask; pixels outside are untouched.
pub fn erase_edges(cfi: &FeatureImage, mask: &RemovalMask) -> Result<FeatureImage> {
    if cfi.kind != FeatureKind::Cfi {
        return Err(Error::WrongFeatureKind { expected: "CFI", got: cfi.kind.name() });
    }
    zero_masked(cfi, mask)
}

/// Set every class label under the mask to background.
pub fn erase_labels(sfi: &FeatureImage, mask: &RemovalMask) -> Result<FeatureImage> {
    if sfi.kind != FeatureKind::Sfi {
        return Err(Error::WrongFeatureKind { expected: "SFI", got: sfi.kind.name() });
    }
    zero_masked(sfi, mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgedMeta {
    pub source_scene_id: String,
    pub source_path: std::path::PathBuf,
    pub forged_content_id: String,
    pub checkpoint_id: String,
    pub tile_size: u32,
    /// Scene content covered by the output tile.
    pub valid_region: (u32, u32),
    pub feature_kind: FeatureKind,
    pub feature_params: FeatureParams,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// Output of one removal.
#[derive(Clone, Debug)]
pub struct ForgedResult {
    pub forged_scene: Scene,
    pub edited_feature: FeatureImage,
    /// Translated tile, with its grid coordinate set.
    pub output_tile: Tile,
    pub mask: RemovalMask,
    pub meta: ForgedMeta,
}

impl ForgedResult {
    /// Equality ignoring timestamps.
    pub fn same_content(&self, other: &ForgedResult) -> bool {
        self.forged_scene == other.forged_scene
            && self.edited_feature == other.edited_feature
            && self.output_tile == other.output_tile
            && self.mask == other.mask
            && self.meta.checkpoint_id == other.meta.checkpoint_id
            && self.meta.forged_content_id == other.meta.forged_content_id
    }

    /// Write `forged.png`, `edited_cfi.png`, `output_tile.png`, `mask.json` and `meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_png(self.forged_scene.pixels(), dir.join("forged.png"))?;
        self.edited_feature.save_png(dir.join("edited_cfi.png"))?;
        save_png(&self.output_tile.pixels, dir.join("output_tile.png"))?;
        std::fs::write(dir.join("mask.json"), serde_json::to_vec_pretty(&self.mask)?)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::UnreadableFile { path: p, reason: e.to_string() })
        };
        let meta: ForgedMeta = serde_json::from_slice(&read("meta.json")?)?;
        let mask: RemovalMask = serde_json::from_slice(&read("mask.json")?)?;
        let forged = image::load_from_memory(&read("forged.png")?)?.to_rgb8();
        let output = image::load_from_memory(&read("output_tile.png")?)?.to_rgb8();
        let data = image::load_from_memory(&read("edited_cfi.png")?)?.to_luma8();
        let mut forged_scene = Scene::from_pixels(forged.clone(), meta.source_path.clone());
        forged_scene.id = meta.source_scene_id.clone();
        let forged_scene = forged_scene.into_forged(forged);
        let edited_feature = FeatureImage { kind: meta.feature_kind, data, params: meta.feature_params.clone() };
        let output_tile = Tile { coord: mask.tile_coord(), pixels: output, valid_region: meta.valid_region };
        Ok(ForgedResult { forged_scene, edited_feature, output_tile, mask, meta })
    }
}

fn check_compatible(grid: &TileGrid, ckpt: &TranslatorCheckpoint, params: &FeatureParams) -> Result<()> {
    if grid.meta.tile_size != ckpt.tile_size() {
        return Err(Error::CheckpointMismatch(format!(
            "grid tile size {} but checkpoint trained on {} px tiles",
            grid.meta.tile_size,
            ckpt.tile_size()
        )));
    }
    if &ckpt.meta.provenance.feature_params != params {
        return Err(Error::CheckpointMismatch(format!(
            "feature parameters {params:?} differ from training parameters {:?}",
            ckpt.meta.provenance.feature_params
        )));
    }
    Ok(())
}

fn check_scene(scene: &Scene, grid: &TileGrid) -> Result<()> {
    if scene.id != grid.meta.scene_id || (scene.height(), scene.width()) != (grid.meta.scene_height, grid.meta.scene_width) {
        return Err(Error::InconsistentGrid(format!("grid was sliced from scene {}, not {}", grid.meta.scene_id, scene.id)));
    }
    Ok(())
}

/// Translate `feature` and paste it over the mask's tile.
///
/// Shared by CFI removal and label-map removal; `feature` must already be edited.
pub fn apply_feature(scene: &Scene, grid: &TileGrid, mask: &RemovalMask, edited: FeatureImage, ckpt: &TranslatorCheckpoint) -> Result<ForgedResult> {
    let started_at = Utc::now();
    check_scene(scene, grid)?;
    mask.validate_in(grid)?;
    check_compatible(grid, ckpt, &edited.params)?;
    let coord = mask.tile_coord();
    let mut output_tile = translate(ckpt, &edited)?;
    output_tile.coord = coord;
    output_tile.valid_region = grid.meta.valid_region(coord);
    let forged_scene = composite_tile(scene, coord, &output_tile)?;
    debug_assert_eq!(forged_scene.provenance(), Provenance::Forged);
    let meta = ForgedMeta {
        source_scene_id: scene.id.clone(),
        source_path: scene.source_path.clone(),
        forged_content_id: crate::imaging::content_id(forged_scene.pixels()),
        checkpoint_id: ckpt.id().to_string(),
        tile_size: grid.meta.tile_size,
        valid_region: output_tile.valid_region,
        feature_kind: edited.kind,
        feature_params: edited.params.clone(),
        started_at,
        finished_at: Utc::now(),
    };
    Ok(ForgedResult { forged_scene, edited_feature: edited, output_tile, mask: mask.clone(), meta })
}

/// Extract the tile's CFI, erase edges under the mask, translate, composite.
pub fn remove_object(scene: &Scene, grid: &TileGrid, mask: &RemovalMask, ckpt: &TranslatorCheckpoint, canny: &CannyParams) -> Result<ForgedResult> {
    check_scene(scene, grid)?;
    mask.validate_in(grid)?;
    check_compatible(grid, ckpt, &FeatureParams::Canny(*canny))?;
    let cfi = extract_cfi(grid.tile(mask.tile_coord())?, canny)?;
    let edited = erase_edges(&cfi, mask)?;
    apply_feature(scene, grid, mask, edited, ckpt)
}

/// Translate a tile's unedited CFI: the translator's own reconstruction error.
pub fn reconstruction_baseline(scene: &Scene, grid: &TileGrid, coord: TileCoord, ckpt: &TranslatorCheckpoint, canny: &CannyParams) -> Result<Tile> {
    check_scene(scene, grid)?;
    grid.meta.check(coord)?;
    check_compatible(grid, ckpt, &FeatureParams::Canny(*canny))?;
    let cfi = extract_cfi(grid.tile(coord)?, canny)?;
    let mut tile = translate(ckpt, &cfi)?;
    tile.coord = coord;
    tile.valid_region = grid.meta.valid_region(coord);
    Ok(tile)
}
