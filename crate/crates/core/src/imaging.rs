//! Raster I/O, fixed-size tiling, stitching and tile compositing.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TILE_SIZE: u32 = 256;
pub const MIN_TILE_SIZE: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pristine,
    Forged,
}

/// A full-resolution RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub source_path: PathBuf,
    pixels: RgbImage,
    provenance: Provenance,
}

impl Scene {
    /// Wrap an in-memory raster as a pristine scene; the id is a content hash.
    pub fn from_pixels(pixels: RgbImage, source_path: impl Into<PathBuf>) -> Self {
        Scene { id: content_id(&pixels), source_path: source_path.into(), pixels, provenance: Provenance::Pristine }
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub(crate) fn into_forged(mut self, pixels: RgbImage) -> Self {
        self.pixels = pixels;
        self.provenance = Provenance::Forged;
        self
    }
}

/// First 16 hex digits of SHA-256 over the dimensions and samples.
pub fn content_id(pixels: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(pixels.width().to_le_bytes());
    h.update(pixels.height().to_le_bytes());
    h.update(pixels.as_raw());
    hex::encode(&h.finalize()[..8])
}

/// Decode a raster file into an 8-bit RGB scene.
///
/// Gray sources are replicated to three channels, alpha is dropped and
/// 16-bit sources are rescaled to 8 bits with a warning.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let unreadable = |reason: String| Error::UnreadableFile { path: path.to_owned(), reason };
    let meta = std::fs::metadata(path).map_err(|e| unreadable(e.to_string()))?;
    if meta.len() == 0 {
        return Err(unreadable("zero-byte file".into()));
    }
    let file = File::open(path).map_err(|e| unreadable(e.to_string()))?;
    let reader = ImageReader::new(BufReader::new(file)).with_guessed_format().map_err(|e| unreadable(e.to_string()))?;
    if reader.format().is_none() {
        return Err(Error::UnsupportedFormat(format!("{}: unrecognized container", path.display())));
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        other => unreadable(other.to_string()),
    })?;
    Ok(Scene::from_pixels(to_rgb8(decoded, path)?, path))
}

fn to_rgb8(img: DynamicImage, path: &Path) -> Result<RgbImage> {
    use DynamicImage::*;
    Ok(match img {
        ImageRgb8(p) => p,
        ImageLuma8(_) | ImageLumaA8(_) | ImageRgba8(_) => img.to_rgb8(),
        ImageLuma16(_) | ImageLumaA16(_) | ImageRgb16(_) | ImageRgba16(_) => {
            log::warn!("{}: 16-bit samples rescaled to 8 bits", path.display());
            img.to_rgb8()
        }
        other => return Err(Error::UnsupportedFormat(format!("{}: {:?} samples", path.display(), other.color()))),
    })
}

/// Write a raster as PNG.
pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadPolicy {
    /// Mirror scene content across its border, edge pixel not repeated.
    #[default]
    Reflect,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileCoord {
    pub row: u32,
    pub col: u32,
}

impl TileCoord {
    pub fn new(row: u32, col: u32) -> Self {
        TileCoord { row, col }
    }
}

/// One square block of a scene, padded out to the full tile size.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub coord: TileCoord,
    pub pixels: RgbImage,
    /// `(height, width)` of real scene content at the top-left of `pixels`.
    pub valid_region: (u32, u32),
}

impl Tile {
    pub fn size(&self) -> u32 {
        self.pixels.width()
    }
}

/// Serializable grid description, without pixel data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMeta {
    pub scene_id: String,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub pad_policy: PadPolicy,
    pub scene_height: u32,
    pub scene_width: u32,
}

impl GridMeta {
    pub fn contains(&self, coord: TileCoord) -> bool {
        coord.row < self.rows && coord.col < self.cols
    }

    pub fn check(&self, coord: TileCoord) -> Result<()> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { row: coord.row, col: coord.col, rows: self.rows, cols: self.cols })
        }
    }

    pub fn valid_region(&self, coord: TileCoord) -> (u32, u32) {
        valid_region(self.scene_height, self.scene_width, self.tile_size, coord)
    }
}

/// Row-major decomposition of a scene into disjoint square tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub meta: GridMeta,
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    pub fn tile(&self, coord: TileCoord) -> Result<&Tile> {
        self.meta.check(coord)?;
        Ok(&self.tiles[(coord.row * self.meta.cols + coord.col) as usize])
    }

    pub fn tile_mut(&mut self, coord: TileCoord) -> Result<&mut Tile> {
        self.meta.check(coord)?;
        let cols = self.meta.cols;
        Ok(&mut self.tiles[(coord.row * cols + coord.col) as usize])
    }
}

fn valid_region(height: u32, width: u32, tile_size: u32, coord: TileCoord) -> (u32, u32) {
    let h = height.saturating_sub(coord.row * tile_size).min(tile_size);
    let w = width.saturating_sub(coord.col * tile_size).min(tile_size);
    (h, w)
}

/// Index into `0..len` after mirroring `i` across the ends (period `2 * (len - 1)`).
fn reflect_index(i: u32, len: u32) -> u32 {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

pub fn grid_dims(height: u32, width: u32, tile_size: u32) -> (u32, u32) {
    (height.div_ceil(tile_size), width.div_ceil(tile_size))
}

/// Cut `scene` into `tile_size` squares, padding the right and bottom edges.
pub fn slice_tiles(scene: &Scene, tile_size: u32, pad_policy: PadPolicy) -> Result<TileGrid> {
    if tile_size < MIN_TILE_SIZE {
        return Err(Error::InvalidTileSize(tile_size));
    }
    let (height, width) = (scene.height(), scene.width());
    let (rows, cols) = grid_dims(height, width, tile_size);
    let src = scene.pixels();
    let mut tiles = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let coord = TileCoord::new(row, col);
            let (vh, vw) = valid_region(height, width, tile_size, coord);
            let (y0, x0) = (row * tile_size, col * tile_size);
            let mut pixels = RgbImage::new(tile_size, tile_size);
            for ty in 0..tile_size {
                for tx in 0..tile_size {
                    let inside = ty < vh && tx < vw;
                    let px = if inside {
                        *src.get_pixel(x0 + tx, y0 + ty)
                    } else {
                        match pad_policy {
                            PadPolicy::Zero => image::Rgb([0, 0, 0]),
                            PadPolicy::Reflect => {
                                *src.get_pixel(reflect_index(x0 + tx, width), reflect_index(y0 + ty, height))
                            }
                        }
                    };
                    pixels.put_pixel(tx, ty, px);
                }
            }
            tiles.push(Tile { coord, pixels, valid_region: (vh, vw) });
        }
    }
    let meta = GridMeta { scene_id: scene.id.clone(), tile_size, rows, cols, pad_policy, scene_height: height, scene_width: width };
    Ok(TileGrid { meta, tiles })
}

/// Reassemble the valid regions of every tile into the original raster.
pub fn stitch_tiles(grid: &TileGrid) -> Result<RgbImage> {
    let m = &grid.meta;
    if grid.tiles.len() != (m.rows * m.cols) as usize {
        return Err(Error::InconsistentGrid(format!("{} tiles for a {}x{} grid", grid.tiles.len(), m.rows, m.cols)));
    }
    if (m.rows, m.cols) != grid_dims(m.scene_height, m.scene_width, m.tile_size) {
        return Err(Error::InconsistentGrid("rows/cols disagree with scene size".into()));
    }
    let mut out = RgbImage::new(m.scene_width, m.scene_height);
    for (i, tile) in grid.tiles.iter().enumerate() {
        let expected = TileCoord::new(i as u32 / m.cols, i as u32 % m.cols);
        if tile.coord != expected {
            return Err(Error::InconsistentGrid(format!("tile {i} has coord {:?}, expected {expected:?}", tile.coord)));
        }
        if tile.pixels.dimensions() != (m.tile_size, m.tile_size) {
            return Err(Error::InconsistentGrid(format!("tile {i} is {:?}", tile.pixels.dimensions())));
        }
        paste(&mut out, tile, m.tile_size);
    }
    Ok(out)
}

pub const GRID_FILE: &str = "grid.json";

pub fn tile_file_name(coord: TileCoord) -> String {
    format!("tile_r{}_c{}.png", coord.row, coord.col)
}

/// Write every tile as PNG plus `grid.json`.
pub fn save_grid(grid: &TileGrid, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for tile in &grid.tiles {
        save_png(&tile.pixels, dir.join(tile_file_name(tile.coord)))?;
    }
    std::fs::write(dir.join(GRID_FILE), serde_json::to_string_pretty(&grid.meta)? + "\n")?;
    Ok(())
}

/// Read a directory written by [`save_grid`].
pub fn load_grid(dir: impl AsRef<Path>) -> Result<TileGrid> {
    let dir = dir.as_ref();
    let meta_path = dir.join(GRID_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::UnreadableFile { path: meta_path.clone(), reason: e.to_string() })?;
    let meta: GridMeta = serde_json::from_str(&text)?;
    let mut tiles = Vec::with_capacity((meta.rows * meta.cols) as usize);
    for row in 0..meta.rows {
        for col in 0..meta.cols {
            let coord = TileCoord::new(row, col);
            let pixels = load_scene(dir.join(tile_file_name(coord)))?.pixels().clone();
            if pixels.dimensions() != (meta.tile_size, meta.tile_size) {
                return Err(Error::InconsistentGrid(format!("{} is {:?}", tile_file_name(coord), pixels.dimensions())));
            }
            tiles.push(Tile { coord, pixels, valid_region: meta.valid_region(coord) });
        }
    }
    Ok(TileGrid { meta, tiles })
}

fn paste(dst: &mut RgbImage, tile: &Tile, tile_size: u32) {
    let (vh, vw) = valid_region(dst.height(), dst.width(), tile_size, tile.coord);
    let (y0, x0) = (tile.coord.row * tile_size, tile.coord.col * tile_size);
    for ty in 0..vh {
        for tx in 0..vw {
            dst.put_pixel(x0 + tx, y0 + ty, *tile.pixels.get_pixel(tx, ty));
        }
    }
}

/// Hard-paste `new_tile` over the footprint of `coord`; the result is forged.
///
/// The tile size is taken from `new_tile`, which must be square.
pub fn composite_tile(scene: &Scene, coord: TileCoord, new_tile: &Tile) -> Result<Scene> {
    let (w, h) = new_tile.pixels.dimensions();
    if w != h || w < MIN_TILE_SIZE {
        return Err(Error::InconsistentGrid(format!("replacement tile is {w}x{h}")));
    }
    let (rows, cols) = grid_dims(scene.height(), scene.width(), w);
    if coord.row >= rows || coord.col >= cols {
        return Err(Error::OutOfBounds { row: coord.row, col: coord.col, rows, cols });
    }
    let mut pixels = scene.pixels().clone();
    let placed = Tile { coord, ..new_tile.clone() };
    paste(&mut pixels, &placed, w);
    Ok(scene.clone().into_forged(pixels))
}
