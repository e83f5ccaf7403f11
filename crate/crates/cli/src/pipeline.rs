//! Compositions of library operations shared by the CLI and the service.

use std::path::Path;

use edgewipe::features::{batch_extract, render_sfi, CannyParams, FeatureImage, PolygonAnnotation, TileFrame};
use edgewipe::imaging::{slice_tiles, PadPolicy, Scene, Tile, TileCoord, TileGrid};
use edgewipe::translate::{train_translator_with, DiscriminatorSpec, GeneratorSpec, TrainConfig, TrainObserver, TranslatorCheckpoint};
use edgewipe::Result;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Conditioning used to train a translator.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSource {
    Cfi(CannyParams),
    /// Annotations in scene pixel coordinates.
    Sfi(Vec<PolygonAnnotation>),
}

/// Architecture and optimizer settings for one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub train: TrainConfig,
}

impl TrainSpec {
    /// Read TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> std::result::Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        }
    }
}

/// `(feature, tile)` for every tile of the grid, or for `only` when given.
pub fn training_pairs(grid: &TileGrid, source: &FeatureSource, only: Option<&[TileCoord]>) -> Result<Vec<(FeatureImage, Tile)>> {
    let keep = |c: TileCoord| only.is_none_or(|o| o.contains(&c));
    match source {
        FeatureSource::Cfi(canny) => Ok(batch_extract(grid, canny)?.into_iter().filter(|(t, _)| keep(t.coord)).map(|(t, f)| (f, t)).collect()),
        FeatureSource::Sfi(annotations) => grid
            .tiles
            .iter()
            .filter(|t| keep(t.coord))
            .map(|t| Ok((render_sfi(annotations, TileFrame { coord: t.coord, tile_size: grid.meta.tile_size })?, t.clone())))
            .collect(),
    }
}

/// One-shot training on the tiles of a single scene.
pub fn train_on_scene(
    scene: &Scene,
    tile_size: u32,
    pad: PadPolicy,
    source: &FeatureSource,
    only: Option<&[TileCoord]>,
    spec: &TrainSpec,
    observer: &mut dyn TrainObserver,
) -> Result<TranslatorCheckpoint> {
    let grid = slice_tiles(scene, tile_size, pad)?;
    let pairs = training_pairs(&grid, source, only)?;
    let mut ckpt = train_translator_with(&pairs, &spec.generator, &spec.discriminator, &spec.train, observer)?;
    ckpt.meta.provenance.scene_id = Some(scene.id.clone());
    Ok(ckpt)
}
