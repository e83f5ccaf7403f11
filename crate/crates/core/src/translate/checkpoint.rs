use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::{build_generator, Generator};
use super::loss::LossRecord;
use super::spec::{DiscriminatorSpec, GeneratorSpec, TrainConfig};
use super::train::{feature_tensor, tensor_image};
use crate::error::{Error, Result};
use crate::features::{FeatureImage, FeatureKind, FeatureParams};
use crate::imaging::{Tile, TileCoord};
use crate::nn::{ParamStore, Tape};

pub const WEIGHTS_FILE: &str = "translator.safetensors";
pub const META_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "losses.csv";
const META_KEY: &str = "edgewipe.checkpoint";

/// Where the training pairs came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub scene_id: Option<String>,
    pub feature_kind: FeatureKind,
    pub feature_params: FeatureParams,
    pub tile_size: u32,
    pub num_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub steps: usize,
    pub last: Option<LossRecord>,
    /// Mean `g_l1` over the final 100 steps (or all, if fewer).
    pub tail_mean_l1: f64,
}

impl LossSummary {
    pub fn from_log(log: &[LossRecord]) -> Self {
        let tail = &log[log.len().saturating_sub(100)..];
        let tail_mean_l1 = if tail.is_empty() { 0.0 } else { tail.iter().map(|r| r.g_l1).sum::<f64>() / tail.len() as f64 };
        LossSummary { steps: log.len(), last: log.last().copied(), tail_mean_l1 }
    }
}

/// Everything except the weights; stored in the archive header and as a JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub id: String,
    pub generator_spec: GeneratorSpec,
    pub discriminator_spec: DiscriminatorSpec,
    pub train_config: TrainConfig,
    pub provenance: TrainingProvenance,
    pub loss_summary: LossSummary,
    pub weights_sha256: String,
}

/// A trained translator. Immutable once built; safe to share across threads.
#[derive(Clone, Debug)]
pub struct TranslatorCheckpoint {
    pub meta: CheckpointMeta,
    pub generator: Generator,
    pub weights: ParamStore<f32>,
    /// Per-step losses; empty when loaded from an archive without a loss CSV.
    pub loss_log: Vec<LossRecord>,
}

impl TranslatorCheckpoint {
    pub fn new(
        generator: Generator,
        weights: ParamStore<f32>,
        discriminator_spec: DiscriminatorSpec,
        train_config: TrainConfig,
        provenance: TrainingProvenance,
        loss_log: Vec<LossRecord>,
    ) -> Result<Self> {
        let sha = weights.checksum();
        let meta = CheckpointMeta {
            id: sha[..16].to_string(),
            generator_spec: generator.spec.clone(),
            discriminator_spec,
            train_config,
            provenance,
            loss_summary: LossSummary::from_log(&loss_log),
            weights_sha256: sha,
        };
        Ok(TranslatorCheckpoint { meta, generator, weights, loss_log })
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn tile_size(&self) -> u32 {
        self.meta.provenance.tile_size
    }

    /// Write `translator.safetensors` (weights, with the metadata in its
    /// header), `checkpoint.json` and `losses.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta_json = serde_json::to_string(&self.meta)?;
        let header = HashMap::from([(META_KEY.to_string(), meta_json)]);
        let archive = dir.join(WEIGHTS_FILE);
        std::fs::write(&archive, self.weights.to_safetensors_with(Some(header))?)?;
        std::fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&self.meta)?)?;
        write_loss_csv(&self.loss_log, dir.join(LOSS_FILE))?;
        Ok(archive)
    }

    /// Load from a checkpoint directory or directly from its archive file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = if path.is_dir() { path.join(WEIGHTS_FILE) } else { path.to_owned() };
        let bytes = std::fs::read(&archive).map_err(|e| Error::UnreadableFile { path: archive.clone(), reason: e.to_string() })?;
        let header = ParamStore::<f32>::safetensors_metadata(&bytes)?;
        let meta_json = header.get(META_KEY).ok_or_else(|| Error::Weights(format!("{} has no checkpoint metadata", archive.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        let stored = ParamStore::<f32>::from_safetensors(&bytes)?;
        let (generator, mut weights) = build_generator::<f32>(&meta.generator_spec, 0)?;
        weights.load_from(&stored)?;
        if weights.checksum() != meta.weights_sha256 {
            return Err(Error::Weights(format!("{}: weight checksum does not match metadata", archive.display())));
        }
        let csv_path = archive.with_file_name(LOSS_FILE);
        let loss_log = if csv_path.exists() { read_loss_csv(&csv_path)? } else { Vec::new() };
        Ok(TranslatorCheckpoint { meta, generator, weights, loss_log })
    }
}

pub fn write_loss_csv(log: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.into()))?;
    for r in log {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Io(e.into()))?;
    r.deserialize().map(|rec| rec.map_err(|e| Error::Io(e.into()))).collect()
}

/// Run the generator on one feature map.
///
/// The returned tile has coordinate (0, 0) and a full valid region; callers
/// placing it in a grid set the coordinate.
pub fn translate(ckpt: &TranslatorCheckpoint, feature: &FeatureImage) -> Result<Tile> {
    let expected_kind = ckpt.meta.provenance.feature_kind;
    if feature.kind != expected_kind {
        return Err(Error::WrongFeatureKind { expected: expected_kind.name(), got: feature.kind.name() });
    }
    let ts = ckpt.tile_size();
    if feature.size() != (ts, ts) {
        return Err(Error::DimMismatch { expected: (ts, ts), got: feature.size() });
    }
    let tape = Tape::<f32>::new();
    let params = ckpt.weights.bind(&tape, false);
    let x = tape.constant(feature_tensor(feature));
    let y = ckpt.generator.forward(&tape, &params, x);
    let pixels = tensor_image(&tape.value(y));
    Ok(Tile { coord: TileCoord::new(0, 0), pixels, valid_region: (ts, ts) })
}
