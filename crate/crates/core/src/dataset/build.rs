use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::isaid::ImageRegistry;
use super::manifest::{DatasetManifest, ForgedRef, ImageLabel, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::features::CannyParams;
use crate::imaging::{load_scene, slice_tiles, PadPolicy};
use crate::removal::{remove_object, RemovalMask};
use crate::translate::TranslatorCheckpoint;

/// Directory layout: `images/`, `forged/`, `manifests/`, `checkpoints/`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let ws = Workspace { root: root.as_ref().to_owned() };
        for d in [ws.images_dir(), ws.forged_dir(), ws.manifests_dir(), ws.checkpoints_dir()] {
            std::fs::create_dir_all(d)?;
        }
        Ok(ws)
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn forged_dir(&self) -> PathBuf {
        self.root.join("forged")
    }

    pub fn manifests_dir(&self) -> PathBuf {
        self.root.join("manifests")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_dir(&self, id: &str) -> PathBuf {
        self.checkpoints_dir().join(id)
    }

    /// Save under `checkpoints/<id>/` and return the id.
    pub fn store_checkpoint(&self, ckpt: &TranslatorCheckpoint) -> Result<String> {
        ckpt.save(self.checkpoint_dir(ckpt.id()))?;
        Ok(ckpt.id().to_string())
    }

    pub fn load_checkpoint(&self, id: &str) -> Result<TranslatorCheckpoint> {
        let ckpt = TranslatorCheckpoint::load(self.checkpoint_dir(id))?;
        if ckpt.id() != id {
            return Err(Error::CheckpointMismatch(format!("directory {id} holds checkpoint {}", ckpt.id())));
        }
        Ok(ckpt)
    }
}

/// One forged image to produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalJobSpec {
    pub job_id: String,
    pub source_image_id: String,
    pub mask: RemovalMask,
    pub checkpoint_id: String,
    #[serde(default)]
    pub canny: CannyParams,
}

/// Target image counts per split and label. When fewer images are
/// available, every image is still used and the counts scale proportionally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_forged: usize,
    pub validation_forged: usize,
    pub train_pristine: usize,
    pub validation_pristine: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_forged: 162, validation_forged: 95, train_pristine: 266, validation_pristine: 114 }
    }
}

impl SplitConfig {
    /// Train/validation sizes for `available` images of one label.
    pub fn sizes(&self, label: ImageLabel, available: usize) -> (usize, usize) {
        let (t, v) = match label {
            ImageLabel::Forged => (self.train_forged, self.validation_forged),
            ImageLabel::Pristine => (self.train_pristine, self.validation_pristine),
        };
        if t + v == 0 {
            return (available, 0);
        }
        let train = (2 * available * t + (t + v)) / (2 * (t + v));
        (train, available - train)
    }
}

/// Stratified seeded split: candidates are sorted by path, shuffled, and
/// the first `train` go to the training split.
pub fn assign_splits(mut candidates: Vec<(PathBuf, Option<ForgedRef>)>, label: ImageLabel, config: &SplitConfig, seed: u64) -> Vec<ManifestEntry> {
    candidates.sort_by(|a, b| a.0.cmp(&b.0));
    let stream = match label {
        ImageLabel::Forged => 0x666f72676564,
        ImageLabel::Pristine => 0x7072697374,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
    candidates.shuffle(&mut rng);
    let (train, _) = config.sizes(label, candidates.len());
    let mut entries: Vec<ManifestEntry> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, (image_path, provenance))| ManifestEntry { image_path, label, split: if i < train { Split::Train } else { Split::Validation }, provenance })
        .collect();
    entries.sort_by(|a, b| (a.split, &a.image_path).cmp(&(b.split, &b.image_path)));
    entries
}

/// Build a manifest from already-produced images.
pub fn assemble_manifest(
    name: &str,
    forged: Vec<(PathBuf, ForgedRef)>,
    pristine: Vec<PathBuf>,
    config: &SplitConfig,
    seed: u64,
) -> DatasetManifest {
    let mut entries = assign_splits(forged.into_iter().map(|(p, r)| (p, Some(r))).collect(), ImageLabel::Forged, config, seed);
    entries.extend(assign_splits(pristine.into_iter().map(|p| (p, None)).collect(), ImageLabel::Pristine, config, seed));
    entries.sort_by(|a, b| (a.split, a.label, &a.image_path).cmp(&(b.split, b.label, &b.image_path)));
    DatasetManifest::new(name, seed, entries)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub job_id: String,
    pub reason: String,
}

impl From<&JobFailure> for Error {
    fn from(f: &JobFailure) -> Error {
        Error::JobFailed { job_id: f.job_id.clone(), reason: f.reason.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBuild {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub failed: Vec<JobFailure>,
}

fn run_job(ws: &Workspace, job: &RemovalJobSpec, sources: &ImageRegistry, ckpts: &HashMap<String, std::result::Result<TranslatorCheckpoint, String>>) -> Result<(PathBuf, ForgedRef)> {
    let path = sources.get(&job.source_image_id).ok_or_else(|| Error::InvalidParams(format!("unknown source image {}", job.source_image_id)))?;
    let ckpt = match &ckpts[&job.checkpoint_id] {
        Ok(c) => c,
        Err(reason) => return Err(Error::CheckpointMismatch(reason.clone())),
    };
    let scene = load_scene(path)?;
    let grid = slice_tiles(&scene, ckpt.tile_size(), PadPolicy::Reflect)?;
    let result = remove_object(&scene, &grid, &job.mask, ckpt, &job.canny)?;
    let result_dir = ws.forged_dir().join(&job.job_id);
    result.save(&result_dir)?;
    let provenance = ForgedRef {
        job_id: job.job_id.clone(),
        result_dir: result_dir.clone(),
        source_image_id: job.source_image_id.clone(),
        checkpoint_id: job.checkpoint_id.clone(),
    };
    Ok((result_dir.join("forged.png"), provenance))
}

/// Run every removal job on a worker pool, then split forged and pristine
/// images and write `manifests/<name>.json`. Failed jobs are reported, not
/// fatal.
pub fn build_forged_dataset(
    ws: &Workspace,
    name: &str,
    jobs: &[RemovalJobSpec],
    sources: &ImageRegistry,
    pristine_pool: &ImageRegistry,
    config: &SplitConfig,
    seed: u64,
) -> Result<DatasetBuild> {
    if pristine_pool.is_empty() {
        return Err(Error::InvalidParams("empty pristine pool".into()));
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = jobs.iter().find(|j| !ids.insert(j.job_id.as_str())) {
        return Err(Error::InvalidParams(format!("duplicate job id {}", dup.job_id)));
    }
    let ckpts: HashMap<String, std::result::Result<TranslatorCheckpoint, String>> = jobs
        .iter()
        .map(|j| j.checkpoint_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|id| {
            let loaded = ws.load_checkpoint(&id).map_err(|e| e.to_string());
            (id, loaded)
        })
        .collect();
    let mut outcomes: Vec<(String, Result<(PathBuf, ForgedRef)>)> = jobs.par_iter().map(|j| (j.job_id.clone(), run_job(ws, j, sources, &ckpts))).collect();
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut forged = Vec::new();
    let mut failed = Vec::new();
    for (job_id, outcome) in outcomes {
        match outcome {
            Ok(ok) => forged.push(ok),
            Err(e) => {
                log::warn!("removal job {job_id} failed: {e}");
                failed.push(JobFailure { job_id, reason: e.to_string() });
            }
        }
    }
    let manifest = assemble_manifest(name, forged, pristine_pool.values().cloned().collect(), config, seed);
    let manifest_path = ws.manifests_dir().join(format!("{name}.json"));
    std::fs::create_dir_all(ws.manifests_dir())?;
    manifest.save_json(&manifest_path)?;
    std::fs::write(manifest_path.with_extension("csv"), manifest.to_csv()?)?;
    Ok(DatasetBuild { manifest, manifest_path, failed })
}
