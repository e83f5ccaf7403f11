use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::removal::ForgedMeta;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Forged,
    Pristine,
}

impl ImageLabel {
    pub fn name(self) -> &'static str {
        match self {
            ImageLabel::Forged => "forged",
            ImageLabel::Pristine => "pristine",
        }
    }

    pub fn is_forged(self) -> bool {
        self == ImageLabel::Forged
    }
}

/// Where a forged image came from: a persisted removal result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgedRef {
    pub job_id: String,
    pub result_dir: PathBuf,
    pub source_image_id: String,
    pub checkpoint_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub label: ImageLabel,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ForgedRef>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub forged: usize,
    pub pristine: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: LabelCounts,
    pub validation: LabelCounts,
}

impl SplitCounts {
    pub fn get(&self, split: Split, label: ImageLabel) -> usize {
        let c = match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
        };
        match label {
            ImageLabel::Forged => c.forged,
            ImageLabel::Pristine => c.pristine,
        }
    }

    fn get_mut(&mut self, split: Split, label: ImageLabel) -> &mut usize {
        let c = match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
        };
        match label {
            ImageLabel::Forged => &mut c.forged,
            ImageLabel::Pristine => &mut c.pristine,
        }
    }

    pub fn tally(entries: &[ManifestEntry]) -> Self {
        let mut c = SplitCounts::default();
        for e in entries {
            *c.get_mut(e.split, e.label) += 1;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub counts: SplitCounts,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, seed: u64, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { schema_version: SCHEMA_VERSION, name: name.into(), seed, counts: SplitCounts::tally(&entries), entries }
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::UnreadableFile { path: path.to_owned(), reason: e.to_string() })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per entry: path, label, split, job id.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_path", "label", "split", "job_id", "source_image_id", "checkpoint_id"]).map_err(csv_err)?;
        for e in &self.entries {
            let p = e.provenance.as_ref();
            w.write_record([
                e.image_path.to_string_lossy().as_ref(),
                e.label.name(),
                e.split.name(),
                p.map_or("", |p| p.job_id.as_str()),
                p.map_or("", |p| p.source_image_id.as_str()),
                p.map_or("", |p| p.checkpoint_id.as_str()),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SchemaVersion { found: u32 },
    MissingPath { path: PathBuf },
    Duplicate { path: PathBuf },
    CountMismatch { split: Split, label: ImageLabel, recorded: usize, actual: usize },
    MissingProvenance { path: PathBuf },
    UnreachableProvenance { path: PathBuf, reason: String },
    UnexpectedProvenance { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_provenance(p: &ForgedRef) -> std::result::Result<(), String> {
    let meta = p.result_dir.join("meta.json");
    let text = std::fs::read_to_string(&meta).map_err(|e| format!("{}: {e}", meta.display()))?;
    serde_json::from_str::<ForgedMeta>(&text).map_err(|e| format!("{}: {e}", meta.display()))?;
    Ok(())
}

/// Check paths, counts, duplicates and forged provenance. Never fails; the
/// report lists every problem found.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let mut violations = Vec::new();
    if manifest.schema_version != SCHEMA_VERSION {
        violations.push(Violation::SchemaVersion { found: manifest.schema_version });
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(&e.image_path) {
            violations.push(Violation::Duplicate { path: e.image_path.clone() });
        }
        if !e.image_path.is_file() {
            violations.push(Violation::MissingPath { path: e.image_path.clone() });
        }
        match (e.label, &e.provenance) {
            (ImageLabel::Forged, None) => violations.push(Violation::MissingProvenance { path: e.image_path.clone() }),
            (ImageLabel::Forged, Some(p)) => {
                if let Err(reason) = check_provenance(p) {
                    violations.push(Violation::UnreachableProvenance { path: e.image_path.clone(), reason });
                }
            }
            (ImageLabel::Pristine, Some(_)) => violations.push(Violation::UnexpectedProvenance { path: e.image_path.clone() }),
            (ImageLabel::Pristine, None) => {}
        }
    }
    let actual = SplitCounts::tally(&manifest.entries);
    for split in [Split::Train, Split::Validation] {
        for label in [ImageLabel::Forged, ImageLabel::Pristine] {
            let (recorded, actual) = (manifest.counts.get(split, label), actual.get(split, label));
            if recorded != actual {
                violations.push(Violation::CountMismatch { split, label, recorded, actual });
            }
        }
    }
    ValidationReport { entries_checked: manifest.entries.len(), violations }
}
