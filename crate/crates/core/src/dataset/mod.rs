//! Annotated-imagery ingestion, batch forged-image generation and
//! train/validation manifests.

mod build;
mod isaid;
mod manifest;

pub use build::{assemble_manifest, assign_splits, build_forged_dataset, DatasetBuild, JobFailure, RemovalJobSpec, SplitConfig, Workspace};
pub use isaid::{ingest_isaid, ImageRecord, ImageRegistry, Instance, IsaidIndex, SkippedRecords};
pub use manifest::{
    validate_manifest, DatasetManifest, ForgedRef, ImageLabel, LabelCounts, ManifestEntry, Split, SplitCounts, ValidationReport, Violation, SCHEMA_VERSION,
};
