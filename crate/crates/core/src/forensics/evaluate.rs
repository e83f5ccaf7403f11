use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::detector::{train_detector_on, Backbone, Detector, DetectorConfig, DetectorKind, EpochLog};
use super::roc::{roc_curve, RocReport};
use crate::dataset::{DatasetManifest, Split};
use crate::error::Result;
use crate::imaging::load_scene;

/// Decoded images of one split with `true` marking forged.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<(RgbImage, bool)>> {
    manifest.entries_in(split).map(|e| Ok((load_scene(&e.image_path)?.pixels().clone(), e.label.is_forged()))).collect()
}

/// Train on the manifest's training split.
pub fn train_detector(manifest: &DatasetManifest, config: &DetectorConfig, backbone: Option<&Backbone>) -> Result<Detector> {
    train_detector_on(&load_split(manifest, Split::Train)?, config, backbone)
}

/// ROC of a detector over labelled images.
pub fn detector_roc(detector: &Detector, samples: &[(RgbImage, bool)]) -> Result<RocReport> {
    let images: Vec<RgbImage> = samples.iter().map(|(i, _)| i.clone()).collect();
    let labels: Vec<bool> = samples.iter().map(|(_, l)| *l).collect();
    roc_curve(&detector.predict(&images), &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEvaluation {
    pub kind: DetectorKind,
    pub config: DetectorConfig,
    pub history: Vec<EpochLog>,
    pub train_auc: f64,
    pub validation: RocReport,
}

/// Train one detector per configuration and score it on the validation split.
pub fn evaluate_detectors(manifest: &DatasetManifest, configs: &[DetectorConfig], backbone: Option<&Backbone>) -> Result<Vec<DetectorEvaluation>> {
    let train = load_split(manifest, Split::Train)?;
    let validation = load_split(manifest, Split::Validation)?;
    configs
        .iter()
        .map(|config| {
            let det = train_detector_on(&train, config, backbone)?;
            Ok(DetectorEvaluation {
                kind: config.kind,
                config: config.clone(),
                train_auc: detector_roc(&det, &train)?.auc,
                validation: detector_roc(&det, &validation)?,
                history: det.history,
            })
        })
        .collect()
}

/// Plain-text table: one row per detector.
pub fn summary_table(evals: &[DetectorEvaluation]) -> String {
    let mut s = format!("{:<22} {:>7} {:>9} {:>9} {:>9}\n", "detector", "epochs", "train_acc", "train_auc", "val_auc");
    for e in evals {
        let acc = e.history.last().map_or(f64::NAN, |h| h.accuracy);
        s += &format!("{:<22} {:>7} {:>9.3} {:>9.3} {:>9.3}\n", format!("{:?}", e.kind), e.config.epochs, acc, e.train_auc, e.validation.auc);
    }
    s
}
