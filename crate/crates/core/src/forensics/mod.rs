//! Forgery evaluation: object scoring, forged-image detectors, ROC analysis
//! and 2-D projections of backbone features.

mod detector;
mod evaluate;
pub mod plot;
mod projection;
mod roc;
mod scorer;

pub use detector::{
    image_input, train_detector_on, Backbone, Detector, DetectorConfig, DetectorKind, EpochLog, BACKBONE_CLASSES, BACKBONE_INPUT,
};
pub use evaluate::{detector_roc, evaluate_detectors, load_split, summary_table, train_detector, DetectorEvaluation};
pub use projection::{embed_projection, embed_projection_with, silhouette, tsne, EmbeddingProjection, TsneParams};
pub use roc::{roc_curve, RocReport};
pub use scorer::{detection_table_csv, display_label, score_objects, DetectionEntry, DetectionScore, ObjectScorer, StubScorer};
