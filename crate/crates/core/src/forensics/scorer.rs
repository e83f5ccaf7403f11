use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{canny, isaid_palette, CannyParams, PolygonAnnotation, SfiPalette};
use crate::raster::rasterize_polygon;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub label: String,
    /// Percent, 0..=100.
    pub confidence: f64,
}

/// Anything that can name objects in an image with a confidence.
pub trait ObjectScorer: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionScore>>;
}

/// Run a scorer and normalize its output: confidences clamped to [0, 100],
/// one entry per label (highest wins), sorted by confidence then label.
pub fn score_objects(image: &RgbImage, scorer: &dyn ObjectScorer) -> Result<Vec<DetectionScore>> {
    let mut out: Vec<DetectionScore> = Vec::new();
    for mut s in scorer.detect(image)? {
        if !s.confidence.is_finite() {
            return Err(Error::ScorerUnavailable(format!("{} returned confidence {}", scorer.name(), s.confidence)));
        }
        s.confidence = s.confidence.clamp(0.0, 100.0);
        match out.iter_mut().find(|o| o.label == s.label) {
            Some(o) => o.confidence = o.confidence.max(s.confidence),
            None => out.push(s),
        }
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.label.cmp(&b.label)));
    Ok(out)
}

/// Human-readable label for a palette class name.
pub fn display_label(class_name: &str) -> String {
    if class_name == "plane" {
        return "Airplane".into();
    }
    class_name
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Offline scorer driven by known object outlines.
///
/// An annotated object counts as visible in proportion to how much of its
/// outline still has an image edge within [`StubScorer::TOLERANCE`] pixels:
/// with `s` the fraction of outline pixels so supported, confidence is
/// `99.9 * min(1, s / 0.75)`. Objects under [`StubScorer::MIN_CONFIDENCE`]
/// are not reported, so a blank image yields nothing.
pub struct StubScorer {
    pub objects: Vec<PolygonAnnotation>,
    pub palette: SfiPalette,
    pub canny: CannyParams,
}

impl StubScorer {
    pub const TOLERANCE: i64 = 2;
    pub const MIN_CONFIDENCE: f64 = 50.0;
    const FULL_SUPPORT: f64 = 0.75;

    pub fn new(objects: Vec<PolygonAnnotation>) -> Self {
        StubScorer { objects, palette: isaid_palette(), canny: CannyParams::default() }
    }

    /// Confidence for one object given the image's edge map.
    fn object_confidence(&self, obj: &PolygonAnnotation, edges: &image::GrayImage) -> f64 {
        let (w, h) = edges.dimensions();
        let inside = rasterize_polygon(&obj.vertices, (0.0, 0.0), w, h);
        let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && inside[(y * w as i64 + x) as usize];
        let mut outline = 0usize;
        let mut supported = 0usize;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !at(x, y) || [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(dx, dy)| at(x + dx, y + dy)) {
                    continue;
                }
                outline += 1;
                let t = Self::TOLERANCE;
                let near = (-t..=t).any(|dy| {
                    (-t..=t).any(|dx| {
                        let (u, v) = (x + dx, y + dy);
                        u >= 0 && v >= 0 && u < w as i64 && v < h as i64 && edges.get_pixel(u as u32, v as u32)[0] != 0
                    })
                });
                supported += usize::from(near);
            }
        }
        if outline == 0 {
            return 0.0;
        }
        let s = supported as f64 / outline as f64;
        99.9 * (s / Self::FULL_SUPPORT).min(1.0)
    }
}

impl ObjectScorer for StubScorer {
    fn name(&self) -> &str {
        "stub"
    }

    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionScore>> {
        let edges = canny::canny(image, &self.canny)?;
        let mut out = Vec::new();
        for obj in &self.objects {
            obj.validate()?;
            let confidence = (self.object_confidence(obj, &edges) * 10.0).round() / 10.0;
            if confidence >= Self::MIN_CONFIDENCE {
                let name = self.palette.get(&obj.class_id).map_or("object", |p| p.name.as_str());
                out.push(DetectionScore { label: display_label(name), confidence });
            }
        }
        Ok(out)
    }
}

/// One cell of a detection-score table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub label: String,
    /// `"CFI"` or `"SFI"`.
    pub feature: String,
    pub column: String,
    pub confidence: f64,
}

impl DetectionEntry {
    /// Cells for every label in `labels` from one scored image; absent labels get 0.
    pub fn from_scores(scores: &[DetectionScore], labels: &[&str], feature: &str, column: &str) -> Vec<DetectionEntry> {
        labels
            .iter()
            .map(|l| DetectionEntry {
                label: l.to_string(),
                feature: feature.to_string(),
                column: column.to_string(),
                confidence: scores.iter().find(|s| s.label == *l).map_or(0.0, |s| s.confidence),
            })
            .collect()
    }
}

/// CSV with one row per (label, feature) and one column per column label.
/// Missing cells are written as 0.
pub fn detection_table_csv(entries: &[DetectionEntry]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut features: Vec<&str> = Vec::new();
    let mut columns: Vec<&str> = Vec::new();
    for e in entries {
        for (list, v) in [(&mut labels, &e.label), (&mut features, &e.feature), (&mut columns, &e.column)] {
            if !list.contains(&v.as_str()) {
                list.push(v);
            }
        }
    }
    let mut out = format!("label,feature,{}\n", columns.join(","));
    for l in &labels {
        for f in &features {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| {
                    let v = entries.iter().find(|e| e.label == *l && e.feature == *f && e.column == *c).map_or(0.0, |e| e.confidence);
                    format!("{v:.1}")
                })
                .collect();
            out.push_str(&format!("{l},{f},{}\n", cells.join(",")));
        }
    }
    out
}
