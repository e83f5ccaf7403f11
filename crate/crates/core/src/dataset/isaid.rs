//! COCO-style instance-segmentation ingestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::PolygonAnnotation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// One or more rings in scene pixel coordinates.
    pub polygons: Vec<Vec<(f64, f64)>>,
}

/// Why an input record was dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecords {
    pub images_missing_file: usize,
    pub images_malformed: usize,
    pub annotations_malformed: usize,
    pub annotations_unknown_image: usize,
    pub annotations_unknown_category: usize,
}

impl SkippedRecords {
    pub fn total(&self) -> usize {
        self.images_missing_file + self.images_malformed + self.annotations_malformed + self.annotations_unknown_image + self.annotations_unknown_category
    }
}

/// Image registry plus annotations indexed by image and by class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IsaidIndex {
    pub root: PathBuf,
    pub images: BTreeMap<u64, ImageRecord>,
    pub categories: BTreeMap<u32, String>,
    pub by_image: BTreeMap<u64, Vec<Instance>>,
    /// Category id -> (image id, instance id) pairs.
    pub by_class: BTreeMap<u32, Vec<(u64, u64)>>,
    pub skipped: SkippedRecords,
}

impl IsaidIndex {
    /// Instance count per category name.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.by_class.iter().map(|(c, v)| (self.categories[c].clone(), v.len())).collect()
    }

    pub fn polygon_count(&self) -> usize {
        self.by_image.values().flatten().map(|i| i.polygons.len()).sum()
    }

    /// Annotations of one image as renderable polygons, one per ring.
    pub fn annotations(&self, image_id: u64) -> Vec<PolygonAnnotation> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .filter(|i| i.category_id <= u8::MAX as u32)
            .flat_map(|i| i.polygons.iter().map(move |p| PolygonAnnotation { class_id: i.category_id as u8, vertices: p.clone() }))
            .collect()
    }

    /// Image id -> path, keyed by the decimal id.
    pub fn registry(&self) -> ImageRegistry {
        self.images.values().map(|r| (r.id.to_string(), r.path.clone())).collect()
    }
}

/// Image id -> file path.
pub type ImageRegistry = BTreeMap<String, PathBuf>;

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    #[serde(default)]
    width: u32,
    #[serde(default)]
    height: u32,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u32,
    name: String,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    segmentation: Vec<Vec<f64>>,
}

fn annotation_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut any_entry = false;
    let mut files = Vec::new();
    for dir in [root.to_path_buf(), root.join("annotations")] {
        let Ok(rd) = std::fs::read_dir(&dir) else { continue };
        for e in rd {
            let p = e?.path();
            any_entry = true;
            if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
                files.push(p);
            }
        }
    }
    if !any_entry {
        return Err(Error::EmptyDirectory(root.to_owned()));
    }
    if files.is_empty() {
        return Err(Error::MissingAnnotations(root.to_owned()));
    }
    files.sort();
    Ok(files)
}

fn resolve_image(root: &Path, file_name: &str) -> Option<PathBuf> {
    [root.join("images").join(file_name), root.join(file_name)].into_iter().find(|p| p.is_file())
}

fn rings(segmentation: &[Vec<f64>]) -> Option<Vec<Vec<(f64, f64)>>> {
    let rings: Vec<Vec<(f64, f64)>> = segmentation.iter().map(|flat| flat.chunks_exact(2).map(|c| (c[0], c[1])).collect()).collect();
    let ok = !rings.is_empty()
        && segmentation.iter().all(|f| f.len() % 2 == 0 && f.len() >= 6 && f.iter().all(|v| v.is_finite()));
    ok.then_some(rings)
}

fn array<'a>(doc: &'a Value, key: &str) -> &'a [Value] {
    doc.get(key).and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[])
}

/// Index a directory holding images (directly or under `images/`) and
/// COCO-style JSON (directly or under `annotations/`).
///
/// Malformed or dangling records are skipped and counted.
pub fn ingest_isaid(root: impl AsRef<Path>) -> Result<IsaidIndex> {
    let root = root.as_ref();
    let mut index = IsaidIndex { root: root.to_owned(), ..Default::default() };
    let mut raw_annotations = Vec::new();
    for file in annotation_files(root)? {
        let text = std::fs::read_to_string(&file)?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| Error::MissingAnnotations(file.join(format!("<{e}>"))))?;
        if doc.get("images").is_none() && doc.get("annotations").is_none() {
            continue;
        }
        for c in array(&doc, "categories") {
            if let Ok(c) = RawCategory::deserialize(c) {
                index.categories.insert(c.id, c.name);
            }
        }
        for img in array(&doc, "images") {
            match RawImage::deserialize(img) {
                Ok(r) => match resolve_image(root, &r.file_name) {
                    Some(path) => {
                        index.images.insert(r.id, ImageRecord { id: r.id, path, width: r.width, height: r.height });
                    }
                    None => index.skipped.images_missing_file += 1,
                },
                Err(_) => index.skipped.images_malformed += 1,
            }
        }
        raw_annotations.extend(array(&doc, "annotations").iter().cloned());
    }
    if index.images.is_empty() && raw_annotations.is_empty() && index.skipped.total() == 0 {
        return Err(Error::MissingAnnotations(root.to_owned()));
    }
    for a in raw_annotations {
        let parsed = RawAnnotation::deserialize(&a).ok().and_then(|r| rings(&r.segmentation).map(|p| (r, p)));
        let Some((r, polygons)) = parsed else {
            index.skipped.annotations_malformed += 1;
            continue;
        };
        if !index.images.contains_key(&r.image_id) {
            index.skipped.annotations_unknown_image += 1;
            continue;
        }
        if !index.categories.contains_key(&r.category_id) {
            index.skipped.annotations_unknown_category += 1;
            continue;
        }
        index.by_class.entry(r.category_id).or_default().push((r.image_id, r.id));
        index.by_image.entry(r.image_id).or_default().push(Instance { id: r.id, image_id: r.image_id, category_id: r.category_id, polygons });
    }
    for v in index.by_class.values_mut() {
        v.sort_unstable();
    }
    if index.skipped.total() > 0 {
        log::warn!("{}: skipped {} malformed records: {:?}", root.display(), index.skipped.total(), index.skipped);
    }
    Ok(index)
}
