use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use edgewipe::dataset::{
    build_forged_dataset, ingest_isaid, validate_manifest, DatasetManifest, ImageRegistry, RemovalJobSpec, Split, SplitConfig, Workspace,
};
use edgewipe::features::{extract_cfi, render_sfi, CannyParams, FeatureParams, PolygonAnnotation, TileFrame};
use edgewipe::forensics::{
    detector_roc, embed_projection_with, load_split, plot, score_objects, train_detector, Backbone, Detector, DetectorConfig, DetectorKind,
    ObjectScorer, StubScorer, TsneParams,
};
use edgewipe::imaging::{load_grid, load_scene, save_grid, save_png, slice_tiles, tile_file_name, PadPolicy, Tile, TileCoord, GRID_FILE};
use edgewipe::metrics::{degradation_report, Region};
use edgewipe::removal::{reconstruction_baseline, remove_object, RemovalMask};
use edgewipe::translate::{PngDumper, Silent, TrainObserver, TranslatorCheckpoint};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::args::*;
use crate::config::Config;
use crate::error::CliError;
use crate::pipeline::{train_on_scene, FeatureSource, TrainSpec};
use crate::remote::RemoteScorer;

type Out = Result<Value, CliError>;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| edgewipe::Error::UnreadableFile { path: path.to_owned(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", path.display()), 1))
}

fn canny_from(base: CannyParams, a: &CannyArgs) -> CannyParams {
    CannyParams {
        gaussian_sigma: a.sigma.unwrap_or(base.gaussian_sigma),
        low_threshold: a.low.unwrap_or(base.low_threshold),
        high_threshold: a.high.unwrap_or(base.high_threshold),
        ..base
    }
}

fn pad_policy(p: Option<Pad>, cfg: &Config) -> PadPolicy {
    match p {
        Some(Pad::Reflect) => PadPolicy::Reflect,
        Some(Pad::Zero) => PadPolicy::Zero,
        None => cfg.pad_policy,
    }
}

/// Canny parameters a CFI checkpoint was trained with.
fn checkpoint_canny(ckpt: &TranslatorCheckpoint) -> Result<CannyParams, CliError> {
    match &ckpt.meta.provenance.feature_params {
        FeatureParams::Canny(c) => Ok(*c),
        FeatureParams::Palette(_) => Err(CliError::from(edgewipe::Error::WrongFeatureKind { expected: "CFI", got: "SFI" })),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Out {
    Ok(serde_json::to_value(v)?)
}

pub fn dispatch(command: Command, cfg: &Config) -> Out {
    match command {
        Command::Slice { input, tile, pad, out } => {
            let scene = load_scene(&input)?;
            let grid = slice_tiles(&scene, tile.unwrap_or(cfg.tile_size), pad_policy(pad, cfg))?;
            save_grid(&grid, &out)?;
            to_value(&grid.meta)
        }
        Command::ExtractCfi { input, out, canny } => extract(&input, &out, &canny_from(cfg.canny, &canny)),
        Command::RenderSfi { annotations, row, col, tile, out } => {
            let annotations: Vec<PolygonAnnotation> = read_json(&annotations)?;
            let frame = TileFrame { coord: TileCoord::new(row, col), tile_size: tile.unwrap_or(cfg.tile_size) };
            let sfi = render_sfi(&annotations, frame)?;
            sfi.save_png(&out)?;
            Ok(json!({ "out": out, "labelled_pixels": sfi.nonzero() }))
        }
        Command::Train(args) => train(args, cfg),
        Command::Remove { scene, mask, ckpt, out } => {
            let scene = load_scene(&scene)?;
            let mask: RemovalMask = read_json(&mask)?;
            let ckpt = TranslatorCheckpoint::load(&ckpt)?;
            let grid = slice_tiles(&scene, ckpt.tile_size(), cfg.pad_policy)?;
            let result = remove_object(&scene, &grid, &mask, &ckpt, &checkpoint_canny(&ckpt)?)?;
            result.save(&out)?;
            to_value(&result.meta)
        }
        Command::Baseline { scene, ckpt, row, col, out } => {
            let scene = load_scene(&scene)?;
            let ckpt = TranslatorCheckpoint::load(&ckpt)?;
            let grid = slice_tiles(&scene, ckpt.tile_size(), cfg.pad_policy)?;
            let tile: Tile = reconstruction_baseline(&scene, &grid, TileCoord::new(row, col), &ckpt, &checkpoint_canny(&ckpt)?)?;
            save_png(&tile.pixels, &out)?;
            Ok(json!({ "out": out, "checkpoint_id": ckpt.id(), "row": row, "col": col }))
        }
        Command::Metrics(args) => metrics(args, cfg),
        Command::Dataset(cmd) => dataset(cmd, cfg),
        Command::Detector(cmd) => detector(cmd),
        Command::ScoreObjects { image, annotations, remote } => {
            let img = load_scene(&image)?.pixels().clone();
            let scorer: Box<dyn ObjectScorer> = if remote {
                let url = cfg.scorer_url.clone().ok_or_else(|| CliError::usage("--remote needs scorer_url (or EDGEWIPE_SCORER_URL)"))?;
                Box::new(RemoteScorer::new(url, cfg.scorer_api_key.clone(), Duration::from_millis(cfg.scorer_min_interval_ms), cfg.scorer_retries)?)
            } else {
                let objects: Vec<PolygonAnnotation> = match annotations {
                    Some(p) => read_json(&p)?,
                    None => Vec::new(),
                };
                Box::new(StubScorer::new(objects))
            };
            to_value(&score_objects(&img, scorer.as_ref())?)
        }
        Command::Project { manifest, split, backbone, seed, perplexity, out } => {
            let manifest = DatasetManifest::load_json(&manifest)?;
            let backbone = match backbone {
                Some(p) => Backbone::load(p)?,
                None => Backbone::seeded(seed),
            };
            let samples = load_split(&manifest, split_of(split))?;
            let images: Vec<_> = samples.iter().map(|(i, _)| i.clone()).collect();
            let labels: Vec<bool> = samples.iter().map(|(_, l)| *l).collect();
            let params = TsneParams { perplexity, ..TsneParams::default() };
            let projection = embed_projection_with(&images, &labels, &backbone, seed, &params)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("projection.json"), serde_json::to_string_pretty(&projection)?)?;
            std::fs::write(out.join("projection.svg"), plot::projection_svg(&projection))?;
            Ok(json!({ "out": out, "points": projection.points_2d.len(), "perplexity": projection.perplexity, "backbone": projection.backbone }))
        }
        Command::Serve { .. } => unreachable!("serve is handled by the caller"),
    }
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
    }
}

fn extract(input: &Path, out: &Path, canny: &CannyParams) -> Out {
    if input.is_dir() {
        let grid = load_grid(input)?;
        std::fs::create_dir_all(out)?;
        let mut edges = 0;
        for tile in &grid.tiles {
            let cfi = extract_cfi(tile, canny)?;
            edges += cfi.nonzero();
            cfi.save_png(out.join(format!("cfi_{}", tile_file_name(tile.coord).trim_start_matches("tile_"))))?;
        }
        return Ok(json!({ "out": out, "tiles": grid.tiles.len(), "edge_pixels": edges, "grid": input.join(GRID_FILE) }));
    }
    let pixels = load_scene(input)?.pixels().clone();
    let (w, h) = pixels.dimensions();
    if w != h {
        return Err(CliError::from(edgewipe::Error::ShapeMismatch(format!("tile must be square, got {w}x{h}"))));
    }
    let tile = Tile { coord: TileCoord::new(0, 0), pixels, valid_region: (h, w) };
    let cfi = extract_cfi(&tile, canny)?;
    cfi.save_png(out)?;
    Ok(json!({ "out": out, "edge_pixels": cfi.nonzero() }))
}

fn train(a: TrainArgs, cfg: &Config) -> Out {
    let mut spec = match &a.spec {
        Some(p) => TrainSpec::load(p)?,
        None => TrainSpec::default(),
    };
    if let Some(s) = a.steps {
        spec.train.steps = s;
    }
    if let Some(s) = a.seed {
        spec.train.seed = s;
    }
    if a.dump_every.is_some() {
        spec.train.dump_every = a.dump_every;
    }
    let source = match a.feature {
        Feature::Cfi => FeatureSource::Cfi(canny_from(cfg.canny, &a.canny)),
        Feature::Sfi => {
            let path = a.annotations.as_ref().ok_or_else(|| CliError::usage("--feature sfi needs --annotations"))?;
            FeatureSource::Sfi(read_json(path)?)
        }
    };
    let scene = load_scene(&a.scene)?;
    let only: Vec<TileCoord> = a.only.iter().map(|&(r, c)| TileCoord::new(r, c)).collect();
    let mut observer: Box<dyn TrainObserver> = match (&a.dump_dir, spec.train.dump_every) {
        (Some(dir), Some(_)) => Box::new(PngDumper { dir: dir.clone() }),
        (None, Some(_)) => Box::new(PngDumper { dir: a.out.join("dumps") }),
        _ => Box::new(Silent),
    };
    let ckpt = train_on_scene(
        &scene,
        a.tile.unwrap_or(cfg.tile_size),
        cfg.pad_policy,
        &source,
        (!only.is_empty()).then_some(only.as_slice()),
        &spec,
        observer.as_mut(),
    )?;
    ckpt.save(&a.out)?;
    to_value(&ckpt.meta)
}

fn metrics(a: MetricsArgs, cfg: &Config) -> Out {
    let ga = load_scene(&a.a)?;
    let gb = load_scene(&a.b)?;
    let tile_size = a.tile.unwrap_or(cfg.tile_size);
    let region = match a.region {
        RegionArg::Full => Region::FullImage,
        RegionArg::Tile => {
            let (Some(row), Some(col)) = (a.row, a.col) else {
                return Err(CliError::usage("--region tile needs --row and --col"));
            };
            Region::Tile { coord: TileCoord::new(row, col), tile_size }
        }
        RegionArg::Masked => {
            let path = a.mask.as_ref().ok_or_else(|| CliError::usage("--region masked needs --mask"))?;
            Region::MaskedRegion { mask: read_json(path)?, tile_size }
        }
    };
    to_value(&degradation_report(&ga, &gb, &region)?)
}

/// A directory of images keyed by file stem, or a JSON id -> path map.
fn registry(path: &Path) -> Result<ImageRegistry, CliError> {
    if path.is_dir() {
        let mut reg = ImageRegistry::new();
        for e in std::fs::read_dir(path)? {
            let p = e?.path();
            let is_image = p.extension().and_then(|x| x.to_str()).is_some_and(|x| ["png", "jpg", "jpeg", "tif", "tiff"].contains(&x.to_ascii_lowercase().as_str()));
            if p.is_file() && is_image {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                reg.insert(stem, p);
            }
        }
        Ok(reg)
    } else {
        let map: BTreeMap<String, PathBuf> = read_json(path)?;
        Ok(map)
    }
}

fn dataset(cmd: DatasetCommand, cfg: &Config) -> Out {
    match cmd {
        DatasetCommand::Build { jobs, sources, pristine, name, seed, split } => {
            let ws = Workspace::create(&cfg.workspace)?;
            let jobs: Vec<RemovalJobSpec> = read_json(&jobs)?;
            let split: SplitConfig = match split {
                Some(p) => read_json(&p)?,
                None => SplitConfig::default(),
            };
            let build = build_forged_dataset(&ws, &name, &jobs, &registry(&sources)?, &registry(&pristine)?, &split, seed)?;
            Ok(json!({ "manifest": build.manifest_path, "counts": build.manifest.counts, "failed": build.failed }))
        }
        DatasetCommand::Ingest { root } => {
            let index = ingest_isaid(&root)?;
            Ok(json!({
                "images": index.images.len(),
                "polygons": index.polygon_count(),
                "class_counts": index.class_counts(),
                "skipped": index.skipped,
            }))
        }
        DatasetCommand::Validate { manifest } => to_value(&validate_manifest(&DatasetManifest::load_json(&manifest)?)),
    }
}

fn detector(cmd: DetectorCommand) -> Out {
    match cmd {
        DetectorCommand::Train { manifest, kind, epochs, input_size, learning_rate, seed, backbone, out } => {
            let kind = match kind {
                KindArg::BinaryCnn => DetectorKind::BinaryCnn,
                KindArg::FinetunePretrained => DetectorKind::FinetunePretrained,
            };
            let mut config = DetectorConfig::for_kind(kind);
            config.epochs = epochs.unwrap_or(config.epochs);
            config.input_size = input_size.unwrap_or(config.input_size);
            config.seed = seed.unwrap_or(config.seed);
            if let Some(lr) = learning_rate {
                config.optimizer = config.optimizer.with_learning_rate(lr);
            }
            let backbone = match (kind, backbone) {
                (_, Some(p)) => Some(Backbone::load(p)?),
                (DetectorKind::FinetunePretrained, None) => Some(Backbone::seeded(config.seed)),
                (DetectorKind::BinaryCnn, None) => None,
            };
            let manifest = DatasetManifest::load_json(&manifest)?;
            let det = train_detector(&manifest, &config, backbone.as_ref())?;
            det.save(&out)?;
            Ok(json!({ "out": out, "config": det.config, "final": det.history.last() }))
        }
        DetectorCommand::Eval { manifest, detectors, out } => {
            let manifest = DatasetManifest::load_json(&manifest)?;
            let validation = load_split(&manifest, Split::Validation)?;
            std::fs::create_dir_all(&out)?;
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for path in &detectors {
                let det = Detector::load(path)?;
                let roc = detector_roc(&det, &validation)?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "detector".into());
                std::fs::write(out.join(format!("{name}.roc.json")), serde_json::to_string_pretty(&roc)?)?;
                rows.push(json!({ "detector": name, "kind": det.config.kind, "auc": roc.auc }));
                curves.push((name, roc));
            }
            let refs: Vec<(&str, &_)> = curves.iter().map(|(n, r)| (n.as_str(), r)).collect();
            std::fs::write(out.join("roc.svg"), plot::roc_svg(&refs))?;
            Ok(json!({ "out": out, "detectors": rows }))
        }
    }
}
