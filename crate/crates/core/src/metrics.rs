//! Similarity scores between ground truth and manipulated rasters.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{render_sfi, CannyParams, FeatureKind, PolygonAnnotation, TileFrame};
use crate::imaging::{Scene, TileCoord, TileGrid};
use crate::removal::{apply_feature, erase_labels, remove_object, RemovalMask};
use crate::translate::TranslatorCheckpoint;

/// PSNR reported for identical rasters.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseConvention {
    /// Pixels scaled to [0, 1].
    Unit,
    /// Pixels on [0, 255].
    EightBit,
    /// `EightBit / 255`, the scale published comparison tables use.
    Reported,
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dimensions(), b.dimensions())));
    }
    if a.width() == 0 || a.height() == 0 {
        return Err(Error::ShapeMismatch("empty raster".into()));
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse(a: &RgbImage, b: &RgbImage, convention: MseConvention) -> Result<f64> {
    check_dims(a, b)?;
    let sum: u64 = a.as_raw().iter().zip(b.as_raw()).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum();
    let eight_bit = sum as f64 / a.as_raw().len() as f64;
    Ok(match convention {
        MseConvention::Unit => eight_bit / (255.0 * 255.0),
        MseConvention::EightBit => eight_bit,
        MseConvention::Reported => eight_bit / 255.0,
    })
}

/// `10 log10(255^2 / mse)`, or [`PSNR_CAP_DB`] when `mse == 0`.
pub fn psnr_from_mse(mse_eight_bit: f64) -> f64 {
    if mse_eight_bit == 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (255.0f64 * 255.0 / mse_eight_bit).log10()
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b, MseConvention::EightBit)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, c1: 0.01 * 0.01, c2: 0.03 * 0.03 }
    }
}

/// Luma on [0, 1].
fn gray(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0).collect()
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully contained window.
fn valid_filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over Gaussian-weighted windows of the luma channel. Only
/// windows lying entirely inside the image are used.
pub fn ssim(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    if params.window == 0 || params.window % 2 == 0 || params.sigma <= 0.0 {
        return Err(Error::InvalidParams(format!("SSIM window {} / sigma {}", params.window, params.sigma)));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if params.window > w || params.window > h {
        return Err(Error::WindowTooLarge { window: params.window, height: a.height(), width: a.width() });
    }
    let x = gray(a);
    let y = gray(b);
    let k = gaussian_window(params.window, params.sigma);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let (mx, _, _) = valid_filter(&x, w, h, &k);
    let (my, _, _) = valid_filter(&y, w, h, &k);
    let (mxx, _, _) = valid_filter(&prod(&x, &x), w, h, &k);
    let (myy, _, _) = valid_filter(&prod(&y, &y), w, h, &k);
    let (mxy, _, _) = valid_filter(&prod(&x, &y), w, h, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + params.c1) * (2.0 * cxy + params.c2)) / ((ux * ux + uy * uy + params.c1) * (vx + vy + params.c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    FullImage,
    Tile,
    MaskedRegion,
}

/// Pixel set a report is computed over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    FullImage,
    /// Scene content of one tile (its valid region).
    Tile { coord: TileCoord, tile_size: u32 },
    /// Bounding box of the mask's covered pixels, clipped to the scene.
    MaskedRegion { mask: RemovalMask, tile_size: u32 },
}

impl Region {
    pub fn kind(&self) -> RegionKind {
        match self {
            Region::FullImage => RegionKind::FullImage,
            Region::Tile { .. } => RegionKind::Tile,
            Region::MaskedRegion { .. } => RegionKind::MaskedRegion,
        }
    }

    /// `(x, y, width, height)` in scene pixels; `None` when empty.
    pub fn rect(&self, scene_width: u32, scene_height: u32) -> Result<Option<(u32, u32, u32, u32)>> {
        let clip = |x: u32, y: u32, w: u32, h: u32| {
            let w = w.min(scene_width.saturating_sub(x));
            let h = h.min(scene_height.saturating_sub(y));
            (w > 0 && h > 0).then_some((x, y, w, h))
        };
        Ok(match self {
            Region::FullImage => clip(0, 0, scene_width, scene_height),
            Region::Tile { coord, tile_size } => clip(coord.col * tile_size, coord.row * tile_size, *tile_size, *tile_size),
            Region::MaskedRegion { mask, tile_size } => {
                let c = mask.tile_coord();
                match mask.bounding_box(*tile_size)? {
                    None => None,
                    Some((x0, y0, x1, y1)) => clip(c.col * tile_size + x0, c.row * tile_size + y0, x1 - x0 + 1, y1 - y0 + 1),
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub region: RegionKind,
    pub pixels: usize,
    pub mse_unit: f64,
    pub mse_eight_bit: f64,
    pub mse_reported: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// SSIM window actually used; smaller than requested for regions narrower than it.
    pub ssim_window: usize,
    /// SSIM on luma, MSE/PSNR averaged over RGB channels.
    pub color_handling: String,
}

fn crop(img: &RgbImage, (x, y, w, h): (u32, u32, u32, u32)) -> RgbImage {
    image::imageops::crop_imm(img, x, y, w, h).to_image()
}

/// All three scores over one region of two same-sized scenes.
///
/// MSE, PSNR and SSIM share the same pixel rectangle. If that rectangle is
/// smaller than the SSIM window, the window shrinks to the largest odd size
/// that fits.
pub fn degradation_report(ground_truth: &Scene, forged: &Scene, region: &Region) -> Result<SimilarityReport> {
    check_dims(ground_truth.pixels(), forged.pixels())?;
    let rect = region
        .rect(ground_truth.width(), ground_truth.height())?
        .ok_or_else(|| Error::InvalidParams("region covers no pixels".into()))?;
    let a = crop(ground_truth.pixels(), rect);
    let b = crop(forged.pixels(), rect);
    let defaults = SsimParams::default();
    let fit = (rect.2.min(rect.3) as usize).min(defaults.window);
    let window = if fit % 2 == 0 { fit - 1 } else { fit };
    let mse8 = mse(&a, &b, MseConvention::EightBit)?;
    Ok(SimilarityReport {
        region: region.kind(),
        pixels: (rect.2 * rect.3) as usize,
        mse_unit: mse8 / (255.0 * 255.0),
        mse_eight_bit: mse8,
        mse_reported: mse8 / 255.0,
        psnr_db: psnr_from_mse(mse8),
        ssim: ssim(&a, &b, &SsimParams { window, ..defaults })?,
        ssim_window: window,
        color_handling: "ssim: luma; mse/psnr: mean over rgb".into(),
    })
}

/// Full-image, tile and masked-region reports for one removal.
pub fn removal_reports(ground_truth: &Scene, forged: &Scene, mask: &RemovalMask, tile_size: u32) -> Result<Vec<SimilarityReport>> {
    [
        Region::FullImage,
        Region::Tile { coord: mask.tile_coord(), tile_size },
        Region::MaskedRegion { mask: mask.clone(), tile_size },
    ]
    .iter()
    .map(|r| degradation_report(ground_truth, forged, r))
    .collect()
}

/// One cell group of a CFI-vs-SFI comparison: a feature kind, a column label
/// and the report computed for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub feature: FeatureKind,
    pub column: String,
    pub report: SimilarityReport,
}

/// CSV with one row per (metric, feature) and one column per label.
/// MSE uses the `reported` convention.
pub fn comparison_csv(entries: &[ComparisonEntry]) -> String {
    let mut columns: Vec<&str> = Vec::new();
    for e in entries {
        if !columns.contains(&e.column.as_str()) {
            columns.push(&e.column);
        }
    }
    let mut out = format!("metric,feature,{}\n", columns.join(","));
    let metrics: [(&str, fn(&SimilarityReport) -> f64); 3] = [("MSE", |r| r.mse_reported), ("PSNR", |r| r.psnr_db), ("SSIM", |r| r.ssim)];
    for (name, get) in metrics {
        for kind in [FeatureKind::Cfi, FeatureKind::Sfi] {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| {
                    entries
                        .iter()
                        .find(|e| e.feature == kind && e.column == *c)
                        .map(|e| format!("{:.6}", get(&e.report)))
                        .unwrap_or_default()
                })
                .collect();
            out.push_str(&format!("{name},{},{}\n", kind.name(), cells.join(",")));
        }
    }
    out
}

/// Remove the same region once through the CFI translator and once through
/// the SFI translator, scoring each against the untouched scene.
///
/// `annotations` are in scene coordinates; they are rendered into the mask's
/// tile and the labels under the mask are cleared before translation.
#[allow(clippy::too_many_arguments)]
pub fn compare_cfi_sfi(
    scene: &Scene,
    grid: &TileGrid,
    mask: &RemovalMask,
    annotations: &[PolygonAnnotation],
    cfi_checkpoint: &TranslatorCheckpoint,
    sfi_checkpoint: &TranslatorCheckpoint,
    canny: &CannyParams,
    column: &str,
    region: RegionKind,
) -> Result<[ComparisonEntry; 2]> {
    let ts = grid.meta.tile_size;
    let cfi_result = remove_object(scene, grid, mask, cfi_checkpoint, canny)?;
    let sfi = render_sfi(annotations, TileFrame { coord: mask.tile_coord(), tile_size: ts })?;
    let sfi_result = apply_feature(scene, grid, mask, erase_labels(&sfi, mask)?, sfi_checkpoint)?;
    let pick = |forged: &Scene| -> Result<SimilarityReport> {
        removal_reports(scene, forged, mask, ts)?
            .into_iter()
            .find(|r| r.region == region)
            .ok_or_else(|| Error::InvalidParams(format!("no {region:?} report")))
    };
    Ok([
        ComparisonEntry { feature: FeatureKind::Cfi, column: column.to_string(), report: pick(&cfi_result.forged_scene)? },
        ComparisonEntry { feature: FeatureKind::Sfi, column: column.to_string(), report: pick(&sfi_result.forged_scene)? },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([v; 3]))
    }

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        RgbImage::from_fn(w, h, |_, _| {
            let mut px = [0u8; 3];
            for c in &mut px {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *c = (s >> 56) as u8;
            }
            image::Rgb(px)
        })
    }

    #[test]
    fn mse_conventions() {
        let (a, b) = (solid(4, 4, 0), solid(4, 4, 255));
        assert_eq!(mse(&a, &b, MseConvention::EightBit).unwrap(), 65025.0);
        assert_eq!(mse(&a, &b, MseConvention::Unit).unwrap(), 1.0);
        assert_eq!(mse(&a, &b, MseConvention::Reported).unwrap(), 255.0);
        for c in [MseConvention::Unit, MseConvention::EightBit, MseConvention::Reported] {
            assert_eq!(mse(&a, &a, c).unwrap(), 0.0);
        }
        assert!(matches!(mse(&a, &solid(4, 5, 0), MseConvention::Unit), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn psnr_closed_forms() {
        let a = solid(8, 8, 10);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let p = psnr(&a, &solid(8, 8, 11)).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((p - 48.13).abs() < 0.005);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let v = ssim(&solid(16, 16, 100), &solid(16, 16, 150), &SsimParams::default()).unwrap();
        let (ma, mb) = (100.0 / 255.0, 150.0 / 255.0);
        let expected = (2.0 * ma * mb + 1e-4) / (ma * ma + mb * mb + 1e-4);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.923).abs() < 1e-3);
    }

    #[test]
    fn ssim_window_errors() {
        let a = solid(10, 20, 3);
        assert!(matches!(ssim(&a, &a, &SsimParams::default()), Err(Error::WindowTooLarge { window: 11, .. })));
    }

    #[test]
    fn identical_scenes_report_perfect_scores() {
        let s = Scene::from_pixels(noise(40, 30, 3), "mem");
        let r = degradation_report(&s, &s, &Region::FullImage).unwrap();
        assert_eq!((r.mse_unit, r.psnr_db), (0.0, PSNR_CAP_DB));
        assert!((r.ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_image_mse_is_area_weighted_tile_mse() {
        let gt = noise(96, 64, 1);
        let mut forged = gt.clone();
        let tile_noise = noise(32, 32, 2);
        image::imageops::replace(&mut forged, &tile_noise, 32, 32);
        let (g, f) = (Scene::from_pixels(gt, "a"), Scene::from_pixels(forged, "b"));
        let full = degradation_report(&g, &f, &Region::FullImage).unwrap();
        let tile = degradation_report(&g, &f, &Region::Tile { coord: TileCoord::new(1, 1), tile_size: 32 }).unwrap();
        let expected = tile.mse_eight_bit * (32.0 * 32.0) / (96.0 * 64.0);
        assert!((full.mse_eight_bit - expected).abs() < 1e-9);
        let masked = degradation_report(
            &g,
            &f,
            &Region::MaskedRegion { mask: RemovalMask::rectangle(TileCoord::new(1, 1), 2, 3, 6, 20), tile_size: 32 },
        )
        .unwrap();
        assert_eq!((masked.pixels, masked.ssim_window), (5 * 18, 5));
    }

    #[test]
    fn comparison_csv_layout() {
        let s = Scene::from_pixels(noise(16, 16, 0), "x");
        let r = degradation_report(&s, &s, &Region::FullImage).unwrap();
        let entries: Vec<ComparisonEntry> = [("A", FeatureKind::Cfi), ("A", FeatureKind::Sfi), ("B", FeatureKind::Cfi)]
            .iter()
            .map(|(c, k)| ComparisonEntry { feature: *k, column: c.to_string(), report: r.clone() })
            .collect();
        let csv = comparison_csv(&entries);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,feature,A,B");
        assert_eq!(lines[1], "MSE,CFI,0.000000,0.000000");
        assert_eq!(lines[2], "MSE,SFI,0.000000,");
        assert_eq!(lines.len(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn psnr_matches_mse_identity(seed in any::<u64>(), w in 11u32..40, h in 11u32..40) {
            let (a, b) = (noise(w, h, seed), noise(w, h, seed ^ 0xABCD));
            let m = mse(&a, &b, MseConvention::EightBit).unwrap();
            prop_assert!((psnr(&a, &b).unwrap() - 10.0 * (255.0f64.powi(2) / m).log10()).abs() < 1e-9);
            let s = ssim(&a, &b, &SsimParams::default()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - ssim(&b, &a, &SsimParams::default()).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ssim_ignores_common_offset(seed in any::<u64>(), offset in 1u8..60) {
            // similar local means, different structure; values stay in range so the shift is exact
            let base = RgbImage::from_fn(24, 24, |x, y| image::Rgb([((x * 5 + y * 3 + seed as u32) % 150) as u8 + 20; 3]));
            let jitter = noise(24, 24, seed);
            let other = RgbImage::from_fn(24, 24, |x, y| image::Rgb([base.get_pixel(x, y)[0] + jitter.get_pixel(x, y)[0] % 9 - 4; 3]));
            let shift = |img: &RgbImage| RgbImage::from_fn(24, 24, |x, y| image::Rgb([img.get_pixel(x, y)[0] + offset; 3]));
            let p = SsimParams::default();
            let d = ssim(&base, &other, &p).unwrap() - ssim(&shift(&base), &shift(&other), &p).unwrap();
            prop_assert!(d.abs() < 1e-3, "delta {}", d);
        }
    }
}
