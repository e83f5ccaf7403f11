//! Acceptance run: one line per criterion, `PASS` or `FAIL`, with timing.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- roc dataset`. Set
//! `EDGEWIPE_ACCEPTANCE_STRICT=1` to make known failures fail the run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use edgewipe::dataset::{assemble_manifest, build_forged_dataset, validate_manifest, ImageRegistry, RemovalJobSpec, SplitConfig, Workspace};
use edgewipe::features::canny::{canny, gradients};
use edgewipe::features::{extract_cfi, CannyParams, FeatureImage};
use edgewipe::forensics::{roc_curve, train_detector_on, Backbone, DetectorConfig, DetectorKind, RocReport};
use edgewipe::imaging::{composite_tile, slice_tiles, stitch_tiles, PadPolicy, Scene, Tile, TileCoord};
use edgewipe::metrics::{mse, psnr, psnr_from_mse, ssim, MseConvention, SsimParams};
use edgewipe::nn::{ParamStore, Tape, Tensor};
use edgewipe::removal::{erase_edges, remove_object, MaskGeometry, RemovalMask};
use edgewipe::translate::{build_generator, train_translator, translate, DiscriminatorSpec, GeneratorSpec, TrainConfig};
use image::{GrayImage, Pixel, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    /// Expected to fail; the reason is printed with the result.
    known_failure: Option<&'static str>,
    run: fn() -> Outcome,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let strict = std::env::var("EDGEWIPE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria = [
        Criterion {
            name: "reference_metric_pairs",
            budget: Duration::from_secs(1),
            known_failure: Some("pair (0.135, 32.7) is 0.062 dB from its MSE; the PSNR looks truncated to one decimal"),
            run: reference_metric_pairs,
        },
        Criterion { name: "metric_identities", budget: Duration::from_secs(30), known_failure: None, run: metric_identities },
        Criterion { name: "tiling_roundtrip", budget: Duration::from_secs(60), known_failure: None, run: tiling_roundtrip },
        Criterion { name: "canny_oracle", budget: Duration::from_secs(30), known_failure: None, run: canny_oracle },
        Criterion { name: "erasure_exactness", budget: Duration::from_secs(30), known_failure: None, run: erasure_exactness },
        Criterion { name: "one_shot_overfit", budget: Duration::from_secs(15 * 60), known_failure: None, run: one_shot_overfit },
        Criterion { name: "gradient_check", budget: Duration::from_secs(60), known_failure: None, run: gradient_check },
        Criterion { name: "roc_correctness", budget: Duration::from_secs(30), known_failure: None, run: roc_correctness },
        Criterion { name: "detector_mechanism", budget: Duration::from_secs(10 * 60), known_failure: None, run: detector_mechanism },
        Criterion { name: "dataset_manifest", budget: Duration::from_secs(5 * 60), known_failure: None, run: dataset_manifest },
        Criterion { name: "api_smoke", budget: Duration::from_secs(20 * 60), known_failure: None, run: api_smoke },
    ];

    let mut unexpected = 0;
    let mut ran = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = t0.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match (&outcome, c.known_failure) {
            (Ok(detail), None) => println!("PASS  {:<22} {secs:>8.2}s  {detail}", c.name),
            (Ok(detail), Some(_)) => {
                unexpected += 1;
                println!("PASS  {:<22} {secs:>8.2}s  {detail} (listed as a known failure)", c.name);
            }
            (Err(why), Some(reason)) => {
                unexpected += usize::from(strict);
                println!("FAIL  {:<22} {secs:>8.2}s  {why} [known: {reason}]", c.name);
            }
            (Err(why), None) => {
                unexpected += 1;
                println!("FAIL  {:<22} {secs:>8.2}s  {why}", c.name);
            }
        }
    }
    println!("acceptance: {ran} criteria run, {unexpected} unexpected outcome(s)");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// Reference `(label, feature, mse_reported, psnr_db)` pairs, checked for mutual consistency.
const REFERENCE_PAIRS: [(&str, &str, f64, f64); 8] = [
    ("A", "CFI", 0.129, 32.95),
    ("B", "CFI", 0.085, 34.73),
    ("C", "CFI", 0.248, 30.10),
    ("D", "CFI", 0.253, 30.02),
    ("A", "SFI", 0.137, 32.69),
    ("B", "SFI", 0.163, 31.93),
    ("C", "SFI", 0.132, 32.84),
    ("D", "SFI", 0.135, 32.7),
];

fn reference_metric_pairs() -> Outcome {
    let mut worst = (0.0f64, "");
    let mut off = Vec::new();
    for (label, feature, mse_reported, stated) in REFERENCE_PAIRS {
        // reported MSE is the 8-bit MSE divided by 255
        let implied = psnr_from_mse(mse_reported * 255.0);
        let independent = 10.0 * (255.0 / mse_reported).log10();
        check!((implied - independent).abs() < 1e-9, "{feature}/{label}: library {implied} vs closed form {independent}");
        let dev = (implied - stated).abs();
        if dev > worst.0 {
            worst = (dev, label);
        }
        if dev > 0.05 {
            off.push(format!("{feature}/{label} ({mse_reported}, {stated}) implies {implied:.3} dB, off by {dev:.3}"));
        }
    }
    check!(off.is_empty(), "{} of 8 pairs outside 0.05 dB: {}", off.len(), off.join("; "));
    Ok(format!("8 pairs within 0.05 dB, max deviation {:.3}", worst.0))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = SsimParams::default();
    let mut max_psnr_err = 0.0f64;
    for i in 0..100 {
        let (w, h) = (rng.random_range(11..48), rng.random_range(11..48));
        let a = random_image(&mut rng, w, h);
        // mix of unrelated pairs and small perturbations
        let b = if i % 2 == 0 {
            random_image(&mut rng, w, h)
        } else {
            RgbImage::from_fn(w, h, |x, y| a.get_pixel(x, y).map(|v| v.saturating_add(rng.random_range(0..6))))
        };
        let m = mse(&a, &b, MseConvention::EightBit).map_err(|e| e.to_string())?;
        let p = psnr(&a, &b).map_err(|e| e.to_string())?;
        let expected = if m == 0.0 { 100.0 } else { 10.0 * (255.0f64 * 255.0 / m).log10() };
        max_psnr_err = max_psnr_err.max((p - expected).abs());
        check!((p - expected).abs() < 1e-9, "pair {i}: psnr {p} vs {expected}");

        let self_sim = ssim(&a, &a, &params).map_err(|e| e.to_string())?;
        check!((self_sim - 1.0).abs() <= 1e-9, "pair {i}: ssim(x, x) = {self_sim}");
        let ab = ssim(&a, &b, &params).map_err(|e| e.to_string())?;
        let ba = ssim(&b, &a, &params).map_err(|e| e.to_string())?;
        check!((-1.0..=1.0).contains(&ab), "pair {i}: ssim {ab} outside [-1, 1]");
        check!((ab - ba).abs() < 1e-12, "pair {i}: ssim not symmetric, {ab} vs {ba}");
    }
    Ok(format!("100 pairs, max psnr error {max_psnr_err:.1e}"))
}

fn tiling_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let (w, h) = (rng.random_range(1..600), rng.random_range(1..600));
        let tile = rng.random_range(8..=256);
        let pad = if rng.random_bool(0.5) { PadPolicy::Reflect } else { PadPolicy::Zero };
        let img = random_image(&mut rng, w, h);
        let grid = slice_tiles(&Scene::from_pixels(img.clone(), "mem"), tile, pad).map_err(|e| e.to_string())?;
        let back = stitch_tiles(&grid).map_err(|e| e.to_string())?;
        check!(back == img, "case {i}: {w}x{h} at tile {tile} ({pad:?}) did not roundtrip");
    }

    let mut checked = 0u64;
    for tile in [256u32, 200] {
        let scene = Scene::from_pixels(random_image(&mut rng, 512, 512), "mem");
        let grid = slice_tiles(&scene, tile, PadPolicy::Reflect).map_err(|e| e.to_string())?;
        for t in &grid.tiles {
            let new = Tile { coord: t.coord, pixels: random_image(&mut rng, tile, tile), valid_region: t.valid_region };
            let out = composite_tile(&scene, t.coord, &new).map_err(|e| e.to_string())?;
            let (x0, y0) = (t.coord.col * tile, t.coord.row * tile);
            for (x, y, p) in out.pixels().enumerate_pixels() {
                let inside = (x0..x0 + tile).contains(&x) && (y0..y0 + tile).contains(&y);
                let expected = if inside { new.pixels.get_pixel(x - x0, y - y0) } else { scene.pixels().get_pixel(x, y) };
                check!(p == expected, "tile {tile} at {:?}: pixel ({x}, {y}) differs", t.coord);
                checked += 1;
            }
        }
    }
    Ok(format!("200 roundtrips bit-identical, {checked} composite pixels diffed"))
}

/// Direct 2-D convolution with clamped borders.
fn convolve(src: &[f64], w: usize, h: usize, k: &[f64], side: usize) -> Vec<f64> {
    let r = (side / 2) as isize;
    let at = |x: isize, y: isize| src[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..side as isize {
                for kx in 0..side as isize {
                    acc += k[(ky * side as isize + kx) as usize] * at(x + kx - r, y + ky - r);
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    out
}

/// Horizontal gradient of a Gaussian-smoothed luma, by direct 2-D convolutions.
fn oracle_gx(img: &RgbImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma: Vec<f64> = img.pixels().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect();
    let r = (3.0 * sigma).ceil() as isize;
    let side = (2 * r + 1) as usize;
    let mut g: Vec<f64> = (-r..=r).flat_map(|y| (-r..=r).map(move |x| (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp())).collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    let smooth = convolve(&luma, w, h, &g, side);
    let sobel_x = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    convolve(&smooth, w, h, &sobel_x, 3)
}

fn canny_oracle() -> Outcome {
    let params = CannyParams::default();
    let flat = RgbImage::from_pixel(64, 64, Rgb([90, 120, 30]));
    let edges = canny(&flat, &params).map_err(|e| e.to_string())?;
    check!(edges.pixels().all(|p| p[0] == 0), "constant tile produced edges");

    let column = 29u32;
    let step = RgbImage::from_fn(64, 64, |x, _| if x < column { Rgb([20; 3]) } else { Rgb([210; 3]) });
    let oracle = oracle_gx(&step, params.gaussian_sigma as f64);
    let (gx, _) = gradients(&step, params.gaussian_sigma);
    let max_diff = oracle.iter().zip(&gx.data).map(|(o, g)| (o - *g as f64).abs()).fold(0.0, f64::max);
    check!(max_diff < 0.05, "separable gradient differs from direct convolution by {max_diff}");
    let edges = canny(&step, &params).map_err(|e| e.to_string())?;
    for y in 0..64u32 {
        let row = &oracle[y as usize * 64..(y as usize + 1) * 64];
        let peak = row.iter().enumerate().fold((0, f64::MIN), |best, (x, v)| if v.abs() > best.1 { (x, v.abs()) } else { best }).0 as i64;
        let on: Vec<u32> = (0..64).filter(|&x| edges.get_pixel(x, y)[0] != 0).collect();
        check!(on.len() == 1, "row {y}: {} edge pixels, expected a single line", on.len());
        check!((on[0] as i64 - peak).abs() <= 2, "row {y}: edge at {} but oracle peak at {peak}", on[0]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..50 {
        let img = if i % 2 == 0 {
            random_image(&mut rng, 48, 48)
        } else {
            let (a, b) = (rng.random_range(0..48), rng.random_range(0..48));
            RgbImage::from_fn(48, 48, |x, y| if (x + y) % 48 < a || x * y % 48 > b { Rgb([200, 180, 40]) } else { Rgb([10, 30, 90]) })
        };
        let e = canny(&img, &params).map_err(|e| e.to_string())?;
        check!(e.pixels().all(|p| p[0] == 0 || p[0] == 255), "tile {i} is not binary");
    }
    Ok(format!("gradient oracle max diff {max_diff:.1e}, step edge one pixel per row, 50 tiles binary"))
}

/// Even-odd test via cross products, without divisions.
fn covers(vs: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    for i in 0..vs.len() {
        let (x1, y1) = vs[i];
        let (x2, y2) = vs[(i + 1) % vs.len()];
        if (y1 > py) != (y2 > py) {
            let cross = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1);
            if (cross > 0.0) == (y2 > y1) {
                inside = !inside;
            }
        }
    }
    inside
}

fn erasure_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 64u32;
    let mut erased = 0usize;
    for i in 0..100 {
        let tile = Tile { coord: TileCoord::new(0, 0), pixels: random_image(&mut rng, n, n), valid_region: (n, n) };
        let cfi = extract_cfi(&tile, &CannyParams { low_threshold: 20.0, high_threshold: 60.0, ..Default::default() }).map_err(|e| e.to_string())?;
        let mask = if i % 2 == 0 {
            let (x0, y0) = (rng.random_range(0..n), rng.random_range(0..n));
            RemovalMask::rectangle(TileCoord::new(0, 0), x0, y0, rng.random_range(x0..n), rng.random_range(y0..n))
        } else {
            let k = rng.random_range(3..9);
            RemovalMask::polygon(TileCoord::new(0, 0), (0..k).map(|_| (rng.random_range(0.0..=n as f64), rng.random_range(0.0..=n as f64))).collect())
        };
        let inside = |x: u32, y: u32| match &mask.geometry {
            MaskGeometry::Rectangle { x0, y0, x1, y1 } => (*x0..=*x1).contains(&x) && (*y0..=*y1).contains(&y),
            MaskGeometry::Polygon(vs) => covers(vs, x as f64 + 0.5, y as f64 + 0.5),
        };
        let expected = GrayImage::from_fn(n, n, |x, y| if inside(x, y) { image::Luma([0]) } else { *cfi.data.get_pixel(x, y) });
        let got: FeatureImage = erase_edges(&cfi, &mask).map_err(|e| e.to_string())?;
        check!(got.data == expected, "mask {i} ({:?}) differs from brute force", mask.geometry);
        erased += cfi.nonzero() - got.nonzero();
    }
    Ok(format!("100 masks pixel-exact, {erased} edge pixels cleared in total"))
}

/// 64 px tile: smooth gradient crossed by two light roads, plus one small
/// bright disc. The eight seeds put the discs at distinct, non-overlapping
/// spots at least 7 px clear of the roads.
fn disc_tile(seed: u32) -> (Tile, (i32, i32)) {
    let (q, k) = (seed as i32 / 2, seed as i32 % 2);
    let cx = 9 + 12 * k + 34 * (q % 2);
    let cy = 9 + 12 * k + 34 * (q / 2);
    let pixels = RgbImage::from_fn(64, 64, |x, y| {
        if (x as i32 - cx).pow(2) + (y as i32 - cy).pow(2) < 64 * 64 / 140 {
            Rgb([230, 220, 200])
        } else if (30..33).contains(&x) || (30..33).contains(&y) {
            Rgb([150, 150, 160])
        } else {
            Rgb([40 + (x * 60 / 64) as u8, 70 + (y * 40 / 64) as u8, 60])
        }
    });
    (Tile { coord: TileCoord::new(0, 0), pixels, valid_region: (64, 64) }, (cx, cy))
}

fn one_shot_overfit() -> Outcome {
    let canny_params = CannyParams::default();
    let tiles: Vec<_> = (0..8).map(disc_tile).collect();
    let pairs: Vec<_> = tiles.iter().map(|(t, _)| (extract_cfi(t, &canny_params).unwrap(), t.clone())).collect();
    let generator = GeneratorSpec::coarse_to_fine(16, 3, false);
    let discriminator = DiscriminatorSpec { num_scales: 3, patch_receptive_field: 34, base_channels: 16, input_channels: 4 };
    let ckpt = train_translator(&pairs, &generator, &discriminator, &TrainConfig { steps: 2000, seed: 1, ..Default::default() }).map_err(|e| e.to_string())?;

    let mut l1 = 0.0;
    let mut min_psnr = f64::INFINITY;
    for (cfi, target) in &pairs {
        let out = translate(&ckpt, cfi).map_err(|e| e.to_string())?;
        let diff: f64 = out.pixels.as_raw().iter().zip(target.pixels.as_raw()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        l1 += diff / out.pixels.as_raw().len() as f64 * 2.0 / 255.0;
        min_psnr = min_psnr.min(psnr(&out.pixels, &target.pixels).map_err(|e| e.to_string())?);
    }
    let l1 = l1 / pairs.len() as f64;
    let tail = ckpt.meta.loss_summary.tail_mean_l1;
    check!(l1 < 0.08 && tail < 0.08, "training L1 {l1:.4} (last-100-step mean {tail:.4}), bound 0.08");
    check!(min_psnr > 20.0, "reconstruction PSNR {min_psnr:.2} dB on a training tile, bound 20");

    // erase each disc with a box 7 px around its center
    let mut kept = Vec::new();
    for (tile, (cx, cy)) in &tiles {
        let (x0, y0, x1, y1) = ((cx - 7) as u32, (cy - 7) as u32, (cx + 7) as u32, (cy + 7) as u32);
        let mask = RemovalMask::rectangle(TileCoord::new(0, 0), x0, y0, x1, y1);
        let scene = Scene::from_pixels(tile.pixels.clone(), "disc");
        let grid = slice_tiles(&scene, 64, PadPolicy::Reflect).map_err(|e| e.to_string())?;
        let result = remove_object(&scene, &grid, &mask, &ckpt, &canny_params).map_err(|e| e.to_string())?;
        let before = extract_cfi(tile, &canny_params).map_err(|e| e.to_string())?;
        let after = extract_cfi(&result.output_tile, &canny_params).map_err(|e| e.to_string())?;
        let count = |f: &FeatureImage| (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| (x, y))).filter(|&(x, y)| f.data.get_pixel(x, y)[0] != 0).count();
        let (b, a) = (count(&before), count(&after));
        check!(b > 0, "disc at ({cx}, {cy}) has no edges to remove");
        check!((a as f64) < 0.1 * b as f64, "disc at ({cx}, {cy}): re-extracted CFI keeps {a} of {b} edge pixels inside the mask");
        kept.push(format!("{b}->{a}"));
    }
    Ok(format!("L1 {l1:.4} (tail {tail:.4}), min PSNR {min_psnr:.2} dB, edges in masks {}", kept.join(" ")))
}

fn l1_of(spec: &GeneratorSpec, weights: &ParamStore<f64>, x: &Tensor<f64>, target: &Tensor<f64>, grad: bool) -> (f64, Vec<Option<Tensor<f64>>>) {
    let (g, _) = build_generator::<f64>(spec, 0).expect("valid spec");
    let tape = Tape::new();
    let p = weights.bind(&tape, grad);
    let y = g.forward(&tape, &p, tape.constant(x.clone()));
    let loss = tape.l1(y, tape.constant(target.clone()));
    let value = tape.item(loss);
    if !grad {
        return (value, Vec::new());
    }
    let mut grads = tape.backward(loss);
    (value, p.iter().map(|&v| grads.take(v)).collect())
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = GeneratorSpec::unet(2, 3);
    let (_, weights) = build_generator::<f64>(&spec, 3).map_err(|e| e.to_string())?;
    check!(weights.count() <= 10_000, "{} parameters", weights.count());
    let n = 16;
    let x = Tensor::from_vec(&[1, 1, n, n], (0..n * n).map(|_| if rng.random_bool(0.2) { 1.0 } else { -1.0 }).collect());
    let target = Tensor::from_vec(&[1, 3, n, n], (0..3 * n * n).map(|_| rng.random_range(-0.9..0.9)).collect());
    let (_, grads) = l1_of(&spec, &weights, &x, &target, true);
    let sizes: Vec<usize> = weights.tensors().iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let analytic = grads[ti].as_ref().map_or(0.0, |g| g.data()[flat]);
        let eps = 1e-6;
        let mut plus = weights.clone();
        plus.tensors_mut()[ti].data_mut()[flat] += eps;
        let mut minus = weights.clone();
        minus.tensors_mut()[ti].data_mut()[flat] -= eps;
        let numeric = (l1_of(&spec, &plus, &x, &target, false).0 - l1_of(&spec, &minus, &x, &target, false).0) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
        check!(rel < 1e-3, "{}[{flat}]: analytic {analytic} vs numeric {numeric}", weights.names()[ti]);
    }
    Ok(format!("{} parameters, 10 samples, max relative error {worst:.1e}", weights.count()))
}

/// P(score_pos > score_neg) + 0.5 P(tie), over all pairs.
fn concordance(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate().filter(|(i, _)| labels[*i]) {
        for (_, &sj) in scores.iter().enumerate().filter(|(j, _)| !labels[*j]) {
            let _ = i;
            pairs += 1.0;
            wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

fn valid_report(r: &RocReport, scores: &[f64], labels: &[bool]) -> Result<(), String> {
    check!(r.points.first() == Some(&(0.0, 0.0)) && r.points.last() == Some(&(1.0, 1.0)), "curve endpoints {:?}", (r.points.first(), r.points.last()));
    check!(r.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1), "curve is not monotone");
    check!((0.0..=1.0).contains(&r.auc), "auc {}", r.auc);
    let c = concordance(scores, labels);
    check!((r.auc - c).abs() < 1e-12, "auc {} vs pairwise {c}", r.auc);
    Ok(())
}

fn roc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..50 {
        let n = rng.random_range(2..=30);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
        let r = roc_curve(&scores, &labels).map_err(|e| e.to_string())?;
        let c = concordance(&scores, &labels);
        check!(r.auc == c, "set {i}: trapezoid {} vs pairwise {c}", r.auc);
        valid_report(&r, &scores, &labels).map_err(|e| format!("set {i}: {e}"))?;
    }
    let labels = [true, true, false, false];
    let perfect = roc_curve(&[0.9, 0.8, 0.2, 0.1], &labels).map_err(|e| e.to_string())?.auc;
    let flat = roc_curve(&[0.4; 4], &labels).map_err(|e| e.to_string())?.auc;
    check!(perfect == 1.0 && flat == 0.5, "perfect separation {perfect}, constant scores {flat}");
    Ok("50 sets equal pairwise concordance exactly; perfect 1.0, constant 0.5".into())
}

/// Uniform-noise image; forged ones carry a flat gray square of side 3/4.
fn toy_image(seed: u64, size: u32, forged: bool) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::from_fn(size, size, |_, _| Rgb([rng.random_range(40..220), rng.random_range(40..220), rng.random_range(40..220)]));
    if forged {
        let side = 3 * size / 4;
        let (x0, y0) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img.put_pixel(x, y, Rgb([128, 128, 128]));
            }
        }
    }
    img
}

fn toy_set(n_each: u64, seed: u64) -> Vec<(RgbImage, bool)> {
    (0..n_each).flat_map(|i| [(toy_image(seed + 2 * i, 64, true), true), (toy_image(seed + 2 * i + 1, 64, false), false)]).collect()
}

fn detector_mechanism() -> Outcome {
    let train = toy_set(8, 100);
    let val = toy_set(10, 900);
    let images: Vec<RgbImage> = val.iter().map(|(i, _)| i.clone()).collect();
    let labels: Vec<bool> = val.iter().map(|(_, l)| *l).collect();
    let backbone = Backbone::seeded(3);
    let mut notes = Vec::new();
    for kind in [DetectorKind::BinaryCnn, DetectorKind::FinetunePretrained] {
        let cfg = DetectorConfig { input_size: 64, ..DetectorConfig::for_kind(kind) };
        if kind == DetectorKind::BinaryCnn {
            check!(cfg.learning_rate() == 1e-3 && cfg.epochs == 100, "binary_cnn defaults lr {} epochs {}", cfg.learning_rate(), cfg.epochs);
        }
        let det = train_detector_on(&train, &cfg, Some(&backbone)).map_err(|e| e.to_string())?;
        let best = det.history.iter().map(|e| e.accuracy).fold(0.0, f64::max);
        if kind == DetectorKind::BinaryCnn {
            check!(best == 1.0, "binary_cnn best training accuracy {best}");
        }
        let scores = det.predict(&images);
        check!(scores.iter().all(|s| (0.0..=1.0).contains(s)), "{kind:?} scores outside [0, 1]");
        let roc = roc_curve(&scores, &labels).map_err(|e| e.to_string())?;
        valid_report(&roc, &scores, &labels).map_err(|e| format!("{kind:?}: {e}"))?;
        notes.push(format!("{kind:?} train acc {best:.2} val AUC {:.3}", roc.auc));
    }
    Ok(notes.join(", "))
}

fn write_noise_png(path: &Path, seed: u64, size: u32) {
    random_image(&mut ChaCha8Rng::seed_from_u64(seed), size, size).save(path).expect("png written");
}

fn dataset_manifest() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ws = Workspace::create(dir.path().join("ws")).map_err(|e| e.to_string())?;
    let mut sources = ImageRegistry::new();
    for i in 0..8 {
        let p = ws.images_dir().join(format!("src{i}.png"));
        write_noise_png(&p, i, 64);
        sources.insert(format!("src{i}"), p);
    }
    let mut pristine = ImageRegistry::new();
    for i in 0..380 {
        let p = ws.images_dir().join(format!("pristine{i:03}.png"));
        write_noise_png(&p, 1000 + i, 32);
        pristine.insert(format!("p{i:03}"), p);
    }
    let (tile, _) = disc_tile(0);
    let pairs = vec![(extract_cfi(&tile, &CannyParams::default()).map_err(|e| e.to_string())?, tile)];
    let d = DiscriminatorSpec { num_scales: 1, patch_receptive_field: 16, base_channels: 4, input_channels: 4 };
    let small = |t: Tile| Tile { pixels: image::imageops::crop_imm(&t.pixels, 0, 0, 32, 32).to_image(), valid_region: (32, 32), ..t };
    let pairs: Vec<_> = pairs.into_iter().map(|(_, t)| { let t = small(t); (extract_cfi(&t, &CannyParams::default()).unwrap(), t) }).collect();
    let ckpt = train_translator(&pairs, &GeneratorSpec::unet(4, 3), &d, &TrainConfig { steps: 2, ..Default::default() }).map_err(|e| e.to_string())?;
    let ckpt_id = ws.store_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let jobs: Vec<RemovalJobSpec> = (0..257u32)
        .map(|i| RemovalJobSpec {
            job_id: format!("job{i:03}"),
            source_image_id: format!("src{}", i % 8),
            mask: RemovalMask::rectangle(TileCoord::new(i / 8 % 2, i / 16 % 2), i % 7, i % 5, 12 + i % 19, 10 + i % 21),
            checkpoint_id: ckpt_id.clone(),
            canny: CannyParams::default(),
        })
        .collect();

    let config = SplitConfig::default();
    let a = build_forged_dataset(&ws, "reference", &jobs, &sources, &pristine, &config, 7).map_err(|e| e.to_string())?;
    check!(a.failed.is_empty(), "{} jobs failed: {:?}", a.failed.len(), a.failed.first());
    let c = &a.manifest.counts;
    check!(
        (c.train.forged, c.train.pristine, c.validation.forged, c.validation.pristine) == (162, 266, 95, 114),
        "counts train {}/{} validation {}/{}",
        c.train.forged,
        c.train.pristine,
        c.validation.forged,
        c.validation.pristine
    );
    let report = validate_manifest(&a.manifest);
    check!(report.is_valid(), "{} violations, first {:?}", report.violations.len(), report.violations.first());

    let b = build_forged_dataset(&ws, "repeat", &jobs, &sources, &pristine, &config, 7).map_err(|e| e.to_string())?;
    check!(a.manifest.entries == b.manifest.entries, "split differs between runs with the same seed");

    // manifest logic alone, on synthetic entries
    let t0 = Instant::now();
    let forged: Vec<_> = a.manifest.entries.iter().filter_map(|e| e.provenance.clone().map(|p| (e.image_path.clone(), p))).collect();
    let pristine_paths: Vec<_> = pristine.values().cloned().collect();
    let m1 = assemble_manifest("synthetic", forged.clone(), pristine_paths.clone(), &config, 7);
    let m2 = assemble_manifest("synthetic", forged, pristine_paths, &config, 7);
    let logic = t0.elapsed();
    check!(m1 == m2 && m1.entries == a.manifest.entries, "assembly is not deterministic");
    check!(logic < Duration::from_secs(1), "manifest assembly took {logic:?}");
    Ok(format!("257 jobs run, 162/266 train and 95/114 validation, 0 violations, assembly {:.1} ms", logic.as_secs_f64() * 1e3))
}

fn api_smoke() -> Outcome {
    let s = common::start();
    let img = common::scene_image(64, 64);
    let up = s.upload(&img, Some(32));
    let id = up["scene_id"].as_str().ok_or("no scene id")?.to_string();
    check!(up["rows"] == 2 && up["cols"] == 2, "grid {up}");

    let resp = s.post_json("/checkpoints/train", &json!({"scene_id": id, "feature": "cfi", "spec": common::small_spec(20)}));
    check!(resp.status() == StatusCode::ACCEPTED, "train returned {}", resp.status());
    let job = common::json_of(resp);
    let job = s.wait_for(&format!("/jobs/{}", job["job_id"].as_str().unwrap_or_default()), |j| j["state"] == "done" || j["state"] == "failed");
    check!(job["state"] == "done", "training job {job}");
    let ck = job["result"]["checkpoint_id"].as_str().ok_or("no checkpoint id")?.to_string();

    let resp = s.post_json(&format!("/scenes/{id}/removals"), &json!({"mask": common::rect((0, 1), 4, 4, 24, 24), "checkpoint_id": ck}));
    check!(resp.status() == StatusCode::CREATED, "removal returned {}", resp.status());
    let rid = common::json_of(resp)["removal_id"].as_str().ok_or("no removal id")?.to_string();

    let png = s.get(&format!("/removals/{rid}/result")).bytes().map_err(|e| e.to_string())?;
    let forged = image::load_from_memory(&png).map_err(|e| e.to_string())?.to_rgb8();
    let outside_changed = forged.enumerate_pixels().filter(|(x, y, p)| !((32..64).contains(x) && *y < 32) && *p != img.get_pixel(*x, *y)).count();
    check!(outside_changed == 0, "{outside_changed} pixels changed outside tile (0, 1)");

    let mut notes = Vec::new();
    for region in ["full", "tile", "masked"] {
        let m = common::json_of(s.get(&format!("/removals/{rid}/metrics?region={region}")));
        let fields = ["mse_reported", "psnr_db", "ssim"].map(|k| m[k].as_f64());
        check!(fields.iter().all(|v| v.is_some_and(f64::is_finite)), "{region} metrics {m}");
        notes.push(format!("{region} PSNR {:.1}", fields[1].unwrap_or_default()));
    }
    Ok(format!("upload, train, removal, metrics over HTTP; locality holds; {}", notes.join(", ")))
}
