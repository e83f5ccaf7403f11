use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgewipe::features::canny::canny;
use edgewipe::features::{extract_cfi, CannyParams};
use edgewipe::imaging::{slice_tiles, stitch_tiles, PadPolicy, Scene, Tile, TileCoord};
use edgewipe::metrics::{ssim, SsimParams};
use edgewipe::nn::{Tape, Tensor};
use edgewipe::translate::{build_generator, GeneratorSpec};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn features(c: &mut Criterion) {
    let params = CannyParams::default();
    let mut g = c.benchmark_group("canny");
    for size in [64u32, 256] {
        let img = noise(size, size, 1);
        g.bench_with_input(BenchmarkId::from_parameter(size), &img, |b, img| b.iter(|| canny(img, &params).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (noise(256, 256, 2), noise(256, 256, 3));
    let params = SsimParams::default();
    c.bench_function("ssim/256", |bench| bench.iter(|| ssim(&a, &b, &params).unwrap()));
}

fn tiling(c: &mut Criterion) {
    let scene = Scene::from_pixels(noise(1000, 700, 4), "bench");
    c.bench_function("slice_stitch/1000x700@256", |b| {
        b.iter(|| stitch_tiles(&slice_tiles(&scene, 256, PadPolicy::Reflect).unwrap()).unwrap())
    });
}

fn generator(c: &mut Criterion) {
    let tile = Tile { coord: TileCoord::new(0, 0), pixels: noise(64, 64, 5), valid_region: (64, 64) };
    let cfi = extract_cfi(&tile, &CannyParams::default()).unwrap();
    let x = Tensor::from_vec(&[1, 1, 64, 64], cfi.data.as_raw().iter().map(|&v| if v > 0 { 1.0f32 } else { -1.0 }).collect());
    let target = Tensor::from_vec(&[1, 3, 64, 64], tile.pixels.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect());
    let mut g = c.benchmark_group("generator_step");
    g.sample_size(10);
    for (name, spec) in [("unet16", GeneratorSpec::unet(16, 3)), ("coarse_to_fine16", GeneratorSpec::coarse_to_fine(16, 3, false))] {
        let (net, weights) = build_generator::<f32>(&spec, 0).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| {
                let tape = Tape::new();
                let p = weights.bind(&tape, true);
                let y = net.forward(&tape, &p, tape.constant(x.clone()));
                let loss = tape.l1(y, tape.constant(target.clone()));
                tape.backward(loss)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, features, metrics, tiling, generator);
criterion_main!(benches);
