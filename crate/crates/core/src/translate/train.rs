use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{TrainingProvenance, TranslatorCheckpoint};
use super::discriminator::build_discriminators;
use super::generator::build_generator;
use super::loss::{cgan_losses, LossRecord};
use super::spec::{DiscriminatorSpec, GeneratorSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureImage;
use crate::imaging::Tile;
use crate::nn::{OptimizerConfig, Tape, Tensor};

/// Hooks into the training loop, for progress reporting and image dumps.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &LossRecord, _total_steps: usize) {}
    /// Called every `dump_every` steps with the first pair of the current batch.
    fn on_dump(&mut self, _step: usize, _feature: &GrayImage, _output: &RgbImage, _target: &RgbImage) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

/// Writes `step_NNNNNN_{feature,output,target}.png` into a directory.
pub struct PngDumper {
    pub dir: std::path::PathBuf,
}

impl TrainObserver for PngDumper {
    fn on_dump(&mut self, step: usize, feature: &GrayImage, output: &RgbImage, target: &RgbImage) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        feature.save(self.dir.join(format!("step_{step:06}_feature.png")))?;
        output.save(self.dir.join(format!("step_{step:06}_output.png")))?;
        target.save(self.dir.join(format!("step_{step:06}_target.png")))?;
        Ok(())
    }
}

pub(crate) fn feature_tensor(feature: &FeatureImage) -> Tensor<f32> {
    let (h, w) = feature.size();
    Tensor::from_vec(&[1, 1, h as usize, w as usize], feature.to_unit_range())
}

pub(crate) fn image_tensor(img: &RgbImage) -> Tensor<f32> {
    let (h, w) = (img.height() as usize, img.width() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = p[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

/// Map a `[1, 3, H, W]` tensor in `[-1, 1]` to 8-bit, rounding half to even.
pub(crate) fn tensor_image(t: &Tensor<f32>) -> RgbImage {
    let (_, _, h, w) = t.dims4();
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| ((d[c * h * w + i] as f64 + 1.0) * 127.5).clamp(0.0, 255.0).round_ties_even() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn check_pairs(pairs: &[(FeatureImage, Tile)]) -> Result<u32> {
    let (first, _) = pairs.first().ok_or(Error::EmptyTrainingSet)?;
    let (size, kind) = (first.size(), first.kind);
    for (i, (f, t)) in pairs.iter().enumerate() {
        let tsize = (t.pixels.height(), t.pixels.width());
        if f.size() != size || tsize != size {
            return Err(Error::ShapeMismatch(format!("pair {i}: feature {:?}, tile {tsize:?}, expected {size:?}", f.size())));
        }
        if f.kind != kind {
            return Err(Error::WrongFeatureKind { expected: kind.name(), got: f.kind.name() });
        }
    }
    if size.0 != size.1 {
        return Err(Error::ShapeMismatch(format!("tiles must be square, got {size:?}")));
    }
    Ok(size.0)
}

pub fn train_translator(
    pairs: &[(FeatureImage, Tile)],
    g_spec: &GeneratorSpec,
    d_spec: &DiscriminatorSpec,
    config: &TrainConfig,
) -> Result<TranslatorCheckpoint> {
    train_translator_with(pairs, g_spec, d_spec, config, &mut Silent)
}

/// Alternating discriminator/generator updates with Adam, one batch per step.
///
/// Both objectives come from a single forward pass against the current
/// discriminator; the discriminator is updated first, then the generator.
pub fn train_translator_with(
    pairs: &[(FeatureImage, Tile)],
    g_spec: &GeneratorSpec,
    d_spec: &DiscriminatorSpec,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TranslatorCheckpoint> {
    let tile_size = check_pairs(pairs)?;
    config.validate()?;
    g_spec.check_input(tile_size, tile_size)?;
    if d_spec.input_channels != g_spec.input_channels + 3 {
        return Err(Error::InvalidSpec(format!(
            "discriminator expects {} input channels, pairs have {}",
            d_spec.input_channels,
            g_spec.input_channels + 3
        )));
    }

    let (generator, mut g_params) = build_generator::<f32>(g_spec, config.seed)?;
    let (disc, mut d_params) = build_discriminators::<f32>(d_spec, config.seed.wrapping_add(1))?;
    let opt = OptimizerConfig::adam(config.learning_rate, config.beta1, config.beta2);
    let mut g_opt = opt.build(&g_params);
    let mut d_opt = opt.build(&d_params);

    let features: Vec<Tensor<f32>> = pairs.iter().map(|(f, _)| feature_tensor(f)).collect();
    let targets: Vec<Tensor<f32>> = pairs.iter().map(|(_, t)| image_tensor(&t.pixels)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if order.is_empty() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled above"));
        }
        let feat = Tensor::stack(&batch.iter().map(|&i| features[i].clone()).collect::<Vec<_>>());
        let real = Tensor::stack(&batch.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());

        let tape = Tape::<f32>::new();
        let gp = g_params.bind(&tape, true);
        let dp = d_params.bind(&tape, true);
        let y = tape.constant(feat);
        let x = tape.constant(real);
        let fake = generator.forward(&tape, &gp, y);
        let real_pair = tape.concat(y, x);
        let fake_pair = tape.concat(y, fake);
        let detached_pair = tape.concat(y, tape.detach(fake));
        let d_real = disc.forward(&tape, &dp, real_pair);
        let d_fake = disc.forward(&tape, &dp, fake_pair);
        let d_detached = disc.forward(&tape, &dp, detached_pair);
        let losses = cgan_losses(&tape, &d_real, &d_fake, &d_detached, fake, x, config);
        let mut record = losses.record;
        record.step = step;
        let g_value = tape.item(losses.generator);
        if !record.d_loss.is_finite() || !g_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                details: format!(
                    "d_loss={} g_adv={} g_fm={} g_l1={} g_total={g_value}",
                    record.d_loss, record.g_adv, record.g_fm, record.g_l1
                ),
            });
        }

        let mut d_grads = tape.backward(losses.discriminator);
        let d_step: Vec<_> = dp.iter().map(|&v| d_grads.take(v)).collect();
        let mut g_grads = tape.backward(losses.generator);
        let g_step: Vec<_> = gp.iter().map(|&v| g_grads.take(v)).collect();
        d_opt.step(&mut d_params, &d_step);
        g_opt.step(&mut g_params, &g_step);

        observer.on_step(&record, config.steps);
        if config.dump_every.is_some_and(|n| step % n == 0) {
            let out = tape.value(fake).batch_item(0);
            let target = tape.value(x).batch_item(0);
            observer.on_dump(step, &pairs[batch[0]].0.data, &tensor_image(&out), &tensor_image(&target))?;
        }
        log.push(record);
    }

    let first = &pairs[0].0;
    let provenance = TrainingProvenance {
        scene_id: None,
        feature_kind: first.kind,
        feature_params: first.params.clone(),
        tile_size,
        num_pairs: pairs.len(),
    };
    TranslatorCheckpoint::new(generator, g_params, d_spec.clone(), config.clone(), provenance, log)
}
