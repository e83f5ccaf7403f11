use std::collections::HashMap;
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, Init, Linear, OptimizerConfig, ParamBuilder, ParamStore, Tape, Tensor, Var};

/// Side length the stand-in classification backbone expects.
pub const BACKBONE_INPUT: u32 = 64;
/// Output classes of the classification backbone.
pub const BACKBONE_CLASSES: usize = 1000;
const BACKBONE_CHANNELS: [usize; 4] = [32, 64, 128, 256];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Ten weighted layers: 4 x (3x3 conv, 3x3 stride-2 conv) with
    /// 32/64/128/256 channels, then dense 128 and a single output unit.
    BinaryCnn,
    /// Classification backbone body with a fresh single-unit head.
    FinetunePretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Images are resized (bilinear) to `input_size`².
    pub input_size: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl DetectorConfig {
    /// Adam at 1e-3 for 100 epochs on 256 px inputs.
    pub fn binary_cnn() -> Self {
        DetectorConfig {
            kind: DetectorKind::BinaryCnn,
            epochs: 100,
            optimizer: OptimizerConfig::adam(1e-3, 0.9, 0.999),
            input_size: 256,
            batch_size: 8,
            seed: 0,
        }
    }

    /// RMSprop at 1e-4 for 100 epochs.
    pub fn finetune() -> Self {
        DetectorConfig {
            kind: DetectorKind::FinetunePretrained,
            epochs: 100,
            optimizer: OptimizerConfig::rmsprop(1e-4),
            input_size: 256,
            batch_size: 8,
            seed: 0,
        }
    }

    pub fn for_kind(kind: DetectorKind) -> Self {
        match kind {
            DetectorKind::BinaryCnn => Self::binary_cnn(),
            DetectorKind::FinetunePretrained => Self::finetune(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.learning_rate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate() <= 0.0 {
            return Err(Error::InvalidSpec(format!("invalid detector configuration {self:?}")));
        }
        if self.input_size < 16 || self.input_size % 16 != 0 {
            return Err(Error::InvalidSpec(format!("detector input size {} must be a positive multiple of 16", self.input_size)));
        }
        Ok(())
    }
}

/// Resize to `size`² and lay out as `[1, 3, size, size]` on [0, 1].
pub fn image_input(img: &RgbImage, size: u32) -> Tensor<f32> {
    let resized;
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        resized = image::imageops::resize(img, size, size, FilterType::Triangle);
        &resized
    };
    let n = (size * size) as usize;
    let mut data = vec![0.0f32; 3 * n];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = p[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[1, 3, size as usize, size as usize], data)
}

/// Four stride-2 convs, global pooling, 1000-way linear classifier.
///
/// Stands in for a large pretrained classifier: weights come from a seed or
/// from a safetensors file with the same tensor names.
#[derive(Clone, Debug)]
pub struct Backbone {
    convs: Vec<Conv>,
    classifier: Linear,
    pub params: ParamStore<f32>,
    pub origin: String,
}

fn backbone_layers(b: &mut ParamBuilder<f32>, prefix: &str) -> Vec<Conv> {
    let mut cin = 3;
    BACKBONE_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let conv = b.conv(&format!("{prefix}.conv{i}"), cin, c, 3, 2, 1, Init::HeNormal);
            cin = c;
            conv
        })
        .collect()
}

fn body_forward(tape: &Tape<f32>, p: &[Var], convs: &[Conv], x: Var) -> Var {
    let h = convs.iter().fold(x, |h, c| tape.relu(c.apply(tape, p, h)));
    tape.global_avg_pool(h)
}

impl Backbone {
    pub fn seeded(seed: u64) -> Self {
        let mut b = ParamBuilder::<f32>::new(seed);
        let convs = backbone_layers(&mut b, "backbone");
        let classifier = b.linear("backbone.classifier", BACKBONE_CHANNELS[3], BACKBONE_CLASSES, Init::Normal(0.05));
        Backbone { convs, classifier, params: b.finish(), origin: format!("seeded:{seed}") }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let stored = ParamStore::<f32>::load(path).map_err(|e| Error::BackboneUnavailable(format!("{}: {e}", path.display())))?;
        let mut bb = Backbone::seeded(0);
        bb.params.load_from(&stored).map_err(|e| Error::BackboneUnavailable(format!("{}: {e}", path.display())))?;
        bb.origin = path.display().to_string();
        Ok(bb)
    }

    /// Softmax class probabilities, [`BACKBONE_CLASSES`] values summing to 1.
    pub fn probabilities(&self, img: &RgbImage) -> Vec<f64> {
        let tape = Tape::<f32>::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(image_input(img, BACKBONE_INPUT));
        let feats = body_forward(&tape, &p, &self.convs, x);
        let logits = self.classifier.apply(&tape, &p, feats);
        let v = tape.value(logits);
        let logits: Vec<f64> = v.data().iter().map(|&l| l as f64).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Arch {
    BinaryCnn { convs: Vec<Conv>, hidden: Linear, out: Linear, flat: usize },
    Finetune { body: Vec<Conv>, head: Linear },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// A trained forged-image classifier.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    arch: Arch,
    pub params: ParamStore<f32>,
    pub history: Vec<EpochLog>,
}

const META_KEY: &str = "edgewipe.detector";

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    config: DetectorConfig,
    arch: Arch,
    history: Vec<EpochLog>,
}

impl Detector {
    /// Fresh weights. The finetune variant copies its body from `backbone`.
    pub fn new(config: &DetectorConfig, backbone: Option<&Backbone>) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::<f32>::new(config.seed);
        let arch = match config.kind {
            DetectorKind::BinaryCnn => {
                let mut convs = Vec::new();
                let mut cin = 3;
                for (i, &c) in BACKBONE_CHANNELS.iter().enumerate() {
                    convs.push(b.conv(&format!("block{i}.conv"), cin, c, 3, 1, 1, Init::HeNormal));
                    convs.push(b.conv(&format!("block{i}.down"), c, c, 3, 2, 1, Init::HeNormal));
                    cin = c;
                }
                let side = (config.input_size / 16) as usize;
                let flat = cin * side * side;
                let hidden = b.linear("dense", flat, 128, Init::HeNormal);
                let out = b.linear("output", 128, 1, Init::Normal(0.01));
                Arch::BinaryCnn { convs, hidden, out, flat }
            }
            DetectorKind::FinetunePretrained => {
                if backbone.is_none() {
                    return Err(Error::BackboneUnavailable("finetune detector needs a backbone".into()));
                }
                let body = backbone_layers(&mut b, "backbone");
                let head = b.linear("head", BACKBONE_CHANNELS[3], 1, Init::Normal(0.01));
                Arch::Finetune { body, head }
            }
        };
        let mut params = b.finish();
        if let Some(bb) = backbone.filter(|_| config.kind == DetectorKind::FinetunePretrained) {
            let copied = params.load_matching(&bb.params);
            debug_assert_eq!(copied, 2 * BACKBONE_CHANNELS.len());
        }
        Ok(Detector { config: config.clone(), arch, params, history: Vec::new() })
    }

    /// Logits `[B, 1]` for an input batch `[B, 3, S, S]`.
    fn forward(&self, tape: &Tape<f32>, p: &[Var], x: Var) -> Var {
        match &self.arch {
            Arch::BinaryCnn { convs, hidden, out, flat } => {
                let h = convs.iter().fold(x, |h, c| tape.relu(c.apply(tape, p, h)));
                let batch = tape.shape(h)[0];
                let h = tape.reshape(h, &[batch, *flat]);
                let h = tape.relu(hidden.apply(tape, p, h));
                out.apply(tape, p, h)
            }
            Arch::Finetune { body, head } => {
                let feats = body_forward(tape, p, body, x);
                head.apply(tape, p, feats)
            }
        }
    }

    /// Forged probability for each image.
    pub fn predict(&self, images: &[RgbImage]) -> Vec<f64> {
        images
            .chunks(self.config.batch_size.max(1))
            .flat_map(|chunk| {
                let x = Tensor::stack(&chunk.iter().map(|i| image_input(i, self.config.input_size)).collect::<Vec<_>>());
                let tape = Tape::<f32>::new();
                let p = self.params.bind(&tape, false);
                let xv = tape.constant(x);
                let logits = self.forward(&tape, &p, xv);
                let v = tape.value(logits);
                v.data().iter().map(|&l| 1.0 / (1.0 + (-(l as f64)).exp())).collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = DetectorMeta { config: self.config.clone(), arch: self.arch.clone(), history: self.history.clone() };
        let header = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
        std::fs::write(path, self.params.to_safetensors_with(Some(header))?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile { path: path.to_owned(), reason: e.to_string() })?;
        let header = ParamStore::<f32>::safetensors_metadata(&bytes)?;
        let meta: DetectorMeta =
            serde_json::from_str(header.get(META_KEY).ok_or_else(|| Error::Weights(format!("{} is not a detector archive", path.display())))?)?;
        let stored = ParamStore::<f32>::from_safetensors(&bytes)?;
        let backbone = Backbone::seeded(0);
        let mut det = Detector::new(&meta.config, Some(&backbone))?;
        det.params.load_from(&stored)?;
        det.arch = meta.arch;
        det.history = meta.history;
        Ok(det)
    }
}

/// Train on `(image, is_forged)` samples with binary cross-entropy.
pub fn train_detector_on(samples: &[(RgbImage, bool)], config: &DetectorConfig, backbone: Option<&Backbone>) -> Result<Detector> {
    let forged = samples.iter().filter(|(_, l)| *l).count();
    if forged == 0 || forged == samples.len() {
        return Err(Error::DegenerateManifest(format!("{forged} forged and {} pristine training images", samples.len() - forged)));
    }
    let mut det = Detector::new(config, backbone)?;
    let inputs: Vec<Tensor<f32>> = samples.iter().map(|(img, _)| image_input(img, config.input_size)).collect();
    let mut opt = config.optimizer.build(&det.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let x = Tensor::stack(&batch.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
            let targets: Vec<f64> = batch.iter().map(|&i| if samples[i].1 { 1.0 } else { 0.0 }).collect();
            let tape = Tape::<f32>::new();
            let p = det.params.bind(&tape, true);
            let xv = tape.constant(x);
            let logits = det.forward(&tape, &p, xv);
            let loss = tape.bce_with_logits_targets(logits, &targets);
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step: epoch, details: format!("detector loss {value}") });
            }
            loss_sum += value * batch.len() as f64;
            correct += tape.value(logits).data().iter().zip(&targets).filter(|(l, t)| (**l > 0.0) == (**t > 0.5)).count();
            let mut grads = tape.backward(loss);
            let g: Vec<_> = p.iter().map(|&v| grads.take(v)).collect();
            opt.step(&mut det.params, &g);
        }
        let log = EpochLog { epoch, loss: loss_sum / samples.len() as f64, accuracy: correct as f64 / samples.len() as f64 };
        log::debug!("detector epoch {epoch}: loss {:.4} acc {:.3}", log.loss, log.accuracy);
        det.history.push(log);
    }
    Ok(det)
}
