use serde::{Deserialize, Serialize};

use super::spec::DiscriminatorSpec;
use crate::error::Result;
use crate::nn::{Conv, Element, Init, ParamBuilder, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Patch {
    /// Hidden layers; the flag marks instance norm.
    layers: Vec<(Conv, bool)>,
    head: Conv,
}

/// PatchGAN discriminators, one per pyramid level, over `(feature, image)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleDiscriminator {
    pub spec: DiscriminatorSpec,
    scales: Vec<Patch>,
}

/// One scale's output: hidden activations (for feature matching) and patch logits.
pub struct ScaleOutput {
    /// Spatial size `(h, w)` of this scale's input.
    pub input_size: (usize, usize),
    pub features: Vec<Var>,
    pub score: Var,
}

pub fn build_discriminators<T: Element>(spec: &DiscriminatorSpec, seed: u64) -> Result<(MultiScaleDiscriminator, ParamStore<T>)> {
    spec.validate()?;
    let mut b = ParamBuilder::<T>::new(seed);
    let init = Init::Normal(0.02);
    let n = spec.strided_layers();
    let cap = 8 * spec.base_channels;
    let scales = (0..spec.num_scales)
        .map(|s| {
            let mut layers = Vec::new();
            let mut cin = spec.input_channels;
            for k in 0..=n {
                let cout = (spec.base_channels << k).min(cap);
                let stride = if k < n { 2 } else { 1 };
                layers.push((b.conv(&format!("d{s}.layer{k}"), cin, cout, 4, stride, 2, init), k > 0));
                cin = cout;
            }
            let head = b.conv(&format!("d{s}.head"), cin, 1, 4, 1, 2, init);
            Patch { layers, head }
        })
        .collect();
    Ok((MultiScaleDiscriminator { spec: spec.clone(), scales }, b.finish()))
}

impl MultiScaleDiscriminator {
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Score a pair batch `[B, C_feat + 3, H, W]` at every scale.
    pub fn forward<T: Element>(&self, tape: &Tape<T>, p: &[Var], pair: Var) -> Vec<ScaleOutput> {
        let mut input = pair;
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, patch) in self.scales.iter().enumerate() {
            if i > 0 {
                input = tape.avg_pool2x(input);
            }
            let shape = tape.shape(input);
            let mut h = input;
            let mut features = Vec::with_capacity(patch.layers.len());
            for (conv, normed) in &patch.layers {
                h = conv.apply(tape, p, h);
                if *normed {
                    h = tape.instance_norm(h);
                }
                h = tape.leaky_relu(h, 0.2);
                features.push(h);
            }
            out.push(ScaleOutput { input_size: (shape[2], shape[3]), features, score: patch.head.apply(tape, p, h) });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn pyramid_at_256() {
        let spec = DiscriminatorSpec { base_channels: 1, ..Default::default() };
        let (d, store) = build_discriminators::<f32>(&spec, 0).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::zeros(&[1, 4, 256, 256]));
        let sizes: Vec<_> = d.forward(&tape, &p, x).iter().map(|o| o.input_size).collect();
        assert_eq!(sizes, vec![(256, 256), (128, 128), (64, 64)]);
        let single = DiscriminatorSpec { num_scales: 1, ..spec };
        assert_eq!(build_discriminators::<f32>(&single, 0).unwrap().0.num_scales(), 1);
    }

    #[test]
    fn one_score_map_per_scale() {
        let spec = DiscriminatorSpec { num_scales: 3, patch_receptive_field: 34, base_channels: 4, input_channels: 4 };
        let (d, store) = build_discriminators::<f32>(&spec, 0).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::full(&[2, 4, 64, 64], 0.1));
        let outs = d.forward(&tape, &p, x);
        assert_eq!(outs.len(), 3);
        for o in &outs {
            assert_eq!(o.features.len(), 3);
            let s = tape.shape(o.score);
            assert_eq!((s[0], s[1]), (2, 1));
        }
        let sizes: Vec<_> = outs.iter().map(|o| o.input_size).collect();
        assert_eq!(sizes, vec![(64, 64), (32, 32), (16, 16)]);
    }
}
