use serde::{Deserialize, Serialize};

use super::spec::{GeneratorFamily, GeneratorSpec};
use crate::error::Result;
use crate::nn::{Conv, Element, Init, ParamBuilder, ParamStore, Tape, Var};

const WEIGHT_INIT: Init = Init::Normal(0.02);

/// Generator topology; weights live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub spec: GeneratorSpec,
    arch: Arch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Arch {
    Unet { down: Vec<Conv>, up: Vec<Conv> },
    CoarseToFine { global: Global, local: Option<Local> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Global {
    stem: Conv,
    down: Vec<Conv>,
    res: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    /// Output head, only when running without the enhancer.
    head: Option<Conv>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Local {
    stem: Conv,
    down: Conv,
    res: Vec<(Conv, Conv)>,
    up: Conv,
    head: Conv,
}

/// Shapes observed during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Spatial size `(h, w)` seen by the global network (coarse_to_fine only).
    pub global_input: Option<(usize, usize)>,
}

fn unet_channels(base: usize, level: usize) -> usize {
    base << level.min(3)
}

fn residual_blocks(b: &mut ParamBuilder<impl Element>, prefix: &str, ch: usize, n: usize) -> Vec<(Conv, Conv)> {
    (0..n)
        .map(|i| {
            (
                b.conv(&format!("{prefix}.res{i}.conv0"), ch, ch, 3, 1, 1, WEIGHT_INIT),
                b.conv(&format!("{prefix}.res{i}.conv1"), ch, ch, 3, 1, 1, WEIGHT_INIT),
            )
        })
        .collect()
}

/// Build a generator and its seeded initial weights.
pub fn build_generator<T: Element>(spec: &GeneratorSpec, seed: u64) -> Result<(Generator, ParamStore<T>)> {
    spec.validate()?;
    let mut b = ParamBuilder::<T>::new(seed);
    let arch = match spec.family {
        GeneratorFamily::UnetSkip => {
            let d = spec.depth;
            let down = (0..d)
                .map(|i| {
                    let cin = if i == 0 { spec.input_channels } else { unet_channels(spec.base_channels, i - 1) };
                    b.conv(&format!("enc{i}"), cin, unet_channels(spec.base_channels, i), 4, 2, 1, WEIGHT_INIT)
                })
                .collect();
            let mut up: Vec<Conv> = (0..d)
                .rev()
                .map(|i| {
                    let c = unet_channels(spec.base_channels, i);
                    let cin = if i == d - 1 { c } else { 2 * c };
                    let cout = if i == 0 { 3 } else { unet_channels(spec.base_channels, i - 1) };
                    b.conv(&format!("dec{i}"), cin, cout, 3, 1, 1, WEIGHT_INIT)
                })
                .collect();
            up.reverse();
            Arch::Unet { down, up }
        }
        GeneratorFamily::CoarseToFine => {
            let g = if spec.has_local_enhancer { 2 * spec.base_channels } else { spec.base_channels };
            let stem = b.conv("global.stem", spec.input_channels, g, 7, 1, 3, WEIGHT_INIT);
            let down = (0..spec.depth)
                .map(|k| b.conv(&format!("global.down{k}"), g << k, g << (k + 1), 3, 2, 1, WEIGHT_INIT))
                .collect();
            let res = residual_blocks(&mut b, "global", g << spec.depth, spec.residual_blocks);
            let up = (0..spec.depth)
                .rev()
                .map(|k| b.conv(&format!("global.up{k}"), g << (k + 1), g << k, 3, 1, 1, WEIGHT_INIT))
                .collect();
            let head = (!spec.has_local_enhancer).then(|| b.conv("global.head", g, 3, 7, 1, 3, WEIGHT_INIT));
            let global = Global { stem, down, res, up, head };
            let local = spec.has_local_enhancer.then(|| {
                let c = spec.base_channels;
                Local {
                    stem: b.conv("local.stem", spec.input_channels, c, 7, 1, 3, WEIGHT_INIT),
                    down: b.conv("local.down", c, 2 * c, 3, 2, 1, WEIGHT_INIT),
                    res: residual_blocks(&mut b, "local", 2 * c, spec.residual_blocks),
                    up: b.conv("local.up", 2 * c, c, 3, 1, 1, WEIGHT_INIT),
                    head: b.conv("local.head", c, 3, 7, 1, 3, WEIGHT_INIT),
                }
            });
            Arch::CoarseToFine { global, local }
        }
    };
    Ok((Generator { spec: spec.clone(), arch }, b.finish()))
}

/// Instance norm, skipped when there is a single spatial position.
fn norm<T: Element>(tape: &Tape<T>, x: Var) -> Var {
    let s = tape.shape(x);
    if s[2] * s[3] > 1 {
        tape.instance_norm(x)
    } else {
        x
    }
}

fn conv_norm_relu<T: Element>(tape: &Tape<T>, p: &[Var], c: &Conv, x: Var) -> Var {
    let y = c.apply(tape, p, x);
    let y = norm(tape, y);
    tape.relu(y)
}

fn residual<T: Element>(tape: &Tape<T>, p: &[Var], blocks: &[(Conv, Conv)], mut x: Var) -> Var {
    for (a, b) in blocks {
        let h = conv_norm_relu(tape, p, a, x);
        let h = b.apply(tape, p, h);
        let h = norm(tape, h);
        x = tape.add(x, h);
    }
    x
}

impl Generator {
    /// Map a feature batch `[B, C_in, H, W]` in `[-1, 1]` to an image batch
    /// `[B, 3, H, W]` in `[-1, 1]`.
    pub fn forward<T: Element>(&self, tape: &Tape<T>, params: &[Var], x: Var) -> Var {
        self.forward_traced(tape, params, x).0
    }

    pub fn forward_traced<T: Element>(&self, tape: &Tape<T>, p: &[Var], x: Var) -> (Var, ForwardTrace) {
        let mut trace = ForwardTrace::default();
        let out = match &self.arch {
            Arch::Unet { down, up } => {
                let mut enc = Vec::with_capacity(down.len());
                let mut h = x;
                for (i, c) in down.iter().enumerate() {
                    h = c.apply(tape, p, h);
                    if i > 0 && i + 1 < down.len() {
                        h = norm(tape, h);
                    }
                    h = tape.leaky_relu(h, 0.2);
                    enc.push(h);
                }
                let d = down.len();
                for i in (0..d).rev() {
                    let input = if i == d - 1 { enc[i] } else { tape.concat(h, enc[i]) };
                    let y = up[i].apply(tape, p, tape.upsample2x(input));
                    h = if i == 0 { tape.tanh(y) } else { tape.relu(norm(tape, y)) };
                }
                h
            }
            Arch::CoarseToFine { global, local } => {
                let gx = if local.is_some() { tape.avg_pool2x(x) } else { x };
                let s = tape.shape(gx);
                trace.global_input = Some((s[2], s[3]));
                let mut h = conv_norm_relu(tape, p, &global.stem, gx);
                for c in &global.down {
                    h = conv_norm_relu(tape, p, c, h);
                }
                h = residual(tape, p, &global.res, h);
                for c in &global.up {
                    h = conv_norm_relu(tape, p, c, tape.upsample2x(h));
                }
                match (local, &global.head) {
                    (Some(l), _) => {
                        let mut y = conv_norm_relu(tape, p, &l.stem, x);
                        y = conv_norm_relu(tape, p, &l.down, y);
                        y = tape.add(y, h);
                        y = residual(tape, p, &l.res, y);
                        y = conv_norm_relu(tape, p, &l.up, tape.upsample2x(y));
                        tape.tanh(l.head.apply(tape, p, y))
                    }
                    (None, Some(head)) => tape.tanh(head.apply(tape, p, h)),
                    (None, None) => unreachable!("global head exists without enhancer"),
                }
            }
        };
        (out, trace)
    }
}
