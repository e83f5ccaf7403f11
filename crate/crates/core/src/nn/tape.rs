//! Define-by-run reverse-mode differentiation.
//!
//! Every op records its output on a [`Tape`]; [`Tape::backward`] walks the
//! records in reverse. Nodes that depend on no gradient-requiring leaf are
//! skipped entirely, so frozen sub-networks cost a forward pass only.

use std::cell::{Ref, RefCell};

use super::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Upsample2x(Var),
    AvgPool2x(Var),
    GlobalAvgPool(Var),
    InstanceNorm(Var),
    LeakyRelu { x: Var, slope: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Reshape(Var),
    /// Targets per element are kept in the node's `aux`.
    BceWithLogits { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
    /// Per-op saved values (instance-norm inverse std).
    aux: Vec<T>,
}

pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const NORM_EPS: f64 = 1e-5;

fn acc<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn out_len(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= k, "kernel {k} larger than padded input {size}+2*{pad}");
    (size + 2 * pad - k) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    geom: ConvGeom,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                        *out = if ix < 0 || ix >= w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    geom: ConvGeom,
    (ho, wo): (usize, usize),
    x: &mut [T],
) {
    let plane = ho * wo;
    for ch in 0..c {
        let dst = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(256)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op, needs_grad: bool, aux: Vec<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad, aux });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Trainable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, Vec::new())
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, Vec::new())
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// First element as `f64`; intended for scalar losses.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).data()[0].to_f64().unwrap_or(f64::NAN)
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let geom = ConvGeom { stride, pad };
        let out = {
            let xv = self.value(x);
            let wv = self.value(w);
            let (n, c, h, wd) = xv.dims4();
            let (o, wc, k, k2) = wv.dims4();
            assert_eq!(c, wc, "conv input channels {c} vs kernel {wc}");
            assert_eq!(k, k2, "square kernels only");
            let (ho, wo) = (out_len(h, k, stride, pad), out_len(wd, k, stride, pad));
            let ckk = c * k * k;
            let plane = ho * wo;
            let mut cols = vec![T::zero(); ckk * plane];
            let mut out = Tensor::zeros(&[n, o, ho, wo]);
            let bias = b.map(|b| self.value(b).data().to_vec());
            for i in 0..n {
                let xs = &xv.data()[i * c * h * wd..(i + 1) * c * h * wd];
                im2col(xs, (c, h, wd), k, geom, (ho, wo), &mut cols);
                let dst = &mut out.data_mut()[i * o * plane..(i + 1) * o * plane];
                T::gemm(o, ckk, plane, wv.data(), (ckk as isize, 1), &cols, (plane as isize, 1), dst, false);
                if let Some(bias) = &bias {
                    for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += bias[oc]);
                    }
                }
            }
            out
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(out, Op::Conv2d { x, w, b, geom }, needs, Vec::new())
    }

    /// `x [N, F] * w^T [F, O] + b`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let out = {
            let xv = self.value(x);
            let wv = self.value(w);
            let (n, f) = (xv.shape()[0], xv.shape()[1]);
            let (o, wf) = (wv.shape()[0], wv.shape()[1]);
            assert_eq!(f, wf, "linear input features {f} vs weight {wf}");
            let mut out = Tensor::zeros(&[n, o]);
            T::gemm(n, f, o, xv.data(), (f as isize, 1), wv.data(), (1, f as isize), out.data_mut(), false);
            if let Some(b) = b {
                let bv = self.value(b);
                for row in out.data_mut().chunks_mut(o) {
                    row.iter_mut().zip(bv.data()).for_each(|(v, &bb)| *v += bb);
                }
            }
            out
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(out, Op::Linear { x, w, b }, needs, Vec::new())
    }

    pub fn upsample2x(&self, x: Var) -> Var {
        let out = {
            let xv = self.value(x);
            let (n, c, h, w) = xv.dims4();
            let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
            let od = out.data_mut();
            for p in 0..n * c {
                let src = &xv.data()[p * h * w..(p + 1) * h * w];
                let dst = &mut od[p * 4 * h * w..(p + 1) * 4 * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                    }
                }
            }
            out
        };
        let needs = self.needs(&[x]);
        self.push(out, Op::Upsample2x(x), needs, Vec::new())
    }

    /// 2x2 mean pooling with stride 2; a trailing odd row or column is dropped.
    pub fn avg_pool2x(&self, x: Var) -> Var {
        let out = {
            let xv = self.value(x);
            let (n, c, h, w) = xv.dims4();
            let (ho, wo) = (h / 2, w / 2);
            let quarter = T::lit(0.25);
            let mut out = Tensor::zeros(&[n, c, ho, wo]);
            let od = out.data_mut();
            for p in 0..n * c {
                let src = &xv.data()[p * h * w..(p + 1) * h * w];
                for y in 0..ho {
                    for xx in 0..wo {
                        let s = src[2 * y * w + 2 * xx]
                            + src[2 * y * w + 2 * xx + 1]
                            + src[(2 * y + 1) * w + 2 * xx]
                            + src[(2 * y + 1) * w + 2 * xx + 1];
                        od[p * ho * wo + y * wo + xx] = s * quarter;
                    }
                }
            }
            out
        };
        let needs = self.needs(&[x]);
        self.push(out, Op::AvgPool2x(x), needs, Vec::new())
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let out = {
            let xv = self.value(x);
            let (n, c, h, w) = xv.dims4();
            let inv = T::lit(1.0 / (h * w) as f64);
            let data = xv.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            Tensor::from_vec(&[n, c], data)
        };
        let needs = self.needs(&[x]);
        self.push(out, Op::GlobalAvgPool(x), needs, Vec::new())
    }

    /// Per-sample, per-channel normalization over the spatial plane, no affine.
    pub fn instance_norm(&self, x: Var) -> Var {
        let (out, inv_std) = {
            let xv = self.value(x);
            let (n, c, h, w) = xv.dims4();
            let plane = h * w;
            let inv_n = T::lit(1.0 / plane as f64);
            let eps = T::lit(NORM_EPS);
            let mut out = Tensor::zeros(&[n, c, h, w]);
            let mut inv_std = Vec::with_capacity(n * c);
            for (src, dst) in xv.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
                let mean = src.iter().copied().sum::<T>() * inv_n;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let inv = T::one() / (var + eps).sqrt();
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = (s - mean) * inv);
                inv_std.push(inv);
            }
            (out, inv_std)
        };
        let needs = self.needs(&[x]);
        self.push(out, Op::InstanceNorm(x), needs, inv_std)
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let needs = self.needs(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, needs, Vec::new())
    }

    pub fn relu(&self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let needs = self.needs(&[x]);
        self.push(out, Op::Tanh(x), needs, Vec::new())
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let needs = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), needs, Vec::new())
    }

    /// Channel-axis concatenation of two NCHW tensors.
    pub fn concat(&self, a: Var, b: Var) -> Var {
        let out = {
            let av = self.value(a);
            let bv = self.value(b);
            let (n, ca, h, w) = av.dims4();
            let (nb, cb, hb, wb) = bv.dims4();
            assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
            let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
            for i in 0..n {
                data.extend_from_slice(&av.data()[i * ca * h * w..(i + 1) * ca * h * w]);
                data.extend_from_slice(&bv.data()[i * cb * h * w..(i + 1) * cb * h * w]);
            }
            Tensor::from_vec(&[n, ca + cb, h, w], data)
        };
        let needs = self.needs(&[a, b]);
        self.push(out, Op::Concat(a, b), needs, Vec::new())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Tensor::from_vec(av.shape(), av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let needs = self.needs(&[a, b]);
        self.push(out, Op::Add(a, b), needs, Vec::new())
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let needs = self.needs(&[a, b]);
        self.push(out, Op::Sub(a, b), needs, Vec::new())
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let f = T::lit(s);
        let out = self.value(a).map(|v| v * f);
        let needs = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), needs, Vec::new())
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let f = T::lit(s);
        let out = self.value(a).map(|v| v + f);
        let needs = self.needs(&[a]);
        self.push(out, Op::AddScalar(a), needs, Vec::new())
    }

    pub fn abs(&self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.abs());
        let needs = self.needs(&[a]);
        self.push(out, Op::Abs(a), needs, Vec::new())
    }

    pub fn square(&self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        let needs = self.needs(&[a]);
        self.push(out, Op::Square(a), needs, Vec::new())
    }

    /// Mean over every element, as a one-element tensor.
    pub fn mean(&self, a: Var) -> Var {
        let m = {
            let av = self.value(a);
            av.data().iter().copied().sum::<T>() / T::lit(av.numel() as f64)
        };
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), needs, Vec::new())
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        let needs = self.needs(&[a]);
        self.push(out, Op::Reshape(a), needs, Vec::new())
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against a constant target.
    pub fn bce_with_logits(&self, x: Var, target: f64) -> Var {
        let n = self.value(x).numel();
        self.bce_with_logits_targets(x, &vec![target; n])
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against per-element targets.
    pub fn bce_with_logits_targets(&self, x: Var, targets: &[f64]) -> Var {
        let targets: Vec<T> = targets.iter().map(|&t| T::lit(t)).collect();
        let loss = {
            let xv = self.value(x);
            assert_eq!(xv.numel(), targets.len(), "one target per logit");
            let sum: T = xv
                .data()
                .iter()
                .zip(&targets)
                .map(|(&v, &t)| v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln())
                .sum();
            sum / T::lit(xv.numel() as f64)
        };
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(loss), Op::BceWithLogits { x }, needs, targets)
    }

    /// Mean absolute difference.
    pub fn l1(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean(d)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].needs_grad;
            match node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xv = val(x);
                    let wv = val(w);
                    let (n, c, h, wd) = xv.dims4();
                    let (o, _, k, _) = wv.dims4();
                    let (_, _, ho, wo) = g.dims4();
                    let plane = ho * wo;
                    let ckk = c * k * k;
                    let mut cols = vec![T::zero(); ckk * plane];
                    let mut gw = wants(w).then(|| Tensor::zeros(wv.shape()));
                    let mut gx = wants(x).then(|| Tensor::zeros(xv.shape()));
                    for i in 0..n {
                        let gy = &g.data()[i * o * plane..(i + 1) * o * plane];
                        if let Some(gw) = gw.as_mut() {
                            let xs = &xv.data()[i * c * h * wd..(i + 1) * c * h * wd];
                            im2col(xs, (c, h, wd), k, geom, (ho, wo), &mut cols);
                            T::gemm(o, plane, ckk, gy, (plane as isize, 1), &cols, (1, plane as isize), gw.data_mut(), true);
                        }
                        if let Some(gx) = gx.as_mut() {
                            T::gemm(ckk, o, plane, wv.data(), (1, ckk as isize), gy, (plane as isize, 1), &mut cols, false);
                            let dst = &mut gx.data_mut()[i * c * h * wd..(i + 1) * c * h * wd];
                            col2im(&cols, (c, h, wd), k, geom, (ho, wo), dst);
                        }
                    }
                    if let Some(b) = b.filter(|&b| wants(b)) {
                        let mut gb = vec![T::zero(); o];
                        for (idx, chunk) in g.data().chunks(plane).enumerate() {
                            gb[idx % o] += chunk.iter().copied().sum::<T>();
                        }
                        acc(&mut grads, b, Tensor::from_vec(&[o], gb));
                    }
                    if let Some(gw) = gw {
                        acc(&mut grads, w, gw);
                    }
                    if let Some(gx) = gx {
                        acc(&mut grads, x, gx);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = val(x);
                    let wv = val(w);
                    let (n, f) = (xv.shape()[0], xv.shape()[1]);
                    let o = wv.shape()[0];
                    if wants(x) {
                        let mut gx = Tensor::zeros(xv.shape());
                        T::gemm(n, o, f, g.data(), (o as isize, 1), wv.data(), (f as isize, 1), gx.data_mut(), false);
                        acc(&mut grads, x, gx);
                    }
                    if wants(w) {
                        let mut gw = Tensor::zeros(wv.shape());
                        T::gemm(o, n, f, g.data(), (1, o as isize), xv.data(), (f as isize, 1), gw.data_mut(), false);
                        acc(&mut grads, w, gw);
                    }
                    if let Some(b) = b.filter(|&b| wants(b)) {
                        let mut gb = vec![T::zero(); o];
                        for row in g.data().chunks(o) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        acc(&mut grads, b, Tensor::from_vec(&[o], gb));
                    }
                }
                Op::Upsample2x(x) => {
                    let (n, c, h, w) = val(x).dims4();
                    let mut gx = Tensor::zeros(&[n, c, h, w]);
                    let gd = gx.data_mut();
                    for p in 0..n * c {
                        let src = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                gd[p * h * w + (y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                            }
                        }
                    }
                    acc(&mut grads, x, gx);
                }
                Op::AvgPool2x(x) => {
                    let (n, c, h, w) = val(x).dims4();
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = T::lit(0.25);
                    let mut gx = Tensor::zeros(&[n, c, h, w]);
                    let gd = gx.data_mut();
                    for p in 0..n * c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let v = g.data()[p * ho * wo + y * wo + xx] * quarter;
                                let base = p * h * w;
                                gd[base + 2 * y * w + 2 * xx] += v;
                                gd[base + 2 * y * w + 2 * xx + 1] += v;
                                gd[base + (2 * y + 1) * w + 2 * xx] += v;
                                gd[base + (2 * y + 1) * w + 2 * xx + 1] += v;
                            }
                        }
                    }
                    acc(&mut grads, x, gx);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = val(x).shape().to_vec();
                    let plane = shape[2] * shape[3];
                    let inv = T::lit(1.0 / plane as f64);
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v * inv, plane)).collect();
                    acc(&mut grads, x, Tensor::from_vec(&shape, data));
                }
                Op::InstanceNorm(x) => {
                    let y = &node.value;
                    let (_, _, h, w) = y.dims4();
                    let plane = h * w;
                    let inv_n = T::lit(1.0 / plane as f64);
                    let mut gx = Tensor::zeros(y.shape());
                    for (((gs, ys), dst), &inv) in
                        g.data().chunks(plane).zip(y.data().chunks(plane)).zip(gx.data_mut().chunks_mut(plane)).zip(&node.aux)
                    {
                        let mg = gs.iter().copied().sum::<T>() * inv_n;
                        let mgy = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                        for ((d, &gv), &yv) in dst.iter_mut().zip(gs).zip(ys) {
                            *d = inv * (gv - mg - yv * mgy);
                        }
                    }
                    acc(&mut grads, x, gx);
                }
                Op::LeakyRelu { x, slope } => {
                    let s = T::lit(slope);
                    let xv = val(x);
                    let data = g.data().iter().zip(xv.data()).map(|(&gv, &v)| if v > T::zero() { gv } else { gv * s }).collect();
                    acc(&mut grads, x, Tensor::from_vec(xv.shape(), data));
                }
                Op::Tanh(x) => {
                    let data = g.data().iter().zip(node.value.data()).map(|(&gv, &y)| gv * (T::one() - y * y)).collect();
                    acc(&mut grads, x, Tensor::from_vec(node.value.shape(), data));
                }
                Op::Sigmoid(x) => {
                    let data = g.data().iter().zip(node.value.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect();
                    acc(&mut grads, x, Tensor::from_vec(node.value.shape(), data));
                }
                Op::Concat(a, b) => {
                    let (n, ca, h, w) = val(a).dims4();
                    let cb = val(b).dims4().1;
                    let plane = h * w;
                    let mut ga = Vec::with_capacity(n * ca * plane);
                    let mut gb = Vec::with_capacity(n * cb * plane);
                    for i in 0..n {
                        let chunk = &g.data()[i * (ca + cb) * plane..(i + 1) * (ca + cb) * plane];
                        ga.extend_from_slice(&chunk[..ca * plane]);
                        gb.extend_from_slice(&chunk[ca * plane..]);
                    }
                    if wants(a) {
                        acc(&mut grads, a, Tensor::from_vec(&[n, ca, h, w], ga));
                    }
                    if wants(b) {
                        acc(&mut grads, b, Tensor::from_vec(&[n, cb, h, w], gb));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if wants(b) {
                        acc(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if wants(b) {
                        acc(&mut grads, b, g.map(|v| -v));
                    }
                }
                Op::Scale(a, s) => {
                    let f = T::lit(s);
                    acc(&mut grads, a, g.map(|v| v * f));
                }
                Op::AddScalar(a) => acc(&mut grads, a, g),
                Op::Abs(a) => {
                    let av = val(a);
                    let data = g.data().iter().zip(av.data()).map(|(&gv, &v)| if v == T::zero() { T::zero() } else { gv * v.signum() }).collect();
                    acc(&mut grads, a, Tensor::from_vec(av.shape(), data));
                }
                Op::Square(a) => {
                    let av = val(a);
                    let two = T::lit(2.0);
                    let data = g.data().iter().zip(av.data()).map(|(&gv, &v)| gv * two * v).collect();
                    acc(&mut grads, a, Tensor::from_vec(av.shape(), data));
                }
                Op::Mean(a) => {
                    let av = val(a);
                    let v = g.data()[0] / T::lit(av.numel() as f64);
                    acc(&mut grads, a, Tensor::full(av.shape(), v));
                }
                Op::Reshape(a) => {
                    let shape = val(a).shape().to_vec();
                    acc(&mut grads, a, g.reshaped(&shape));
                }
                Op::BceWithLogits { x } => {
                    let xv = val(x);
                    let scale = g.data()[0] / T::lit(xv.numel() as f64);
                    let data = xv.data().iter().zip(&node.aux).map(|(&v, &t)| (T::one() / (T::one() + (-v).exp()) - t) * scale).collect();
                    acc(&mut grads, x, Tensor::from_vec(xv.shape(), data));
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Vec<f64> {
        let h = 1e-6;
        (0..x.numel())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) * scale).collect())
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(seq(&[1, 2, 5, 5], 0.1));
        let w = tape.constant(seq(&[3, 2, 3, 3], 0.05));
        let y = tape.conv2d(x, w, None, 2, 1);
        let yv = tape.value(y).clone();
        assert_eq!(yv.shape(), &[1, 3, 3, 3]);
        let xv = tape.value(x).clone();
        let wv = tape.value(w).clone();
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = 0.0;
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    s += xv.data()[c * 25 + iy as usize * 5 + ix as usize] * wv.data()[((o * 2 + c) * 3 + ki) * 3 + kj];
                                }
                            }
                        }
                    }
                    assert!((yv.data()[o * 9 + oy * 3 + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_and_norm_gradients_match_finite_differences() {
        let xs = seq(&[2, 2, 6, 6], 0.1);
        let ws = seq(&[3, 2, 3, 3], 0.07);
        let run = |x: &Tensor<f64>, w: &Tensor<f64>| -> (f64, Option<Tensor<f64>>, Option<Tensor<f64>>) {
            let tape = Tape::<f64>::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let y = tape.conv2d(xv, wv, None, 2, 1);
            let y = tape.instance_norm(y);
            let y = tape.leaky_relu(y, 0.2);
            let y = tape.upsample2x(y);
            let y = tape.avg_pool2x(y);
            let y = tape.tanh(y);
            let y = tape.square(y);
            let loss = tape.mean(y);
            let mut g = tape.backward(loss);
            (tape.item(loss), g.take(xv), g.take(wv))
        };
        let (_, gx, gw) = run(&xs, &ws);
        let nx = numeric_grad(|x| run(x, &ws).0, &xs);
        let nw = numeric_grad(|w| run(&xs, w).0, &ws);
        assert_close(gx.unwrap().data(), &nx, 1e-5);
        assert_close(gw.unwrap().data(), &nw, 1e-5);
    }

    #[test]
    fn linear_concat_bce_gradients_match_finite_differences() {
        let xs = seq(&[2, 1, 2, 2], 0.3);
        let ws = seq(&[3, 8], 0.2);
        let run = |x: &Tensor<f64>, w: &Tensor<f64>| -> (f64, Option<Tensor<f64>>, Option<Tensor<f64>>) {
            let tape = Tape::<f64>::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let c = tape.concat(xv, xv);
            let pooled = tape.reshape(c, &[2, 8]);
            let y = tape.linear(pooled, wv, None);
            let s = tape.sigmoid(y);
            let l1 = tape.bce_with_logits(s, 1.0);
            let l2 = tape.mean(tape.abs(y));
            let l3 = tape.bce_with_logits_targets(y, &[1.0, 0.0, 0.3, 0.0, 1.0, 0.7]);
            let loss = tape.add(tape.add(l1, l3), tape.scale(l2, 0.5));
            let mut g = tape.backward(loss);
            (tape.item(loss), g.take(xv), g.take(wv))
        };
        let (_, gx, gw) = run(&xs, &ws);
        assert_close(gx.unwrap().data(), &numeric_grad(|x| run(x, &ws).0, &xs), 1e-5);
        assert_close(gw.unwrap().data(), &numeric_grad(|w| run(&xs, w).0, &ws), 1e-5);
    }

    #[test]
    fn frozen_branches_get_no_gradient() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(Tensor::full(&[1, 1, 2, 2], 2.0));
        let loss = tape.mean(tape.add(a, b));
        let g = tape.backward(loss);
        assert!(g.get(a).is_some());
        assert!(g.get(b).is_none());
    }
}
