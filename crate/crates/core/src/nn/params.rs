use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::tape::{Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors of one network, in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// SHA-256 over names, shapes and little-endian `f32` values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Overwrite values from `other`, matching by name. Missing names are an error.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let index: HashMap<&str, &Tensor<T>> = other.names.iter().map(String::as_str).zip(&other.tensors).collect();
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = index.get(name.as_str()).ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Weights(format!("tensor {name}: shape {:?} vs {:?}", src.shape(), t.shape())));
            }
            *t = (*src).clone();
        }
        Ok(())
    }

    /// Copy values for the names both stores share; returns how many matched.
    pub fn load_matching(&mut self, other: &ParamStore<T>) -> usize {
        let index: HashMap<&str, &Tensor<T>> = other.names.iter().map(String::as_str).zip(&other.tensors).collect();
        let mut matched = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(src) = index.get(name.as_str()).filter(|s| s.shape() == t.shape()) {
                *t = (*src).clone();
                matched += 1;
            }
        }
        matched
    }

    /// Serialize as a safetensors archive of `f32` tensors.
    pub fn to_safetensors(&self) -> Result<Vec<u8>> {
        self.to_safetensors_with(None)
    }

    /// Like [`ParamStore::to_safetensors`], with string metadata in the header.
    pub fn to_safetensors_with(&self, metadata: Option<HashMap<String, String>>) -> Result<Vec<u8>> {
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                let bytes = t.data().iter().flat_map(|v| v.to_f32().unwrap_or(f32::NAN).to_le_bytes()).collect();
                (n.clone(), t.shape().to_vec(), bytes)
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(n, shape, bytes)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F32, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Weights(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, metadata).map_err(|e| Error::Weights(e.to_string()))
    }

    pub fn from_safetensors(bytes: &[u8]) -> Result<Self> {
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| Error::Weights(e.to_string()))?;
        let mut names: Vec<String> = st.names().into_iter().map(str::to_string).collect();
        names.sort();
        let mut store = ParamStore::default();
        for name in names {
            let view = st.tensor(&name).map_err(|e| Error::Weights(e.to_string()))?;
            if view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::Weights(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap_or_else(T::zero))
                .collect();
            store.names.push(name);
            store.tensors.push(Tensor::from_vec(view.shape(), data));
        }
        Ok(store)
    }

    /// Header metadata of a safetensors archive.
    pub fn safetensors_metadata(bytes: &[u8]) -> Result<HashMap<String, String>> {
        let (_, meta) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Weights(e.to_string()))?;
        Ok(meta.metadata().clone().unwrap_or_default())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_safetensors()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile { path: path.to_owned(), reason: e.to_string() })?;
        Self::from_safetensors(&bytes)
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal with the given standard deviation.
    Normal(f64),
    /// He normal: `std = sqrt(2 / fan_in)`.
    HeNormal,
    Zeros,
}

/// Registers parameters in a fixed order from a seeded generator, so the
/// same architecture and seed always produce the same initial weights.
pub struct ParamBuilder<T> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        ParamBuilder { store: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Normal(_) | Init::HeNormal => {
                let std = match init {
                    Init::Normal(s) => s,
                    _ => (2.0 / shape[1..].iter().product::<usize>().max(1) as f64).sqrt(),
                };
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect()
            }
        };
        self.store.names.push(name.into());
        self.store.tensors.push(Tensor::from_vec(shape, data));
        self.store.tensors.len() - 1
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, init: Init) -> Conv {
        let w = self.add(format!("{name}.weight"), &[cout, cin, kernel, kernel], init);
        let b = self.add(format!("{name}.bias"), &[cout], Init::Zeros);
        Conv { w, b, stride, pad }
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize, init: Init) -> Linear {
        let w = self.add(format!("{name}.weight"), &[fout, fin], init);
        let b = self.add(format!("{name}.bias"), &[fout], Init::Zeros);
        Linear { w, b }
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

/// Convolution layer: indices into a bound parameter list plus geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn apply<T: Element>(&self, tape: &Tape<T>, params: &[Var], x: Var) -> Var {
        tape.conv2d(x, params[self.w], Some(params[self.b]), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn apply<T: Element>(&self, tape: &Tape<T>, params: &[Var], x: Var) -> Var {
        tape.linear(x, params[self.w], Some(params[self.b]))
    }
}
