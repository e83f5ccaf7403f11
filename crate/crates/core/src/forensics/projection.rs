use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::detector::Backbone;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProjection {
    /// Backbone class probabilities per image.
    pub features: Vec<Vec<f64>>,
    pub points_2d: Vec<(f64, f64)>,
    /// `true` for forged.
    pub labels: Vec<bool>,
    pub seed: u64,
    pub perplexity: f64,
    pub backbone: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams { perplexity: 30.0, epochs: 1000, learning_rate: 200.0 }
    }
}

fn euclidean(a: &&[f64], b: &&[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exact t-SNE to 2-D, started from a seeded Gaussian layout.
///
/// Perplexity is capped at `(n - 1) / 3` for small inputs.
pub fn tsne(features: &[Vec<f64>], params: &TsneParams, seed: u64) -> Result<(Vec<(f64, f64)>, f64)> {
    let n = features.len();
    if n < 3 {
        return Err(Error::TooFewImages { min: 3, got: n });
    }
    let perplexity = params.perplexity.min((n - 1) as f64 / 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let init: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let embedding = bhtsne::tSNE::<f64, &[f64], 2>::new(&rows)
        .perplexity(perplexity)
        .epochs(params.epochs)
        .learning_rate(params.learning_rate)
        .initial_embedding(init)
        .exact(euclidean)
        .embedding();
    let points = embedding.chunks(2).map(|c| (c[0], c[1])).collect();
    Ok((points, perplexity))
}

/// Backbone probabilities for each image, then a seeded 2-D t-SNE layout.
pub fn embed_projection(images: &[RgbImage], labels: &[bool], backbone: &Backbone, seed: u64) -> Result<EmbeddingProjection> {
    embed_projection_with(images, labels, backbone, seed, &TsneParams::default())
}

pub fn embed_projection_with(images: &[RgbImage], labels: &[bool], backbone: &Backbone, seed: u64, params: &TsneParams) -> Result<EmbeddingProjection> {
    if images.len() < 3 {
        return Err(Error::TooFewImages { min: 3, got: images.len() });
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} images, {} labels", images.len(), labels.len())));
    }
    let features: Vec<Vec<f64>> = images.iter().map(|img| backbone.probabilities(img)).collect();
    let (points_2d, perplexity) = tsne(&features, params, seed)?;
    Ok(EmbeddingProjection { features, points_2d, labels: labels.to_vec(), seed, perplexity, backbone: backbone.origin.clone() })
}

/// Mean silhouette coefficient of a 2-D labelling (two clusters).
pub fn silhouette(points: &[(f64, f64)], labels: &[bool]) -> f64 {
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let scores: Vec<f64> = points
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &l))| {
            let mean_to = |same: bool| {
                let ds: Vec<f64> = points.iter().zip(labels).enumerate().filter(|(j, (_, &m))| *j != i && (m == l) == same).map(|(_, (&q, _))| d(p, q)).collect();
                if ds.is_empty() {
                    None
                } else {
                    Some(ds.iter().sum::<f64>() / ds.len() as f64)
                }
            };
            match (mean_to(true), mean_to(false)) {
                (Some(a), Some(b)) if a.max(b) > 0.0 => (b - a) / a.max(b),
                _ => 0.0,
            }
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}
