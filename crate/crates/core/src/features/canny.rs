//! Canny edge detection on 8-bit RGB tiles.
//!
//! Grayscale (BT.601 luma) -> separable Gaussian -> 3x3 Sobel -> non-maximum
//! suppression -> double threshold with 8-connected hysteresis. Borders are
//! handled by clamping sample coordinates.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub gaussian_sigma: f32,
    /// Thresholds on the L2 Sobel magnitude of a 0..255 image.
    pub low_threshold: f32,
    pub high_threshold: f32,
    /// Sobel aperture; only 3 is supported.
    pub aperture: u32,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams { gaussian_sigma: 1.4, low_threshold: 50.0, high_threshold: 150.0, aperture: 3 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("gaussian_sigma must be positive, got {}", self.gaussian_sigma)));
        }
        if !(self.low_threshold > 0.0 && self.low_threshold < self.high_threshold) {
            return Err(Error::InvalidParams(format!(
                "need 0 < low < high, got low {} high {}",
                self.low_threshold, self.high_threshold
            )));
        }
        if self.aperture != 3 {
            return Err(Error::InvalidParams(format!("unsupported Sobel aperture {}", self.aperture)));
        }
        Ok(())
    }
}

/// Single-channel float plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

pub fn luma(rgb: &RgbImage) -> Plane {
    let data = rgb.pixels().map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32).collect();
    Plane { width: rgb.width() as usize, height: rgb.height() as usize, data }
}

/// Normalized 1-D Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius).map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

pub fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane { width: w, height: h, data: vec![0.0; w * h] };
    for y in 0..h {
        for x in 0..w {
            tmp.data[y * w + x] =
                k.iter().enumerate().map(|(i, kv)| kv * src.at_clamped(x as isize + i as isize - r, y as isize)).sum();
        }
    }
    let mut out = Plane { width: w, height: h, data: vec![0.0; w * h] };
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] =
                k.iter().enumerate().map(|(i, kv)| kv * tmp.at_clamped(x as isize, y as isize + i as isize - r)).sum();
        }
    }
    out
}

/// Horizontal and vertical 3x3 Sobel responses.
pub fn sobel(src: &Plane) -> (Plane, Plane) {
    let (w, h) = (src.width, src.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| src.at_clamped(x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (Plane { width: w, height: h, data: gx }, Plane { width: w, height: h, data: gy })
}

/// Smoothed gradient field `(gx, gy)` of a tile's luma.
pub fn gradients(rgb: &RgbImage, sigma: f32) -> (Plane, Plane) {
    sobel(&gaussian_blur(&luma(rgb), sigma))
}

/// Thin the magnitude field to ridge pixels along the gradient direction.
///
/// Ties break toward the lower neighbour so a symmetric two-pixel ridge
/// keeps exactly one pixel.
pub fn non_maximum_suppression(gx: &Plane, gy: &Plane) -> Plane {
    let (w, h) = (gx.width, gx.height);
    let mag = Plane { width: w, height: h, data: gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect() };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag.data[i];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy.data[i].atan2(gx.data[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let fwd = mag.at_clamped(x + dx, y + dy);
            let back = mag.at_clamped(x - dx, y - dy);
            if m > back && m >= fwd {
                out[i] = m;
            }
        }
    }
    Plane { width: w, height: h, data: out }
}

/// Keep pixels at or above `high`, plus pixels at or above `low` that are
/// 8-connected to a kept pixel. Output is 0/255.
pub fn hysteresis(thinned: &Plane, low: f32, high: f32) -> GrayImage {
    let (w, h) = (thinned.width, thinned.height);
    let mut out = vec![0u8; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &m) in thinned.data.iter().enumerate() {
        if m >= high && out[i] == 0 {
            out[i] = 255;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (jx, jy) = ((j % w) as isize, (j / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (jx + dx, jy + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let k = ny as usize * w + nx as usize;
                        if out[k] == 0 && thinned.data[k] >= low {
                            out[k] = 255;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    GrayImage::from_raw(w as u32, h as u32, out).expect("buffer sized to image")
}

/// Full Canny pipeline returning a 0/255 edge map.
pub fn canny(rgb: &RgbImage, params: &CannyParams) -> Result<GrayImage> {
    params.validate()?;
    let (gx, gy) = gradients(rgb, params.gaussian_sigma);
    let thinned = non_maximum_suppression(&gx, &gy);
    Ok(hysteresis(&thinned, params.low_threshold, params.high_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(width: u32, height: u32, column: u32, lo: u8, hi: u8) -> RgbImage {
        RgbImage::from_fn(width, height, |x, _| if x < column { image::Rgb([lo; 3]) } else { image::Rgb([hi; 3]) })
    }

    #[test]
    fn constant_tile_has_no_edges() {
        let img = RgbImage::from_pixel(64, 64, image::Rgb([90, 120, 30]));
        assert!(canny(&img, &CannyParams::default()).unwrap().pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn invalid_thresholds() {
        let img = RgbImage::new(8, 8);
        let bad = CannyParams { low_threshold: 150.0, high_threshold: 150.0, ..Default::default() };
        assert!(matches!(canny(&img, &bad), Err(Error::InvalidParams(_))));
        let bad = CannyParams { aperture: 5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    /// Direct (non-separable) 2-D convolution of the Gaussian-then-Sobel pipeline.
    fn direct_gradient_x(img: &RgbImage, sigma: f32, x: i64, y: i64) -> f64 {
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let gray = luma(img);
        let (w, h) = (gray.width as i64, gray.height as i64);
        let sample = |xx: i64, yy: i64| gray.data[(yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)) as usize] as f64;
        let blurred = |cx: i64, cy: i64| {
            let cx = cx.clamp(0, w - 1);
            let cy = cy.clamp(0, h - 1);
            let mut s = 0.0;
            for (j, kj) in k.iter().enumerate() {
                for (i, ki) in k.iter().enumerate() {
                    s += (*ki as f64) * (*kj as f64) * sample(cx + i as i64 - r, cy + j as i64 - r);
                }
            }
            s
        };
        let sob = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let mut g = 0.0;
        for (dy, row) in sob.iter().enumerate() {
            for (dx, c) in row.iter().enumerate() {
                g += c * blurred(x + dx as i64 - 1, y + dy as i64 - 1);
            }
        }
        g
    }

    #[test]
    fn step_edge_gives_single_line_at_oracle_peak() {
        let img = step(64, 64, 32, 0, 200);
        let (gx, _) = gradients(&img, 1.4);
        // Separable implementation agrees with the direct 2-D oracle.
        for y in [10i64, 32, 50] {
            for x in 26..38i64 {
                let oracle = direct_gradient_x(&img, 1.4, x, y);
                assert!((gx.data[(y * 64 + x) as usize] as f64 - oracle).abs() < 1e-2, "x {x} y {y}");
            }
        }
        // The oracle's peak lies on the step boundary.
        let peak = (26..38i64)
            .max_by(|&a, &b| direct_gradient_x(&img, 1.4, a, 20).total_cmp(&direct_gradient_x(&img, 1.4, b, 20)))
            .unwrap();
        assert!(peak == 31 || peak == 32);

        let cfi = canny(&img, &CannyParams::default()).unwrap();
        for y in 0..64 {
            let cols: Vec<u32> = (0..64).filter(|&x| cfi.get_pixel(x, y)[0] == 255).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!((cols[0] as i64 - peak).abs() <= 1);
        }
    }

    #[test]
    fn raising_high_threshold_never_adds_edges() {
        let img = RgbImage::from_fn(48, 48, |x, y| image::Rgb([((x * x + 3 * y * y) % 251) as u8, (x * 9) as u8, (y * 5) as u8]));
        let (gx, gy) = gradients(&img, 1.0);
        let thinned = non_maximum_suppression(&gx, &gy);
        let mut prev = hysteresis(&thinned, 40.0, 60.0);
        for high in [80.0, 120.0, 200.0, 400.0, 800.0] {
            let next = hysteresis(&thinned, 40.0, high);
            for (a, b) in next.pixels().zip(prev.pixels()) {
                assert!(a[0] <= b[0]);
            }
            prev = next;
        }
    }

    #[test]
    fn shifting_pattern_shifts_edges() {
        let square = |off: u32| {
            RgbImage::from_fn(64, 64, |x, y| {
                let inside = (16 + off..36 + off).contains(&x) && (20..40).contains(&y);
                image::Rgb(if inside { [220; 3] } else { [20; 3] })
            })
        };
        let k = 5;
        let a = canny(&square(0), &CannyParams::default()).unwrap();
        let b = canny(&square(k), &CannyParams::default()).unwrap();
        for y in 2..62 {
            for x in 2..(62 - k) {
                assert_eq!(a.get_pixel(x, y), b.get_pixel(x + k, y), "({x},{y})");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_is_binary(seed in any::<u64>()) {
            let img = RgbImage::from_fn(32, 32, |x, y| {
                let v = seed.wrapping_mul(6364136223846793005).wrapping_add(((x * 32 + y) as u64).wrapping_mul(1442695040888963407));
                image::Rgb([(v >> 56) as u8, (v >> 48) as u8, (v >> 40) as u8])
            });
            let cfi = canny(&img, &CannyParams::default()).unwrap();
            prop_assert!(cfi.pixels().all(|p| p[0] == 0 || p[0] == 255));
        }
    }
}
