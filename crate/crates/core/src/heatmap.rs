//! Soft-argmax decoding of joint heatmaps.
//!
//! Cell `(x, y)` is column `x`, row `y`; decoded coordinates are measured
//! from the centre of the top-left cell, so a peak in cell `(x, y)` decodes
//! to exactly `(x, y)`.
//!
//! Activations are non-negative scores. Softmax runs over their logarithm,
//! `p ∝ exp(T · ln v)`, with the maximum subtracted before exponentiation.
//! At `T = 1` the decoded point is the activation-weighted centroid, and
//! rescaling a grid by a positive constant leaves the output unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Keypoints2D;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Per-joint activation grids, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
    pub joints: Vec<Vec<f64>>,
}

/// Maps decoded heatmap coordinates to image pixels: `image = scale * hm + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeAffine {
    pub scale: [f64; 2],
    pub offset: [f64; 2],
}

impl Default for DecodeAffine {
    fn default() -> Self {
        Self {
            scale: [1.0, 1.0],
            offset: [0.0, 0.0],
        }
    }
}

impl DecodeAffine {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.scale[0] * p[0] + self.offset[0],
            self.scale[1] * p[1] + self.offset[1],
        ]
    }
}

/// Heatmaps attached to a person record, with their RoI-to-image map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonHeatmaps {
    pub heatmap: Heatmap,
    #[serde(default)]
    pub to_image: DecodeAffine,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, joints: Vec<Vec<f64>>) -> Result<Self> {
        let hm = Self { width, height, joints };
        hm.validate()?;
        Ok(hm)
    }

    /// Stacks single-joint grids of equal size.
    pub fn stack(grids: Vec<Heatmap>) -> Result<Self> {
        let (w, h) = grids
            .first()
            .map(|g| (g.width, g.height))
            .ok_or_else(|| Error::invalid("heatmap", "no grids"))?;
        if grids.iter().any(|g| g.width != w || g.height != h) {
            return Err(Error::invalid("heatmap", "grid sizes differ"));
        }
        Self::new(w, h, grids.into_iter().flat_map(|g| g.joints).collect())
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn at(&self, joint: usize, x: usize, y: usize) -> f64 {
        self.joints[joint][y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("heatmap", "empty grid"));
        }
        for grid in &self.joints {
            if grid.len() != self.width * self.height {
                return Err(Error::ShapeMismatch {
                    expected: self.width * self.height,
                    got: grid.len(),
                });
            }
            if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("heatmap", "activations must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Expected cell coordinate under `p ∝ v^T`, per joint, in heatmap space.
pub fn soft_argmax(hm: &Heatmap, temperature: f64) -> Result<Keypoints2D> {
    soft_argmax_mapped(hm, temperature, &DecodeAffine::default())
}

pub fn soft_argmax_mapped(hm: &Heatmap, temperature: f64, to_image: &DecodeAffine) -> Result<Keypoints2D> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    hm.validate()?;
    let joints = hm
        .joints
        .iter()
        .enumerate()
        .map(|(j, grid)| {
            decode_grid(grid, hm.width, temperature)
                .map(|p| to_image.apply(p))
                .ok_or(Error::AllZeroHeatmap { joint: j })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Keypoints2D::all_visible(joints))
}

fn decode_grid(grid: &[f64], width: usize, temperature: f64) -> Option<[f64; 2]> {
    let max = grid.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let log_max = max.ln();
    let (mut total, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &v) in grid.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let w = (temperature * (v.ln() - log_max)).exp();
        total += w;
        sx += w * (i % width) as f64;
        sy += w * (i / width) as f64;
    }
    Some([sx / total, sy / total])
}

/// Single-joint grid `exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2))`.
pub fn synthesize_gaussian(center: [f64; 2], sigma: f64, width: usize, height: usize) -> Result<Heatmap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut grid = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - center[0];
            let dy = y as f64 - center[1];
            grid.push((-(dx * dx + dy * dy) * inv).exp());
        }
    }
    Heatmap::new(width, height, vec![grid])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(w: usize, h: usize, x: usize, y: usize) -> Heatmap {
        let mut g = vec![0.0; w * h];
        g[y * w + x] = 1.0;
        Heatmap::new(w, h, vec![g]).unwrap()
    }

    /// Integer shift with zero fill.
    fn shifted(hm: &Heatmap, dx: i64, dy: i64) -> Heatmap {
        let (w, h) = (hm.width as i64, hm.height as i64);
        let joints = hm
            .joints
            .iter()
            .map(|g| {
                let mut out = vec![0.0; g.len()];
                for y in 0..h {
                    for x in 0..w {
                        let (sx, sy) = (x - dx, y - dy);
                        if (0..w).contains(&sx) && (0..h).contains(&sy) {
                            out[(y * w + x) as usize] = g[(sy * w + sx) as usize];
                        }
                    }
                }
                out
            })
            .collect();
        Heatmap::new(hm.width, hm.height, joints).unwrap()
    }

    #[test]
    fn one_hot_high_temperature() {
        let kp = soft_argmax(&one_hot(32, 32, 10, 20), 50.0).unwrap();
        assert!((kp.joints[0][0] - 10.0).abs() < 1e-3);
        assert!((kp.joints[0][1] - 20.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_peaks() {
        let mut g = vec![0.0; 11 * 11];
        g[5 * 11] = 0.7;
        g[5 * 11 + 10] = 0.7;
        let kp = soft_argmax(&Heatmap::new(11, 11, vec![g]).unwrap(), 1.0).unwrap();
        assert_eq!(kp.joints[0], [5.0, 5.0]);
    }

    #[test]
    fn gaussian_center_recovered() {
        let hm = synthesize_gaussian([13.4, 7.8], 2.0, 32, 24).unwrap();
        let kp = soft_argmax(&hm, 1.0).unwrap();
        // independent expected value: plain weighted mean with no log/max shift
        let g = &hm.joints[0];
        let total: f64 = g.iter().sum();
        let ex: f64 = g.iter().enumerate().map(|(i, v)| v * (i % 32) as f64).sum::<f64>() / total;
        let ey: f64 = g.iter().enumerate().map(|(i, v)| v * (i / 32) as f64).sum::<f64>() / total;
        assert!((kp.joints[0][0] - ex).abs() < 1e-12);
        assert!((kp.joints[0][1] - ey).abs() < 1e-12);
        assert!((kp.joints[0][0] - 13.4).abs() < 0.1);
        assert!((kp.joints[0][1] - 7.8).abs() < 0.1);
    }

    #[test]
    fn all_zero_is_error() {
        let hm = Heatmap::new(4, 4, vec![vec![1.0; 16], vec![0.0; 16]]).unwrap();
        assert!(matches!(soft_argmax(&hm, 1.0), Err(Error::AllZeroHeatmap { joint: 1 })));
    }

    #[test]
    fn bad_inputs() {
        assert!(Heatmap::new(2, 2, vec![vec![1.0; 3]]).is_err());
        assert!(Heatmap::new(2, 2, vec![vec![-1.0, 1.0, 1.0, 1.0]]).is_err());
        let hm = one_hot(3, 3, 1, 1);
        assert!(soft_argmax(&hm, 0.0).is_err());
        assert!(synthesize_gaussian([1.0, 1.0], 0.0, 3, 3).is_err());
    }

    #[test]
    fn gaussian_peak_and_decay() {
        let hm = synthesize_gaussian([5.0, 5.0], 1.0, 11, 11).unwrap();
        assert_eq!(hm.at(0, 5, 5), 1.0);
        let corner = synthesize_gaussian([0.0, 0.0], 2.0, 9, 7).unwrap();
        for x in 1..9 {
            assert!(corner.at(0, x, 0) < corner.at(0, x - 1, 0));
        }
        for y in 1..7 {
            assert!(corner.at(0, 0, y) < corner.at(0, 0, y - 1));
        }
    }

    #[test]
    fn scale_invariant() {
        let hm = synthesize_gaussian([9.3, 4.1], 1.5, 20, 12).unwrap();
        let scaled = Heatmap::new(20, 12, vec![hm.joints[0].iter().map(|v| v * 37.0).collect()]).unwrap();
        let a = soft_argmax(&hm, 2.0).unwrap();
        let b = soft_argmax(&scaled, 2.0).unwrap();
        assert!((a.joints[0][0] - b.joints[0][0]).abs() < 1e-12);
        assert!((a.joints[0][1] - b.joints[0][1]).abs() < 1e-12);
    }

    #[test]
    fn affine_applied() {
        let kp = soft_argmax_mapped(
            &one_hot(8, 8, 2, 3),
            1.0,
            &DecodeAffine {
                scale: [4.0, 2.0],
                offset: [100.0, 50.0],
            },
        )
        .unwrap();
        assert_eq!(kp.joints[0], [108.0, 56.0]);
    }

    #[test]
    fn stack_grids() {
        let a = synthesize_gaussian([2.0, 2.0], 1.0, 8, 8).unwrap();
        let b = synthesize_gaussian([5.0, 6.0], 1.0, 8, 8).unwrap();
        let hm = Heatmap::stack(vec![a, b]).unwrap();
        assert_eq!(hm.n_joints(), 2);
        let c = synthesize_gaussian([5.0, 6.0], 1.0, 9, 8).unwrap();
        assert!(Heatmap::stack(vec![hm, c]).is_err());
    }

    proptest! {
        #[test]
        fn inside_grid(values in proptest::collection::vec(0.0..1.0f64, 6 * 5), t in 0.1..100.0f64) {
            let mut values = values;
            values[7] += 0.1;
            let kp = soft_argmax(&Heatmap::new(6, 5, vec![values]).unwrap(), t).unwrap();
            let [u, v] = kp.joints[0];
            prop_assert!((0.0..=5.0).contains(&u));
            prop_assert!((0.0..=4.0).contains(&v));
        }

        #[test]
        fn translation_equivariant(cx in 10.0..30.0f64, cy in 10.0..20.0f64, dx in -4i64..=4, dy in -4i64..=4) {
            let hm = synthesize_gaussian([cx, cy], 1.5, 48, 32).unwrap();
            let a = soft_argmax(&hm, 1.0).unwrap().joints[0];
            let b = soft_argmax(&shifted(&hm, dx, dy), 1.0).unwrap().joints[0];
            prop_assert!((b[0] - a[0] - dx as f64).abs() < 0.05);
            prop_assert!((b[1] - a[1] - dy as f64).abs() < 0.05);
        }

        #[test]
        fn high_temperature_is_argmax(values in proptest::collection::vec(0.0..0.5f64, 10 * 9), peak in 0usize..90) {
            let mut values = values;
            values[peak] = 1.0;
            let kp = soft_argmax(&Heatmap::new(10, 9, vec![values]).unwrap(), 100.0).unwrap();
            prop_assert!((kp.joints[0][0] - (peak % 10) as f64).abs() <= 0.01);
            prop_assert!((kp.joints[0][1] - (peak / 10) as f64).abs() <= 0.01);
        }

        #[test]
        fn gaussian_round_trip(cx in 0.0..1.0f64, cy in 0.0..1.0f64, sigma in 1.0..3.0f64) {
            let (w, h) = (40usize, 36usize);
            let m = 4.0 * sigma;
            let c = [m + cx * (w as f64 - 1.0 - 2.0 * m), m + cy * (h as f64 - 1.0 - 2.0 * m)];
            let hm = synthesize_gaussian(c, sigma, w, h).unwrap();
            let kp = soft_argmax(&hm, 1.0).unwrap();
            prop_assert!((kp.joints[0][0] - c[0]).abs() < 0.05);
            prop_assert!((kp.joints[0][1] - c[1]).abs() < 0.05);
        }
    }
}
