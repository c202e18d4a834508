//! Fully connected residual network lifting 2D keypoints to root-relative
//! 3D joints.
//!
//! Layout: input affine (2n -> hidden) + ReLU, then residual blocks
//! `h + relu(W2 relu(W1 h + b1) + b2)`, then an output affine
//! (hidden -> 3(n-1)). The root joint has no output units; it is
//! inserted as zeros, so predictions are root-relative by construction.
//! Raw outputs are multiplied by `output_scale_mm`.

mod gradcheck;
mod train;

pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport};
pub use train::{train, RmsProp, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Keypoints2D, Pose3D};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftingConfig {
    pub n_joints: usize,
    pub root_joint: usize,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub output_scale_mm: f64,
    pub seed: u64,
}

impl Default for LiftingConfig {
    fn default() -> Self {
        Self {
            n_joints: 17,
            root_joint: 0,
            hidden_width: 256,
            n_residual_blocks: 2,
            learning_rate: 2.5e-4,
            lr_decay_factor: 10.0,
            lr_decay_epoch: 40,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-8,
            epochs: 100,
            batch_size: 32,
            output_scale_mm: 1000.0,
            seed: 0,
        }
    }
}

impl LiftingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_joints < 2 {
            return Err(Error::invalid("n_joints", "need at least 2 joints"));
        }
        if self.root_joint >= self.n_joints {
            return Err(Error::invalid("root_joint", "out of range"));
        }
        if self.hidden_width == 0 {
            return Err(Error::invalid("hidden_width", "must be > 0"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be >= 0"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::invalid("lr_decay_factor", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) || self.rmsprop_eps < 0.0 {
            return Err(Error::invalid("rmsprop", "need 0 <= rho < 1 and eps >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be > 0"));
        }
        if !(self.output_scale_mm > 0.0) {
            return Err(Error::invalid("output_scale_mm", "must be > 0"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        2 * self.n_joints
    }

    pub fn output_len(&self) -> usize {
        3 * (self.n_joints - 1)
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_width;
        (self.input_len() + 1) * h + self.n_residual_blocks * 2 * (h + 1) * h + (h + 1) * self.output_len()
    }
}

/// Offsets of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Affine {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Affine {
    fn apply(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.w..self.w + self.rows * self.cols];
        let b = &params[self.b..self.b + self.rows];
        out.extend(
            w.chunks_exact(self.cols)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()),
        );
    }

    /// Accumulates weight/bias gradients and returns `W^T delta`.
    fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], delta: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads[self.b + r] += d;
            let row = self.w + r * self.cols;
            for (c, &xc) in x.iter().enumerate() {
                grads[row + c] += d * xc;
                dx[c] += d * params[row + c];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    input: Affine,
    output: Affine,
}

impl Layout {
    fn new(cfg: &LiftingConfig) -> Self {
        let h = cfg.hidden_width;
        let input = Affine {
            w: 0,
            b: h * cfg.input_len(),
            rows: h,
            cols: cfg.input_len(),
        };
        let out_w = input.b + h + cfg.n_residual_blocks * 2 * (h + 1) * h;
        let output = Affine {
            w: out_w,
            b: out_w + cfg.output_len() * h,
            rows: cfg.output_len(),
            cols: h,
        };
        Self { input, output }
    }

    fn block(&self, cfg: &LiftingConfig, k: usize) -> (Affine, Affine) {
        let h = cfg.hidden_width;
        let base = self.input.b + h + k * 2 * (h + 1) * h;
        let first = Affine {
            w: base,
            b: base + h * h,
            rows: h,
            cols: h,
        };
        let second = Affine {
            w: first.b + h,
            b: first.b + h + h * h,
            rows: h,
            cols: h,
        };
        (first, second)
    }
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    input: Vec<f64>,
    z_in: Vec<f64>,
    /// Block inputs, plus the final hidden state at the end.
    hidden: Vec<Vec<f64>>,
    z1: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
    /// Root-relative output, `3n` values in mm.
    pub(crate) output: Vec<f64>,
}

impl Activations {
    /// ReLU on/off pattern, used to detect finite-difference steps that
    /// cross a kink.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.z_in
            .iter()
            .chain(self.z1.iter().flatten())
            .chain(self.z2.iter().flatten())
            .map(|&z| z > 0.0)
            .collect()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&z| z.max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingModel {
    pub format_version: u32,
    pub config: LiftingConfig,
    pub params: Vec<f64>,
}

impl LiftingModel {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every
    /// weight and bias, seeded from the config.
    pub fn new(config: LiftingConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = Layout::new(&config);
        let mut params = vec![0.0; config.param_count()];
        let mut layers = vec![layout.input];
        for k in 0..config.n_residual_blocks {
            let (a, b) = layout.block(&config, k);
            layers.extend([a, b]);
        }
        layers.push(layout.output);
        for layer in layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for i in (layer.w..layer.w + layer.rows * layer.cols).chain(layer.b..layer.b + layer.rows) {
                params[i] = rng.gen_range(-bound..=bound);
            }
        }
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            config,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(
                "format_version",
                format!("unsupported {}", self.format_version),
            ));
        }
        self.config.validate()?;
        if self.params.len() != self.config.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.config.param_count(),
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("params", "non-finite parameter"));
        }
        Ok(())
    }

    pub fn zero_output_layer(&mut self) {
        let out = Layout::new(&self.config).output;
        self.params[out.w..out.b + out.rows].fill(0.0);
    }

    pub fn zero_residual_blocks(&mut self) {
        let layout = Layout::new(&self.config);
        for k in 0..self.config.n_residual_blocks {
            let (a, b) = layout.block(&self.config, k);
            self.params[a.w..b.b + b.rows].fill(0.0);
        }
    }

    /// Predicts `3n` root-relative coordinates (mm) from `2n` normalized inputs.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Pose3D> {
        let out = self.forward(input)?;
        Ok(Pose3D {
            joints: out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub(crate) fn forward_cached(&self, input: &[f64]) -> Result<Activations> {
        let cfg = &self.config;
        if input.len() != cfg.input_len() {
            return Err(Error::ShapeMismatch {
                expected: cfg.input_len(),
                got: input.len(),
            });
        }
        let layout = Layout::new(cfg);
        let p = &self.params;
        let mut z_in = Vec::new();
        layout.input.apply(p, input, &mut z_in);
        let mut h = relu(&z_in);
        let mut acts = Activations {
            input: input.to_vec(),
            z_in,
            hidden: Vec::with_capacity(cfg.n_residual_blocks + 1),
            z1: Vec::new(),
            a1: Vec::new(),
            z2: Vec::new(),
            output: Vec::new(),
        };
        for k in 0..cfg.n_residual_blocks {
            let (first, second) = layout.block(cfg, k);
            let mut z1 = Vec::new();
            first.apply(p, &h, &mut z1);
            let a1 = relu(&z1);
            let mut z2 = Vec::new();
            second.apply(p, &a1, &mut z2);
            let next: Vec<f64> = h.iter().zip(&z2).map(|(x, z)| x + z.max(0.0)).collect();
            acts.hidden.push(std::mem::replace(&mut h, next));
            acts.z1.push(z1);
            acts.a1.push(a1);
            acts.z2.push(z2);
        }
        let mut raw = Vec::new();
        layout.output.apply(p, &h, &mut raw);
        acts.hidden.push(h);

        let scale = cfg.output_scale_mm;
        let mut out = Vec::with_capacity(3 * cfg.n_joints);
        let mut it = raw.iter();
        for j in 0..cfg.n_joints {
            if j == cfg.root_joint {
                out.extend([0.0; 3]);
            } else {
                out.extend(it.by_ref().take(3).map(|v| v * scale));
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation);
        }
        acts.output = out;
        Ok(acts)
    }

    /// Loss and its parameter gradient for one sample, gradients added into `grads`.
    pub(crate) fn backward(&self, acts: &Activations, target: &Pose3D, grads: &mut [f64]) -> f64 {
        let cfg = &self.config;
        let layout = Layout::new(cfg);
        let p = &self.params;
        let n_free = (cfg.n_joints - 1) as f64;
        let scale = cfg.output_scale_mm;

        let mut loss = 0.0;
        let mut d_raw = Vec::with_capacity(cfg.output_len());
        for j in 0..cfg.n_joints {
            if j == cfg.root_joint {
                continue;
            }
            for c in 0..3 {
                let diff = acts.output[3 * j + c] - target.joints[j][c];
                loss += diff * diff;
                d_raw.push(2.0 * diff / n_free * scale);
            }
        }

        let final_h = acts.hidden.last().expect("hidden state");
        let mut dh = layout.output.backward(p, grads, final_h, &d_raw);
        for k in (0..cfg.n_residual_blocks).rev() {
            let (first, second) = layout.block(cfg, k);
            let dz2: Vec<f64> = dh
                .iter()
                .zip(&acts.z2[k])
                .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
                .collect();
            let da1 = second.backward(p, grads, &acts.a1[k], &dz2);
            let dz1: Vec<f64> = da1
                .iter()
                .zip(&acts.z1[k])
                .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
                .collect();
            let through = first.backward(p, grads, &acts.hidden[k], &dz1);
            for (d, t) in dh.iter_mut().zip(through) {
                *d += t;
            }
        }
        let dz_in: Vec<f64> = dh
            .iter()
            .zip(&acts.z_in)
            .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
            .collect();
        layout.input.backward(p, grads, &acts.input, &dz_in);
        loss / n_free
    }

    /// Loss value and full gradient for a single sample.
    pub fn loss_and_gradient(&self, input: &[f64], target: &Pose3D) -> Result<(f64, Vec<f64>)> {
        check_target(&self.config, target)?;
        let acts = self.forward_cached(input)?;
        let mut grads = vec![0.0; self.params.len()];
        let l = self.backward(&acts, target, &mut grads);
        Ok((l, grads))
    }

    /// Indices of the output-layer bias inside the parameter vector.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let out = Layout::new(&self.config).output;
        out.b..out.b + out.rows
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

fn check_target(cfg: &LiftingConfig, target: &Pose3D) -> Result<()> {
    if target.joints.len() != cfg.n_joints {
        return Err(Error::ShapeMismatch {
            expected: cfg.n_joints,
            got: target.joints.len(),
        });
    }
    Ok(())
}

/// Mean over non-root joints of the squared Euclidean distance, mm².
pub fn loss(pred: &[f64], target: &Pose3D, root: usize) -> Result<f64> {
    if pred.len() != 3 * target.joints.len() {
        return Err(Error::ShapeMismatch {
            expected: 3 * target.joints.len(),
            got: pred.len(),
        });
    }
    let n = target.joints.len();
    if n < 2 {
        return Err(Error::invalid("target", "need a non-root joint"));
    }
    let sum: f64 = target
        .joints
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != root)
        .map(|(j, t)| (0..3).map(|c| (pred[3 * j + c] - t[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (n - 1) as f64)
}

/// Maps pixel keypoints into `[-1, 1]` by image size; invisible joints become 0.
pub fn normalize_keypoints(kp: &Keypoints2D, image_w_px: f64, image_h_px: f64) -> Keypoints2D {
    let joints = kp
        .joints
        .iter()
        .zip(&kp.visible)
        .map(|(p, &v)| {
            if v {
                [2.0 * p[0] / image_w_px - 1.0, 2.0 * p[1] / image_h_px - 1.0]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    Keypoints2D {
        joints,
        visible: kp.visible.clone(),
    }
}

/// Flattens normalized keypoints into the network input vector.
pub fn input_vector(normalized: &Keypoints2D) -> Vec<f64> {
    normalized
        .joints
        .iter()
        .zip(&normalized.visible)
        .flat_map(|(p, &v)| if v { *p } else { [0.0, 0.0] })
        .collect()
}

/// One training pair: normalized 2D keypoints and the root-relative target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingSample {
    pub keypoints: Keypoints2D,
    pub pose: Pose3D,
}
