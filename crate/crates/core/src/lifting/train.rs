use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_target, input_vector, LiftingModel, LiftingSample};
use crate::error::{Error, Result};

/// RMSProp state: running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    pub mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(n_params: usize, rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            mean_square: vec![0.0; n_params],
        }
    }

    /// `v <- rho v + (1 - rho) g^2; theta <- theta - lr g / (sqrt(v) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.mean_square.len() {
            return Err(Error::ShapeMismatch {
                expected: self.mean_square.len(),
                got: grads.len(),
            });
        }
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.mean_square) {
            *v = self.rho * *v + (1.0 - self.rho) * g * g;
            if g != 0.0 {
                *p -= lr * g / (v.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-dataset mean loss before training, then after every epoch.
    pub loss_trace: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

fn dataset_loss(model: &LiftingModel, inputs: &[Vec<f64>], data: &[LiftingSample]) -> Result<f64> {
    let mut total = 0.0;
    for (x, s) in inputs.iter().zip(data) {
        total += super::loss(&model.forward(x)?, &s.pose, model.config.root_joint)?;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch RMSProp with a fixed, seeded shuffle per epoch. The learning
/// rate is divided by `lr_decay_factor` once `lr_decay_epoch` epochs have run.
pub fn train(model: &mut LiftingModel, data: &[LiftingSample]) -> Result<TrainReport> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("dataset", "empty"));
    }
    let cfg = model.config.clone();
    for s in data {
        check_target(&cfg, &s.pose)?;
    }
    let inputs: Vec<Vec<f64>> = data.iter().map(|s| input_vector(&s.keypoints)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_eed0_f7a1);
    let mut opt = RmsProp::new(model.params.len(), cfg.rmsprop_rho, cfg.rmsprop_eps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; model.params.len()];

    let mut report = TrainReport {
        loss_trace: vec![dataset_loss(model, &inputs, data)?],
        learning_rates: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.lr_decay_epoch {
            cfg.learning_rate / cfg.lr_decay_factor
        } else {
            cfg.learning_rate
        };
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let acts = model.forward_cached(&inputs[i])?;
                model.backward(&acts, &data[i].pose, &mut grads);
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut model.params, &grads, lr)?;
        }
        let l = dataset_loss(model, &inputs, data).map_err(|_| Error::DivergedLoss { epoch })?;
        if !l.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        report.loss_trace.push(l);
        report.learning_rates.push(lr);
    }
    Ok(report)
}
