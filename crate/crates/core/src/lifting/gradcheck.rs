use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_target, input_vector, LiftingModel, LiftingSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped a ReLU.
    pub skipped_kinks: usize,
}

/// Checks backprop against central differences on `n_params` randomly
/// chosen parameters (all of them if fewer exist).
pub fn gradient_check(
    model: &LiftingModel,
    sample_pair: &LiftingSample,
    perturbation: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let input = input_vector(&sample_pair.keypoints);
    let (_, analytic) = model.loss_and_gradient(&input, &sample_pair.pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.params.len();
    let indices = sample(&mut rng, n, n_params.min(n)).into_vec();
    compare_gradients(model, sample_pair, &analytic, perturbation, &indices)
}

/// Relative error between `analytic[i]` and the central difference
/// `(L(θ+h) - L(θ-h)) / 2h` for each index. The denominator is
/// `max(|a|, |n|)` floored at `1e-7 · (1 + L)` so that parameters with
/// vanishing gradient are judged on an absolute scale.
pub fn compare_gradients(
    model: &LiftingModel,
    sample_pair: &LiftingSample,
    analytic: &[f64],
    perturbation: f64,
    indices: &[usize],
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&perturbation) {
        return Err(Error::invalid("perturbation", "must lie in [1e-6, 1e-4]"));
    }
    if analytic.len() != model.params.len() {
        return Err(Error::ShapeMismatch {
            expected: model.params.len(),
            got: analytic.len(),
        });
    }
    let cfg = &model.config;
    check_target(cfg, &sample_pair.pose)?;
    let input = input_vector(&sample_pair.keypoints);
    let base = model.forward_cached(&input)?;
    let base_loss = super::loss(&base.output, &sample_pair.pose, cfg.root_joint)?;
    let pattern = base.relu_pattern();
    let floor = 1e-7 * (1.0 + base_loss);

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for &i in indices {
        let orig = probe.params[i];
        let mut eval = |value: f64| -> Result<(f64, bool)> {
            probe.params[i] = value;
            let acts = probe.forward_cached(&input)?;
            let l = super::loss(&acts.output, &sample_pair.pose, cfg.root_joint)?;
            Ok((l, acts.relu_pattern() == pattern))
        };
        let (plus, same_plus) = eval(orig + perturbation)?;
        let (minus, same_minus) = eval(orig - perturbation)?;
        probe.params[i] = orig;
        if !(same_plus && same_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * perturbation);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
