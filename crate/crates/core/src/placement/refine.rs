use nalgebra::{DMatrix, DVector};

use super::{
    PersonObservation, PlacementOptions, PlacementResult, ReprojectionProblem, MIN_VISIBLE_JOINTS, ZERO_RESIDUAL_PX,
};
use crate::error::{Error, Result};
use crate::pose::{CameraIntrinsics, GlobalPose};

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;
const MAX_HALVINGS: usize = 60;

/// Jointly refines the shared focal length and per-person root translations
/// with Levenberg-Marquardt (Marquardt diagonal scaling, analytic Jacobian).
///
/// Persons with fewer than three visible joints stay at `t_init` and do not
/// constrain the focal length. Steps that would put a used joint within
/// `EPS_DEPTH_MM` of the camera plane are halved until feasible; the focal
/// length is clamped to the configured bounds. Only steps that do not
/// increase the squared residual are accepted.
pub fn refine(
    persons: &[PersonObservation<'_>],
    cam_init: &CameraIntrinsics,
    t_init: &[[f64; 3]],
    opts: &PlacementOptions,
) -> Result<PlacementResult> {
    opts.validate()?;
    cam_init.validate()?;
    if persons.is_empty() {
        return Err(Error::NoVisibleJoints);
    }
    if t_init.len() != persons.len() {
        return Err(Error::ShapeMismatch {
            expected: persons.len(),
            got: t_init.len(),
        });
    }

    let (active, held): (Vec<usize>, Vec<usize>) =
        (0..persons.len()).partition(|&i| persons[i].keypoints.n_visible() >= MIN_VISIBLE_JOINTS);
    if active.is_empty() {
        return Err(Error::NoVisibleJoints);
    }

    let [f_lo, f_hi] = opts.focal_bounds(cam_init.image_w_px);
    let f0 = cam_init.focal_px.clamp(f_lo, f_hi);
    let fixed = opts.fix_focal.then_some(cam_init.focal_px);
    // with the focal length frozen the problem is block-diagonal, so each
    // person is solved on its own and is unaffected by the others
    let groups: Vec<Vec<usize>> = if fixed.is_some() {
        active.iter().map(|&i| vec![i]).collect()
    } else {
        vec![active]
    };

    let mut focal = f0;
    let mut translations = t_init.to_vec();
    let mut runs = Vec::with_capacity(groups.len());
    for group in &groups {
        let problem = ReprojectionProblem::new(
            group.iter().map(|&i| persons[i]).collect(),
            cam_init.ox_px,
            cam_init.oy_px,
            fixed,
        );
        let group_t: Vec<[f64; 3]> = group.iter().map(|&i| t_init[i]).collect();
        let run = solve(&problem, problem.pack(f0, &group_t), opts, fixed.is_none(), f_lo, f_hi)?;
        focal = problem.focal(&run.x);
        for (k, &i) in group.iter().enumerate() {
            translations[i] = problem.translation(&run.x, k);
        }
        runs.push((problem.n_joints(), run));
    }

    // joint RMS per step; a block that has stopped keeps its final cost
    let n_total: usize = runs.iter().map(|(n, _)| n).sum();
    let iterations = runs.iter().map(|(_, r)| r.iterations).max().unwrap_or(0);
    let trace: Vec<f64> = (0..=iterations)
        .map(|k| {
            let sse: f64 = runs
                .iter()
                .map(|(n, r)| *n as f64 * r.trace[k.min(r.trace.len() - 1)].powi(2))
                .sum();
            if n_total == 0 {
                0.0
            } else {
                (sse / n_total as f64).sqrt()
            }
        })
        .collect();
    let converged = runs.iter().all(|(_, r)| r.converged);

    let camera = CameraIntrinsics {
        focal_px: focal,
        ..*cam_init
    };
    let global_poses = persons
        .iter()
        .zip(&translations)
        .map(|(p, &t)| GlobalPose::new(p.pose.clone(), t))
        .collect();
    Ok(PlacementResult {
        camera,
        translations_mm: translations,
        global_poses,
        initial_residual_px: trace[0],
        final_residual_px: *trace.last().expect("trace"),
        iterations,
        converged,
        residual_trace_px: trace,
        held_persons: held,
    })
}

struct Run {
    x: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Levenberg-Marquardt from `x`. `trace` holds the RMS after every accepted
/// step, starting with the initial value.
fn solve(
    problem: &ReprojectionProblem<'_>,
    mut x: Vec<f64>,
    opts: &PlacementOptions,
    has_focal: bool,
    f_lo: f64,
    f_hi: f64,
) -> Result<Run> {
    if !problem.feasible(&x) {
        return Err(Error::invalid("t_init", "a joint lies at or behind the camera"));
    }
    let mut cost = problem.cost(&x);
    if !cost.is_finite() {
        return Err(Error::NonFiniteResidual);
    }
    let initial_rms = problem.rms_px(&x);
    let mut trace = vec![initial_rms];
    let mut lambda = opts.damping_init;
    let mut iterations = 0;
    let mut converged = initial_rms <= ZERO_RESIDUAL_PX;

    while !converged && iterations < opts.max_iterations {
        let jac = problem.jacobian(&x);
        let r = DVector::from_vec(problem.residuals(&x));
        let jtj: DMatrix<f64> = jac.transpose() * &jac;
        let grad: DVector<f64> = jac.transpose() * &r;
        let diag_max = jtj.diagonal().max();
        let floor = 1e-12 * diag_max.max(f64::MIN_POSITIVE);

        let mut accepted = None;
        while lambda <= MAX_DAMPING {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(floor);
            }
            let Some(step) = a.cholesky().map(|c| -c.solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            if let Some((cand, cand_cost)) = try_step(problem, &x, step.as_slice(), has_focal, f_lo, f_hi) {
                if !cand_cost.is_finite() {
                    return Err(Error::NonFiniteResidual);
                }
                if cand_cost <= cost {
                    accepted = Some((cand, cand_cost));
                    lambda = (lambda / 10.0).max(MIN_DAMPING);
                    break;
                }
            }
            lambda *= 10.0;
        }

        let Some((next, next_cost)) = accepted else {
            // no descent direction left at any damping: a (local) minimum
            converged = true;
            break;
        };
        let step_norm = next.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel_drop = if cost > 0.0 { (cost - next_cost) / cost } else { 0.0 };
        x = next;
        cost = next_cost;
        iterations += 1;
        trace.push(problem.rms_px(&x));

        if problem.rms_px(&x) <= ZERO_RESIDUAL_PX
            || rel_drop < opts.residual_tolerance
            || step_norm < opts.step_tolerance * (x_norm + opts.step_tolerance)
        {
            converged = true;
        }
    }

    Ok(Run {
        x,
        trace,
        iterations,
        converged,
    })
}

/// Applies `step`, clamps the focal length and halves the step until every
/// used joint is in front of the camera. Returns the candidate and its cost.
fn try_step(
    problem: &ReprojectionProblem<'_>,
    x: &[f64],
    step: &[f64],
    has_focal: bool,
    f_lo: f64,
    f_hi: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut scale = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut cand: Vec<f64> = x.iter().zip(step).map(|(a, d)| a + scale * d).collect();
        if has_focal {
            cand[0] = cand[0].clamp(f_lo, f_hi);
        }
        if problem.feasible(&cand) {
            let c = problem.cost(&cand);
            return Some((cand, c));
        }
        scale *= 0.5;
    }
    None
}
