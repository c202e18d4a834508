use nalgebra::DMatrix;

use super::PersonObservation;
use crate::geometry::EPS_DEPTH_MM;

/// Reprojection residuals over the visible joints of a set of persons,
/// parameterised by `[f, t_0, t_1, ...]` (or just the translations when
/// the focal length is fixed).
///
/// Residuals are ordered person by person, joint by joint, `(u, v)` pairs:
/// `r = Π_{f,t_i}(P_ij) - K_ij`.
#[derive(Debug, Clone)]
pub struct ReprojectionProblem<'a> {
    persons: Vec<PersonObservation<'a>>,
    visible: Vec<Vec<usize>>,
    ox: f64,
    oy: f64,
    fixed_focal: Option<f64>,
}

impl<'a> ReprojectionProblem<'a> {
    pub fn new(persons: Vec<PersonObservation<'a>>, ox: f64, oy: f64, fixed_focal: Option<f64>) -> Self {
        let visible = persons
            .iter()
            .map(|p| {
                (0..p.keypoints.len())
                    .filter(|&j| p.keypoints.is_visible(j) && j < p.pose.joints.len())
                    .collect()
            })
            .collect();
        Self {
            persons,
            visible,
            ox,
            oy,
            fixed_focal,
        }
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_params(&self) -> usize {
        3 * self.persons.len() + usize::from(self.fixed_focal.is_none())
    }

    pub fn n_residuals(&self) -> usize {
        2 * self.visible.iter().map(Vec::len).sum::<usize>()
    }

    pub fn n_joints(&self) -> usize {
        self.n_residuals() / 2
    }

    fn offset(&self) -> usize {
        usize::from(self.fixed_focal.is_none())
    }

    pub fn pack(&self, focal: f64, translations: &[[f64; 3]]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_params());
        if self.fixed_focal.is_none() {
            x.push(focal);
        }
        x.extend(translations.iter().flatten());
        x
    }

    pub fn focal(&self, x: &[f64]) -> f64 {
        self.fixed_focal.unwrap_or(x[0])
    }

    pub fn translation(&self, x: &[f64], person: usize) -> [f64; 3] {
        let k = self.offset() + 3 * person;
        [x[k], x[k + 1], x[k + 2]]
    }

    pub fn translations(&self, x: &[f64]) -> Vec<[f64; 3]> {
        (0..self.n_persons()).map(|i| self.translation(x, i)).collect()
    }

    /// True when every used joint lies more than `EPS_DEPTH_MM` in front of the camera.
    pub fn feasible(&self, x: &[f64]) -> bool {
        self.persons.iter().enumerate().all(|(i, p)| {
            let tz = self.translation(x, i)[2];
            self.visible[i].iter().all(|&j| p.pose.joints[j][2] + tz > EPS_DEPTH_MM)
        })
    }

    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let f = self.focal(x);
        let mut r = Vec::with_capacity(self.n_residuals());
        for (i, p) in self.persons.iter().enumerate() {
            let t = self.translation(x, i);
            for &j in &self.visible[i] {
                let q = p.pose.joints[j];
                let z = q[2] + t[2];
                let k = p.keypoints.joints[j];
                r.push(f * (q[0] + t[0]) / z + self.ox - k[0]);
                r.push(f * (q[1] + t[1]) / z + self.oy - k[1]);
            }
        }
        r
    }

    /// Sum of squared residuals.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|v| v * v).sum()
    }

    /// RMS per-joint reprojection distance, px.
    pub fn rms_px(&self, x: &[f64]) -> f64 {
        let n = self.n_joints();
        if n == 0 {
            0.0
        } else {
            (self.cost(x) / n as f64).sqrt()
        }
    }

    /// Analytic Jacobian of [`Self::residuals`]:
    /// `du/df = X/Z`, `du/dtx = f/Z`, `du/dtz = -f X / Z^2`, and likewise for `v`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let f = self.focal(x);
        let off = self.offset();
        let mut jac = DMatrix::zeros(self.n_residuals(), self.n_params());
        let mut row = 0;
        for (i, p) in self.persons.iter().enumerate() {
            let t = self.translation(x, i);
            let col = off + 3 * i;
            for &j in &self.visible[i] {
                let q = p.pose.joints[j];
                let xc = q[0] + t[0];
                let yc = q[1] + t[1];
                let z = q[2] + t[2];
                let inv = 1.0 / z;
                if self.fixed_focal.is_none() {
                    jac[(row, 0)] = xc * inv;
                    jac[(row + 1, 0)] = yc * inv;
                }
                jac[(row, col)] = f * inv;
                jac[(row, col + 2)] = -f * xc * inv * inv;
                jac[(row + 1, col + 1)] = f * inv;
                jac[(row + 1, col + 2)] = -f * yc * inv * inv;
                row += 2;
            }
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Keypoints2D, Pose3D};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut poses = Vec::new();
        let mut kps = Vec::new();
        for _ in 0..3 {
            let mut joints: Vec<[f64; 3]> = (0..6)
                .map(|_| {
                    [
                        rng.gen_range(-400.0..400.0),
                        rng.gen_range(-800.0..800.0),
                        rng.gen_range(-200.0..200.0),
                    ]
                })
                .collect();
            joints[0] = [0.0; 3];
            poses.push(Pose3D { joints });
            let mut kp = Keypoints2D::all_visible(
                (0..6)
                    .map(|_| [rng.gen_range(0.0..800.0), rng.gen_range(0.0..600.0)])
                    .collect(),
            );
            kp.visible[3] = false;
            kps.push(kp);
        }
        let obs: Vec<_> = poses
            .iter()
            .zip(&kps)
            .map(|(pose, keypoints)| PersonObservation { keypoints, pose })
            .collect();
        for fixed in [None, Some(700.0)] {
            let prob = ReprojectionProblem::new(obs.clone(), 400.0, 300.0, fixed);
            let ts: Vec<[f64; 3]> = (0..3)
                .map(|_| {
                    [
                        rng.gen_range(-1000.0..1000.0),
                        rng.gen_range(-500.0..500.0),
                        rng.gen_range(3000.0..8000.0),
                    ]
                })
                .collect();
            let x = prob.pack(850.0, &ts);
            assert_eq!(prob.n_residuals(), 3 * 5 * 2);
            let jac = prob.jacobian(&x);
            for c in 0..x.len() {
                let h = 1e-6 * x[c].abs().max(1.0);
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let (rp, rm) = (prob.residuals(&xp), prob.residuals(&xm));
                for r in 0..rp.len() {
                    let fd = (rp[r] - rm[r]) / (2.0 * h);
                    let an = jac[(r, c)];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "r{r} c{c}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn feasibility_uses_visible_joints() {
        let pose = Pose3D {
            joints: vec![[0.0; 3], [0.0, 0.0, -500.0]],
        };
        let mut kp = Keypoints2D::all_visible(vec![[0.0, 0.0]; 2]);
        let obs = vec![PersonObservation {
            keypoints: &kp,
            pose: &pose,
        }];
        let prob = ReprojectionProblem::new(obs, 0.0, 0.0, None);
        assert!(!prob.feasible(&[500.0, 0.0, 0.0, 400.0]));
        assert!(prob.feasible(&[500.0, 0.0, 0.0, 600.0]));
        kp.visible[1] = false;
        let obs = vec![PersonObservation {
            keypoints: &kp,
            pose: &pose,
        }];
        let prob = ReprojectionProblem::new(obs, 0.0, 0.0, None);
        assert!(prob.feasible(&[500.0, 0.0, 0.0, 400.0]));
    }
}
