use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use super::{gaussian_params, Problem};
use crate::param_space::{Layout, ParamVector, Rng};

/// End-effector position of a planar arm with unit links.
pub fn forward_kinematics(angles: &[f64]) -> (f64, f64) {
    let mut phi = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for a in angles {
        phi += a;
        x += phi.cos();
        y += phi.sin();
    }
    (x, y)
}

/// Multi-waypoint inverse kinematics for an `n_links` planar arm: each
/// waypoint has its own joint configuration, and neighbouring
/// configurations are tied together by a smoothness penalty.
#[derive(Debug, Clone)]
pub struct InverseKinematics {
    n_links: usize,
    targets: Vec<(f64, f64)>,
    lambda_smooth: f64,
    seed: u64,
    layout: Arc<Layout>,
}

impl InverseKinematics {
    /// Targets at radius U[2, 6] and bearing U[−π/2, π/2], all reachable by
    /// an arm of total length `n_links >= 6`.
    pub fn new(n_links: usize, n_waypoints: usize, lambda_smooth: f64, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, 0);
        let targets = (0..n_waypoints)
            .map(|_| {
                let radius = rng.uniform_range(2.0, 6.0);
                let bearing = rng.uniform_range(-FRAC_PI_2, FRAC_PI_2);
                (radius * bearing.cos(), radius * bearing.sin())
            })
            .collect();
        let mut ik = Self::with_targets(n_links, targets, lambda_smooth);
        ik.seed = seed;
        ik
    }

    pub fn with_targets(n_links: usize, targets: Vec<(f64, f64)>, lambda_smooth: f64) -> Self {
        let layout = Arc::new(Layout::new(
            (0..targets.len()).map(|w| (format!("waypoint{w}"), n_links)),
        ));
        InverseKinematics {
            n_links,
            targets,
            lambda_smooth,
            seed: 0,
            layout,
        }
    }

    pub fn targets(&self) -> &[(f64, f64)] {
        &self.targets
    }

    fn waypoint<'a>(&self, theta: &'a ParamVector, w: usize) -> &'a [f64] {
        &theta.as_slice()[w * self.n_links..(w + 1) * self.n_links]
    }
}

impl Problem for InverseKinematics {
    fn name(&self) -> &str {
        "inverse_kinematics"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    fn init(&self, rng: &mut Rng) -> ParamVector {
        gaussian_params(rng, &self.layout, 0.1)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let n = self.n_links;
        let mut grad = theta.zeros_like();
        let mut loss = 0.0;
        let mut sin_cum = vec![0.0; n];
        let mut cos_cum = vec![0.0; n];
        for (w, &(tx, ty)) in self.targets.iter().enumerate() {
            let angles = self.waypoint(theta, w);
            let mut phi = 0.0;
            for j in 0..n {
                phi += angles[j];
                sin_cum[j] = phi.sin();
                cos_cum[j] = phi.cos();
            }
            let ex = cos_cum.iter().sum::<f64>() - tx;
            let ey = sin_cum.iter().sum::<f64>() - ty;
            loss += ex * ex + ey * ey;
            // ∂p/∂φ_k = Σ_{j≥k} (−sin Φ_j, cos Φ_j)
            let g = &mut grad.as_mut_slice()[w * n..(w + 1) * n];
            let (mut dx, mut dy) = (0.0, 0.0);
            for k in (0..n).rev() {
                dx -= sin_cum[k];
                dy += cos_cum[k];
                g[k] = 2.0 * (ex * dx + ey * dy);
            }
        }
        for w in 0..self.targets.len().saturating_sub(1) {
            for k in 0..n {
                let d = theta[(w + 1) * n + k] - theta[w * n + k];
                loss += self.lambda_smooth * d * d;
                grad[(w + 1) * n + k] += 2.0 * self.lambda_smooth * d;
                grad[w * n + k] -= 2.0 * self.lambda_smooth * d;
            }
        }
        (loss, grad)
    }

    /// sqrt of the mean squared end-effector distance to the targets.
    fn test_metric(&self, theta: &ParamVector) -> Option<f64> {
        let total: f64 = (0..self.targets.len())
            .map(|w| {
                let (x, y) = forward_kinematics(self.waypoint(theta, w));
                let (tx, ty) = self.targets[w];
                (x - tx).powi(2) + (y - ty).powi(2)
            })
            .sum();
        Some((total / self.targets.len() as f64).sqrt())
    }

    fn metric_name(&self) -> &str {
        "target_rmse"
    }

    fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("n_links".into(), self.n_links.to_string()),
            ("n_waypoints".into(), self.targets.len().to_string()),
            ("lambda_smooth".into(), self.lambda_smooth.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::testutil::{all_coords, max_fd_rel_error};

    #[test]
    fn straight_arm_reaches_eight() {
        let (x, y) = forward_kinematics(&[0.0; 8]);
        assert!((x - 8.0).abs() < 1e-15 && y.abs() < 1e-15);
    }

    #[test]
    fn targets_at_init_pose_give_zero_loss() {
        let angles: Vec<f64> = (0..8).map(|k| 0.1 * k as f64 - 0.3).collect();
        let target = forward_kinematics(&angles);
        let ik = InverseKinematics::with_targets(8, vec![target; 10], 1.0);
        let theta = ParamVector::from_vec(angles.repeat(10));
        let (loss, grad) = ik.loss_grad(&theta);
        assert!(loss < 1e-28);
        assert!(grad.max_abs() < 1e-12);
        assert!(ik.test_metric(&theta).unwrap() < 1e-14);
    }

    #[test]
    fn targets_reachable() {
        let ik = InverseKinematics::new(8, 10, 1.0, 3);
        for &(x, y) in ik.targets() {
            let r = (x * x + y * y).sqrt();
            assert!((2.0..=6.0).contains(&r));
            assert!(x >= -1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ik = InverseKinematics::new(8, 10, 1.0, 1);
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let theta = gaussian_params(&mut rng, &ik.layout(), 0.8);
            let err = max_fd_rel_error(&ik, &theta, &all_coords(&ik));
            assert!(err < 1e-5, "{err}");
        }
    }
}
