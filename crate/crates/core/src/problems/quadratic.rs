use std::sync::Arc;

use nalgebra::DMatrix;

use super::{gaussian_params, Problem};
use crate::error::{Error, Result};
use crate::param_space::{Layout, ParamVector, Rng};

/// `f(x, y) = (1 − x)² + 100 (y − x²)²`, started at `(−1.5, 1.5)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl Rosenbrock {
    pub const START: [f64; 2] = [-1.5, 1.5];

    pub fn value(x: f64, y: f64) -> f64 {
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }
}

impl Problem for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::new([("x", 1), ("y", 1)]))
    }

    fn init(&self, _rng: &mut Rng) -> ParamVector {
        ParamVector::with_layout(Self::START.to_vec(), self.layout()).expect("2 coordinates")
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let (x, y) = (theta[0], theta[1]);
        let r = y - x * x;
        let mut g = theta.zeros_like();
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * r;
        g[1] = 200.0 * r;
        (Self::value(x, y), g)
    }

    fn loss(&self, theta: &ParamVector) -> f64 {
        Self::value(theta[0], theta[1])
    }
}

/// Rotated ill-conditioned quadratic `½ θᵀ H θ` with
/// `H = Q diag(c, c, 1, …, 1) Qᵀ` and a seeded random orthogonal `Q`.
#[derive(Debug, Clone)]
pub struct StiffValley {
    dim: usize,
    cond: f64,
    seed: u64,
    /// Row-major `dim × dim`.
    hessian: Vec<f64>,
}

impl StiffValley {
    pub fn new(dim: usize, cond: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidScenario(format!(
                "stiff valley needs dim >= 2, got {dim}"
            )));
        }
        if !(cond >= 1.0) {
            return Err(Error::InvalidScenario(format!(
                "condition number must be >= 1, got {cond}"
            )));
        }
        let q = random_orthogonal(dim, &mut Rng::stream(seed, 0));
        let mut diag = DMatrix::<f64>::identity(dim, dim);
        diag[(0, 0)] = cond;
        diag[(1, 1)] = cond;
        let h = &q * diag * q.transpose();
        // Symmetrize away rounding so Hᵀ = H exactly.
        let h = (&h + h.transpose()) * 0.5;
        let hessian = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| h[(i, j)])
            .collect();
        Ok(StiffValley {
            dim,
            cond,
            seed,
            hessian,
        })
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.hessian)
    }

    fn h_times(&self, theta: &ParamVector) -> Vec<f64> {
        self.hessian
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Q factor of a Gaussian matrix, with columns sign-fixed so that `R` has a
/// positive diagonal (Haar-distributed).
fn random_orthogonal(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let draws = rng
        .gaussian_fill(n * n, 0.0, 1.0)
        .expect("n >= 2")
        .into_vec();
    let a = DMatrix::from_row_slice(n, n, &draws);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl Problem for StiffValley {
    fn name(&self) -> &str {
        "stiff_valley"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::flat(self.dim))
    }

    fn init(&self, rng: &mut Rng) -> ParamVector {
        gaussian_params(rng, &self.layout(), 1.0)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let hx = self.h_times(theta);
        let loss = 0.5 * theta.iter().zip(&hx).map(|(a, b)| a * b).sum::<f64>();
        let mut g = theta.zeros_like();
        g.as_mut_slice().copy_from_slice(&hx);
        (loss, g)
    }

    fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("dim".into(), self.dim.to_string()),
            ("cond".into(), self.cond.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}
