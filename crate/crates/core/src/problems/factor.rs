//! Low-rank factorization problems: masked matrix completion, robust
//! (Huber) matrix factorization and CP tensor completion.
//!
//! Ground truth is built from Gaussian factors scaled so that entries have
//! unit variance for every rank. Observations are a uniformly sampled subset
//! of cells; the model is over-parameterized (`model_rank = true_rank + 5`)
//! and trained on the masked loss plus `λ·Σ‖factor‖²`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{gaussian_params, MetricKind, Problem};
use crate::error::{Error, Result};
use crate::param_space::{Layout, ParamVector, Rng};

/// Loss-based L2 weight used by FlowAdam and the explicit-L2 Adam control.
pub const LAMBDA_REG: f64 = 1e-5;
pub const HUBER_DELTA: f64 = 1.0;
const INIT_STD: f64 = 0.1;

/// Huber function: quadratic inside `[-δ, δ]`, linear outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionScenario {
    pub name: String,
    /// Matrix `[m, n]` or tensor `[i, j, k]` dimensions.
    pub shape: Vec<usize>,
    pub true_rank: usize,
    pub model_rank: usize,
    pub observed_fraction: f64,
    pub lambda: f64,
    /// Std of additive Gaussian noise on observed cells.
    pub noise_std: f64,
    pub outlier_fraction: f64,
    /// Outlier magnitude range, in units of the signal std.
    pub outlier_magnitude: (f64, f64),
    pub huber_delta: f64,
}

impl CompletionScenario {
    fn base(name: &str, shape: &[usize], true_rank: usize, observed_fraction: f64) -> Self {
        CompletionScenario {
            name: name.to_string(),
            shape: shape.to_vec(),
            true_rank,
            model_rank: true_rank + 5,
            observed_fraction,
            lambda: LAMBDA_REG,
            noise_std: 0.0,
            outlier_fraction: 0.0,
            outlier_magnitude: (0.0, 0.0),
            huber_delta: HUBER_DELTA,
        }
    }

    /// `small` 200×300 r10 30%, `medium` 300×400 r15 20%, `large` 400×500 r20 15%.
    pub fn matrix(name: &str) -> Option<Self> {
        let (shape, rank, frac): (&[usize], usize, f64) = match name {
            "small" => (&[200, 300], 10, 0.30),
            "medium" => (&[300, 400], 15, 0.20),
            "large" => (&[400, 500], 20, 0.15),
            _ => return None,
        };
        Some(Self::base(name, shape, rank, frac))
    }

    /// `small` 30×40×50 r5 10%, `medium` 40×50×60 r8 8%, `large` 50×60×70 r10 8%.
    pub fn tensor(name: &str) -> Option<Self> {
        let (shape, rank, frac): (&[usize], usize, f64) = match name {
            "small" => (&[30, 40, 50], 5, 0.10),
            "medium" => (&[40, 50, 60], 8, 0.08),
            "large" => (&[50, 60, 70], 10, 0.08),
            _ => return None,
        };
        Some(Self::base(name, shape, rank, frac))
    }

    /// `small` 60×80 r5, `medium` 80×100 r8, `large` 100×120 r10; 20% of the
    /// observed cells carry outliers of 4–5× the signal std.
    pub fn robust(name: &str) -> Option<Self> {
        let (shape, rank): (&[usize], usize) = match name {
            "small" => (&[60, 80], 5),
            "medium" => (&[80, 100], 8),
            "large" => (&[100, 120], 10),
            _ => return None,
        };
        let mut sc = Self::base(name, shape, rank, ROBUST_OBSERVED_FRACTION);
        sc.outlier_fraction = 0.2;
        sc.outlier_magnitude = (4.0, 5.0);
        Some(sc)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn observed_count(&self) -> usize {
        (self.observed_fraction * self.cells() as f64).round() as usize
    }

    /// Per-factor std giving unit-variance entries for a product of
    /// `order` factors summed over `true_rank` components.
    fn truth_std(&self) -> f64 {
        (self.true_rank as f64).powf(-1.0 / (2.0 * self.shape.len() as f64))
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("{}: {msg}", self.name)));
        if self.shape.len() != order || self.shape.contains(&0) {
            return bad(format!(
                "expected {order} positive dimensions, got {:?}",
                self.shape
            ));
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return bad(format!(
                "observed fraction {} not in (0, 1]",
                self.observed_fraction
            ));
        }
        if self.observed_count() < 1 {
            return bad("fewer than one observed cell".into());
        }
        if self.true_rank == 0 || self.model_rank < self.true_rank {
            return bad(format!(
                "need 1 <= true_rank <= model_rank, got {} / {}",
                self.true_rank, self.model_rank
            ));
        }
        if !(self.lambda >= 0.0) || !(self.noise_std >= 0.0) || !(self.huber_delta > 0.0) {
            return bad("lambda and noise std must be >= 0, huber delta > 0".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad(format!(
                "outlier fraction {} not in [0, 1]",
                self.outlier_fraction
            ));
        }
        Ok(())
    }
}

/// Observed cells for robust MF; the remaining cells are unobserved.
pub const ROBUST_OBSERVED_FRACTION: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
enum EntryLoss {
    Squared,
    Huber(f64),
}

impl EntryLoss {
    fn value_grad(self, r: f64) -> (f64, f64) {
        match self {
            EntryLoss::Squared => (r * r, 2.0 * r),
            EntryLoss::Huber(d) => (huber(r, d), huber_grad(r, d)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    idx: [u32; 3],
    value: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum()
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Shared masked low-rank model for order-2 and order-3 arrays.
#[derive(Debug, Clone)]
struct MaskedLowRank {
    scenario: CompletionScenario,
    seed: u64,
    layout: Arc<Layout>,
    /// Ground-truth factors, one row-major `dim × true_rank` block per mode.
    truth: Vec<Vec<f64>>,
    observed: Vec<Cell>,
    /// Unobserved cells with their ground-truth values.
    held_out: Vec<Cell>,
    /// Clean ground truth on the observed cells (differs from the
    /// observation when noise or outliers were added).
    observed_truth: Vec<f64>,
    outlier_count: usize,
    loss: EntryLoss,
}

impl MaskedLowRank {
    fn new(scenario: CompletionScenario, seed: u64, loss: EntryLoss) -> Result<Self> {
        let order = scenario.shape.len();
        let mut rng = Rng::stream(seed, 0);
        let r = scenario.true_rank;
        let std = scenario.truth_std();
        let truth: Vec<Vec<f64>> = scenario
            .shape
            .iter()
            .map(|&d| {
                rng.gaussian_fill(d * r, 0.0, std)
                    .map(ParamVector::into_vec)
            })
            .collect::<Result<_>>()?;

        let cells = scenario.cells();
        let mask = rng.sample_indices(cells, scenario.observed_count());
        let unravel = |flat: usize| -> [u32; 3] {
            let mut idx = [0u32; 3];
            let mut rest = flat;
            for mode in (0..order).rev() {
                idx[mode] = (rest % scenario.shape[mode]) as u32;
                rest /= scenario.shape[mode];
            }
            idx
        };
        let truth_at = |idx: [u32; 3]| -> f64 {
            let row = |mode: usize| {
                let i = idx[mode] as usize;
                &truth[mode][i * r..(i + 1) * r]
            };
            match order {
                2 => dot(row(0), row(1)),
                _ => dot3(row(0), row(1), row(2)),
            }
        };

        let mut observed = Vec::with_capacity(mask.len());
        let mut observed_truth = Vec::with_capacity(mask.len());
        let mut held_out = Vec::with_capacity(cells - mask.len());
        let mut next_obs = mask.iter().peekable();
        for flat in 0..cells {
            let idx = unravel(flat);
            let value = truth_at(idx);
            if next_obs.peek() == Some(&&flat) {
                next_obs.next();
                observed_truth.push(value);
                observed.push(Cell { idx, value });
            } else {
                held_out.push(Cell { idx, value });
            }
        }

        if scenario.noise_std > 0.0 {
            for c in &mut observed {
                c.value += rng.normal(0.0, scenario.noise_std);
            }
        }

        let mut outlier_count = 0;
        if scenario.outlier_fraction > 0.0 {
            let n = observed_truth.len() as f64;
            let mean = observed_truth.iter().sum::<f64>() / n;
            let signal_std = (observed_truth
                .iter()
                .map(|v| (v - mean).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            outlier_count = (scenario.outlier_fraction * n).round() as usize;
            let (lo, hi) = scenario.outlier_magnitude;
            for pos in rng.sample_indices(observed.len(), outlier_count) {
                let magnitude = rng.uniform_range(lo, hi) * signal_std;
                observed[pos].value += rng.sign() * magnitude;
            }
        }

        let names = ["U", "V", "W"];
        let layout = Arc::new(Layout::new(
            scenario
                .shape
                .iter()
                .enumerate()
                .map(|(mode, &d)| (names[mode], d * scenario.model_rank)),
        ));

        Ok(MaskedLowRank {
            scenario,
            seed,
            layout,
            truth,
            observed,
            held_out,
            observed_truth,
            outlier_count,
            loss,
        })
    }

    fn order(&self) -> usize {
        self.scenario.shape.len()
    }

    fn factor<'a>(&self, theta: &'a ParamVector, mode: usize) -> &'a [f64] {
        let seg = &self.layout.segments()[mode];
        &theta.as_slice()[seg.offset..seg.offset + seg.len]
    }

    fn predict(&self, theta: &ParamVector, idx: [u32; 3]) -> f64 {
        let r = self.scenario.model_rank;
        let row = |mode: usize| {
            let i = idx[mode] as usize;
            &self.factor(theta, mode)[i * r..(i + 1) * r]
        };
        match self.order() {
            2 => dot(row(0), row(1)),
            _ => dot3(row(0), row(1), row(2)),
        }
    }

    fn regularizer(&self, theta: &ParamVector) -> f64 {
        self.scenario.lambda * sq_norm(theta.as_slice())
    }

    fn loss_only(&self, theta: &ParamVector) -> f64 {
        let data: f64 = self
            .observed
            .iter()
            .map(|c| self.loss.value_grad(self.predict(theta, c.idx) - c.value).0)
            .sum();
        data / self.observed.len() as f64 + self.regularizer(theta)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let r = self.scenario.model_rank;
        let n_obs = self.observed.len() as f64;
        let lambda = self.scenario.lambda;
        let mut grad = theta.scaled(2.0 * lambda);
        let offsets: Vec<usize> = self.layout.segments().iter().map(|s| s.offset).collect();
        let th = theta.as_slice();
        let g = grad.as_mut_slice();
        let mut data_loss = 0.0;
        let mut scratch = vec![0.0; r];
        for c in &self.observed {
            let mut rows = [0usize; 3];
            for mode in 0..self.order() {
                rows[mode] = offsets[mode] + c.idx[mode] as usize * r;
            }
            let pred = match self.order() {
                2 => dot(&th[rows[0]..rows[0] + r], &th[rows[1]..rows[1] + r]),
                _ => dot3(
                    &th[rows[0]..rows[0] + r],
                    &th[rows[1]..rows[1] + r],
                    &th[rows[2]..rows[2] + r],
                ),
            };
            let (l, dl) = self.loss.value_grad(pred - c.value);
            data_loss += l;
            let coef = dl / n_obs;
            for mode in 0..self.order() {
                // scratch = elementwise product of the other modes' rows
                scratch.iter_mut().for_each(|s| *s = coef);
                for other in (0..self.order()).filter(|&o| o != mode) {
                    for (s, x) in scratch.iter_mut().zip(&th[rows[other]..rows[other] + r]) {
                        *s *= x;
                    }
                }
                for (gi, s) in g[rows[mode]..rows[mode] + r].iter_mut().zip(&scratch) {
                    *gi += s;
                }
            }
        }
        (data_loss / n_obs + self.regularizer(theta), grad)
    }

    fn rmse(&self, theta: &ParamVector, cells: &[Cell]) -> f64 {
        if cells.is_empty() {
            return 0.0;
        }
        let sse: f64 = cells
            .iter()
            .map(|c| (self.predict(theta, c.idx) - c.value).powi(2))
            .sum();
        (sse / cells.len() as f64).sqrt()
    }

    /// RMSE against the clean ground truth over every cell.
    fn rmse_all_cells(&self, theta: &ParamVector) -> f64 {
        let sse_held: f64 = self
            .held_out
            .iter()
            .map(|c| (self.predict(theta, c.idx) - c.value).powi(2))
            .sum();
        let sse_obs: f64 = self
            .observed
            .iter()
            .zip(&self.observed_truth)
            .map(|(c, t)| (self.predict(theta, c.idx) - t).powi(2))
            .sum();
        ((sse_held + sse_obs) / self.scenario.cells() as f64).sqrt()
    }

    /// Parameters whose factors reproduce the ground truth exactly (extra
    /// model-rank columns zero).
    fn exact_params(&self) -> ParamVector {
        let (rt, rm) = (self.scenario.true_rank, self.scenario.model_rank);
        let mut data = Vec::with_capacity(self.layout.len());
        for (mode, &d) in self.scenario.shape.iter().enumerate() {
            for i in 0..d {
                data.extend_from_slice(&self.truth[mode][i * rt..(i + 1) * rt]);
                data.resize(data.len() + rm - rt, 0.0);
            }
        }
        ParamVector::with_layout(data, Arc::clone(&self.layout)).expect("layout length")
    }

    fn metadata(&self, kind: &str) -> Vec<(String, String)> {
        let shape = self
            .scenario
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let mut meta = vec![
            ("problem".into(), kind.into()),
            ("scenario".into(), self.scenario.name.clone()),
            ("shape".into(), shape),
            ("true_rank".into(), self.scenario.true_rank.to_string()),
            ("model_rank".into(), self.scenario.model_rank.to_string()),
            ("observed".into(), self.observed.len().to_string()),
            ("lambda".into(), self.scenario.lambda.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        if self.outlier_count > 0 {
            meta.push(("outliers".into(), self.outlier_count.to_string()));
        }
        meta
    }

    fn export_csv(&self, kind: &str, out: &mut dyn Write) -> Result<()> {
        let io = |e| Error::io("<export>", e);
        let header = self
            .metadata(kind)
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "# {header}").map_err(io)?;
        let index_cols = ["i", "j", "k"][..self.order()].join(",");
        writeln!(out, "{index_cols},truth,observed,observation").map_err(io)?;
        let fmt_idx = |idx: [u32; 3]| {
            idx[..self.order()]
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut rows: Vec<([u32; 3], f64, Option<f64>)> = self
            .observed
            .iter()
            .zip(&self.observed_truth)
            .map(|(c, &t)| (c.idx, t, Some(c.value)))
            .chain(self.held_out.iter().map(|c| (c.idx, c.value, None)))
            .collect();
        rows.sort_by_key(|row| row.0);
        for (idx, truth, obs) in rows {
            let idx = fmt_idx(idx);
            match obs {
                Some(v) => writeln!(out, "{idx},{truth},1,{v}"),
                None => writeln!(out, "{idx},{truth},0,"),
            }
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Masked matrix completion `A ≈ U Vᵀ` with mean squared error on the
/// observed cells; the test metric is RMSE on the unobserved cells.
#[derive(Debug, Clone)]
pub struct MatrixCompletion {
    inner: MaskedLowRank,
}

impl MatrixCompletion {
    pub fn new(scenario: CompletionScenario, seed: u64) -> Result<Self> {
        scenario.validate(2)?;
        Ok(MatrixCompletion {
            inner: MaskedLowRank::new(scenario, seed, EntryLoss::Squared)?,
        })
    }

    pub fn scenario(&self) -> &CompletionScenario {
        &self.inner.scenario
    }

    pub fn observed_count(&self) -> usize {
        self.inner.observed.len()
    }

    pub fn held_out_count(&self) -> usize {
        self.inner.held_out.len()
    }

    /// Observed `(i, j)` pairs, in row-major order.
    pub fn observed_cells(&self) -> Vec<(usize, usize)> {
        self.inner
            .observed
            .iter()
            .map(|c| (c.idx[0] as usize, c.idx[1] as usize))
            .collect()
    }

    pub fn held_out_cells(&self) -> Vec<(usize, usize)> {
        self.inner
            .held_out
            .iter()
            .map(|c| (c.idx[0] as usize, c.idx[1] as usize))
            .collect()
    }

    pub fn exact_params(&self) -> ParamVector {
        self.inner.exact_params()
    }

    /// RMSE on the observed cells against the (possibly noisy) observations.
    pub fn train_rmse(&self, theta: &ParamVector) -> f64 {
        self.inner.rmse(theta, &self.inner.observed)
    }
}

impl Problem for MatrixCompletion {
    fn name(&self) -> &str {
        "matrix_completion"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.inner.layout)
    }

    fn init(&self, rng: &mut Rng) -> ParamVector {
        gaussian_params(rng, &self.inner.layout, INIT_STD)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        self.inner.loss_grad(theta)
    }

    fn loss(&self, theta: &ParamVector) -> f64 {
        self.inner.loss_only(theta)
    }

    fn test_metric(&self, theta: &ParamVector) -> Option<f64> {
        Some(self.inner.rmse(theta, &self.inner.held_out))
    }

    fn metric_name(&self) -> &str {
        "test_rmse"
    }

    fn metadata(&self) -> Vec<(String, String)> {
        self.inner.metadata(self.name())
    }

    fn export_csv(&self, out: &mut dyn Write) -> Result<bool> {
        self.inner.export_csv(self.name(), out)?;
        Ok(true)
    }
}

/// CP tensor completion `T ≈ Σ_r u_r ∘ v_r ∘ w_r`.
#[derive(Debug, Clone)]
pub struct TensorCompletion {
    inner: MaskedLowRank,
}

impl TensorCompletion {
    pub fn new(scenario: CompletionScenario, seed: u64) -> Result<Self> {
        scenario.validate(3)?;
        Ok(TensorCompletion {
            inner: MaskedLowRank::new(scenario, seed, EntryLoss::Squared)?,
        })
    }

    pub fn scenario(&self) -> &CompletionScenario {
        &self.inner.scenario
    }

    pub fn observed_count(&self) -> usize {
        self.inner.observed.len()
    }

    pub fn held_out_count(&self) -> usize {
        self.inner.held_out.len()
    }

    pub fn exact_params(&self) -> ParamVector {
        self.inner.exact_params()
    }

    /// Value of the model tensor at `(i, j, k)`.
    pub fn predict(&self, theta: &ParamVector, i: usize, j: usize, k: usize) -> f64 {
        self.inner.predict(theta, [i as u32, j as u32, k as u32])
    }
}

impl Problem for TensorCompletion {
    fn name(&self) -> &str {
        "tensor_completion"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.inner.layout)
    }

    fn init(&self, rng: &mut Rng) -> ParamVector {
        gaussian_params(rng, &self.inner.layout, INIT_STD)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        self.inner.loss_grad(theta)
    }

    fn loss(&self, theta: &ParamVector) -> f64 {
        self.inner.loss_only(theta)
    }

    fn test_metric(&self, theta: &ParamVector) -> Option<f64> {
        Some(self.inner.rmse(theta, &self.inner.held_out))
    }

    fn metric_name(&self) -> &str {
        "test_rmse"
    }

    fn metadata(&self) -> Vec<(String, String)> {
        self.inner.metadata(self.name())
    }

    fn export_csv(&self, out: &mut dyn Write) -> Result<bool> {
        self.inner.export_csv(self.name(), out)?;
        Ok(true)
    }
}

/// Robust matrix factorization: Huber loss against outlier-corrupted
/// observations; the test metric is RMSE of `U Vᵀ` against the clean
/// ground truth over all cells.
#[derive(Debug, Clone)]
pub struct RobustMf {
    inner: MaskedLowRank,
}

impl RobustMf {
    pub fn new(scenario: CompletionScenario, seed: u64) -> Result<Self> {
        scenario.validate(2)?;
        let delta = scenario.huber_delta;
        Ok(RobustMf {
            inner: MaskedLowRank::new(scenario, seed, EntryLoss::Huber(delta))?,
        })
    }

    pub fn scenario(&self) -> &CompletionScenario {
        &self.inner.scenario
    }

    pub fn outlier_count(&self) -> usize {
        self.inner.outlier_count
    }

    pub fn observed_count(&self) -> usize {
        self.inner.observed.len()
    }

    pub fn exact_params(&self) -> ParamVector {
        self.inner.exact_params()
    }
}

impl Problem for RobustMf {
    fn name(&self) -> &str {
        "robust_mf"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.inner.layout)
    }

    fn init(&self, rng: &mut Rng) -> ParamVector {
        gaussian_params(rng, &self.inner.layout, INIT_STD)
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        self.inner.loss_grad(theta)
    }

    fn loss(&self, theta: &ParamVector) -> f64 {
        self.inner.loss_only(theta)
    }

    fn test_metric(&self, theta: &ParamVector) -> Option<f64> {
        Some(self.inner.rmse_all_cells(theta))
    }

    fn metric_name(&self) -> &str {
        "test_rmse"
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::LowerIsBetter
    }

    fn metadata(&self) -> Vec<(String, String)> {
        self.inner.metadata(self.name())
    }

    fn export_csv(&self, out: &mut dyn Write) -> Result<bool> {
        self.inner.export_csv(self.name(), out)?;
        Ok(true)
    }
}
