//! Benchmark objectives with analytic gradients.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{Layout, ParamVector, Rng};

mod factor;
mod kinematics;
mod quadratic;
mod spirals;

pub use factor::{
    huber, huber_grad, CompletionScenario, MatrixCompletion, RobustMf, TensorCompletion,
    HUBER_DELTA, LAMBDA_REG,
};
pub use kinematics::{forward_kinematics, InverseKinematics};
pub use quadratic::{Rosenbrock, StiffValley};
pub use spirals::{SpiralDataset, TwoSpirals};

/// Which direction of the held-out metric is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Error-type metrics (RMSE, loss): improvement = (baseline − candidate)/baseline.
    LowerIsBetter,
    /// Score-type metrics (accuracy, AUC): improvement = (candidate − baseline)/baseline.
    HigherIsBetter,
}

/// A differentiable objective plus its held-out evaluation.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn layout(&self) -> Arc<Layout>;

    fn dim(&self) -> usize {
        self.layout().len()
    }

    /// Initial parameters; deterministic for a fixed rng state.
    fn init(&self, rng: &mut Rng) -> ParamVector;

    /// Loss and gradient at `theta`. One call is one gradient evaluation.
    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector);

    /// Forward-only loss.
    fn loss(&self, theta: &ParamVector) -> f64 {
        self.loss_grad(theta).0
    }

    /// Held-out metric, if the problem has one. Forward-only.
    fn test_metric(&self, _theta: &ParamVector) -> Option<f64> {
        None
    }

    /// Name of the value reported as the final metric.
    fn metric_name(&self) -> &str {
        "train_loss"
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::LowerIsBetter
    }

    /// Scenario parameters for reports.
    fn metadata(&self) -> Vec<(String, String)> {
        Vec::new()
    }

    /// Writes the generated data set as CSV, when the problem has one.
    fn export_csv(&self, _out: &mut dyn Write) -> Result<bool> {
        Ok(false)
    }
}

/// Builds a `ParamVector` over `layout` from N(0, std²) draws.
pub(crate) fn gaussian_params(rng: &mut Rng, layout: &Arc<Layout>, std: f64) -> ParamVector {
    let data = rng
        .gaussian_fill(layout.len(), 0.0, std)
        .expect("layout is non-empty and std is a valid constant")
        .into_vec();
    ParamVector::with_layout(data, Arc::clone(layout)).expect("length matches layout")
}

/// Problem families known to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Rosenbrock,
    StiffValley,
    MatrixCompletion,
    TensorCompletion,
    RobustMf,
    InverseKinematics,
    TwoSpirals,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 7] = [
        ProblemKind::Rosenbrock,
        ProblemKind::StiffValley,
        ProblemKind::MatrixCompletion,
        ProblemKind::TensorCompletion,
        ProblemKind::RobustMf,
        ProblemKind::InverseKinematics,
        ProblemKind::TwoSpirals,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Rosenbrock => "rosenbrock",
            ProblemKind::StiffValley => "stiff_valley",
            ProblemKind::MatrixCompletion => "matrix_completion",
            ProblemKind::TensorCompletion => "tensor_completion",
            ProblemKind::RobustMf => "robust_mf",
            ProblemKind::InverseKinematics => "inverse_kinematics",
            ProblemKind::TwoSpirals => "two_spirals",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| Error::unknown("problem", name))
    }

    /// Scenario names accepted by [`build_problem`]. The first is the default.
    pub fn scenarios(self) -> &'static [&'static str] {
        match self {
            ProblemKind::MatrixCompletion | ProblemKind::TensorCompletion => {
                &["small", "medium", "large"]
            }
            ProblemKind::RobustMf => &["small", "medium", "large"],
            _ => &["default"],
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Problem plus scenario name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub scenario: String,
    /// Replaces the preset observation-noise std of completion scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

impl ProblemConfig {
    pub fn new(kind: ProblemKind, scenario: impl Into<String>) -> Result<Self> {
        let scenario = scenario.into();
        if !kind.scenarios().contains(&scenario.as_str()) {
            return Err(Error::unknown("scenario", format!("{kind}/{scenario}")));
        }
        Ok(ProblemConfig {
            kind,
            scenario,
            noise_std: None,
        })
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Self {
        self.noise_std = Some(noise_std);
        self
    }

    pub fn default_for(kind: ProblemKind) -> Self {
        ProblemConfig {
            kind,
            scenario: kind.scenarios()[0].to_string(),
            noise_std: None,
        }
    }

    pub fn label(&self) -> String {
        if self.scenario == "default" {
            self.kind.to_string()
        } else {
            format!("{}_{}", self.kind, self.scenario)
        }
    }
}

/// Builds the seeded problem instance. `lambda` is the loss-based L2
/// weight for the factorization problems and is ignored elsewhere.
pub fn build_problem(cfg: &ProblemConfig, seed: u64, lambda: f64) -> Result<Box<dyn Problem>> {
    let unknown = || Error::unknown("scenario", format!("{}/{}", cfg.kind, cfg.scenario));
    let adjust = |mut sc: CompletionScenario| {
        if let Some(noise) = cfg.noise_std {
            sc.noise_std = noise;
        }
        sc.with_lambda(lambda)
    };
    Ok(match cfg.kind {
        ProblemKind::Rosenbrock => Box::new(Rosenbrock),
        ProblemKind::StiffValley => Box::new(StiffValley::new(50, 2000.0, seed)?),
        ProblemKind::MatrixCompletion => {
            let sc = CompletionScenario::matrix(&cfg.scenario).ok_or_else(unknown)?;
            Box::new(MatrixCompletion::new(adjust(sc), seed)?)
        }
        ProblemKind::TensorCompletion => {
            let sc = CompletionScenario::tensor(&cfg.scenario).ok_or_else(unknown)?;
            Box::new(TensorCompletion::new(adjust(sc), seed)?)
        }
        ProblemKind::RobustMf => {
            let sc = CompletionScenario::robust(&cfg.scenario).ok_or_else(unknown)?;
            Box::new(RobustMf::new(adjust(sc), seed)?)
        }
        ProblemKind::InverseKinematics => Box::new(InverseKinematics::new(8, 10, 1.0, seed)),
        ProblemKind::TwoSpirals => Box::new(TwoSpirals::new(1000, 1200.0, seed)),
    })
}
