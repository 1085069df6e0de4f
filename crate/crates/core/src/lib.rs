//! FlowAdam: Adam with triggered clipped-gradient-flow integration and soft
//! momentum injection, plus baseline optimizers, benchmark problems and a
//! seeded experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod ode;
pub mod optim;
pub mod param_space;
pub mod problems;
pub mod verify;

pub use error::{Error, Result};
pub use ode::{integrate, OdeConfig, OdeResult, OdeStatus};
pub use optim::{
    Adam, AdamConfig, FlowAdam, FlowAdamConfig, FlowAdamState, InjectionMode, Mode, Optimizer,
    SgdMomentum, StepEvent,
};
pub use param_space::{axpby, Layout, ParamVector, Rng};
pub use problems::{build_problem, MetricKind, Problem, ProblemConfig, ProblemKind};
