//! Property checks shared by `flowadam verify` and the acceptance tests.

use serde::Serialize;

use crate::harness::{run_experiment, ExperimentConfig, OptimizerKind, RunReport};
use crate::ode::{self, OdeConfig};
use crate::optim::{
    clip_grad, clip_vel, soft_inject, Adam, FlowAdam, FlowAdamConfig, Mode, Optimizer,
};
use crate::param_space::{ParamVector, Rng};
use crate::problems::{build_problem, Problem, ProblemConfig, ProblemKind, LAMBDA_REG};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// Every problem configuration the harness can build.
pub fn all_problem_configs() -> Vec<ProblemConfig> {
    ProblemKind::ALL
        .iter()
        .flat_map(|&k| {
            k.scenarios()
                .iter()
                .map(move |s| ProblemConfig::new(k, *s).expect("listed scenario"))
        })
        .collect()
}

/// Largest relative gap between the analytic gradient and central
/// differences with step `step_rel·max(1, |θ_i|)` over `coords`. Components
/// below `1e-3·‖g‖_∞` are measured against that floor instead of their own
/// magnitude.
pub fn max_fd_rel_error(
    p: &dyn Problem,
    theta: &ParamVector,
    coords: &[usize],
    step_rel: f64,
) -> f64 {
    let (_, g) = p.loss_grad(theta);
    let floor = (1e-3 * g.max_abs()).max(1e-12);
    let mut worst: f64 = 0.0;
    for &i in coords {
        let h = step_rel * theta[i].abs().max(1.0);
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fd = (p.loss(&plus) - p.loss(&minus)) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(floor);
        worst = worst.max((fd - g[i]).abs() / denom);
    }
    worst
}

/// Central-difference check at `points` random parameter vectors per
/// problem: the initialization plus N(0, 0.5²) noise. Problems with more
/// than `max_coords` parameters are checked on a seeded coordinate sample.
/// `step_rel` 1e-5 keeps summation roundoff of the mean-reduced completion
/// losses (per-coordinate gradients near 3e-4) below the tolerance.
pub fn gradient_oracles(
    points: usize,
    max_coords: usize,
    step_rel: f64,
    tol: f64,
) -> Vec<CheckResult> {
    all_problem_configs()
        .into_iter()
        .map(|pc| {
            let p = build_problem(&pc, 7, LAMBDA_REG).expect("preset builds");
            let mut worst: f64 = 0.0;
            for k in 0..points as u64 {
                let mut rng = Rng::stream(1000 + k, 3);
                let base = p.init(&mut rng);
                let noise = rng.gaussian_fill(base.len(), 0.0, 0.5).expect("non-empty");
                let mut theta = base;
                theta.axpy_assign(1.0, &noise);
                let coords = if p.dim() <= max_coords {
                    (0..p.dim()).collect()
                } else {
                    rng.sample_indices(p.dim(), max_coords)
                };
                worst = worst.max(max_fd_rel_error(p.as_ref(), &theta, &coords, step_rel));
            }
            CheckResult::new(
                format!("gradient_oracle/{}", pc.label()),
                worst <= tol,
                format!("max relative error {worst:.2e} (tol {tol:.0e}) at {points} points"),
            )
        })
        .collect()
}

/// Endpoint error of the adaptive solver on `y' = −y`, `y(0) = 1`.
pub fn ode_decay_error(span: f64, cfg: &OdeConfig) -> f64 {
    let y0 = ParamVector::from_vec(vec![1.0]);
    let res = ode::integrate(|y: &ParamVector| y.scaled(-1.0), &y0, span, cfg)
        .expect("valid span and config");
    (res.y_end[0] - (-span).exp()).abs()
}

/// Fixed-step global error on `y' = −y` over `[0, 1]` with `n` steps.
fn fixed_step_error(n: usize) -> f64 {
    let cfg = OdeConfig::default();
    let h = 1.0 / n as f64;
    let mut y = ParamVector::from_vec(vec![1.0]);
    let mut field = |y: &ParamVector| y.scaled(-1.0);
    let mut k = None;
    for _ in 0..n {
        let out = ode::step_once(&mut field, &y, h, k.as_ref(), &cfg).expect("finite field");
        y = out.y_candidate;
        k = Some(out.k_last);
    }
    (y[0] - (-1.0f64).exp()).abs()
}

/// Smallest observed order `log2(e(h)/e(h/2))` over h = 1/4, 1/8, 1/16.
pub fn ode_convergence_order() -> f64 {
    [4, 8, 16]
        .iter()
        .map(|&n| (fixed_step_error(n) / fixed_step_error(2 * n)).log2())
        .fold(f64::INFINITY, f64::min)
}

pub fn ode_oracle() -> Vec<CheckResult> {
    let cfg = OdeConfig::default();
    let tol = cfg.descent_slack();
    let spans = [0.1, 0.5, 1.0, 2.0];
    let errs: Vec<f64> = spans.iter().map(|&t| ode_decay_error(t, &cfg)).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let order = ode_convergence_order();
    vec![
        CheckResult::new(
            "ode/exp_decay",
            worst <= tol,
            format!("max |y(T) − e^(−T)| = {worst:.2e} over T ∈ {spans:?} (tol {tol:.0e})"),
        ),
        CheckResult::new(
            "ode/convergence_order",
            order >= 4.5,
            format!("observed order {order:.3} (need ≥ 4.5)"),
        ),
    ]
}

/// `‖(1−γ)m + γṽ‖ ≤ max(‖m‖, ‖ṽ‖) + 1e-12` on random triples, with `ṽ`
/// clipped against `m` on every other draw.
pub fn soft_injection_bound(trials: usize, seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..trials {
        let n = 1 + (rng.uniform() * 64.0) as usize;
        let sm = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let sv = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let m = rng.gaussian_fill(n, 0.0, sm).expect("n >= 1");
        let mut v = rng.gaussian_fill(n, 0.0, sv).expect("n >= 1");
        if i % 2 == 1 {
            v = clip_vel(&v, &m, 5.0);
        }
        let gamma = rng.uniform();
        let blended = soft_inject(&m, &v, gamma).expect("γ in [0, 1]");
        worst = worst.max(blended.norm() - m.norm().max(v.norm()));
    }
    CheckResult::new(
        "injection/soft_norm_bound",
        worst <= 1e-12,
        format!("{trials} triples, max excess {worst:.2e}"),
    )
}

/// The clipped field is a descent direction (`gᵀ clip(g) ≥ 0`) and clipping
/// keeps signs, on random points of every problem.
pub fn clipped_field_descent(points: usize) -> CheckResult {
    let mut bad = 0usize;
    let mut checked = 0usize;
    for pc in all_problem_configs() {
        let p = build_problem(&pc, 3, LAMBDA_REG).expect("preset builds");
        for k in 0..points as u64 {
            let mut rng = Rng::stream(2000 + k, 5);
            let noise = rng.gaussian_fill(p.dim(), 0.0, 0.5).expect("non-empty");
            let mut theta = p.init(&mut rng);
            theta.axpy_assign(1.0, &noise);
            let (_, g) = p.loss_grad(&theta);
            let c = clip_grad(&g);
            let sign_ok = g
                .iter()
                .zip(c.iter())
                .all(|(a, b)| a * b >= 0.0 && b.abs() <= 1.0 && b.abs() <= a.abs());
            let inner = g.dot(&c);
            checked += 1;
            if !sign_ok || inner < 0.0 || (g.max_abs() > 0.0 && inner <= 0.0) {
                bad += 1;
            }
        }
    }
    CheckResult::new(
        "descent/clipped_field",
        bad == 0,
        format!("{checked} points, {bad} with gᵀclip(g) ≤ 0 or a sign flip"),
    )
}

/// FlowAdam with triggering disabled against standalone Adam, coordinate
/// by coordinate after every step.
pub fn adam_equivalence(steps: usize) -> Vec<CheckResult> {
    ProblemKind::ALL
        .iter()
        .map(|&kind| {
            let pc = ProblemConfig::default_for(kind);
            let p = build_problem(&pc, 1, LAMBDA_REG).expect("preset builds");
            let cfg = FlowAdamConfig::preset(Mode::B).never_trigger();
            let mut flow = FlowAdam::new(cfg, p.dim());
            let mut adam = Adam::new(cfg.adam, p.dim());
            let start = p.init(&mut Rng::stream(1, 1));
            let (mut a, mut b) = (start.clone(), start);
            let mut worst: f64 = 0.0;
            let mut triggered = 0;
            for _ in 0..steps {
                let ea = adam.step(p.as_ref(), &mut a).expect("finite run");
                let eb = flow.step(p.as_ref(), &mut b).expect("finite run");
                triggered += eb.triggered as usize;
                worst = worst.max((ea.loss - eb.loss).abs());
                for (x, y) in a.iter().zip(b.iter()) {
                    worst = worst.max((x - y).abs());
                }
            }
            CheckResult::new(
                format!("adam_equivalence/{}", pc.label()),
                worst <= 1e-12 && triggered == 0,
                format!("{steps} steps, max coordinate gap {worst:.2e}, {triggered} triggers"),
            )
        })
        .collect()
}

/// Mode-B FlowAdam runs whose successful ODE segments are checked for
/// descent within `10·(rtol + atol)`.
pub fn descent_runs(seeds: &[u64]) -> Vec<RunReport> {
    let plan = [
        (ProblemKind::Rosenbrock, "default", 500),
        (ProblemKind::StiffValley, "default", 500),
        (ProblemKind::MatrixCompletion, "small", 1000),
    ];
    plan.iter()
        .flat_map(|&(kind, scenario, steps)| {
            let pc = ProblemConfig::new(kind, scenario).expect("listed scenario");
            let cfg = ExperimentConfig::new(pc, OptimizerKind::FlowAdam, Mode::B)
                .with_steps(steps)
                .with_seeds(seeds.to_vec());
            run_experiment(&cfg).expect("valid experiment")
        })
        .collect()
}

pub fn descent_violations(reports: &[RunReport]) -> CheckResult {
    let violations: u64 = reports.iter().map(|r| r.finals.descent_violations).sum();
    let segments: u64 = reports
        .iter()
        .map(|r| r.finals.trigger_count - r.finals.fallback_count)
        .sum();
    CheckResult::new(
        "descent/ode_segments",
        violations == 0,
        format!(
            "{violations} violations over {segments} successful ODE segments in {} runs",
            reports.len()
        ),
    )
}

/// `total grad evals = steps + Σ nfe`, per-step increments of 1 or 1 + nfe,
/// and trigger counts that match the series.
pub fn accounting(reports: &[RunReport]) -> CheckResult {
    let mut bad = Vec::new();
    for r in reports {
        let nfe: u64 = r.series.iter().map(|s| s.nfe).sum();
        let steps = r.series.len() as u64;
        let triggers = r.series.iter().filter(|s| s.triggered).count() as u64;
        let mut prev = 0;
        let increments_ok = r.series.iter().all(|s| {
            let ok = s.cum_grad_evals == prev + 1 + if s.triggered { s.nfe } else { 0 }
                && (s.triggered || s.nfe == 0);
            prev = s.cum_grad_evals;
            ok
        });
        if r.finals.total_grad_evals != steps + nfe
            || r.finals.total_nfe != nfe
            || r.finals.trigger_count != triggers
            || !increments_ok
        {
            bad.push(r.file_stem());
        }
    }
    CheckResult::new(
        "accounting/grad_evals",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} runs consistent", reports.len())
        } else {
            format!("inconsistent runs: {}", bad.join(", "))
        },
    )
}

/// The full suite run by `flowadam verify`.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.extend(adam_equivalence(1000));
    let runs = descent_runs(&[1, 2, 3, 4, 5]);
    out.push(descent_violations(&runs));
    out.push(clipped_field_descent(10));
    out.push(soft_injection_bound(1000, 42));
    out.extend(gradient_oracles(10, 40, 1e-5, 1e-4));
    out.extend(ode_oracle());
    let mut acct = runs;
    for opt in [OptimizerKind::Adam, OptimizerKind::FlowAdamHard] {
        let cfg = ExperimentConfig::new(
            ProblemConfig::default_for(ProblemKind::InverseKinematics),
            opt,
            Mode::B,
        )
        .with_steps(300);
        acct.extend(run_experiment(&cfg).expect("valid experiment"));
    }
    out.push(accounting(&acct));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ode_checks_pass() {
        for c in ode_oracle() {
            assert!(c.passed, "{c}");
        }
        let order = ode_convergence_order();
        assert!(order > 4.5 && order < 7.0, "{order}");
    }

    #[test]
    fn soft_injection_bound_holds() {
        let c = soft_injection_bound(1000, 1);
        assert!(c.passed, "{c}");
    }

    #[test]
    fn every_scenario_is_listed() {
        assert_eq!(all_problem_configs().len(), 13);
    }

    #[test]
    fn accounting_flags_tampering() {
        let cfg = ExperimentConfig::new(
            ProblemConfig::default_for(ProblemKind::Rosenbrock),
            OptimizerKind::FlowAdam,
            Mode::B,
        )
        .with_steps(50)
        .with_seeds(vec![1]);
        let mut runs = run_experiment(&cfg).unwrap();
        assert!(accounting(&runs).passed);
        runs[0].finals.total_grad_evals += 1;
        assert!(!accounting(&runs).passed);
    }

    #[test]
    fn display_has_status_prefix() {
        let c = CheckResult::new("x", false, "d");
        assert_eq!(c.to_string(), "FAIL x: d");
    }
}
