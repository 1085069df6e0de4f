//! Adaptive Dormand–Prince 5(4) integrator for autonomous vector fields.
//!
//! Only the endpoint of the integration is returned. The integrator never
//! panics on a misbehaving field: budget exhaustion, step underflow and
//! non-finite field values are reported through [`OdeStatus`] and the
//! caller is expected to discard `y_end` whenever the status is not
//! [`OdeStatus::Success`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParamVector;

/// Stages evaluated by a full step without first-same-as-last reuse.
pub const STAGES: usize = 7;

// Dormand–Prince 5(4) tableau. The field is autonomous, so the stage
// times c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// 5th-order weights; also row 7 of the tableau (FSAL).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (5th minus embedded 4th order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_field_evals: usize,
    /// Smallest admissible step as a fraction of the integration span.
    pub min_step_fraction: f64,
    pub safety: f64,
    pub max_step_growth: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            rtol: 1e-4,
            atol: 1e-4,
            max_field_evals: 1000,
            min_step_fraction: 1e-12,
            safety: 0.9,
            max_step_growth: 5.0,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ode tolerances must be positive (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        if self.max_field_evals < STAGES {
            return Err(Error::InvalidConfig(format!(
                "max_field_evals must be at least {STAGES}, got {}",
                self.max_field_evals
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) || !(self.max_step_growth > 1.0) {
            return Err(Error::InvalidConfig(
                "step controller needs 0 < safety <= 1 and max_step_growth > 1".into(),
            ));
        }
        Ok(())
    }

    /// Descent slack allowed for a discretized clipped-flow segment.
    pub fn descent_slack(&self) -> f64 {
        10.0 * (self.rtol + self.atol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OdeStatus {
    Success,
    StepUnderflow,
    EvalBudgetExceeded,
    NonFiniteField,
}

impl OdeStatus {
    pub fn is_success(self) -> bool {
        self == OdeStatus::Success
    }
}

#[derive(Debug, Clone)]
pub struct OdeResult {
    pub y_end: ParamVector,
    /// Vector-field evaluations consumed, including the initial-step probe
    /// and rejected attempts.
    pub nfe: usize,
    pub status: OdeStatus,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// One embedded Dormand–Prince step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub y_candidate: ParamVector,
    /// Weighted RMS of the 5th/4th-order difference; `<= 1` means the step
    /// meets the mixed tolerance.
    pub error_estimate: f64,
    pub nfe_used: usize,
    /// Field at `y_candidate`, reusable as the next step's first stage.
    pub k_last: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteField;

fn eval<F>(field: &mut F, y: &ParamVector) -> std::result::Result<ParamVector, NonFiniteField>
where
    F: FnMut(&ParamVector) -> ParamVector,
{
    let k = field(y);
    if k.is_finite() {
        Ok(k)
    } else {
        Err(NonFiniteField)
    }
}

fn stage(y: &ParamVector, h: f64, terms: &[(f64, &ParamVector)]) -> ParamVector {
    let mut out = y.clone();
    let data = out.as_mut_slice();
    for (i, yi) in data.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (coef, k) in terms {
            acc += coef * k[i];
        }
        *yi += h * acc;
    }
    out
}

/// Weighted RMS norm with per-component scale `atol + rtol·max(|y0|, |y1|)`.
fn weighted_rms(v: &[f64], y0: &[f64], y1: &[f64], cfg: &OdeConfig) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (sum / v.len() as f64).sqrt()
}

/// Evaluates one Dormand–Prince 5(4) step of size `h` from `y`.
///
/// `k1` is the field at `y` when the caller already has it (FSAL); then six
/// new evaluations are used, otherwise seven.
pub fn step_once<F>(
    field: &mut F,
    y: &ParamVector,
    h: f64,
    k1: Option<&ParamVector>,
    cfg: &OdeConfig,
) -> std::result::Result<StepOutcome, NonFiniteField>
where
    F: FnMut(&ParamVector) -> ParamVector,
{
    assert!(h > 0.0, "step_once: step size must be positive");
    let mut nfe = 0;
    let k1 = match k1 {
        Some(k) => k.clone(),
        None => {
            nfe += 1;
            eval(field, y)?
        }
    };
    let k2 = eval(field, &stage(y, h, &[(A21, &k1)]))?;
    let k3 = eval(field, &stage(y, h, &[(A31, &k1), (A32, &k2)]))?;
    let k4 = eval(field, &stage(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = eval(
        field,
        &stage(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = eval(
        field,
        &stage(
            y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
    )?;
    let y_new = stage(
        y,
        h,
        &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    let k7 = eval(field, &y_new)?;
    nfe += 6;

    let err: Vec<f64> = (0..y.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    let error_estimate = weighted_rms(&err, y.as_slice(), y_new.as_slice(), cfg);

    Ok(StepOutcome {
        y_candidate: y_new,
        error_estimate,
        nfe_used: nfe,
        k_last: k7,
    })
}

/// Initial step from the usual two-evaluation heuristic (Hairer, Nørsett &
/// Wanner, II.4). Costs one extra field evaluation beyond `f0`.
fn initial_step<F>(
    field: &mut F,
    y0: &ParamVector,
    f0: &ParamVector,
    cfg: &OdeConfig,
) -> std::result::Result<f64, NonFiniteField>
where
    F: FnMut(&ParamVector) -> ParamVector,
{
    let y = y0.as_slice();
    let d0 = weighted_rms(y, y, y, cfg);
    let d1 = weighted_rms(f0.as_slice(), y, y, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1 = stage(y0, h0, &[(1.0, f0)]);
    let f1 = eval(field, &y1)?;
    let diff: Vec<f64> = f1.iter().zip(f0.iter()).map(|(a, b)| a - b).collect();
    let d2 = weighted_rms(&diff, y, y, cfg) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1))
}

/// Integrates `dy/dt = field(y)` from `y0` over `[0, t_span]`.
///
/// Returns `Err` only for invalid arguments; integration failures are
/// reported in [`OdeResult::status`].
pub fn integrate<F>(
    mut field: F,
    y0: &ParamVector,
    t_span: f64,
    cfg: &OdeConfig,
) -> Result<OdeResult>
where
    F: FnMut(&ParamVector) -> ParamVector,
{
    cfg.validate()?;
    if !(t_span >= 0.0 && t_span.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "t_span must be finite and non-negative, got {t_span}"
        )));
    }
    if !y0.is_finite() {
        return Err(Error::NonFinite {
            context: "ode initial state",
        });
    }

    let mut out = OdeResult {
        y_end: y0.clone(),
        nfe: 0,
        status: OdeStatus::Success,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    if t_span == 0.0 {
        return Ok(out);
    }

    let fail = |mut out: OdeResult, status| {
        out.status = status;
        Ok(out)
    };

    out.nfe += 1;
    let mut k1 = match eval(&mut field, y0) {
        Ok(k) => k,
        Err(NonFiniteField) => return fail(out, OdeStatus::NonFiniteField),
    };
    out.nfe += 1;
    let mut h = match initial_step(&mut field, y0, &k1, cfg) {
        Ok(h) => h.min(t_span),
        Err(NonFiniteField) => return fail(out, OdeStatus::NonFiniteField),
    };

    let min_step = cfg.min_step_fraction * t_span;
    let mut t = 0.0;
    let mut y = y0.clone();
    while t < t_span {
        let remaining = t_span - t;
        // Snap to the endpoint instead of leaving a sliver.
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h };
        if h_try < min_step && !last {
            out.y_end = y;
            return fail(out, OdeStatus::StepUnderflow);
        }
        if out.nfe + (STAGES - 1) > cfg.max_field_evals {
            out.y_end = y;
            return fail(out, OdeStatus::EvalBudgetExceeded);
        }
        let step = match step_once(&mut field, &y, h_try, Some(&k1), cfg) {
            Ok(s) => s,
            Err(NonFiniteField) => {
                out.nfe += STAGES - 1;
                out.y_end = y;
                return fail(out, OdeStatus::NonFiniteField);
            }
        };
        out.nfe += step.nfe_used;
        let err = step.error_estimate;
        if err <= 1.0 {
            t = if last { t_span } else { t + h_try };
            y = step.y_candidate;
            k1 = step.k_last;
            out.accepted_steps += 1;
            let factor = if err == 0.0 {
                cfg.max_step_growth
            } else {
                (cfg.safety * err.powf(-0.2)).clamp(0.1, cfg.max_step_growth)
            };
            h = h_try * factor;
        } else {
            out.rejected_steps += 1;
            h = h_try * (cfg.safety * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < min_step {
                out.y_end = y;
                return fail(out, OdeStatus::StepUnderflow);
            }
        }
    }
    out.y_end = y;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(y: &ParamVector) -> ParamVector {
        y.scaled(-1.0)
    }

    #[test]
    fn zero_field_keeps_state() {
        let y0 = ParamVector::from_vec(vec![0.3, -2.0, 5.0]);
        let res = integrate(
            |y: &ParamVector| y.zeros_like(),
            &y0,
            1.0,
            &OdeConfig::default(),
        )
        .unwrap();
        assert_eq!(res.status, OdeStatus::Success);
        assert_eq!(res.y_end, y0);
    }

    #[test]
    fn empty_span_costs_nothing() {
        let y0 = ParamVector::from_vec(vec![1.0, 2.0]);
        let res = integrate(decay, &y0, 0.0, &OdeConfig::default()).unwrap();
        assert_eq!(res.nfe, 0);
        assert_eq!(res.y_end, y0);
        assert!(res.status.is_success());
    }

    #[test]
    fn exponential_decay_endpoint() {
        let y0 = ParamVector::from_vec(vec![1.0]);
        let res = integrate(decay, &y0, 1.0, &OdeConfig::default()).unwrap();
        assert!(res.status.is_success());
        assert!((res.y_end[0] - 0.367_879_441_171_442_3).abs() < 1e-3);
    }

    #[test]
    fn decay_endpoint_error_within_tolerance_band() {
        let cfg = OdeConfig::default();
        for &span in &[0.1, 0.5, 1.0, 2.0] {
            let res = integrate(decay, &ParamVector::from_vec(vec![1.0]), span, &cfg).unwrap();
            let err = (res.y_end[0] - (-span).exp()).abs();
            assert!(err < 10.0 * (cfg.rtol + cfg.atol), "span {span}: err {err}");
        }
    }

    #[test]
    fn clipped_quadratic_flow_matches_unclipped_solution() {
        // L = ½‖y‖², ‖y‖∞ < 1 keeps clipping inactive.
        let field = |y: &ParamVector| y.map(|g| -g.clamp(-1.0, 1.0));
        let y0 = ParamVector::from_vec(vec![0.9, -0.4, 0.05]);
        let res = integrate(field, &y0, 0.5, &OdeConfig::default()).unwrap();
        let scale = (-0.5f64).exp();
        for i in 0..3 {
            assert!((res.y_end[i] - y0[i] * scale).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_field_error_estimate_is_exactly_zero() {
        let y = ParamVector::from_vec(vec![1.0, -1.0]);
        let mut f = |y: &ParamVector| y.zeros_like();
        let step = step_once(&mut f, &y, 0.3, None, &OdeConfig::default()).unwrap();
        assert_eq!(step.error_estimate, 0.0);
    }

    #[test]
    fn stage_counts_with_and_without_fsal() {
        let cfg = OdeConfig::default();
        let y = ParamVector::from_vec(vec![1.0]);
        let mut f = decay;
        let first = step_once(&mut f, &y, 0.1, None, &cfg).unwrap();
        assert_eq!(first.nfe_used, 7);
        let second = step_once(&mut f, &first.y_candidate, 0.1, Some(&first.k_last), &cfg).unwrap();
        assert_eq!(second.nfe_used, 6);
    }

    #[test]
    fn reported_nfe_matches_actual_calls() {
        let mut calls = 0;
        let field = |y: &ParamVector| {
            calls += 1;
            y.map(|v| -v * v * v - 3.0 * v)
        };
        let y0 = ParamVector::from_vec(vec![2.0, -1.0, 0.5]);
        let res = integrate(field, &y0, 3.0, &OdeConfig::default()).unwrap();
        assert!(res.status.is_success());
        assert_eq!(res.nfe, calls);
        assert_eq!(res.nfe, 2 + 6 * (res.accepted_steps + res.rejected_steps));
    }

    #[test]
    fn error_estimate_order() {
        let cfg = OdeConfig::default();
        let y = ParamVector::from_vec(vec![1.0]);
        let mut f = decay;
        let mut prev = None;
        for k in 0..4 {
            let h = 0.4 / 2f64.powi(k);
            let e = step_once(&mut f, &y, h, None, &cfg).unwrap().error_estimate;
            if let Some(p) = prev {
                let ratio: f64 = p / e;
                assert!(ratio >= 16.0, "h={h}: ratio {ratio}");
            }
            prev = Some(e);
        }
    }

    #[test]
    fn non_finite_field_reported() {
        let field = |y: &ParamVector| y.map(|v| if v < 0.5 { f64::NAN } else { -v });
        let res = integrate(
            field,
            &ParamVector::from_vec(vec![1.0]),
            5.0,
            &OdeConfig::default(),
        )
        .unwrap();
        assert_eq!(res.status, OdeStatus::NonFiniteField);
    }

    #[test]
    fn eval_budget_reported() {
        let cfg = OdeConfig {
            max_field_evals: 20,
            rtol: 1e-10,
            atol: 1e-10,
            ..OdeConfig::default()
        };
        let res = integrate(decay, &ParamVector::from_vec(vec![1.0]), 50.0, &cfg).unwrap();
        assert_eq!(res.status, OdeStatus::EvalBudgetExceeded);
        assert!(res.nfe <= cfg.max_field_evals + STAGES);
    }

    #[test]
    fn step_underflow_reported() {
        // Finite-time blow-up of dy/dt = y² at t = 1.
        let cfg = OdeConfig {
            max_field_evals: 1_000_000,
            min_step_fraction: 1e-6,
            ..OdeConfig::default()
        };
        let res = integrate(
            |y: &ParamVector| y.map(|v| v * v),
            &ParamVector::from_vec(vec![1.0]),
            2.0,
            &cfg,
        )
        .unwrap();
        assert_ne!(res.status, OdeStatus::Success);
    }

    #[test]
    fn invalid_arguments_rejected() {
        let y0 = ParamVector::from_vec(vec![1.0]);
        assert!(integrate(decay, &y0, -1.0, &OdeConfig::default()).is_err());
        let bad = OdeConfig {
            rtol: 0.0,
            ..OdeConfig::default()
        };
        assert!(integrate(decay, &y0, 1.0, &bad).is_err());
        let bad = OdeConfig {
            max_field_evals: 6,
            ..OdeConfig::default()
        };
        assert!(integrate(decay, &y0, 1.0, &bad).is_err());
        let nan = ParamVector::from_vec(vec![f64::NAN]);
        assert!(integrate(decay, &nan, 1.0, &OdeConfig::default()).is_err());
    }

    #[test]
    fn nfe_monotone_in_span() {
        let cfg = OdeConfig::default();
        let y0 = ParamVector::from_vec(vec![1.0, 0.5]);
        let mut last = 0;
        for &span in &[0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let n = integrate(decay, &y0, span, &cfg).unwrap().nfe;
            assert!(n >= last, "span {span}: {n} < {last}");
            last = n;
        }
    }

    #[test]
    fn deterministic() {
        let y0 = ParamVector::from_vec(vec![0.7, -0.2]);
        let field = |y: &ParamVector| y.map(|v| -v.sin());
        let a = integrate(field, &y0, 1.5, &OdeConfig::default()).unwrap();
        let b = integrate(field, &y0, 1.5, &OdeConfig::default()).unwrap();
        assert_eq!(a.y_end, b.y_end);
        assert_eq!(a.nfe, b.nfe);
    }
}
