//! Seeded experiment runner, cross-seed aggregation and report I/O.
//!
//! A run is one (problem, optimizer, seed) triple. Its per-step series goes
//! to a CSV with header [`CSV_HEADER`]; everything else goes to a sidecar
//! `<stem>.meta.json`. Rows record the loss the optimizer saw at the start
//! of the step and the test metric after the step's update, evaluated every
//! `eval_every` steps and on the last one.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{
    Adam, AdamConfig, FlowAdam, FlowAdamConfig, InjectionMode, Mode, Optimizer, SgdMomentum,
};
use crate::param_space::Rng;
use crate::problems::{build_problem, MetricKind, ProblemConfig, LAMBDA_REG};

pub const CSV_HEADER: &str = "step,train_loss,test_metric,triggered,nfe,cum_grad_evals,wall_ms";

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    FlowAdam,
    FlowAdamHard,
    Adam,
    AdamL2,
    AdamW,
    SgdMomentum,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::FlowAdam,
        OptimizerKind::FlowAdamHard,
        OptimizerKind::Adam,
        OptimizerKind::AdamL2,
        OptimizerKind::AdamW,
        OptimizerKind::SgdMomentum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::FlowAdam => "flowadam",
            OptimizerKind::FlowAdamHard => "flowadam_hard",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamL2 => "adam_l2",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| Error::unknown("optimizer", name))
    }

    pub fn is_flow(self) -> bool {
        matches!(self, OptimizerKind::FlowAdam | OptimizerKind::FlowAdamHard)
    }

    /// Whether the L2 penalty enters the loss. Plain Adam, AdamW and SGD
    /// train on the unregularized loss.
    pub fn uses_loss_l2(self) -> bool {
        matches!(
            self,
            OptimizerKind::FlowAdam | OptimizerKind::FlowAdamHard | OptimizerKind::AdamL2
        )
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Report label; defaults to the problem label.
    pub experiment: String,
    pub problem: ProblemConfig,
    pub optimizer: OptimizerKind,
    pub mode: Mode,
    /// FlowAdam settings; its `adam` block also drives the Adam baselines.
    pub flow: FlowAdamConfig,
    /// Loss-based L2 weight for optimizers that use one.
    pub lambda: f64,
    /// Decoupled weight decay for AdamW.
    pub adamw_weight_decay: f64,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub eval_every: u64,
    /// Stop once this many gradient evaluations have been spent.
    pub grad_eval_budget: Option<u64>,
    /// Wall time makes reports machine-dependent, so it is off by default.
    pub record_wall_time: bool,
    /// Worker threads; `None` uses the global rayon pool. Not serialized:
    /// results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig, optimizer: OptimizerKind, mode: Mode) -> Self {
        let mut flow = FlowAdamConfig::preset(mode);
        if optimizer == OptimizerKind::FlowAdamHard {
            flow.injection = InjectionMode::Hard;
        }
        ExperimentConfig {
            experiment: problem.label(),
            problem,
            optimizer,
            mode,
            flow,
            lambda: LAMBDA_REG,
            adamw_weight_decay: 1e-2,
            sgd_lr: 1e-2,
            sgd_momentum: 0.9,
            steps: 1000,
            seeds: DEFAULT_SEEDS.to_vec(),
            eval_every: 50,
            grad_eval_budget: None,
            record_wall_time: false,
            threads: None,
        }
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seeds(mut self, seeds: impl Into<Vec<u64>>) -> Self {
        self.seeds = seeds.into();
        self
    }

    /// Checks invariants and returns soft warnings from the FlowAdam config.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("duplicate seeds".into()));
        }
        self.flow.validate()
    }

    /// L2 weight actually placed in this optimizer's loss.
    pub fn loss_lambda(&self) -> f64 {
        if self.optimizer.uses_loss_l2() {
            self.lambda
        } else {
            0.0
        }
    }

    fn make_optimizer(&self, dim: usize) -> Box<dyn Optimizer> {
        let adam = self.flow.adam;
        match self.optimizer {
            OptimizerKind::FlowAdam | OptimizerKind::FlowAdamHard => {
                Box::new(FlowAdam::new(self.flow, dim))
            }
            OptimizerKind::Adam | OptimizerKind::AdamL2 => Box::new(Adam::new(
                AdamConfig {
                    weight_decay: 0.0,
                    ..adam
                },
                dim,
            )),
            OptimizerKind::AdamW => Box::new(Adam::new(
                AdamConfig {
                    weight_decay: self.adamw_weight_decay,
                    ..adam
                },
                dim,
            )),
            OptimizerKind::SgdMomentum => {
                Box::new(SgdMomentum::new(self.sgd_lr, self.sgd_momentum, dim))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub train_loss: f64,
    pub test_metric: Option<f64>,
    pub triggered: bool,
    pub nfe: u64,
    pub cum_grad_evals: u64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFinals {
    pub steps_completed: u64,
    /// Loss at the final parameters.
    pub train_loss: f64,
    pub test_metric: Option<f64>,
    pub trigger_count: u64,
    pub fallback_count: u64,
    pub trigger_rate_all: f64,
    pub trigger_rate_post_warmup: f64,
    pub total_nfe: u64,
    pub total_grad_evals: u64,
    /// Successful ODE steps whose endpoint loss rose by more than the
    /// descent slack.
    pub descent_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub optimizer: OptimizerKind,
    pub mode: Mode,
    pub seed: u64,
    pub metric_name: String,
    pub metric_kind: MetricKind,
    /// Step at which a non-finite loss or gradient stopped the run.
    pub diverged_at: Option<u64>,
    pub finals: RunFinals,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub series: Vec<StepRecord>,
}

impl RunReport {
    /// Test metric when the problem has one, otherwise final train loss.
    pub fn final_metric(&self) -> f64 {
        self.finals.test_metric.unwrap_or(self.finals.train_loss)
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.series.iter().map(|r| r.train_loss).collect()
    }

    /// Default file stem, e.g. `matrix_completion_medium__flowadam__seed3`.
    pub fn file_stem(&self) -> String {
        format!("{}__{}__seed{}", self.experiment, self.optimizer, self.seed)
    }
}

/// Runs every seed of `cfg`, in parallel across seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    // Fail on an unbuildable problem before spawning anything.
    build_problem(&cfg.problem, cfg.seeds[0], cfg.loss_lambda())?;
    let run_all = || cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    }
}

/// One seeded run.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunReport> {
    let problem = build_problem(&cfg.problem, seed, cfg.loss_lambda())?;
    let mut theta = problem.init(&mut Rng::stream(seed, 1));
    let mut opt = cfg.make_optimizer(problem.dim());
    let slack = cfg.flow.ode.descent_slack();
    let warmup = if cfg.optimizer.is_flow() {
        cfg.flow.warmup_steps
    } else {
        0
    };

    let start = Instant::now();
    let mut series = Vec::with_capacity(cfg.steps.min(1 << 20) as usize);
    let mut cum = 0u64;
    let (mut triggers, mut fallbacks, mut total_nfe, mut violations) = (0u64, 0u64, 0u64, 0u64);
    let mut diverged_at = None;
    let mut last_metric = None;

    for step in 1..=cfg.steps {
        if cfg.grad_eval_budget.is_some_and(|b| cum >= b) {
            break;
        }
        let event = match opt.step(problem.as_ref(), &mut theta) {
            Ok(e) => e,
            Err(Error::NonFinite { .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        cum += event.grad_evals();
        total_nfe += event.nfe as u64;
        triggers += event.triggered as u64;
        fallbacks += event.fallback as u64;
        if let Some(after) = event.loss_after_ode {
            if after > event.loss + slack {
                violations += 1;
            }
        }
        let last = step == cfg.steps || cfg.grad_eval_budget.is_some_and(|b| cum >= b);
        let test_metric = if step % cfg.eval_every == 0 || last {
            problem.test_metric(&theta)
        } else {
            None
        };
        if test_metric.is_some() {
            last_metric = test_metric;
        }
        series.push(StepRecord {
            step,
            train_loss: event.loss,
            test_metric,
            triggered: event.triggered,
            nfe: event.nfe as u64,
            cum_grad_evals: cum,
            wall_ms: cfg
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        });
    }

    let done = series.len() as u64;
    let train_loss = problem.loss(&theta);
    if diverged_at.is_none() && !(train_loss.is_finite() && theta.is_finite()) {
        diverged_at = Some(done + 1);
    }
    let test_metric = match series.last() {
        Some(r) if r.test_metric.is_some() => r.test_metric,
        _ if diverged_at.is_none() => problem.test_metric(&theta),
        _ => last_metric,
    };
    let post_warmup = done.saturating_sub(warmup);
    let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok(RunReport {
        experiment: cfg.experiment.clone(),
        optimizer: cfg.optimizer,
        mode: cfg.mode,
        seed,
        metric_name: problem.metric_name().to_string(),
        metric_kind: problem.metric_kind(),
        diverged_at,
        finals: RunFinals {
            steps_completed: done,
            train_loss,
            test_metric,
            trigger_count: triggers,
            fallback_count: fallbacks,
            trigger_rate_all: ratio(triggers, done),
            trigger_rate_post_warmup: ratio(triggers, post_warmup),
            total_nfe,
            total_grad_evals: cum,
            descent_violations: violations,
        },
        config: cfg.clone(),
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two runs.
    pub std: Option<f64>,
    pub median: f64,
}

impl SummaryStats {
    fn of(metric: &str, values: &[f64]) -> Self {
        SummaryStats {
            metric: metric.to_string(),
            mean: mean(values),
            std: sample_std(values),
            median: median(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub experiment: String,
    pub optimizer: OptimizerKind,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    #[serde(rename = "final")]
    pub final_metric: SummaryStats,
    pub final_train_loss: SummaryStats,
    pub metric_kind: MetricKind,
    pub baseline: Option<OptimizerKind>,
    pub baseline_mean: Option<f64>,
    pub improvement_vs_baseline_pct: Option<f64>,
    pub improvement_median_vs_baseline_pct: Option<f64>,
    pub trigger_rate_all: f64,
    pub trigger_rate_post_warmup: f64,
    pub trigger_count_mean: f64,
    pub total_grad_evals_mean: f64,
    pub descent_violations: u64,
    pub diverged: usize,
    pub diverged_seeds: Vec<u64>,
    /// Soft warnings carried over from the configuration.
    pub warnings: Vec<String>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n − 1) standard deviation.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Relative improvement in percent, signed so that positive is better.
pub fn improvement_pct(candidate: f64, baseline: f64, kind: MetricKind) -> f64 {
    match kind {
        MetricKind::LowerIsBetter => (baseline - candidate) / baseline * 100.0,
        MetricKind::HigherIsBetter => (candidate - baseline) / baseline * 100.0,
    }
}

fn seed_set(reports: &[RunReport]) -> Vec<u64> {
    let mut s: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    s.sort_unstable();
    s
}

/// Cross-seed summary of `reports`, with improvement against `baseline`
/// when given. Runs are paired by seed value; diverged runs of either side
/// are left out of the statistics and counted.
pub fn aggregate(reports: &[RunReport], baseline: Option<&[RunReport]>) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidConfig("aggregate needs at least one report".into()))?;
    let seeds = seed_set(reports);
    if let Some(base) = baseline {
        let base_seeds = seed_set(base);
        if base_seeds != seeds {
            return Err(Error::SeedMismatch {
                candidate: seeds,
                baseline: base_seeds,
            });
        }
    }
    let kind = first.metric_kind;
    let ok: Vec<&RunReport> = reports.iter().filter(|r| !r.diverged()).collect();
    let diverged_seeds: Vec<u64> = reports
        .iter()
        .filter(|r| r.diverged())
        .map(|r| r.seed)
        .collect();
    let metrics: Vec<f64> = ok.iter().map(|r| r.final_metric()).collect();
    let losses: Vec<f64> = ok.iter().map(|r| r.finals.train_loss).collect();
    let final_metric = SummaryStats::of(&first.metric_name, &metrics);

    let (mut baseline_kind, mut baseline_mean, mut imp, mut imp_median) = (None, None, None, None);
    if let Some(base) = baseline {
        let base_ok: Vec<f64> = base
            .iter()
            .filter(|r| !r.diverged())
            .map(|r| r.final_metric())
            .collect();
        if !base_ok.is_empty() && !metrics.is_empty() {
            let bm = mean(&base_ok);
            baseline_mean = Some(bm);
            imp = Some(improvement_pct(final_metric.mean, bm, kind));
            imp_median = Some(improvement_pct(final_metric.median, median(&base_ok), kind));
        }
        baseline_kind = base.first().map(|r| r.optimizer);
    }

    let over_ok = |f: fn(&RunReport) -> f64| mean(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    Ok(AggregateReport {
        experiment: first.experiment.clone(),
        optimizer: first.optimizer,
        mode: first.mode,
        seeds,
        final_train_loss: SummaryStats::of("train_loss", &losses),
        final_metric,
        metric_kind: kind,
        baseline: baseline_kind,
        baseline_mean,
        improvement_vs_baseline_pct: imp,
        improvement_median_vs_baseline_pct: imp_median,
        trigger_rate_all: over_ok(|r| r.finals.trigger_rate_all),
        trigger_rate_post_warmup: over_ok(|r| r.finals.trigger_rate_post_warmup),
        trigger_count_mean: over_ok(|r| r.finals.trigger_count as f64),
        total_grad_evals_mean: over_ok(|r| r.finals.total_grad_evals as f64),
        descent_violations: reports.iter().map(|r| r.finals.descent_violations).sum(),
        diverged: diverged_seeds.len(),
        diverged_seeds,
        warnings: first.config.flow.validate().unwrap_or_default(),
    })
}

fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-step CSV only.
pub fn write_run_csv(report: &RunReport, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = String::with_capacity(64 * (report.series.len() + 1));
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for r in &report.series {
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            r.step,
            r.train_loss,
            fmt_opt(r.test_metric),
            r.triggered as u8,
            r.nfe,
            r.cum_grad_evals,
            fmt_opt(r.wall_ms)
        );
    }
    out.write_all(buf.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `path` (per-step CSV) and its `.meta.json` sidecar.
pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    write_run_csv(report, path)?;
    write_json(report, &meta_path(path))
}

/// Reads a report written by [`write_report`].
pub fn read_report(path: &Path) -> Result<RunReport> {
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut report: RunReport = serde_json::from_str(&text)?;
    report.series = read_run_csv(path)?;
    Ok(report)
}

pub fn read_run_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(perr(
                1,
                "header",
                format!("expected `{CSV_HEADER}`, got `{h}`"),
            ))
        }
        None => return Err(perr(1, "header", "empty file".into())),
    }
    let names: Vec<&str> = CSV_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(perr(
                lineno,
                "row",
                format!("expected {} fields, got {}", names.len(), cells.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            cells[k]
                .parse::<f64>()
                .map_err(|e| perr(lineno, names[k], format!("`{}`: {e}", cells[k])))
        };
        let int = |k: usize| -> Result<u64> {
            cells[k]
                .parse::<u64>()
                .map_err(|e| perr(lineno, names[k], format!("`{}`: {e}", cells[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> {
            if cells[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let triggered = match cells[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(perr(
                    lineno,
                    names[3],
                    format!("expected 0 or 1, got `{other}`"),
                ))
            }
        };
        rows.push(StepRecord {
            step: int(0)?,
            train_loss: num(1)?,
            test_metric: opt(2)?,
            triggered,
            nfe: int(4)?,
            cum_grad_evals: int(5)?,
            wall_ms: opt(6)?,
        });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_aggregate(agg: &AggregateReport, path: &Path) -> Result<()> {
    write_json(agg, path)
}

pub fn read_aggregate(path: &Path) -> Result<AggregateReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes every run plus `<experiment>__<optimizer>.aggregate.json` into
/// `dir` and returns the aggregate path.
pub fn write_experiment(
    dir: &Path,
    reports: &[RunReport],
    agg: &AggregateReport,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in reports {
        write_report(r, &dir.join(format!("{}.csv", r.file_stem())))?;
    }
    let path = dir.join(format!(
        "{}__{}.aggregate.json",
        agg.experiment, agg.optimizer
    ));
    write_aggregate(agg, &path)?;
    Ok(path)
}

fn fmt_stats(s: &SummaryStats) -> String {
    match s.std {
        Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
        None => format!("{:.4}", s.mean),
    }
}

/// Plain-text table: optimizer, mean ± std, median, improvement, triggers,
/// grad evals, diverged.
pub fn format_summary(aggs: &[AggregateReport]) -> String {
    let mut rows = vec![[
        "experiment".to_string(),
        "optimizer".to_string(),
        "metric".to_string(),
        "mean ± std".to_string(),
        "median".to_string(),
        "improv.%".to_string(),
        "improv.med%".to_string(),
        "trig.rate".to_string(),
        "grad evals".to_string(),
        "diverged".to_string(),
    ]];
    let pct = |v: Option<f64>| v.map(|x| format!("{x:+.1}")).unwrap_or_else(|| "-".into());
    for a in aggs {
        rows.push([
            a.experiment.clone(),
            a.optimizer.to_string(),
            a.final_metric.metric.clone(),
            fmt_stats(&a.final_metric),
            format!("{:.4}", a.final_metric.median),
            pct(a.improvement_vs_baseline_pct),
            pct(a.improvement_median_vs_baseline_pct),
            format!("{:.3}", a.trigger_rate_all),
            format!("{:.0}", a.total_grad_evals_mean),
            a.diverged.to_string(),
        ]);
    }
    let mut widths = [0usize; 10];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    for a in aggs {
        for w in &a.warnings {
            let _ = writeln!(out, "warning [{} {}]: {w}", a.experiment, a.optimizer);
        }
    }
    out
}
