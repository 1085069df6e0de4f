use std::fs;
use std::path::{Path, PathBuf};

use flowadam::harness::{
    aggregate, format_summary, read_aggregate, run_experiment, write_experiment, write_json,
    AggregateReport, ExperimentConfig, OptimizerKind, RunReport, DEFAULT_SEEDS,
};
use flowadam::{build_problem, verify, Mode, ProblemConfig, ProblemKind};
use serde_json::json;

use crate::config::ConfigFile;
use crate::{AblationArgs, BenchArgs, CliError, GlobalArgs, SweepArgs, VerifyArgs};

/// Flags merged over the config file for one subcommand.
struct Common {
    seeds: Vec<u64>,
    mode: Option<Mode>,
    out: PathBuf,
    threads: Option<usize>,
    allow_divergence: bool,
}

fn parse_list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::Usage(format!("`{key}` entry `{s}`: {e}")))
        })
        .collect()
}

fn common(g: &GlobalArgs, file: &ConfigFile, sub: &str) -> Result<Common, CliError> {
    let seeds = if let Some(list) = &g.seed_list {
        list.clone()
    } else if let Some(n) = g.seeds {
        (1..=n).collect()
    } else if let Some(raw) = file.get(sub, "seed_list") {
        parse_list("seed_list", raw)?
    } else if let Some(n) = file.parsed::<u64>(sub, "seeds")? {
        (1..=n).collect()
    } else {
        DEFAULT_SEEDS.to_vec()
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    let mode = match g.mode {
        Some(m) => Some(m),
        None => file.parsed(sub, "mode")?,
    };
    let out = match &g.out {
        Some(p) => p.clone(),
        None => match file.get(sub, "out") {
            Some(p) => PathBuf::from(p),
            None => {
                Path::new("results").join(chrono::Local::now().format("%Y%m%d-%H%M%S").to_string())
            }
        },
    };
    let threads = match g.threads {
        Some(n) => Some(n),
        None => file.parsed(sub, "threads")?,
    };
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let allow_divergence =
        g.allow_divergence || file.parsed(sub, "allow_divergence")?.unwrap_or(false);
    Ok(Common {
        seeds,
        mode,
        out,
        threads,
        allow_divergence,
    })
}

fn problem_config(kind: &str, scenario: Option<&str>) -> Result<ProblemConfig, CliError> {
    let kind = ProblemKind::parse(kind)?;
    Ok(match scenario {
        Some(s) => ProblemConfig::new(kind, s)?,
        None => ProblemConfig::default_for(kind),
    })
}

fn experiment(
    problem: &ProblemConfig,
    opt: OptimizerKind,
    mode: Mode,
    steps: u64,
    c: &Common,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(problem.clone(), opt, mode)
        .with_steps(steps)
        .with_seeds(c.seeds.clone());
    cfg.threads = c.threads;
    cfg
}

fn run(cfg: &ExperimentConfig) -> Result<Vec<RunReport>, CliError> {
    cfg.validate()?;
    Ok(run_experiment(cfg)?)
}

/// Reads every `*.aggregate.json` in `dir`, in file-name order.
fn read_aggregates(dir: &Path) -> Result<Vec<AggregateReport>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".aggregate.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_aggregate(p).map_err(CliError::from))
        .collect()
}

/// Prints the table built from the aggregates on disk and saves it as
/// `summary.txt`.
fn emit_summary(dir: &Path) -> Result<Vec<AggregateReport>, CliError> {
    let aggs = read_aggregates(dir)?;
    let table = format_summary(&aggs);
    print!("{table}");
    fs::write(dir.join("summary.txt"), &table)
        .map_err(|e| CliError::Failure(format!("writing summary: {e}")))?;
    Ok(aggs)
}

fn check_divergence(aggs: &[AggregateReport], allow: bool) -> Result<(), CliError> {
    let diverged: Vec<String> = aggs
        .iter()
        .filter(|a| a.diverged > 0)
        .map(|a| {
            format!(
                "{} {} seeds {:?}",
                a.experiment, a.optimizer, a.diverged_seeds
            )
        })
        .collect();
    if diverged.is_empty() || allow {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "diverged runs: {}",
            diverged.join("; ")
        )))
    }
}

fn export_data(problem: &ProblemConfig, seeds: &[u64], dir: &Path) -> Result<(), CliError> {
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| CliError::Failure(e.to_string()))?;
    for &seed in seeds {
        let p = build_problem(problem, seed, 0.0)?;
        let path = data_dir.join(format!("{}__seed{seed}.csv", problem.label()));
        let mut buf = Vec::new();
        if p.export_csv(&mut buf)? {
            fs::write(&path, buf)
                .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

pub fn bench(g: &GlobalArgs, file: &ConfigFile, a: BenchArgs) -> Result<(), CliError> {
    const SUB: &str = "bench";
    let c = common(g, file, SUB)?;
    let kind = a
        .problem
        .or_else(|| file.get(SUB, "problem").map(String::from))
        .ok_or_else(|| CliError::Usage("--problem is required".into()))?;
    let scenario = a
        .scenario
        .or_else(|| file.get(SUB, "scenario").map(String::from));
    let mut problem = problem_config(&kind, scenario.as_deref())?;
    if let Some(noise) = a.noise_std.or(file.parsed(SUB, "noise_std")?) {
        problem = problem.with_noise_std(noise);
    }
    let names = match a.optimizers {
        Some(v) => v,
        None => match file.get(SUB, "optimizers") {
            Some(raw) => parse_list("optimizers", raw)?,
            None => vec!["adam".into(), "flowadam".into()],
        },
    };
    let opts = names
        .iter()
        .map(|n| OptimizerKind::parse(n.trim()))
        .collect::<flowadam::Result<Vec<_>>>()?;
    if opts.is_empty() {
        return Err(CliError::Usage("--optimizers is empty".into()));
    }
    let baseline_name = a
        .baseline
        .or_else(|| file.get(SUB, "baseline").map(String::from))
        .unwrap_or_else(|| "adam".into());
    let baseline = OptimizerKind::parse(&baseline_name)?;
    let steps = a.steps.or(file.parsed(SUB, "steps")?).unwrap_or(1000);
    let mode = c.mode.unwrap_or(Mode::B);

    let mut results = Vec::new();
    for &opt in &opts {
        results.push((opt, run(&experiment(&problem, opt, mode, steps, &c))?));
    }
    let base_runs = results
        .iter()
        .find(|(o, _)| *o == baseline)
        .map(|(_, r)| r.clone());
    for (opt, runs) in &results {
        let base = base_runs.as_deref().filter(|_| *opt != baseline);
        write_experiment(&c.out, runs, &aggregate(runs, base)?)?;
    }
    if a.export_data || file.parsed(SUB, "export_data")?.unwrap_or(false) {
        export_data(&problem, &c.seeds, &c.out)?;
    }
    let aggs = emit_summary(&c.out)?;
    eprintln!("reports written to {}", c.out.display());
    check_divergence(&aggs, c.allow_divergence)
}

pub fn ablation_injection(
    g: &GlobalArgs,
    file: &ConfigFile,
    a: AblationArgs,
) -> Result<(), CliError> {
    const SUB: &str = "ablation-injection";
    let c = common(g, file, SUB)?;
    let steps = a.steps.or(file.parsed(SUB, "steps")?).unwrap_or(4000);
    let injection = a
        .injection
        .or_else(|| file.get(SUB, "injection").map(String::from))
        .unwrap_or_else(|| "both".into());
    let with_hard = match injection.as_str() {
        "both" => true,
        "soft-only" => false,
        other => {
            return Err(CliError::Usage(format!(
                "--injection must be both or soft-only, got `{other}`"
            )))
        }
    };
    let problem = ProblemConfig::default_for(ProblemKind::TwoSpirals);
    let mode = c.mode.unwrap_or(Mode::A);
    let soft = run(&experiment(
        &problem,
        OptimizerKind::FlowAdam,
        mode,
        steps,
        &c,
    ))?;
    if with_hard {
        let hard = run(&experiment(
            &problem,
            OptimizerKind::FlowAdamHard,
            mode,
            steps,
            &c,
        ))?;
        write_experiment(&c.out, &hard, &aggregate(&hard, None)?)?;
        write_experiment(&c.out, &soft, &aggregate(&soft, Some(&hard))?)?;
    } else {
        write_experiment(&c.out, &soft, &aggregate(&soft, None)?)?;
    }
    let aggs = emit_summary(&c.out)?;
    for agg in &aggs {
        let arm = if agg.optimizer == OptimizerKind::FlowAdamHard {
            "hard"
        } else {
            "soft"
        };
        println!(
            "{arm}: accuracy {:.2}%, triggers {:.1} per run",
            agg.final_metric.mean * 100.0,
            agg.trigger_count_mean
        );
    }
    check_divergence(&aggs, c.allow_divergence)
}

pub fn sweep(g: &GlobalArgs, file: &ConfigFile, a: SweepArgs) -> Result<(), CliError> {
    const SUB: &str = "sweep";
    let c = common(g, file, SUB)?;
    let param = a
        .param
        .or_else(|| file.get(SUB, "param").map(String::from))
        .ok_or_else(|| CliError::Usage("--param is required (gamma or alpha_s)".into()))?;
    if param != "gamma" && param != "alpha_s" {
        return Err(CliError::Usage(format!(
            "--param must be gamma or alpha_s, got `{param}`"
        )));
    }
    let grid = match a.grid {
        Some(v) => v,
        None => match file.get(SUB, "grid") {
            Some(raw) => parse_list("grid", raw)?,
            None => Vec::new(),
        },
    };
    if grid.is_empty() {
        return Err(CliError::Usage(
            "--grid must list at least one value".into(),
        ));
    }
    let kind = a
        .problem
        .or_else(|| file.get(SUB, "problem").map(String::from))
        .unwrap_or_else(|| "matrix_completion".into());
    let scenario = a
        .scenario
        .or_else(|| file.get(SUB, "scenario").map(String::from))
        .or_else(|| (kind != "rosenbrock" && kind != "stiff_valley").then(|| "medium".into()));
    let problem = problem_config(&kind, scenario.as_deref())?;
    let steps = a.steps.or(file.parsed(SUB, "steps")?).unwrap_or(1000);
    let mode = c.mode.unwrap_or(Mode::B);

    let mut configs = Vec::new();
    for &value in &grid {
        let mut cfg = experiment(&problem, OptimizerKind::FlowAdam, mode, steps, &c);
        match param.as_str() {
            "gamma" => cfg.flow.injection_weight = value,
            _ => cfg.flow.switch_sensitivity = value,
        }
        cfg.experiment = format!("{}__{param}_{value}", problem.label());
        cfg.validate()?;
        configs.push(cfg);
    }
    for cfg in &configs {
        let runs = run(cfg)?;
        write_experiment(&c.out, &runs, &aggregate(&runs, None)?)?;
    }
    let aggs = emit_summary(&c.out)?;
    let means: Vec<f64> = aggs.iter().map(|a| a.final_metric.mean).collect();
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    let flagged: Vec<f64> = if param == "alpha_s" {
        grid.iter().cloned().filter(|&v| v > 1.0).collect()
    } else {
        Vec::new()
    };
    println!(
        "max/min mean {} ratio: {:.4}",
        aggs[0].final_metric.metric,
        hi / lo
    );
    for v in &flagged {
        println!("flag: alpha_s = {v} > 1, plateau detection fires on nearly every step");
    }
    write_json(
        &json!({
            "param": param,
            "grid": grid,
            "experiments": aggs.iter().map(|a| &a.experiment).collect::<Vec<_>>(),
            "means": means,
            "max_min_ratio": hi / lo,
            "flagged_alpha_s": flagged,
        }),
        &c.out.join("sweep.json"),
    )?;
    check_divergence(&aggs, c.allow_divergence)
}

pub fn verify(file: &ConfigFile, a: VerifyArgs) -> Result<(), CliError> {
    let as_json = a.json || file.parsed("verify", "json")?.unwrap_or(false);
    let results = verify::run_all();
    for r in &results {
        if as_json {
            println!(
                "{}",
                serde_json::to_string(r).map_err(|e| CliError::Failure(e.to_string()))?
            );
        } else {
            println!("{r}");
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "{failed} of {} properties failed",
            results.len()
        )))
    }
}

pub fn summarize(dir: &Path) -> Result<(), CliError> {
    let aggs = read_aggregates(dir)?;
    if aggs.is_empty() {
        return Err(CliError::Usage(format!(
            "no aggregate reports in {}",
            dir.display()
        )));
    }
    print!("{}", format_summary(&aggs));
    Ok(())
}
