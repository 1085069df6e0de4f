use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowadam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowadam"))
        .current_dir(dir)
        .env_remove("FLOWFLOW_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bench_writes_reports_and_summary_matches_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowadam(
        tmp.path(),
        &[
            "bench",
            "--problem",
            "rosenbrock",
            "--steps",
            "60",
            "--seeds",
            "2",
            "--out",
            "r",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let dir = tmp.path().join("r");
    for f in [
        "rosenbrock__adam.aggregate.json",
        "rosenbrock__flowadam.aggregate.json",
        "rosenbrock__flowadam__seed2.csv",
        "rosenbrock__flowadam__seed2.meta.json",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let table = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert_eq!(stdout(&o), table);
    let again = flowadam(tmp.path(), &["summarize", "r"]);
    assert_eq!(stdout(&again), table);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str, threads: &'static str| {
        vec![
            "bench",
            "--problem",
            "inverse_kinematics",
            "--steps",
            "80",
            "--seeds",
            "3",
            "--threads",
            threads,
            "--out",
            out,
        ]
    };
    assert!(flowadam(tmp.path(), &args("a", "1")).status.success());
    assert!(flowadam(tmp.path(), &args("b", "3")).status.success());
    let mut names: Vec<_> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        let a = fs::read(tmp.path().join("a").join(&n)).unwrap();
        let b = fs::read(tmp.path().join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn default_out_dir_is_timestamped_under_results() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowadam(
        tmp.path(),
        &[
            "bench",
            "--problem",
            "rosenbrock",
            "--steps",
            "5",
            "--seeds",
            "1",
        ],
    );
    assert!(o.status.success());
    let dirs: Vec<_> = fs::read_dir(tmp.path().join("results")).unwrap().collect();
    assert_eq!(dirs.len(), 1);
    let dir = dirs[0].as_ref().unwrap().path();
    let stamp = dir.file_name().unwrap().to_string_lossy().into_owned();
    for e in fs::read_dir(&dir).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        assert!(!text.contains(&stamp));
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &[
            "bench",
            "--problem",
            "matrix_completion",
            "--scenario",
            "huge",
        ],
        &["bench", "--problem", "nope"],
        &["bench"],
        &[
            "bench",
            "--problem",
            "rosenbrock",
            "--optimizers",
            "adam,lbfgs",
        ],
        &[
            "bench",
            "--problem",
            "rosenbrock",
            "--seeds",
            "2",
            "--seed-list",
            "1,2",
        ],
        &["bench", "--problem", "rosenbrock", "--mode", "C"],
        &["sweep", "--param", "gamma", "--grid"],
        &["sweep", "--param", "beta", "--grid", "0.5"],
        &["sweep", "--param", "gamma", "--grid", "1.5"],
        &["ablation-injection", "--injection", "hard-only"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = flowadam(tmp.path(), args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags_and_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.ini"),
        "seeds = 1\nout = from_config\n[bench]\nproblem = stiff_valley\nsteps = 12\noptimizers = adam\n",
    )
    .unwrap();
    let o = flowadam(
        tmp.path(),
        &["bench", "--config", "run.ini", "--steps", "7"],
    );
    assert!(o.status.success(), "{o:?}");
    let csv =
        fs::read_to_string(tmp.path().join("from_config/stiff_valley__adam__seed1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);

    fs::write(
        tmp.path().join("bad.ini"),
        "[bench]\nproblem = rosenbrock\nlearning_rate = 1\n",
    )
    .unwrap();
    let o = flowadam(tmp.path(), &["bench", "--config", "bad.ini"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn threads_env_fallback_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_flowadam"))
        .current_dir(tmp.path())
        .env("FLOWFLOW_THREADS", "0")
        .args(["bench", "--problem", "rosenbrock", "--steps", "5"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablation_soft_only_skips_hard_arm_and_single_seed_has_no_std() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowadam(
        tmp.path(),
        &[
            "ablation-injection",
            "--steps",
            "40",
            "--seeds",
            "1",
            "--injection",
            "soft-only",
            "--out",
            "a",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("soft: accuracy"));
    assert!(!out.contains("hard:"));
    let row = out.lines().find(|l| l.starts_with("two_spirals")).unwrap();
    assert!(!row.contains('±'));
    assert!(!tmp
        .path()
        .join("a/two_spirals__flowadam_hard.aggregate.json")
        .exists());
}

#[test]
fn sweep_reports_ratio_and_flags_large_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowadam(
        tmp.path(),
        &[
            "sweep",
            "--param",
            "alpha_s",
            "--grid",
            "0.9,1.5",
            "--problem",
            "rosenbrock",
            "--steps",
            "30",
            "--seeds",
            "1",
            "--out",
            "s",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("max/min mean train_loss ratio"));
    assert!(out.contains("flag: alpha_s = 1.5"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("s/sweep.json")).unwrap())
            .unwrap();
    assert_eq!(json["means"].as_array().unwrap().len(), 2);
    assert!(json["max_min_ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn verify_passes_with_machine_readable_output() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowadam(tmp.path(), &["verify", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() > 20);
    assert!(lines
        .iter()
        .all(|v| v["passed"] == true && v["name"].is_string()));
}
