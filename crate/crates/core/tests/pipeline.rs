use flowadam::harness::{
    aggregate, format_summary, read_aggregate, read_report, run_experiment, write_experiment,
    ExperimentConfig, OptimizerKind,
};
use flowadam::{Mode, ProblemConfig, ProblemKind};

fn cfg(opt: OptimizerKind) -> ExperimentConfig {
    ExperimentConfig::new(
        ProblemConfig::default_for(ProblemKind::InverseKinematics),
        opt,
        Mode::B,
    )
    .with_steps(120)
    .with_seeds(vec![4, 9])
}

#[test]
fn reports_roundtrip_through_disk() {
    let flow = run_experiment(&cfg(OptimizerKind::FlowAdam)).unwrap();
    let adam = run_experiment(&cfg(OptimizerKind::Adam)).unwrap();
    let aggs = [
        aggregate(&adam, None).unwrap(),
        aggregate(&flow, Some(&adam)).unwrap(),
    ];

    let dir = tempfile::tempdir().unwrap();
    let paths = [
        write_experiment(dir.path(), &adam, &aggs[0]).unwrap(),
        write_experiment(dir.path(), &flow, &aggs[1]).unwrap(),
    ];
    let back: Vec<_> = paths.iter().map(|p| read_aggregate(p).unwrap()).collect();
    assert_eq!(back, aggs);
    assert_eq!(format_summary(&back), format_summary(&aggs));

    for r in &flow {
        let path = dir.path().join(format!("{}.csv", r.file_stem()));
        let read = read_report(&path).unwrap();
        assert_eq!(read.finals, r.finals);
        assert_eq!(read.series, r.series);
    }
}

#[test]
fn seeds_are_independent_of_grid_composition() {
    let both = run_experiment(&cfg(OptimizerKind::FlowAdam)).unwrap();
    let single = run_experiment(&cfg(OptimizerKind::FlowAdam).with_seeds(vec![9])).unwrap();
    assert_eq!(both[1].series, single[0].series);
    assert_ne!(both[0].series, both[1].series);
}

#[test]
fn flowadam_triggers_and_stays_finite_on_every_problem() {
    for kind in ProblemKind::ALL {
        let c = ExperimentConfig::new(
            ProblemConfig::default_for(kind),
            OptimizerKind::FlowAdam,
            Mode::B,
        )
        .with_steps(40)
        .with_seeds(vec![1]);
        let r = &run_experiment(&c).unwrap()[0];
        assert!(!r.diverged(), "{kind}");
        assert!(r.finals.train_loss.is_finite(), "{kind}");
        assert_eq!(r.finals.descent_violations, 0, "{kind}");
    }
}
