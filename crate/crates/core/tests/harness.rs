use noisy_parity::harness::*;

fn small(id: ExperimentId) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(id, vec![11, 12]);
    match &mut cfg.params {
        ExperimentParams::E1(p) => {
            p.n = vec![300];
            p.radii = vec![0.0, 2.0];
        }
        ExperimentParams::E2(p) => p.n = vec![5000],
        ExperimentParams::E5(p) => p.instances = 15,
        ExperimentParams::E6(p) => p.trees = 40,
        ExperimentParams::E7(p) => p.trees = 40,
        ExperimentParams::E8(p) => {
            p.reps = vec![1, 2, 3];
            p.trials = 4000;
        }
        _ => {}
    }
    cfg
}

fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Vec<ResultRow> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_experiment(cfg).unwrap())
}

#[test]
fn every_experiment_passes_its_checks() {
    for id in ExperimentId::ALL {
        let rows = run_experiment(&small(id)).unwrap();
        assert!(!rows.is_empty(), "{id}");
        assert!(rows.iter().all(|r| r.experiment == id));
        let bad = failures(&rows);
        assert!(bad.is_empty(), "{id}: {bad:?}");
    }
}

#[test]
fn output_is_identical_across_thread_counts() {
    for id in [ExperimentId::E1, ExperimentId::E6, ExperimentId::E8] {
        let cfg = small(id);
        let a = to_csv(&run_with_threads(&cfg, 1));
        let b = to_csv(&run_with_threads(&cfg, 4));
        assert_eq!(a, b, "{id}");
        let back = parse_csv(&a).unwrap();
        assert_eq!(to_csv(&back), a);
    }
}

#[test]
fn rows_reproduce_from_their_seed() {
    let cfg = small(ExperimentId::E7);
    let all = run_experiment(&cfg).unwrap();
    let mut one = cfg.clone();
    one.seeds = vec![12];
    let alone = run_experiment(&one).unwrap();
    let from_all: Vec<_> = all.into_iter().filter(|r| r.seed == Some(12)).collect();
    assert_eq!(from_all, alone);
}

#[test]
fn zero_radius_never_connects() {
    let mut cfg = ExperimentConfig::new(ExperimentId::E1, (0..5).collect());
    if let ExperimentParams::E1(p) = &mut cfg.params {
        p.radius_factors.clear();
        p.radii = vec![0.0];
    }
    let rows = run_experiment(&cfg).unwrap();
    let connected: Vec<_> = rows.iter().filter(|r| r.metric == "connected").collect();
    assert_eq!(connected.len(), 5);
    assert!(connected.iter().all(|r| r.value == 0.0));
}

#[test]
fn emit_writes_the_csv() {
    let dir = std::env::temp_dir().join(format!("np-harness-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("e3.csv");
    let rows = run_experiment(&small(ExperimentId::E3)).unwrap();
    emit(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, to_csv(&rows));
    emit(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}
