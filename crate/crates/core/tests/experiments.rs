use std::path::PathBuf;

use lagrange_core::dynamics::DynamicsEngine;
use lagrange_core::error::Error;
use lagrange_core::experiments::{
    diamond_label, evaluate, grid_set, interval_sweep, read_stream_csv, read_trace_csv,
    run_experiment, strided_mask, trajectory_2d, write_metrics_csv, write_trace_csv, EvalSet,
    ExperimentConfig, ModelSpec, PhaseSpec, SweepTarget, TrajectoryKind, Traversal,
};
use lagrange_core::models::{Architecture, Learner};
use lagrange_core::rootspace::RootSet;
use lagrange_core::rootspace::{homogeneous_coefficients, homogeneous_eval, InitialConditions};

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    ExperimentConfig::from_path(&path).unwrap()
}

fn y_series(log: &lagrange_core::experiments::TraceLog) -> Vec<f64> {
    log.series(log.weight_index("y").unwrap())
        .into_iter()
        .map(|(_, v)| v)
        .collect()
}

#[test]
fn runs_are_deterministic() {
    let c = config("f1");
    assert_eq!(run_experiment(&c).unwrap(), run_experiment(&c).unwrap());

    let mut ann = config("ann_1d_regression");
    ann.phases = vec![PhaseSpec {
        iterations: 20,
        tau: None,
        supervision: true,
    }];
    ann.output.trace_every = 7;
    let a = run_experiment(&ann).unwrap();
    assert_eq!(a, run_experiment(&ann).unwrap());
    ann.seed += 1;
    assert_ne!(a.rows, run_experiment(&ann).unwrap().rows);
}

#[test]
fn f1_steady_state_is_cyclic() {
    let log = run_experiment(&config("f1")).unwrap();
    assert!(!log.diverged());
    let ys = y_series(&log);
    // Two passes of 20 points per iteration.
    let period = 40;
    let last = &ys[ys.len() - period..];
    let prev = &ys[ys.len() - 2 * period..ys.len() - period];
    let amp = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - last.iter().cloned().fold(f64::INFINITY, f64::min);
    let dev = last
        .iter()
        .zip(prev)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(amp > 0.0);
    assert!(dev < 0.01 * amp, "deviation {dev:e} vs amplitude {amp:e}");
}

#[test]
fn theta_lowers_steady_state_weight() {
    let y: Vec<f64> = ["f9", "f1", "f10"]
        .iter()
        .map(|n| run_experiment(&config(n)).unwrap().phases[0].last_iteration_mean[0])
        .collect();
    assert!(y[0] > y[1] && y[1] > y[2], "{y:?}");
}

#[test]
fn unsupervised_run_follows_homogeneous_solution() {
    for (name, y0, b0) in [
        ("f1", vec![1.5, 0.3], vec![-0.5]),
        ("fs17", vec![0.8, -0.2, 0.1], vec![2.0, 0.0, 0.0, 0.4]),
    ] {
        let mut c = config(name);
        c.model = ModelSpec::Linear {
            y: y0.clone(),
            b: b0.clone(),
        };
        c.phases = vec![PhaseSpec {
            iterations: 3,
            tau: None,
            supervision: false,
        }];
        let log = run_experiment(&c).unwrap();
        let roots = c.operator.roots(c.tau).unwrap();
        for (w, init) in [("y", &y0), ("b", &b0)] {
            let mut ic = init.clone();
            ic.resize(roots.degree(), 0.0);
            let coeffs =
                homogeneous_coefficients(&roots, &InitialConditions::new(ic).unwrap()).unwrap();
            let series = log.series(log.weight_index(w).unwrap());
            assert!(series.len() > 100);
            for (t, v) in series {
                let exact = homogeneous_eval(&coeffs, t).unwrap();
                assert!(
                    (v - exact).abs() < 1e-8,
                    "{name} {w} at t = {t}: {v} vs {exact}"
                );
            }
        }
    }
}

#[test]
fn zero_iterations_record_only_the_initial_state() {
    let mut c = config("f1");
    c.phases = vec![PhaseSpec {
        iterations: 0,
        tau: None,
        supervision: true,
    }];
    let log = run_experiment(&c).unwrap();
    assert_eq!(log.rows.len(), 2);
    assert!(log.rows.iter().all(|r| r.t == 0.0 && r.value == 0.0));
}

#[test]
fn divergence_is_flagged_and_optionally_aborts() {
    let mut c = config("f2");
    let log = run_experiment(&c).unwrap();
    let d = log.divergence.clone().expect("f2 diverges");
    assert!(d.iteration < 5);
    assert!(!log.aborted);
    assert!(log.rows.iter().all(|r| r.value.is_finite()));
    assert!(log.rows.iter().any(|r| r.divergent));

    c.abort_on_divergence = true;
    let cut = run_experiment(&c).unwrap();
    assert!(cut.aborted);
    assert!(cut.rows.len() < log.rows.len());
    assert_eq!(cut.divergence, log.divergence);
}

#[test]
fn validation_phases_use_their_own_step() {
    let mut c = config("f1");
    c.phases = vec![
        PhaseSpec {
            iterations: 2,
            tau: None,
            supervision: true,
        },
        PhaseSpec {
            iterations: 1,
            tau: Some(1.0),
            supervision: false,
        },
    ];
    let log = run_experiment(&c).unwrap();
    assert_eq!(log.phases.len(), 2);
    let steps_per_iteration = 40.0;
    assert!((log.phases[0].t_end - 2.0 * steps_per_iteration * 0.01).abs() < 1e-9);
    assert!((log.phases[1].t_end - log.phases[0].t_end - steps_per_iteration).abs() < 1e-9);
}

#[test]
fn trace_and_metrics_csv() {
    let log = run_experiment(&config("f1")).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&log, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,weight,value,divergent\n"));
    let back = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), log.rows.len());
    for (r, s) in back.iter().zip(&log.rows) {
        assert_eq!(r.t.to_bits(), s.t.to_bits());
        assert_eq!(r.value.to_bits(), s.value.to_bits());
        assert_eq!(r.weight, log.weight_names[s.weight]);
    }
    let mut m = Vec::new();
    write_metrics_csv(&log, &mut m).unwrap();
    let m = String::from_utf8(m).unwrap();
    assert!(m.starts_with("phase,iteration,t,set,mse,accuracy\n"));
    assert_eq!(m.lines().count(), 1 + log.metrics.len());
}

#[test]
fn sweep_examples() {
    let s = interval_sweep(-1.0, 1.0, 3, SweepTarget::Affine { m: 2.0, q: -1.0 }, 3).unwrap();
    let inputs: Vec<f64> = s.points().iter().map(|p| p.input[0]).collect();
    let targets: Vec<f64> = s
        .points()
        .iter()
        .map(|p| p.target.as_ref().unwrap()[0])
        .collect();
    assert_eq!(inputs, vec![-1.0, 0.0, 1.0]);
    assert_eq!(targets, vec![-3.0, -1.0, 1.0]);
    assert!(s.supervision_mask().iter().all(|m| *m));

    let mask = strided_mask(100, 10).unwrap();
    let on: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(on, (0..10).map(|i| 10 * i).collect::<Vec<_>>());
    assert!(interval_sweep(0.0, 1.0, 1, SweepTarget::Affine { m: 1.0, q: 0.0 }, 1).is_err());
    assert!(interval_sweep(1.0, 1.0, 5, SweepTarget::Affine { m: 1.0, q: 0.0 }, 5).is_err());

    // Forward, backward without repeating the turnaround, forward again.
    let s = interval_sweep(0.0, 1.0, 4, SweepTarget::Affine { m: 1.0, q: 0.0 }, 4).unwrap();
    assert_eq!(s.traversal(), Traversal::ForwardBackward);
    assert_eq!(s.pass_indices(0), vec![0, 1, 2, 3]);
    assert_eq!(s.pass_indices(1), vec![2, 1, 0]);
    assert_eq!(s.pass_indices(2), vec![1, 2, 3]);
    let events = s.events(3, 0.5);
    assert!(events
        .windows(2)
        .all(|w| (w[1].time - w[0].time - 0.5).abs() < 1e-15));
}

#[test]
fn trajectory_and_grid_examples() {
    let spiral = TrajectoryKind::Spiral.point(1.0);
    assert!((spiral[0] - 0.0054030).abs() < 1e-7 && (spiral[1] - 0.0084147).abs() < 1e-7);
    let flower = TrajectoryKind::Flower.point(1.0);
    let c10 = 10f64.cos();
    assert!(
        (flower[0] - c10 * 1f64.cos()).abs() < 1e-15
            && (flower[1] - c10 * 1f64.sin()).abs() < 1e-15
    );
    assert!(diamond_label([0.0, 0.0]) && diamond_label([0.2, 0.2]) && !diamond_label([0.5, 0.5]));

    let s = trajectory_2d(TrajectoryKind::Spiral, 100).unwrap();
    assert_eq!(s.len(), 100);
    assert_eq!(s.supervised_count(), 100);
    assert!(trajectory_2d(TrajectoryKind::Flower, 0).is_err());

    let grid = grid_set(0.5, 100).unwrap();
    let positives = grid.targets.iter().filter(|t| t[0] == 1.0).count();
    assert_eq!((grid.len(), positives), (100, 50));
    assert!(grid
        .inputs
        .iter()
        .all(|p| (p[0].abs() + p[1].abs() - 0.5).abs() > 1e-3));
    assert!(grid_set(0.5, 99).is_err());
}

#[test]
fn csv_stream_ingestion() {
    let s = read_stream_csv("dim=2,labeled=1\n0.1,0.2,1\n0.3,0.4,\n".as_bytes()).unwrap();
    assert_eq!((s.len(), s.supervised_count(), s.input_dim()), (2, 1, 2));

    let row: Vec<String> = (0..40).map(|i| format!("{}", i as f64 / 10.0)).collect();
    let wide = format!("dim=40,labeled=0\n{}\n", row.join(","));
    assert_eq!(read_stream_csv(wide.as_bytes()).unwrap().input_dim(), 40);

    assert!(matches!(
        read_stream_csv("".as_bytes()),
        Err(Error::EmptyStream)
    ));
    assert!(matches!(
        read_stream_csv("dim=1,labeled=0\n".as_bytes()),
        Err(Error::EmptyStream)
    ));
    match read_stream_csv("dim=2,labeled=0\n1,2\n3\n".as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    match read_stream_csv("dim=2,labeled=0\n1,2\n3,x\n".as_bytes()) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains('x'));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn metric_examples() {
    let engine =
        DynamicsEngine::from_roots(&RootSet::from_real(&[-1.0, -2.0]).unwrap(), 0.01, 1.0).unwrap();
    let zero = Learner::new(Architecture::Linear, &engine, &[0.0, 0.0]).unwrap();
    let set = EvalSet {
        inputs: vec![vec![-1.0], vec![0.0], vec![1.0]],
        targets: vec![vec![-3.0], vec![-1.0], vec![1.0]],
    };
    let m = evaluate(&zero, &set).unwrap();
    assert!((m.mse - 11.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.accuracy, None);

    let perfect = Learner::new(Architecture::Linear, &engine, &[2.0, -1.0]).unwrap();
    assert_eq!(evaluate(&perfect, &set).unwrap().mse, 0.0);
    assert!(evaluate(&perfect, &EvalSet::default()).is_err());
}

#[test]
fn config_errors() {
    let good = config("f1").to_json();
    assert!(ExperimentConfig::from_json(&good).is_ok());

    let typo = good.replacen("\"tau\"", "\"tua\"", 1);
    let err = ExperimentConfig::from_json(&typo).unwrap_err().to_string();
    assert!(err.contains("tua") && err.contains("line"), "{err}");

    let version = good.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(ExperimentConfig::from_json(&version)
        .unwrap_err()
        .to_string()
        .contains("version"));

    let broken = &good[..good.len() / 2];
    let err = ExperimentConfig::from_json(broken).unwrap_err().to_string();
    assert!(err.contains("line") && err.contains("column"), "{err}");

    let mut c = config("f1");
    c.tau = 0.0;
    assert!(run_experiment(&c).is_err());

    let both = r#"{"version": 1, "operator": {"kind": "roots", "roots": [-1, -2], "eta": 1, "kappa": 1},
        "tau": 0.01, "model": {"kind": "linear"},
        "stream": {"kind": "interval_sweep", "a": -1, "b": 1, "points": 5, "target": {"kind": "affine", "m": 2, "q": -1}},
        "phases": [{"iterations": 1}]}"#;
    let c = ExperimentConfig::from_json(both).unwrap();
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));

    let mut c = config("ann_2d_spiral");
    c.model = ModelSpec::Linear {
        y: vec![],
        b: vec![],
    };
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
}

#[test]
fn csv_stream_config_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("dim=2,labeled=1\n");
    for i in 0..20 {
        let x = i as f64 / 20.0 - 0.5;
        rows.push_str(&format!(
            "{x},{},{}\n",
            -x,
            usize::from(x.abs() * 2.0 > 0.5)
        ));
    }
    std::fs::write(dir.path().join("points.csv"), rows).unwrap();
    let cfg = r#"{"version": 1,
        "operator": {"kind": "design", "theta": 1, "a": 1e8, "eta": 1e-4},
        "tau": 0.01, "model": {"kind": "mlp", "units": 5},
        "stream": {"kind": "csv", "path": "points.csv"},
        "phases": [{"iterations": 3}],
        "evaluation": [{"name": "csv", "set": {"kind": "csv", "path": "points.csv"}}]}"#;
    let path = dir.path().join("run.json");
    std::fs::write(&path, cfg).unwrap();
    let c = ExperimentConfig::from_path(&path).unwrap();
    let log = run_experiment(&c).unwrap();
    assert!((log.phases[0].t_end - 0.6).abs() < 1e-9);
    let m = log.metrics.last().unwrap();
    assert_eq!(m.set, "csv");
    assert!(m.metrics.accuracy.is_some());
    assert_eq!(
        lagrange_core::experiments::ingest_csv(&dir.path().join("points.csv"))
            .unwrap()
            .len(),
        20
    );
    assert!(lagrange_core::experiments::ingest_csv(&dir.path().join("missing.csv")).is_err());
}
