use serde_json::json;
use vortexlab::harness::commands::{self, Command};
use vortexlab::harness::io::{read_snapshot, write_snapshot, Table};
use vortexlab::harness::*;
use vortexlab::spde::{Diagnostics, SolverConfig};
use vortexlab::Grid;

fn small_plan() -> ExperimentPlan {
    ExperimentPlan {
        ladder: vec![0.25],
        ensemble_size: 4,
        cfg: SolverConfig {
            n: 32,
            nu: 0.02,
            dt: 5e-4,
            t_end: 0.02,
            record_every: 4,
            ..Default::default()
        },
        checkpoints: 5,
        ..Default::default()
    }
}

#[test]
fn equal_streams_give_zero_variance() {
    let plan = small_plan();
    let e = run_ensemble_with(&plan, &plan.noise_at(0.25), 0, &[3, 3], "twin").unwrap();
    let m = e.checkpoint_means();
    for f in 0..2 {
        for series in &m.se[f] {
            assert!(series.iter().all(|&s| s == 0.0));
        }
    }
    assert_eq!(e.trajectories[0].v3_sq, e.trajectories[1].v3_sq);
}

#[test]
fn distinct_streams_differ() {
    let plan = small_plan();
    let e = run_ensemble(&plan, &plan.noise_at(0.25), 0, 2, "pair").unwrap();
    assert_ne!(e.trajectories[0].obs_v3, e.trajectories[1].obs_v3);
    assert_ne!(e.seeds[0].stream, e.seeds[1].stream);
}

#[test]
fn stream_ids_are_unique_across_blocks() {
    let mut seen = std::collections::HashSet::new();
    for block in 0..4 {
        for traj in 0..1000 {
            assert!(seen.insert(stream_id(block, traj)));
        }
    }
}

#[test]
fn monte_carlo_error_shrinks_with_ensemble_size() {
    let plan = small_plan();
    let noise = plan.noise_at(0.25);
    let se_of = |size: usize, block: usize| {
        let e = run_ensemble(&plan, &noise, block, size, "mc").unwrap();
        let m = e.checkpoint_means();
        // average over observables at the final checkpoint
        let k = m.se[1].len();
        m.se[1].iter().map(|s| s[s.len() - 1]).sum::<f64>() / k as f64
    };
    let small = se_of(8, 0);
    let large = se_of(32, 1);
    let ratio = small / large;
    // √(32/8) = 2; the standard errors themselves are estimated from few samples
    assert!(ratio > 1.3 && ratio < 3.0, "ratio {ratio}");
}

#[test]
fn self_comparison_has_zero_weak_error() {
    let plan = small_plan();
    let params = vortexlab::limit::LimitParams::for_rule(plan.cfg.nu, plan.noise.kappa, &plan.noise.gamma_rule);
    let lim = limit_reference(&plan, &params, "limit").unwrap();
    let names: Vec<String> = (0..lim.means.mean[0].len()).map(|j| format!("phi{j}")).collect();
    let w = weak_error(&lim.means, &lim.means, 0.25, &names).unwrap();
    assert!(w.rows.iter().all(|r| r.error == 0.0));
    assert_eq!(w.field_distance, 0.0);
}

#[test]
fn seeds_reproduce_across_thread_counts() {
    let plan = small_plan();
    let noise = plan.noise_at(0.25);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&plan, &noise, 2, 5, "t").unwrap())
    };
    let a = run(1);
    let b = run(3);
    for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
        assert_eq!(x.obs_omega3, y.obs_omega3);
    }
    for (x, y) in a.mean_fields.iter().zip(&b.mean_fields) {
        assert_eq!(x[0].coefficients(), y[0].coefficients());
    }
}

#[test]
fn f32_path_tracks_f64() {
    let plan = small_plan();
    let noise = plan.noise_at(0.25);
    let a = run_ensemble(&plan, &noise, 0, 2, "f64").unwrap();
    let b = run_ensemble(
        &ExperimentPlan {
            precision: Precision::F32,
            ..plan.clone()
        },
        &noise,
        0,
        2,
        "f32",
    )
    .unwrap();
    let (x, y) = (&a.trajectories[0].v3_sq, &b.trajectories[0].v3_sq);
    for (p, q) in x.iter().zip(y) {
        assert!((p - q).abs() <= 1e-4 * p.abs(), "{p} vs {q}");
    }
}

#[test]
fn unstable_step_fails_the_entry() {
    // A step far beyond the stability bound; validation rejects the entry.
    let mut plan = small_plan();
    plan.cfg.dt = 0.01;
    plan.cfg.t_end = 0.2;
    assert!(run_ensemble(&plan, &plan.noise_at(0.25), 0, 2, "bad").is_err());
}

#[test]
fn plan_validation() {
    let mut p = small_plan();
    p.ensemble_size = 1;
    assert!(p.validate().is_err());
    let mut p = small_plan();
    p.ladder = vec![0.125, 0.25];
    assert!(p.validate().is_err());
    let mut p = small_plan();
    p.ladder = vec![0.125];
    assert!(p.validate().is_err(), "n·ℓ = 4 is under-resolved");
    let bad = json!({"ladder": [0.25], "unknown": 1});
    assert!(serde_json::from_value::<ExperimentPlan>(bad).is_err());
}

#[test]
fn empty_plan_gives_empty_report_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = commands::run(Command::Converge, Some(&json!({"ladder": []})), None, dir.path()).unwrap();
    assert!(o.pass());
    assert!(dir.path().join("manifest.json").exists());
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["results"]["entries"].as_array().unwrap().len(), 0);
    let r = commands::run(Command::Report, None, None, &dir.path().join("report")).unwrap();
    assert!(r.verdicts.is_empty() && r.pass());
}

#[test]
fn converge_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"ladder": [0.25], "ensemble_size": 3,
        "cfg": {"n": 32, "nu": 0.02, "dt": 5e-4, "t_end": 0.02, "record_every": 4},
        "checkpoints": 5, "diagnostics": {"martingales": true, "energy_residual": false},
        "companion_rule": {"rule": "subordinate", "p": 1.0}});
    let first = dir.path().join("a");
    let o = commands::run(Command::Converge, Some(&cfg), Some(11), &first).unwrap();
    assert!(o.files.iter().any(|f| f.ends_with("weak_error.csv")));
    let r = commands::replay(&first.join("manifest.json"), &dir.path().join("b")).unwrap();
    assert!(r.identical(), "{:?}", r.files);
    // a different seed changes the ensemble outputs
    let c = dir.path().join("c");
    commands::run(Command::Converge, Some(&cfg), Some(12), &c).unwrap();
    let a = std::fs::read(first.join("ensemble_means.csv")).unwrap();
    let b = std::fs::read(c.join("ensemble_means.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn report_aggregates_and_flags_missing_runs() {
    let dir = tempfile::tempdir().unwrap();
    commands::run(Command::Covariance, Some(&json!({"n": 32, "noise": {"ell": 0.25}, "uniqueness_q0": [0.5, 2.0]})), None, &dir.path().join("cov")).unwrap();
    std::fs::create_dir_all(dir.path().join("broken")).unwrap();
    let r = commands::run(Command::Report, None, None, dir.path()).unwrap();
    assert_eq!(r.verdicts.get("broken.present"), Some(&false));
    assert_eq!(r.verdicts.get("cov.uniqueness_matches_theory"), Some(&true));
    assert!(!r.pass());
}

#[test]
fn snapshot_round_trip() {
    let g = Grid::new(16).unwrap();
    let f = g.from_fn(|x, y| (2.0 * std::f64::consts::PI * x).sin() * (4.0 * std::f64::consts::PI * y).cos());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.snap");
    write_snapshot(&p, &f, "omega3", 0.5).unwrap();
    let (h, back) = read_snapshot(&p).unwrap();
    assert_eq!(h.n, 16);
    assert_eq!(h.time, 0.5);
    assert_eq!(back.coefficients(), f.coefficients());
}

#[test]
fn tables_are_plain_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Table::new(&["a", "b"]);
    t.push(vec!["1.0".into(), "x,y".into()]);
    let p = t.write(&dir.path().join("t.csv")).unwrap();
    assert_eq!(std::fs::read_to_string(p).unwrap(), "a,b\n1.0,\"x,y\"\n");
}

#[test]
fn martingale_estimates_respect_bounds() {
    let plan = ExperimentPlan {
        diagnostics: Diagnostics {
            martingales: true,
            energy_residual: false,
        },
        ..small_plan()
    };
    let e = run_ensemble(&plan, &plan.noise_at(0.25), 0, 4, "m").unwrap();
    let rows = martingale_variance(&e).unwrap();
    assert_eq!(rows.len(), 3 * e.obs_names.len());
    assert!(rows.iter().all(|r| r.estimate > 0.0 && r.pass));
    let plain = run_ensemble(&small_plan(), &plan.noise_at(0.25), 0, 2, "p").unwrap();
    assert!(martingale_variance(&plain).is_err());
}
