//! End-to-end acceptance run: one line per criterion, non-zero exit when an
//! enforced check fails. Criterion 7 is the long one (about 13 minutes on
//! 8 cores, a few hours on one).

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use vortexlab::covariance::CovarianceConstants;
use vortexlab::harness::commands::{self, Command, Outcome};
use vortexlab::noise::{NoiseSpec, SpectralNoise};
use vortexlab::spde::corrector_sum;
use vortexlab::{Field, Grid};

struct Line {
    pass: bool,
    detail: String,
    /// Sub-checks reported but not enforced, with their own verdict.
    reported: Vec<(String, bool)>,
}

fn verdicts(o: &Outcome, keys: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in keys {
        let v = o.verdicts.get(*k).copied().unwrap_or(false);
        ok &= v;
        parts.push(format!("{k}={}", if v { "ok" } else { "FAIL" }));
    }
    (ok, parts.join(" "))
}

fn run(cmd: Command, cfg: Value, out: &Path) -> Outcome {
    commands::run(cmd, Some(&cfg), None, out).unwrap_or_else(|e| panic!("{} failed: {e}", cmd.name()))
}

fn structure(out: &Path) -> Line {
    let o = run(
        Command::Covariance,
        json!({"n": 128, "noise": {"kappa": 0.25, "profile": {"r_theta": 0.35, "r_chi": 0.35}},
               "uniqueness_q0": []}),
        out,
    );
    let (pass, detail) = verdicts(
        &o,
        &[
            "q_h0_is_2kappa_identity",
            "block_parity",
            "transpose_parity",
            "rank_one_factorization",
        ],
    );
    Line {
        pass,
        detail,
        reported: vec![],
    }
}

fn corrector() -> Line {
    let g = Grid::new(128).unwrap();
    let sn = SpectralNoise::build(&NoiseSpec::default(), &g).unwrap();
    let m = CovarianceConstants::from_noise(&sn, &g).grad_qh3_0;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut v: Field = g.zeros();
        for idx in 0..g.spectral_len() {
            let (a, b) = g.wavevector(idx);
            if (a, b) != (0, 0) && a.abs() <= 8 && b <= 8 {
                let decay = (-((a * a + b * b) as f64) / 16.0).exp();
                v.coefficients_mut()[idx] =
                    num_complex::Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
            }
        }
        g.symmetrize(&mut v);
        let oh = g.gradient(&v, true);
        let mut mo = oh.clone();
        mo.u1.scale(m[0][0]);
        mo.u1.axpy(m[0][1], &oh.u2);
        mo.u2.scale(m[1][1]);
        mo.u2.axpy(m[1][0], &oh.u1);
        let want = g.inverse(&g.divergence(&mo));
        let got = corrector_sum(&g, &sn, &oh);
        let scale = want.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let err = got.iter().zip(&want).fold(0.0f64, |a, (x, y)| a.max((x + y).abs()));
        worst = worst.max(err / scale);
    }
    Line {
        pass: worst <= 1e-8,
        detail: format!("20 fields, worst relative error {worst:.2e} (tol 1e-8)"),
        reported: vec![],
    }
}

fn asymptotic_suite(out: &Path) -> Line {
    let o = run(Command::Asymptotics, json!({"decomposition_ell": null}), out);
    let (pass, detail) = verdicts(
        &o,
        &[
            "pair_off_diagonal_zero",
            "pair_ratio_to_1_over_4pi",
            "gamma_sq_log_to_8_pi_kappa",
            "annulus_bracketed",
        ],
    );
    Line {
        pass,
        detail,
        reported: vec![],
    }
}

fn limit_matrix(out: &Path) -> Line {
    let ladder: Vec<f64> = (3..=7).map(|p| 2f64.powi(-p)).collect();
    let o = run(
        Command::Covariance,
        json!({"n": 64, "noise": {"kappa": 0.25}, "ladder": ladder,
               "rules": [{"rule": "proportional", "q0": 1.0}, {"rule": "subordinate", "p": 1.0}],
               "uniqueness_q0": [-1.0, 0.0, 0.5, 1.0, 1.5]}),
        out,
    );
    let (pass, detail) = verdicts(
        &o,
        &[
            "subordinate_p_1.entries_vanish",
            "proportional_q0_1.diagonal_zero",
            "proportional_q0_1.antisymmetric",
            "proportional_q0_1.off_diagonal_near_2kappa_q0",
            "uniqueness_matches_theory",
        ],
    );
    Line {
        pass,
        detail,
        reported: vec![],
    }
}

fn energy(out: &Path) -> Line {
    let o = run(
        Command::Simulate,
        json!({"cfg": {"n": 64, "nu": 0.05, "dt": 1e-3, "t_end": 0.5, "record_every": 10},
               "noise": {"ell": 0.25, "kappa": 0.05},
               "ensemble_size": 32, "dt_halving": true}),
        out,
    );
    let (pass, mut detail) = verdicts(&o, &["residual_halves", "no_blow_up", "fourth_moment_cap", "energy_mean_balance"]);
    let ratio = o.summary["residual_ratio"].as_f64().unwrap_or(f64::NAN);
    let checks = o.summary["checks"].as_array().cloned().unwrap_or_default();
    let viol: Vec<String> = checks
        .iter()
        .map(|c| format!("{}/{}", c["pathwise_violations"], c["trajectories"]))
        .collect();
    detail.push_str(&format!(" residual_ratio={ratio:.3}"));
    let pathwise = o.verdicts.get("energy_pathwise").copied().unwrap_or(false);
    Line {
        pass,
        detail,
        reported: vec![(
            format!(
                "pathwise energy within 10*dt*t: trajectories over the allowance at dt, dt/2 = {}",
                viol.join(", ")
            ),
            pathwise,
        )],
    }
}

fn martingales(out: &Path) -> Line {
    let o = run(
        Command::Converge,
        json!({"ladder": [0.125, 0.0625, 0.03125], "ensemble_size": 8,
               "cfg": {"n": 256, "nu": 0.02, "t_end": 0.02, "record_every": 5},
               "noise": {"kappa": 0.25}, "checkpoints": 4, "auto_dt": true, "seed_root": 6,
               "diagnostics": {"martingales": true, "energy_residual": false},
               "weak_errors": false}),
        out,
    );
    let (pass, detail) = verdicts(&o, &["martingale_bounds", "martingale_decreasing", "ensembles_complete"]);
    Line {
        pass,
        detail,
        reported: vec![],
    }
}

fn convergence_plan() -> Value {
    json!({"ladder": [0.25, 0.125, 0.0625], "ensemble_size": 64,
           "cfg": {"n": 128, "nu": 0.02, "t_end": 1.0, "record_every": 20},
           "noise": {"kappa": 0.25, "gamma_rule": {"rule": "proportional", "q0": 1.0}},
           "checkpoints": 10, "auto_dt": true, "seed_root": 7,
           "companion_rule": {"rule": "subordinate", "p": 1.0}})
}

fn convergence(out: &Path) -> Line {
    let o = run(Command::Converge, convergence_plan(), out);
    let (pass, mut detail) = verdicts(&o, &["weak_error_monotone", "first_order_discrimination", "ensembles_complete"]);
    if let Some(d) = o.summary.get("discrimination").filter(|d| !d.is_null()) {
        detail.push_str(&format!(
            " q0=1: own {:.4} vs A=0 {:.4}; subordinate: own {:.4} vs A!=0 {:.4}",
            d["main_to_own"].as_f64().unwrap_or(f64::NAN),
            d["main_to_other"].as_f64().unwrap_or(f64::NAN),
            d["companion_to_own"].as_f64().unwrap_or(f64::NAN),
            d["companion_to_other"].as_f64().unwrap_or(f64::NAN),
        ));
    }
    Line {
        pass,
        detail,
        reported: vec![],
    }
}

fn determinism(root: &Path) -> Line {
    let small_converge = json!({"ladder": [0.25, 0.125], "ensemble_size": 6,
        "cfg": {"n": 64, "nu": 0.02, "t_end": 0.05, "record_every": 5},
        "noise": {"kappa": 0.25}, "checkpoints": 5, "auto_dt": true, "seed_root": 8,
        "diagnostics": {"martingales": true, "energy_residual": true},
        "companion_rule": {"rule": "subordinate", "p": 1.0}});
    let fresh = [
        ("covariance", Command::Covariance, json!({"n": 32, "noise": {"ell": 0.25}, "tables": true, "ladder": [0.25, 0.125, 0.0625], "ladder_min_n": 32})),
        ("simulate", Command::Simulate, json!({"cfg": {"n": 32, "dt": 5e-4, "t_end": 0.02, "record_every": 4},
            "noise": {"ell": 0.25}, "ensemble_size": 5, "dt_halving": true})),
        ("limit", Command::Limit, json!({"n": 32, "dt": 1e-3, "t_end": 0.05})),
        ("converge", Command::Converge, small_converge),
    ];
    let mut dirs: Vec<std::path::PathBuf> = Vec::new();
    for (name, cmd, cfg) in fresh {
        let d = root.join(name);
        run(cmd, cfg, &d);
        dirs.push(d);
    }
    // the long runs of the other criteria, when present
    for name in ["c1", "c3", "c4", "c5", "c6"] {
        let d = root.join(name);
        if d.join("manifest.json").exists() {
            dirs.push(d);
        }
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        // alternate thread counts so that replays also cross pool sizes
        let threads = 1 + (i % 3);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let target = root.join("replay").join(d.file_name().unwrap());
        let r = pool
            .install(|| commands::replay(&d.join("manifest.json"), &target))
            .unwrap_or_else(|e| panic!("replay of {} failed: {e}", d.display()));
        for (f, same) in &r.files {
            compared += 1;
            if !same {
                differing.push(format!("{}/{f}", d.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    Line {
        pass: differing.is_empty() && compared > 0,
        detail: format!(
            "{compared} CSV files replayed from {} manifests, differing: [{}]",
            dirs.len(),
            differing.join(", ")
        ),
        reported: vec![],
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // `cargo test` passes filters and flags; honour a plain name filter
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| a == "--list") {
        for i in 1..=8 {
            println!("criterion_{i}: test");
        }
        return ExitCode::SUCCESS;
    }
    // ACCEPTANCE_OUT keeps the run directories for inspection
    let dir = tempfile::tempdir().expect("temporary directory");
    let kept = std::env::var_os("ACCEPTANCE_OUT").map(std::path::PathBuf::from);
    let root = kept.as_deref().unwrap_or(dir.path());
    type Crit<'a> = (usize, &'a str, f64, Box<dyn Fn() -> Line + 'a>);
    let criteria: Vec<Crit> = vec![
        (1, "covariance structure", 10.0, Box::new(|| structure(&root.join("c1")))),
        (2, "corrector identity", 10.0, Box::new(corrector)),
        (3, "asymptotics", 120.0, Box::new(|| asymptotic_suite(&root.join("c3")))),
        (4, "limit matrix", 120.0, Box::new(|| limit_matrix(&root.join("c4")))),
        (5, "SPDE energy", 300.0, Box::new(|| energy(&root.join("c5")))),
        (6, "martingale decay", 600.0, Box::new(|| martingales(&root.join("c6")))),
        (7, "convergence to the limit", 1800.0, Box::new(|| convergence(&root.join("c7")))),
        (8, "determinism", f64::INFINITY, Box::new(|| determinism(root))),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, name, budget, f) in &criteria {
        let id = format!("criterion_{i}");
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let line = f();
        let secs = start.elapsed().as_secs_f64();
        let budget = if budget.is_finite() {
            format!(", budget {budget:.0} s")
        } else {
            String::new()
        };
        println!(
            "criterion {i} ({name}): {} [{secs:.1} s{budget}] {}",
            if line.pass { "PASS" } else { "FAIL" },
            line.detail
        );
        for (what, ok) in &line.reported {
            println!(
                "criterion {i} sub-check, reported only: {} {what}",
                if *ok { "PASS" } else { "FAIL" }
            );
        }
        if !line.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} criteria run, {failed} failed", ran);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
