//! Subcommand implementations shared by the binary and the tests. Each
//! command reads a JSON config, writes CSV tables plus `summary.json` and
//! `manifest.json` into the output directory, and returns its verdicts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::analysis::{empirical_slopes, energy_check};
use super::ensemble::{run_ensemble, TrajectorySeed};
use super::io::{num, sha256_bytes, sha256_file, write_json, write_snapshot, Table};
use super::plan::{ExperimentPlan, Precision};
use super::study::converge;
use crate::asymptotics::*;
use crate::covariance::{hypothesis_report, CovarianceTables};
use crate::error::{Error, Result};
use crate::limit::{limit_stability_bound, uniqueness_condition, LimitParams, LimitSolver};
use crate::noise::{GammaRule, NoiseSpec, ProfileSpec, SpectralNoise};
use crate::observables::{default_kinds, ObservableKind, ObservableSet};
use crate::profile::Bump;
use crate::spde::{Diagnostics, FreshGaussians, InitialCondition, SolverConfig, SpdeSolver, State, TrajectoryStats};
use crate::spectral::FourierGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Covariance,
    Asymptotics,
    Simulate,
    Limit,
    Converge,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Covariance => "covariance",
            Command::Asymptotics => "asymptotics",
            Command::Simulate => "simulate",
            Command::Limit => "limit",
            Command::Converge => "converge",
            Command::Report => "report",
        }
    }
}

/// Verdicts and written files of one command.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub verdicts: BTreeMap<String, bool>,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }
}

/// Everything needed to re-run a command bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    /// Fully resolved configuration, overrides applied.
    pub config: Value,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_digest: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    /// Streams of all trajectories, grouped by ensemble.
    pub trajectories: Vec<Value>,
    /// Files written by the run with their digests.
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

fn parse<C: for<'de> Deserialize<'de> + Default>(config: Option<&Value>) -> Result<C> {
    match config {
        None => Ok(C::default()),
        Some(v) => Ok(serde_json::from_value(v.clone())?),
    }
}

/// Runs `cmd` with an optional JSON config and seed override, writing into `out`.
pub fn run(cmd: Command, config: Option<&Value>, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut streams = Vec::new();
    let (resolved, mut outcome) = match cmd {
        Command::Covariance => {
            let c: CovarianceConfig = parse(config)?;
            let o = covariance(&c, out)?;
            (serde_json::to_value(&c)?, o)
        }
        Command::Asymptotics => {
            let c: AsymptoticsConfig = parse(config)?;
            let o = asymptotics(&c, out)?;
            (serde_json::to_value(&c)?, o)
        }
        Command::Simulate => {
            let mut c: SimulateConfig = parse(config)?;
            if let Some(s) = seed {
                c.cfg.seed = s;
            }
            let o = simulate(&c, out, &mut streams)?;
            (serde_json::to_value(&c)?, o)
        }
        Command::Limit => {
            let c: LimitConfig = parse(config)?;
            let o = limit(&c, out)?;
            (serde_json::to_value(&c)?, o)
        }
        Command::Converge => {
            let mut c: ExperimentPlan = parse(config)?;
            if let Some(s) = seed {
                c.seed_root = s;
            }
            let o = converge_cmd(&c, out, &mut streams)?;
            (serde_json::to_value(&c)?, o)
        }
        Command::Report => {
            let c: ReportConfig = parse(config)?;
            let o = report(&c, out)?;
            (serde_json::to_value(&c)?, o)
        }
    };
    let summary = json!({
        "command": cmd.name(),
        "pass": outcome.pass(),
        "verdicts": outcome.verdicts,
        "results": outcome.summary,
    });
    outcome.files.push(write_json(&out.join("summary.json"), &summary)?);
    let mut files = Vec::new();
    for f in &outcome.files {
        files.push(FileEntry {
            name: f
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            bytes: fs::metadata(f)?.len(),
            sha256: sha256_file(f)?,
        });
    }
    let manifest = RunManifest {
        command: cmd,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: sha256_bytes(serde_json::to_string(&resolved)?.as_bytes()),
        config: resolved,
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        trajectories: streams,
        files,
    };
    let m = write_json(&out.join("manifest.json"), &manifest)?;
    outcome.files.push(m);
    Ok(outcome)
}

/// Outcome of re-running a manifest: per CSV file, whether the bytes match.
#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    pub files: Vec<(String, bool)>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        !self.files.is_empty() && self.files.iter().all(|f| f.1)
    }
}

/// Re-executes the run recorded in `manifest` into `out` and compares the
/// digests of every CSV file.
pub fn replay(manifest: &Path, out: &Path) -> Result<ReplayReport> {
    let m: RunManifest = serde_json::from_slice(&fs::read(manifest)?)?;
    run(m.command, Some(&m.config), None, out)?;
    let mut files = Vec::new();
    for f in m.files.iter().filter(|f| f.name.ends_with(".csv")) {
        let p = out.join(&f.name);
        let same = p.exists() && sha256_file(&p)? == f.sha256;
        files.push((f.name.clone(), same));
    }
    Ok(ReplayReport { files })
}

// ---------------------------------------------------------------- covariance

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub noise: NoiseSpec,
    pub n: usize,
    /// Write the 9 tabulated blocks on the grid.
    pub tables: bool,
    /// Scales for the hypothesis report; empty to skip.
    pub ladder: Vec<f64>,
    /// Rules evaluated along the ladder.
    pub rules: Vec<GammaRule>,
    /// Smallest lattice used for a ladder entry; grows to keep `nℓ >= 16`.
    pub ladder_min_n: usize,
    /// Values of `q0` for the uniqueness condition with `Q̄ = 2κI`.
    pub uniqueness_q0: Vec<f64>,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            noise: NoiseSpec::default(),
            n: 128,
            tables: false,
            ladder: Vec::new(),
            rules: vec![
                GammaRule::Proportional { q0: 1.0 },
                GammaRule::Subordinate { p: 1.0 },
            ],
            ladder_min_n: 64,
            uniqueness_q0: vec![-1.0, 0.0, 0.5, 1.0, 1.5],
        }
    }
}

fn mat_json(m: &[[f64; 2]; 2]) -> Value {
    json!([[m[0][0], m[0][1]], [m[1][0], m[1][1]]])
}

pub fn covariance(c: &CovarianceConfig, out: &Path) -> Result<Outcome> {
    let mut o = Outcome::default();
    let grid = FourierGrid::<f64>::new(c.n)?;
    let sn = SpectralNoise::build(&c.noise, &grid)?;
    let t = CovarianceTables::compute(&sn, &grid);
    let k = &t.constants;
    let two_kappa = 2.0 * c.noise.kappa;
    let q_dev = (k.q_h0[0][0] - two_kappa)
        .abs()
        .max((k.q_h0[1][1] - two_kappa).abs())
        .max(k.q_h0[0][1].abs())
        .max(k.q_h0[1][0].abs());
    let parity = t.block_parity_defect();
    let transpose = t.transpose_parity_defect();
    let rank_one = t.factorization_defect(&sn, &grid);
    o.verdicts.insert("q_h0_is_2kappa_identity".into(), q_dev <= 1e-8);
    o.verdicts.insert("block_parity".into(), parity <= 1e-10);
    o.verdicts.insert("transpose_parity".into(), transpose <= 1e-10);
    o.verdicts.insert("rank_one_factorization".into(), rank_one <= 1e-10);
    let mut summary = json!({
        "gamma": sn.gamma,
        "gamma3": sn.gamma3,
        "q_h0": mat_json(&k.q_h0),
        "grad_qh3_0": mat_json(&k.grad_qh3_0),
        "hess_q3_0": mat_json(&k.hess_q3_0),
        "opnorm_qh": k.opnorm_qh,
        "opnorm_q3": k.opnorm_q3,
        "q_h0_deviation": q_dev,
        "block_parity_defect": parity,
        "transpose_parity_defect": transpose,
        "factorization_defect": rank_one,
    });
    if c.tables {
        let mut tab = Table::new(&[
            "x1", "x2", "q11", "q12", "q13", "q21", "q22", "q23", "q31", "q32", "q33",
        ]);
        for j1 in 0..c.n {
            for j2 in 0..c.n {
                let q = t.at(j1, j2);
                let mut row = vec![num(grid.coordinate(j1)), num(grid.coordinate(j2))];
                row.extend(q.iter().flatten().map(|&x| num(x)));
                tab.push(row);
            }
        }
        o.files.push(tab.write(&out.join("covariance_tables.csv"))?);
    }
    if !c.ladder.is_empty() {
        let mut tab = Table::new(&[
            "rule", "ell", "n", "gamma", "gamma3", "q_h0_11", "q_h0_22", "opnorm_qh", "opnorm_q3", "a11",
            "a12", "a21", "a22", "hess_q3_norm",
        ]);
        let n_for = |ell: f64| {
            let want = (16.0 / ell).max(c.ladder_min_n as f64);
            want.log2().ceil().exp2() as usize
        };
        let mut rules = Vec::new();
        for rule in &c.rules {
            let specs: Vec<NoiseSpec> = c
                .ladder
                .iter()
                .map(|&ell| NoiseSpec {
                    ell,
                    gamma_rule: *rule,
                    ..c.noise.clone()
                })
                .collect();
            let rep = hypothesis_report(&specs, n_for)?;
            let name = serde_json::to_value(rule)?;
            for r in &rep.rows {
                let a = r.grad_qh3_0;
                tab.push(vec![
                    rule_name(rule),
                    num(r.ell),
                    n_for(r.ell).to_string(),
                    num(r.gamma),
                    num(r.gamma3),
                    num(r.q_h0[0][0]),
                    num(r.q_h0[1][1]),
                    num(r.opnorm_qh),
                    num(r.opnorm_q3),
                    num(a[0][0]),
                    num(a[0][1]),
                    num(a[1][0]),
                    num(a[1][1]),
                    num(r.hess_q3_norm),
                ]);
            }
            let v = &rep.verdicts;
            let tag = rule_name(rule);
            o.verdicts.insert(format!("{tag}.a_limit_covariance"), v.a_limit_covariance);
            o.verdicts.insert(format!("{tag}.b_vanishing_opnorms"), v.b_vanishing_opnorms);
            o.verdicts.insert(format!("{tag}.c_limit_matrix"), v.c_limit_matrix);
            o.verdicts.insert(format!("{tag}.d_bounded_hessian"), v.d_bounded_hessian);
            let last = rep.rows.last().expect("ladder has entries");
            let lm = last.grad_qh3_0;
            let scale = lm[0][1].abs().max(lm[1][0].abs());
            match rule {
                GammaRule::Proportional { q0 } => {
                    let target = 2.0 * c.noise.kappa * q0;
                    let diag = rep.rows.iter().all(|r| {
                        let m = r.grad_qh3_0;
                        m[0][0].abs().max(m[1][1].abs()) <= 1e-8 * (1.0 + m[1][0].abs())
                    });
                    let anti = rep.rows.iter().all(|r| {
                        let m = r.grad_qh3_0;
                        (m[0][1] + m[1][0]).abs() <= 1e-8 * (1.0 + m[1][0].abs())
                    });
                    let close = (lm[1][0] - target).abs() <= 0.25 * target.abs()
                        && (lm[0][1] + target).abs() <= 0.25 * target.abs();
                    o.verdicts.insert(format!("{tag}.diagonal_zero"), diag);
                    o.verdicts.insert(format!("{tag}.antisymmetric"), anti);
                    o.verdicts.insert(format!("{tag}.off_diagonal_near_2kappa_q0"), close);
                }
                GammaRule::Subordinate { .. } => {
                    let norms: Vec<f64> = rep
                        .rows
                        .iter()
                        .map(|r| r.grad_qh3_0.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())))
                        .collect();
                    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);
                    o.verdicts.insert(format!("{tag}.entries_vanish"), decreasing);
                }
            }
            rules.push(json!({
                "rule": name,
                "predicted_limit": mat_json(&rep.predicted_limit),
                "verdicts": rep.verdicts,
                "smallest_scale_max_entry": scale,
            }));
        }
        o.files.push(tab.write(&out.join("hypothesis.csv"))?);
        summary["ladder"] = Value::Array(rules);
    }
    if !c.uniqueness_q0.is_empty() {
        let mut tab = Table::new(&["q0", "min_eigenvalue", "pass", "expected"]);
        let mut agree = true;
        for &q0 in &c.uniqueness_q0 {
            let p = LimitParams::for_rule(1.0, c.noise.kappa, &GammaRule::Proportional { q0 });
            let u = uniqueness_condition(&p);
            let expected = q0.abs() <= 1.0;
            agree &= u.pass == expected;
            tab.push(vec![num(q0), num(u.min_eigenvalue), u.pass.to_string(), expected.to_string()]);
        }
        o.verdicts.insert("uniqueness_matches_theory".into(), agree);
        o.files.push(tab.write(&out.join("uniqueness.csv"))?);
    }
    o.summary = summary;
    Ok(o)
}

fn rule_name(r: &GammaRule) -> String {
    match r {
        GammaRule::Proportional { q0 } => format!("proportional_q0_{q0}"),
        GammaRule::Subordinate { p } => format!("subordinate_p_{p}"),
    }
}

// --------------------------------------------------------------- asymptotics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticsConfig {
    pub profile: ProfileSpec,
    pub kappa: f64,
    /// Strictly decreasing scales for the pair integrals.
    pub ladder: Vec<f64>,
    /// Relative tolerance at the smallest scale.
    pub tolerance: f64,
    pub annulus_r: f64,
    pub annulus_ell: f64,
    pub annulus_ladder: Vec<f64>,
    pub farfield_radius: f64,
    pub farfield_center: [f64; 2],
    pub farfield_radii: Vec<f64>,
    pub farfield_samples: usize,
    /// Scale of the four-term decomposition check; skipped when absent.
    pub decomposition_ell: Option<f64>,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        Self {
            profile: ProfileSpec::default(),
            kappa: 0.25,
            ladder: (3..=7).map(|p| 2f64.powi(-p)).collect(),
            tolerance: 0.2,
            annulus_r: 1.0,
            annulus_ell: 2f64.powi(-10),
            annulus_ladder: (6..=12).map(|p| 2f64.powi(-p)).collect(),
            farfield_radius: 0.25,
            farfield_center: [0.07, -0.03],
            farfield_radii: vec![1.0, 2.0, 4.0],
            farfield_samples: 64,
            decomposition_ell: Some(2f64.powi(-4)),
        }
    }
}

pub fn asymptotics(c: &AsymptoticsConfig, out: &Path) -> Result<Outcome> {
    if c.ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("ladder must be strictly decreasing".into()));
    }
    let mut o = Outcome::default();
    let profile = c.profile.build()?;
    let mut tab = Table::new(&["ell", "i", "j", "value", "ratio", "target", "verdict"]);
    let mats: Vec<[[f64; 2]; 2]> = {
        use rayon::prelude::*;
        c.ladder
            .par_iter()
            .map(|&ell| pair_matrix(&profile.theta, &profile.chi, ell, lattice_for(ell)))
            .collect::<Result<_>>()?
    };
    let mut off_ok = true;
    let mut gaps = Vec::new();
    for (&ell, m) in c.ladder.iter().zip(&mats) {
        let l = (1.0 / ell).ln();
        let off = m[0][1].abs() <= 1e-8 * m[0][0].abs();
        off_ok &= off;
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let v = m[i][j];
            let target = if i == j { PAIR_LIMIT } else { 0.0 };
            let verdict = if i == j {
                ((v / l) - PAIR_LIMIT).abs() <= c.tolerance * PAIR_LIMIT
            } else {
                off
            };
            tab.push(vec![
                num(ell),
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(v),
                num(v / l),
                num(target),
                verdict.to_string(),
            ]);
        }
        gaps.push((m[0][0] / l - PAIR_LIMIT).abs());
    }
    o.verdicts.insert("pair_off_diagonal_zero".into(), off_ok);
    if let Some(&g) = gaps.last() {
        let mono = gaps.windows(2).all(|w| w[1] < w[0]);
        o.verdicts.insert(
            "pair_ratio_to_1_over_4pi".into(),
            mono && g <= c.tolerance * PAIR_LIMIT,
        );
    }
    o.files.push(tab.write(&out.join("pair_integrals.csv"))?);

    // Γ² log ℓ⁻¹ from the θ-θ pairs
    let mut gl = Table::new(&["ell", "gamma_sq_log", "target", "verdict"]);
    let rows = gamma_log_ladder(&profile, c.kappa, &c.ladder)?;
    let gaps: Vec<f64> = rows.iter().map(|r| (r.gamma_sq_log - r.target).abs()).collect();
    for (r, g) in rows.iter().zip(&gaps) {
        gl.push(vec![
            num(r.ell),
            num(r.gamma_sq_log),
            num(r.target),
            (*g <= c.tolerance * r.target).to_string(),
        ]);
    }
    if let Some(&g) = gaps.last() {
        let mono = gaps.windows(2).all(|w| w[1] < w[0]);
        o.verdicts.insert(
            "gamma_sq_log_to_8_pi_kappa".into(),
            mono && g <= c.tolerance * rows.last().expect("nonempty").target,
        );
    }
    o.files.push(gl.write(&out.join("gamma_log.csv"))?);

    // annulus integral and bracketing
    let mut an = Table::new(&["r", "ell", "i", "integral", "normalized", "lower", "upper", "verdict"]);
    let main = [
        annulus_integral(c.annulus_r, c.annulus_ell, 0)?,
        annulus_integral(c.annulus_r, c.annulus_ell, 1)?,
    ];
    let ladder: Vec<AnnulusResult> = c
        .annulus_ladder
        .iter()
        .map(|&l| annulus_integral(c.annulus_r, l, 0))
        .collect::<Result<_>>()?;
    for a in main.iter().chain(&ladder) {
        an.push(vec![
            num(a.r),
            num(a.ell),
            (a.i + 1).to_string(),
            num(a.integral),
            num(a.normalized),
            num(a.lower),
            num(a.upper),
            a.bracketed.to_string(),
        ]);
    }
    o.verdicts.insert(
        "annulus_bracketed".into(),
        main.iter().all(|a| a.bracketed),
    );
    o.verdicts.insert(
        "annulus_swap_symmetry".into(),
        (main[0].integral - main[1].integral).abs() <= 1e-10,
    );
    o.verdicts.insert(
        "annulus_ladder_monotone".into(),
        ladder.windows(2).all(|w| w[1].normalized > w[0].normalized && w[1].normalized < PAIR_LIMIT),
    );
    o.files.push(an.write(&out.join("annulus.csv"))?);

    // far field of an off-centre bump
    let psi = PlanarBump {
        bump: Bump::new(c.farfield_radius)?,
        center: c.farfield_center,
        mirrored: false,
    };
    let ff = farfield_error(&psi, &c.farfield_radii, c.farfield_samples)?;
    let mut ft = Table::new(&["radius", "scaled_error", "bound", "verdict"]);
    for r in &ff {
        ft.push(vec![
            num(r.radius),
            num(r.scaled_error),
            num(r.bound),
            (r.scaled_error <= r.bound).to_string(),
        ]);
    }
    o.verdicts.insert(
        "farfield_bounded".into(),
        ff.iter().all(|r| r.scaled_error <= r.bound)
            && ff
                .windows(2)
                .all(|w| w[1].scaled_error <= w[0].scaled_error * (1.0 + 1e-9)),
    );
    o.files.push(ft.write(&out.join("farfield.csv"))?);

    let mut summary = json!({ "pair_limit": PAIR_LIMIT });
    if let Some(ell) = c.decomposition_ell {
        let spec = pair_matrix(&profile.theta, &profile.chi, ell, lattice_for(ell).max(2048))?;
        let mut dt = Table::new(&[
            "ell", "i", "j", "main", "mixed_left", "mixed_right", "regular", "total", "spectral", "verdict",
        ]);
        let mut ok = true;
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let d = decompose_pair(&profile.theta, &profile.chi, ell, i, j);
            let pass = (d.total() - spec[i][j]).abs() <= 1e-5 * spec[0][0].abs();
            ok &= pass;
            dt.push(vec![
                num(ell),
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(d.main),
                num(d.mixed_left),
                num(d.mixed_right),
                num(d.regular),
                num(d.total()),
                num(spec[i][j]),
                pass.to_string(),
            ]);
        }
        o.verdicts.insert("four_term_decomposition".into(), ok);
        o.files.push(dt.write(&out.join("decomposition.csv"))?);
        summary["decomposition_ell"] = json!(ell);
    }
    o.summary = summary;
    Ok(o)
}

// ------------------------------------------------------------------ simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub cfg: SolverConfig,
    pub noise: NoiseSpec,
    pub init: InitialCondition,
    pub observables: Vec<ObservableKind>,
    pub diagnostics: Diagnostics,
    /// One trajectory writes its time series; more run an ensemble.
    pub ensemble_size: usize,
    /// Also run the ensemble at `dt/2` and compare the energy residuals.
    pub dt_halving: bool,
    /// Write the final state as binary snapshots.
    pub snapshots: bool,
    pub precision: Precision,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            cfg: SolverConfig::default(),
            noise: NoiseSpec::default(),
            init: InitialCondition::Default,
            observables: default_kinds(),
            diagnostics: Diagnostics::default(),
            ensemble_size: 1,
            dt_halving: false,
            snapshots: false,
            precision: Precision::F64,
        }
    }
}

impl SimulateConfig {
    fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            ladder: vec![self.noise.ell],
            ensemble_size: self.ensemble_size,
            cfg: self.cfg.clone(),
            noise: self.noise.clone(),
            observables: self.observables.clone(),
            seed_root: self.cfg.seed,
            init: self.init.clone(),
            auto_dt: false,
            checkpoints: 1,
            diagnostics: Diagnostics {
                energy_residual: self.diagnostics.energy_residual || self.dt_halving,
                ..self.diagnostics
            },
            precision: self.precision,
            max_failure_fraction: 0.0,
            companion_rule: None,
            weak_errors: false,
            limit_dt: None,
        }
    }
}

fn stats_table(st: &TrajectoryStats, names: &[String]) -> Table {
    let mut header: Vec<String> = [
        "time",
        "v3_sq",
        "omega3_sq",
        "grad_v3_sq",
        "grad_omega3_sq",
        "omega3_quartic",
        "dissipation",
        "energy_residual",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for n in names {
        header.push(format!("omega3[{n}]"));
        header.push(format!("v3[{n}]"));
    }
    let with_qv = st.qv_rate[0].first().map(|r| !r.is_empty()).unwrap_or(false);
    if with_qv {
        for n in names {
            for m in 1..=3 {
                header.push(format!("qv{m}[{n}]"));
            }
        }
    }
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&refs);
    for i in 0..st.len() {
        let mut row = vec![
            num(st.time[i]),
            num(st.v3_sq[i]),
            num(st.omega3_sq[i]),
            num(st.grad_v3_sq[i]),
            num(st.grad_omega3_sq[i]),
            num(st.omega3_quartic[i]),
            num(st.dissipation[i]),
            num(st.energy_residual.get(i).copied().unwrap_or(0.0)),
        ];
        for j in 0..names.len() {
            row.push(num(st.obs_omega3[j][i]));
            row.push(num(st.obs_v3[j][i]));
        }
        if with_qv {
            for j in 0..names.len() {
                for m in 0..3 {
                    row.push(num(st.qv_rate[m][j][i]));
                }
            }
        }
        t.push(row);
    }
    t
}

/// Trajectory `i` of a group draws from `ChaCha20(seed_root)` on stream
/// `seeds[i].stream`.
fn seeds_json(label: &str, ell: f64, block: usize, seed_root: u64, seeds: &[TrajectorySeed]) -> Value {
    json!({ "label": label, "ell": ell, "block": block, "seed_root": seed_root, "seeds": seeds })
}

pub fn simulate(c: &SimulateConfig, out: &Path, streams: &mut Vec<Value>) -> Result<Outcome> {
    let mut o = Outcome::default();
    if c.ensemble_size <= 1 {
        let grid = FourierGrid::<f64>::new(c.cfg.n)?;
        let sn = SpectralNoise::build(&c.noise, &grid)?;
        let consts = crate::covariance::CovarianceConstants::from_noise(&sn, &grid);
        let obs = ObservableSet::new(&grid, &c.observables);
        let init: State<f64> = c.init.build(&grid)?;
        let mut solver = SpdeSolver::from_config(&grid, &sn, &consts, &c.cfg, &init)?;
        let mut rng = ChaCha20Rng::seed_from_u64(c.cfg.seed);
        let mut source = FreshGaussians { rng: &mut rng };
        streams.push(json!({ "label": "single", "seed": c.cfg.seed, "stream": 0 }));
        let (fin, st) = solver.run_trajectory(
            &init,
            c.cfg.steps(),
            c.cfg.record_every,
            &obs,
            c.diagnostics,
            &mut source,
        )?;
        o.files.push(stats_table(&st, &obs.names()).write(&out.join("timeseries.csv"))?);
        if c.snapshots {
            o.files.push(write_snapshot(&out.join("omega3.snap"), &fin.omega3, "omega3", fin.t)?);
            o.files.push(write_snapshot(&out.join("v3.snap"), &fin.v3, "v3", fin.t)?);
        }
        let (worst, ok) = st.energy_excess(c.cfg.dt);
        o.verdicts.insert("energy_pathwise".into(), ok);
        o.summary = json!({ "worst_energy_excess": worst, "steps": c.cfg.steps() });
        return Ok(o);
    }
    let plan = c.plan();
    plan.validate()?;
    let e = run_ensemble(&plan, &c.noise, 0, c.ensemble_size, "dt")?;
    streams.push(seeds_json("dt", c.noise.ell, 0, c.cfg.seed, &e.seeds));
    let check = energy_check(&e, c.cfg.fourth_moment_cap);
    let mut tab = Table::new(&["time", "mean_v3_sq", "mean_dissipation", "mean_omega3_quartic", "mean_energy_residual"]);
    let v2 = e.mean_series(|t| &t.v3_sq);
    let ds = e.mean_series(|t| &t.dissipation);
    let q4 = e.mean_series(|t| &t.omega3_quartic);
    let rs = e.mean_series(|t| &t.energy_residual);
    for (i, t) in e.time().iter().enumerate() {
        tab.push(vec![num(*t), num(v2[i]), num(ds[i]), num(q4[i]), num(rs[i])]);
    }
    o.files.push(tab.write(&out.join("ensemble_energy.csv"))?);
    let mut checks = vec![check];
    let mut summary = json!({});
    if c.dt_halving {
        let fine = ExperimentPlan {
            cfg: SolverConfig {
                dt: c.cfg.dt / 2.0,
                record_every: 2 * c.cfg.record_every,
                ..c.cfg.clone()
            },
            ..plan.clone()
        };
        let f = run_ensemble(&fine, &c.noise, 1, c.ensemble_size, "dt/2")?;
        streams.push(seeds_json("dt/2", c.noise.ell, 1, c.cfg.seed, &f.seeds));
        let fc = energy_check(&f, c.cfg.fourth_moment_cap);
        let ratio = fc.residual / checks[0].residual;
        o.verdicts.insert("residual_halves".into(), (ratio - 0.5).abs() <= 0.15);
        summary["residual_ratio"] = json!(ratio);
        checks.push(fc);
    }
    let mut et = Table::new(&[
        "label",
        "dt",
        "trajectories",
        "failed",
        "pathwise_violations",
        "worst_pathwise_excess",
        "mean_excess",
        "fourth_moment_ratio",
        "residual",
        "residual_se",
    ]);
    for k in &checks {
        et.push(vec![
            k.label.clone(),
            num(k.dt),
            k.trajectories.to_string(),
            k.failed.to_string(),
            k.pathwise_violations.to_string(),
            num(k.worst_pathwise_excess),
            num(k.mean_excess),
            num(k.fourth_moment_ratio),
            num(k.residual),
            num(k.residual_se),
        ]);
    }
    o.files.push(et.write(&out.join("energy_checks.csv"))?);
    o.verdicts.insert("energy_pathwise".into(), checks.iter().all(|k| k.pathwise_ok()));
    o.verdicts.insert("energy_mean_balance".into(), checks.iter().all(|k| k.mean_ok));
    o.verdicts.insert("no_blow_up".into(), checks.iter().all(|k| k.failed == 0));
    o.verdicts.insert("fourth_moment_cap".into(), checks.iter().all(|k| k.fourth_moment_ok()));
    summary["checks"] = serde_json::to_value(&checks)?;
    o.summary = summary;
    Ok(o)
}

// --------------------------------------------------------------------- limit

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    /// Explicit coefficients; derived from `kappa` and `rule` when absent.
    pub params: Option<LimitParams>,
    pub nu: f64,
    pub kappa: f64,
    pub rule: GammaRule,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub init: InitialCondition,
    pub observables: Vec<ObservableKind>,
    pub snapshots: bool,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            params: None,
            nu: 0.02,
            kappa: 0.25,
            rule: GammaRule::default(),
            n: 64,
            dt: 1e-3,
            t_end: 1.0,
            record_every: 10,
            init: InitialCondition::Default,
            observables: default_kinds(),
            snapshots: false,
        }
    }
}

pub fn limit(c: &LimitConfig, out: &Path) -> Result<Outcome> {
    let mut o = Outcome::default();
    let params = c
        .params
        .clone()
        .unwrap_or_else(|| LimitParams::for_rule(c.nu, c.kappa, &c.rule));
    params.validate()?;
    if !(c.dt > 0.0 && c.t_end > 0.0) {
        return Err(Error::Config("dt and t_end must be positive".into()));
    }
    let grid = FourierGrid::<f64>::new(c.n)?;
    let obs = ObservableSet::new(&grid, &c.observables);
    let init: State<f64> = c.init.build(&grid)?;
    let steps = (c.t_end / c.dt).round() as usize;
    let solver = LimitSolver::new(&grid, params.clone())?;
    let (fin, st) = solver.run_limit(&init, c.dt, steps, c.record_every, &obs)?;
    o.files.push(stats_table(&st, &obs.names()).write(&out.join("limit_timeseries.csv"))?);
    if c.snapshots {
        o.files.push(write_snapshot(&out.join("limit_omega3.snap"), &fin.omega3, "omega3", fin.t)?);
        o.files.push(write_snapshot(&out.join("limit_v3.snap"), &fin.v3, "v3", fin.t)?);
    }
    let e0 = st.v3_sq[0];
    let energy = (0..st.len()).all(|i| st.v3_sq[i] + st.dissipation[i] <= e0 * (1.0 + 1e-10));
    let u = uniqueness_condition(&params);
    o.verdicts.insert("energy_inequality".into(), energy);
    o.verdicts.insert("uniqueness_condition".into(), u.pass);
    o.summary = json!({
        "params": params,
        "min_uniqueness_eigenvalue": u.min_eigenvalue,
        "stability_bound": limit_stability_bound(&grid, &init),
        "steps": steps,
    });
    Ok(o)
}

// ------------------------------------------------------------------ converge

pub fn converge_cmd(plan: &ExperimentPlan, out: &Path, streams: &mut Vec<Value>) -> Result<Outcome> {
    let mut o = Outcome::default();
    let r = converge(plan, &mut |msg| eprintln!("[converge] {msg}"))?;
    for e in r.ensembles.iter().chain(r.companion.as_ref()) {
        streams.push(seeds_json(&e.label, e.ell(), e.block, plan.seed_root, &e.seeds));
    }
    let mut means = Table::new(&["label", "ell", "observable", "field", "time", "mean", "se"]);
    for e in r.ensembles.iter().chain(r.companion.as_ref()) {
        let m = e.checkpoint_means();
        for (f, field) in ["omega3", "v3"].iter().enumerate() {
            for (j, name) in e.obs_names.iter().enumerate() {
                for (c, t) in m.time.iter().enumerate() {
                    means.push(vec![
                        e.label.clone(),
                        num(e.ell()),
                        name.clone(),
                        field.to_string(),
                        num(*t),
                        num(m.mean[f][j][c]),
                        num(m.se[f][j][c]),
                    ]);
                }
            }
        }
    }
    o.files.push(means.write(&out.join("ensemble_means.csv"))?);
    let mut wt = Table::new(&[
        "label", "reference", "ell", "observable", "field", "time", "ensemble_mean", "se", "limit", "error",
    ]);
    let mut ws = Table::new(&["label", "reference", "ell", "observable", "field", "sup_error", "se"]);
    let mut fd = Table::new(&["ell", "field_distance"]);
    for (e, w) in r.ensembles.iter().zip(&r.weak) {
        for x in &w.rows {
            wt.push(vec![
                x.label.clone(),
                x.reference.clone(),
                num(x.ell),
                x.observable.clone(),
                x.field.to_string(),
                num(x.time),
                num(x.ensemble_mean),
                num(x.se),
                num(x.limit),
                num(x.error),
            ]);
        }
        for x in &w.summaries {
            ws.push(vec![
                x.label.clone(),
                x.reference.clone(),
                num(x.ell),
                x.observable.clone(),
                x.field.to_string(),
                num(x.sup_error),
                num(x.se),
            ]);
        }
        fd.push(vec![num(e.ell()), num(w.field_distance)]);
    }
    if !r.weak.is_empty() {
        o.files.push(wt.write(&out.join("weak_error.csv"))?);
        o.files.push(ws.write(&out.join("weak_error_summary.csv"))?);
        o.files.push(fd.write(&out.join("field_distance.csv"))?);
        let mut st = Table::new(&["observable", "field", "slope", "points"]);
        for r in empirical_slopes(&r.weak) {
            st.push(vec![r.observable, r.field.to_string(), num(r.slope), r.points.to_string()]);
        }
        o.files.push(st.write(&out.join("weak_error_slopes.csv"))?);
    }
    if !r.martingales.is_empty() {
        let mut mt = Table::new(&["label", "ell", "observable", "family", "estimate", "se", "bound", "pass"]);
        for x in r.martingales.iter().flatten() {
            mt.push(vec![
                x.label.clone(),
                num(x.ell),
                x.observable.clone(),
                x.family.to_string(),
                num(x.estimate),
                num(x.se),
                num(x.bound),
                x.pass.to_string(),
            ]);
        }
        o.files.push(mt.write(&out.join("martingale.csv"))?);
    }
    let mut et = Table::new(&[
        "label",
        "ell",
        "dt",
        "trajectories",
        "failed",
        "pathwise_violations",
        "mean_excess",
        "fourth_moment_ratio",
        "residual",
    ]);
    for k in &r.energy {
        et.push(vec![
            k.label.clone(),
            num(k.ell),
            num(k.dt),
            k.trajectories.to_string(),
            k.failed.to_string(),
            k.pathwise_violations.to_string(),
            num(k.mean_excess),
            num(k.fourth_moment_ratio),
            num(k.residual),
        ]);
    }
    o.files.push(et.write(&out.join("energy.csv"))?);
    let mut ct = Table::new(&[
        "label", "ell", "q_h0_11", "q_h0_12", "q_h0_22", "a11", "a12", "a21", "a22", "limit_a12", "limit_a21",
        "q_distance", "a_distance",
    ]);
    for k in &r.coefficients {
        ct.push(vec![
            k.label.clone(),
            num(k.ell),
            num(k.q_h0[0][0]),
            num(k.q_h0[0][1]),
            num(k.q_h0[1][1]),
            num(k.grad_qh3_0[0][0]),
            num(k.grad_qh3_0[0][1]),
            num(k.grad_qh3_0[1][0]),
            num(k.grad_qh3_0[1][1]),
            num(k.a[0][1]),
            num(k.a[1][0]),
            num(k.q_distance),
            num(k.a_distance),
        ]);
    }
    o.files.push(ct.write(&out.join("coefficients.csv"))?);
    o.verdicts = r.verdicts.clone();
    o.summary = json!({
        "surrogate": "weak errors on a finite observable set, martingale variance decay and trend monotonicity stand in for convergence in law",
        "entries": r.entries,
        "limit": r.limit.as_ref().map(|l| json!({"params": l.params, "dt": l.dt, "steps": l.steps})),
        "field_distances": r.weak.iter().map(|w| w.field_distance).collect::<Vec<_>>(),
        "discrimination": r.discrimination,
        "energy": r.energy,
        "dt": r.ensembles.iter().map(|e| e.dt).collect::<Vec<_>>(),
    });
    Ok(o)
}

// -------------------------------------------------------------------- report

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Directories holding `summary.json`; every subdirectory of the output
    /// directory when empty.
    pub inputs: Vec<PathBuf>,
}

pub fn report(c: &ReportConfig, out: &Path) -> Result<Outcome> {
    let mut dirs = c.inputs.clone();
    if dirs.is_empty() {
        for entry in fs::read_dir(out)? {
            let p = entry?.path();
            if p.is_dir() {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    let mut o = Outcome::default();
    let mut tab = Table::new(&["run", "command", "verdict", "pass"]);
    let mut runs = Vec::new();
    for d in &dirs {
        let path = d.join("summary.json");
        let run = d
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !path.exists() {
            o.verdicts.insert(format!("{run}.present"), false);
            tab.push(vec![run.clone(), String::new(), "present".into(), "false".into()]);
            continue;
        }
        let s: Value = serde_json::from_slice(&fs::read(&path)?)?;
        let cmd = s["command"].as_str().unwrap_or("").to_string();
        if let Some(v) = s["verdicts"].as_object() {
            for (k, x) in v {
                let pass = x.as_bool().unwrap_or(false);
                o.verdicts.insert(format!("{run}.{k}"), pass);
                tab.push(vec![run.clone(), cmd.clone(), k.clone(), pass.to_string()]);
            }
        }
        runs.push(json!({ "run": run, "command": cmd, "pass": s["pass"] }));
    }
    o.files.push(tab.write(&out.join("report.csv"))?);
    o.summary = json!({ "runs": runs });
    Ok(o)
}
