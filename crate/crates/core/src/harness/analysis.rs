//! Ensemble-level diagnostics: energy balance, martingale variances and
//! weak errors against the limit model.

use serde::Serialize;

use super::ensemble::{mean_se, EnsembleSummary};
use super::plan::ExperimentPlan;
use crate::covariance::{mat_norm, Mat2};
use crate::error::{Error, Result};
use crate::limit::{limit_stability_bound, LimitParams, LimitSolver};
use crate::observables::ObservableSet;
use crate::spectral::{FourierGrid, ScalarField};

/// Energy verdicts for one ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyCheck {
    pub label: String,
    pub ell: f64,
    pub dt: f64,
    pub trajectories: usize,
    pub failed: usize,
    /// Trajectories whose `‖v₃(t)‖² + 2ν∫‖∇v₃‖²` exceeds `‖v₃⁰‖²(1 + 10·dt·t)`.
    pub pathwise_violations: usize,
    pub worst_pathwise_excess: f64,
    /// Largest excess of the ensemble mean, relative to `‖v₃⁰‖²`.
    pub mean_excess: f64,
    pub mean_ok: bool,
    /// `max_t E‖ω₃‖⁴ / (‖ω₃⁰‖⁴ + ‖v₃⁰‖⁴)`.
    pub fourth_moment_ratio: f64,
    pub fourth_moment_cap: f64,
    /// Ensemble mean of the accumulated conditional one-step residual at `T`.
    pub residual: f64,
    pub residual_se: f64,
}

impl EnergyCheck {
    pub fn pathwise_ok(&self) -> bool {
        self.pathwise_violations == 0
    }

    pub fn fourth_moment_ok(&self) -> bool {
        self.fourth_moment_ratio <= self.fourth_moment_cap
    }
}

pub fn energy_check(e: &EnsembleSummary, cap: f64) -> EnergyCheck {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for t in &e.trajectories {
        let (w, ok) = t.energy_excess(e.dt);
        worst = worst.max(w);
        violations += usize::from(!ok);
    }
    let time = e.time();
    let e0 = e.initial_v3_sq();
    let mut mean_excess = f64::NEG_INFINITY;
    let mut mean_ok = true;
    // 3 standard errors of Monte Carlo slack on the ensemble mean
    for i in 0..time.len() {
        let (ex, se) = e.stat(|t| (t.v3_sq[i] + t.dissipation[i] - e0) / e0);
        mean_excess = mean_excess.max(ex);
        mean_ok &= ex <= 10.0 * e.dt * time[i] + 3.0 * se + 1e-12;
    }
    let w0 = e.initial_omega3_sq();
    let quartic = e.mean_series(|t| &t.omega3_quartic);
    let peak = quartic.iter().cloned().fold(0.0, f64::max);
    let (residual, residual_se) = e.stat(|t| t.energy_residual.last().copied().unwrap_or(0.0));
    EnergyCheck {
        label: e.label.clone(),
        ell: e.ell(),
        dt: e.dt,
        trajectories: e.trajectories.len(),
        failed: e.failed(),
        pathwise_violations: violations,
        worst_pathwise_excess: worst,
        mean_excess,
        mean_ok,
        fourth_moment_ratio: peak / (w0 * w0 + e0 * e0),
        fourth_moment_cap: cap,
        residual,
        residual_se,
    }
}

/// `E[M(T)²]` for one martingale family and observable.
#[derive(Clone, Debug, Serialize)]
pub struct MartingaleRow {
    pub label: String,
    pub ell: f64,
    pub observable: String,
    /// 1: transport on `v₃`; 2: transport on `ω₃`; 3: stretching pairing.
    pub family: usize,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Estimates `E[M(T)²] = E∫₀ᵀ d⟨M⟩` from the recorded quadratic-variation
/// rates and compares with the a-priori bounds
/// `‖Q_H‖·‖∇φ‖∞²·T·‖v₃⁰‖²`, `‖Q_H‖·‖∇φ‖∞²·E∫‖ω₃‖²` and `‖Q_3‖·‖∇φ‖∞²·‖v₃⁰‖²/(2ν)`.
pub fn martingale_variance(e: &EnsembleSummary) -> Result<Vec<MartingaleRow>> {
    let first = e
        .trajectories
        .first()
        .ok_or_else(|| Error::Config("empty ensemble".into()))?;
    if first.qv_rate[0].iter().all(|r| r.is_empty()) {
        return Err(Error::Config(
            "martingale diagnostics were not recorded; enable diagnostics.martingales".into(),
        ));
    }
    let t_end = *e.time().last().unwrap_or(&0.0);
    let v0 = e.initial_v3_sq();
    let (int_w2, _) = e.stat(|t| t.integrate(&t.omega3_sq));
    let mut rows = Vec::new();
    for (j, name) in e.obs_names.iter().enumerate() {
        let g2 = e.grad_sup[j] * e.grad_sup[j];
        let bounds = [
            e.consts.opnorm_qh * g2 * t_end * v0,
            e.consts.opnorm_qh * g2 * int_w2,
            e.consts.opnorm_q3 * g2 * v0 / (2.0 * e.nu),
        ];
        for (m, &bound) in bounds.iter().enumerate() {
            let (estimate, se) = e.stat(|t| t.integrate(&t.qv_rate[m][j]));
            rows.push(MartingaleRow {
                label: e.label.clone(),
                ell: e.ell(),
                observable: name.clone(),
                family: m + 1,
                estimate,
                se,
                bound,
                pass: estimate <= bound + 3.0 * se,
            });
        }
    }
    Ok(rows)
}

/// True when every (observable, family) estimate strictly decreases along
/// the ladder. `rows` holds one block per ladder entry, in ladder order.
pub fn martingale_decreasing(rows: &[Vec<MartingaleRow>]) -> bool {
    rows.windows(2).all(|w| {
        w[0].iter()
            .zip(&w[1])
            .all(|(a, b)| b.estimate < a.estimate)
    })
}

/// Means and standard errors of the observables at the checkpoints, with the
/// mean fields. Index order: `[field][observable][checkpoint]`, field 0 is `ω₃`.
#[derive(Clone, Debug)]
pub struct CheckpointMeans {
    pub label: String,
    pub n: usize,
    pub time: Vec<f64>,
    pub mean: [Vec<Vec<f64>>; 2],
    pub se: [Vec<Vec<f64>>; 2],
    pub fields: Vec<[ScalarField<f64>; 2]>,
}

impl EnsembleSummary {
    pub fn checkpoint_means(&self) -> CheckpointMeans {
        let time: Vec<f64> = self.checkpoint_records.iter().map(|&r| self.time()[r]).collect();
        let k = self.obs_names.len();
        let series = |field: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let mut m = vec![Vec::new(); k];
            let mut s = vec![Vec::new(); k];
            for j in 0..k {
                for &r in &self.checkpoint_records {
                    let (a, b) = mean_se(self.trajectories.iter().map(|t| {
                        if field == 0 {
                            t.obs_omega3[j][r]
                        } else {
                            t.obs_v3[j][r]
                        }
                    }));
                    m[j].push(a);
                    s[j].push(b);
                }
            }
            (m, s)
        };
        let (m0, s0) = series(0);
        let (m1, s1) = series(1);
        CheckpointMeans {
            label: self.label.clone(),
            n: self.n,
            time,
            mean: [m0, m1],
            se: [s0, s1],
            fields: self.mean_fields.clone(),
        }
    }
}

/// Deterministic limit trajectory sampled at the plan's checkpoints.
#[derive(Clone, Debug)]
pub struct LimitReference {
    pub params: LimitParams,
    pub dt: f64,
    pub steps: usize,
    pub means: CheckpointMeans,
}

/// Runs the limit model on the plan's grid, initial data and checkpoints.
pub fn limit_reference(plan: &ExperimentPlan, params: &LimitParams, label: &str) -> Result<LimitReference> {
    let grid = FourierGrid::<f64>::new(plan.cfg.n)?;
    let init = plan.init.build(&grid)?;
    let obs = ObservableSet::new(&grid, &plan.observables);
    let k = plan.checkpoints;
    let h = match plan.limit_dt {
        Some(h) => h,
        None => 0.8 * limit_stability_bound(&grid, &init),
    };
    let per = (plan.cfg.t_end / (k as f64 * h)).ceil().max(1.0) as usize;
    let steps = per * k;
    let dt = plan.cfg.t_end / steps as f64;
    let solver = LimitSolver::new(&grid, params.clone())?;
    let mut fields = Vec::with_capacity(k + 1);
    let (_, st) = solver.run_observed(&init, dt, steps, per, &obs, &mut |_, s| {
        fields.push([s.omega3.clone(), s.v3.clone()]);
    })?;
    let no = obs.len();
    let mean = [st.obs_omega3.clone(), st.obs_v3.clone()];
    Ok(LimitReference {
        params: params.clone(),
        dt,
        steps,
        means: CheckpointMeans {
            label: label.to_string(),
            n: plan.cfg.n,
            time: st.time.clone(),
            mean,
            se: [vec![vec![0.0; k + 1]; no], vec![vec![0.0; k + 1]; no]],
            fields,
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakErrorRow {
    pub label: String,
    pub reference: String,
    pub ell: f64,
    pub observable: String,
    pub field: &'static str,
    pub time: f64,
    pub ensemble_mean: f64,
    pub se: f64,
    pub limit: f64,
    pub error: f64,
}

/// Worst checkpoint error for one (observable, field) pair.
#[derive(Clone, Debug, Serialize)]
pub struct WeakErrorSummary {
    pub label: String,
    pub reference: String,
    pub ell: f64,
    pub observable: String,
    pub field: &'static str,
    pub sup_error: f64,
    /// Standard error at the worst checkpoint.
    pub se: f64,
}

#[derive(Clone, Debug)]
pub struct WeakErrorTable {
    pub rows: Vec<WeakErrorRow>,
    pub summaries: Vec<WeakErrorSummary>,
    /// `(∫₀ᵀ ‖ω̄₃ - ω₃ᴸ‖² + ‖v̄₃ - v₃ᴸ‖² dt)^½` over the checkpoints (trapezoid).
    pub field_distance: f64,
}

const FIELDS: [&str; 2] = ["omega3", "v3"];

pub fn weak_error(
    ens: &CheckpointMeans,
    lim: &CheckpointMeans,
    ell: f64,
    names: &[String],
) -> Result<WeakErrorTable> {
    if ens.time.len() != lim.time.len()
        || ens.time.iter().zip(&lim.time).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
    {
        return Err(Error::Config("ensemble and limit checkpoints differ".into()));
    }
    if ens.n != lim.n {
        return Err(Error::GridMismatch {
            expected: lim.n,
            found: ens.n,
        });
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (f, field) in FIELDS.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let mut worst = (f64::NEG_INFINITY, 0.0);
            for (c, &t) in ens.time.iter().enumerate() {
                let m = ens.mean[f][j][c];
                let l = lim.mean[f][j][c];
                let err = (m - l).abs();
                if err > worst.0 {
                    worst = (err, ens.se[f][j][c]);
                }
                rows.push(WeakErrorRow {
                    label: ens.label.clone(),
                    reference: lim.label.clone(),
                    ell,
                    observable: name.clone(),
                    field,
                    time: t,
                    ensemble_mean: m,
                    se: ens.se[f][j][c],
                    limit: l,
                    error: err,
                });
            }
            summaries.push(WeakErrorSummary {
                label: ens.label.clone(),
                reference: lim.label.clone(),
                ell,
                observable: name.clone(),
                field,
                sup_error: worst.0,
                se: worst.1,
            });
        }
    }
    let grid = FourierGrid::<f64>::new(ens.n)?;
    let dist: Vec<f64> = ens
        .fields
        .iter()
        .zip(&lim.fields)
        .map(|(a, b)| {
            let mut d0 = a[0].clone();
            d0.axpy(-1.0, &b[0]);
            let mut d1 = a[1].clone();
            d1.axpy(-1.0, &b[1]);
            grid.norm_sq(&d0) + grid.norm_sq(&d1)
        })
        .collect();
    let integral: f64 = ens
        .time
        .windows(2)
        .zip(dist.windows(2))
        .map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0] + d[1]))
        .sum();
    Ok(WeakErrorTable {
        rows,
        summaries,
        field_distance: integral.sqrt(),
    })
}

/// Whether each (observable, field) error is non-increasing along the
/// ladder beyond two combined standard errors. `tables` in ladder order.
pub fn weak_error_monotone(tables: &[WeakErrorTable]) -> bool {
    tables.windows(2).all(|w| {
        w[0].summaries.iter().zip(&w[1].summaries).all(|(a, b)| {
            b.sup_error <= a.sup_error + 2.0 * (a.se * a.se + b.se * b.se).sqrt()
        })
    })
}

/// Least-squares slope of `log(sup error)` against `log ℓ` for one
/// (observable, field) pair. Reported only; no rate is asserted.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeRow {
    pub observable: String,
    pub field: &'static str,
    pub slope: f64,
    pub points: usize,
}

pub fn empirical_slopes(tables: &[WeakErrorTable]) -> Vec<SlopeRow> {
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    (0..first.summaries.len())
        .map(|i| {
            let pts: Vec<(f64, f64)> = tables
                .iter()
                .map(|t| &t.summaries[i])
                .filter(|s| s.sup_error > 0.0)
                .map(|s| (s.ell.ln(), s.sup_error.ln()))
                .collect();
            let m = pts.len() as f64;
            let slope = if pts.len() < 2 {
                f64::NAN
            } else {
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
                sxy / sxx
            };
            SlopeRow {
                observable: first.summaries[i].observable.clone(),
                field: first.summaries[i].field,
                slope,
                points: pts.len(),
            }
        })
        .collect()
}

/// Measured noise coefficients against the ones fed to the limit model.
#[derive(Clone, Debug, Serialize)]
pub struct CoefficientCheck {
    pub label: String,
    pub ell: f64,
    pub q_h0: Mat2,
    pub qbar: Mat2,
    pub grad_qh3_0: Mat2,
    pub a: Mat2,
    pub q_distance: f64,
    pub a_distance: f64,
}

pub fn coefficient_check(e: &EnsembleSummary, p: &LimitParams) -> CoefficientCheck {
    let dist = |x: &Mat2, y: &Mat2| {
        mat_norm(&[
            [x[0][0] - y[0][0], x[0][1] - y[0][1]],
            [x[1][0] - y[1][0], x[1][1] - y[1][1]],
        ])
    };
    CoefficientCheck {
        label: e.label.clone(),
        ell: e.ell(),
        q_h0: e.consts.q_h0,
        qbar: p.qbar,
        grad_qh3_0: e.consts.grad_qh3_0,
        a: p.a,
        q_distance: dist(&e.consts.q_h0, &p.qbar),
        a_distance: dist(&e.consts.grad_qh3_0, &p.a),
    }
}
