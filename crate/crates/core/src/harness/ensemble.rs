use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use super::plan::{stream_id, trajectory_rng, ExperimentPlan, Precision};
use crate::covariance::CovarianceConstants;
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, SpectralNoise};
use crate::observables::ObservableSet;
use crate::scalar::Real;
use crate::spde::{FreshGaussians, SpdeSolver, TrajectoryStats};
use crate::spectral::{FourierGrid, ScalarField};

/// Seed record of one trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySeed {
    pub index: usize,
    pub stream: u64,
    pub ok: bool,
    pub error: Option<String>,
}

/// Ensemble of independent trajectories at one scale.
#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub label: String,
    pub block: usize,
    pub noise: NoiseSpec,
    pub n: usize,
    pub nu: f64,
    pub dt: f64,
    pub steps: usize,
    pub gamma: f64,
    pub gamma3: f64,
    pub consts: CovarianceConstants,
    pub obs_names: Vec<String>,
    pub grad_sup: Vec<f64>,
    /// Record indices of the checkpoints.
    pub checkpoint_records: Vec<usize>,
    /// Successful trajectories in index order.
    pub trajectories: Vec<TrajectoryStats>,
    pub seeds: Vec<TrajectorySeed>,
    /// Ensemble-mean `(ω₃, v₃)` at each checkpoint.
    pub mean_fields: Vec<[ScalarField<f64>; 2]>,
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

impl EnsembleSummary {
    pub fn ell(&self) -> f64 {
        self.noise.ell
    }

    pub fn failed(&self) -> usize {
        self.seeds.iter().filter(|s| !s.ok).count()
    }

    pub fn time(&self) -> &[f64] {
        self.trajectories.first().map(|t| t.time.as_slice()).unwrap_or(&[])
    }

    /// Mean and standard error of a per-trajectory quantity.
    pub fn stat(&self, f: impl Fn(&TrajectoryStats) -> f64) -> (f64, f64) {
        mean_se(self.trajectories.iter().map(f))
    }

    /// Ensemble mean of a recorded series.
    pub fn mean_series(&self, f: impl Fn(&TrajectoryStats) -> &[f64]) -> Vec<f64> {
        let len = self.time().len();
        (0..len).map(|i| self.stat(|t| f(t)[i]).0).collect()
    }

    pub fn initial_v3_sq(&self) -> f64 {
        self.trajectories.first().map(|t| t.v3_sq[0]).unwrap_or(f64::NAN)
    }

    pub fn initial_omega3_sq(&self) -> f64 {
        self.trajectories.first().map(|t| t.omega3_sq[0]).unwrap_or(f64::NAN)
    }
}

fn widen<T: Real>(f: &ScalarField<T>) -> ScalarField<f64> {
    let c = f
        .coefficients()
        .iter()
        .map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()))
        .collect();
    ScalarField::from_coefficients(f.n(), c).expect("same length")
}

/// Runs `size` trajectories of the plan's dynamics under `noise`, drawing
/// streams `0..size` from `block`.
pub fn run_ensemble(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    block: usize,
    size: usize,
    label: &str,
) -> Result<EnsembleSummary> {
    let streams: Vec<usize> = (0..size).collect();
    run_ensemble_with(plan, noise, block, &streams, label)
}

/// Like [`run_ensemble`] with explicit trajectory streams within `block`.
/// Repeated entries give identical trajectories.
pub fn run_ensemble_with(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    block: usize,
    streams: &[usize],
    label: &str,
) -> Result<EnsembleSummary> {
    match plan.precision {
        Precision::F64 => run_typed::<f64>(plan, noise, block, streams, label),
        Precision::F32 => run_typed::<f32>(plan, noise, block, streams, label),
    }
}

type Outcome = std::result::Result<(TrajectoryStats, Vec<[ScalarField<f64>; 2]>), Error>;

fn run_typed<T: Real>(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    block: usize,
    streams: &[usize],
    label: &str,
) -> Result<EnsembleSummary> {
    let size = streams.len();
    let n = plan.cfg.n;
    let grid = FourierGrid::<T>::new(n)?;
    let sn = SpectralNoise::build(noise, &grid)?;
    let consts = CovarianceConstants::from_noise(&sn, &grid);
    let obs = ObservableSet::new(&grid, &plan.observables);
    let init = plan.init.build(&grid)?;
    let (dt, steps) = plan.time_step(&grid, &consts, &init)?;
    let stride = plan.stride(steps)?;
    let record_every = plan.cfg.record_every;
    let checkpoint_records: Vec<usize> = (0..=plan.checkpoints)
        .map(|c| c * stride / record_every)
        .collect();

    let one = |traj: usize| -> Outcome {
        let mut rng = trajectory_rng(plan.seed_root, block, streams[traj]);
        let mut source = FreshGaussians { rng: &mut rng };
        let mut solver = SpdeSolver::new(&grid, &sn, &consts, plan.cfg.nu, dt)?;
        let mut fields = Vec::with_capacity(checkpoint_records.len());
        let mut observer = |rec: usize, s: &crate::spde::State<T>| {
            if checkpoint_records.contains(&rec) {
                fields.push([widen(&s.omega3), widen(&s.v3)]);
            }
        };
        let (_, st) = solver.run_observed(
            &init,
            steps,
            record_every,
            &obs,
            plan.diagnostics,
            &mut source,
            &mut observer,
        )?;
        Ok((st, fields))
    };

    let mut trajectories = Vec::with_capacity(size);
    let mut seeds = Vec::with_capacity(size);
    let mut sums: Option<Vec<[ScalarField<f64>; 2]>> = None;
    // bounded memory: each chunk runs concurrently, then folds in index order
    let chunk = 2 * rayon::current_num_threads().max(1);
    let indices: Vec<usize> = (0..size).collect();
    for part in indices.chunks(chunk) {
        let results: Vec<Outcome> = part.par_iter().map(|&j| one(j)).collect();
        for (&j, r) in part.iter().zip(results) {
            match r {
                Ok((st, fields)) => {
                    match sums.as_mut() {
                        None => sums = Some(fields),
                        Some(acc) => {
                            for (a, f) in acc.iter_mut().zip(&fields) {
                                a[0].axpy(1.0, &f[0]);
                                a[1].axpy(1.0, &f[1]);
                            }
                        }
                    }
                    trajectories.push(st);
                    seeds.push(TrajectorySeed {
                        index: j,
                        stream: stream_id(block, streams[j]),
                        ok: true,
                        error: None,
                    });
                }
                Err(e) => seeds.push(TrajectorySeed {
                    index: j,
                    stream: stream_id(block, streams[j]),
                    ok: false,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    let failed = size - trajectories.len();
    if failed as f64 > plan.max_failure_fraction * size as f64 {
        return Err(Error::EnsembleFailed {
            failed,
            total: size,
        });
    }
    let mut mean_fields = sums.unwrap_or_default();
    let inv = 1.0 / trajectories.len() as f64;
    for m in &mut mean_fields {
        m[0].scale(inv);
        m[1].scale(inv);
    }
    Ok(EnsembleSummary {
        label: label.to_string(),
        block,
        noise: noise.clone(),
        n,
        nu: plan.cfg.nu,
        dt,
        steps,
        gamma: sn.gamma,
        gamma3: sn.gamma3,
        consts,
        obs_names: obs.names(),
        grad_sup: obs.items.iter().map(|o| o.grad_sup).collect(),
        checkpoint_records,
        trajectories,
        seeds,
        mean_fields,
    })
}
