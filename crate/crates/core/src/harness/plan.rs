use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceConstants;
use crate::error::{invalid, Error, Result};
use crate::noise::{GammaRule, NoiseSpec, MIN_CELLS_PER_VORTEX};
use crate::observables::{default_kinds, ObservableKind};
use crate::scalar::Real;
use crate::spde::{stability_bound, Diagnostics, InitialCondition, SolverConfig, State};
use crate::spectral::FourierGrid;

/// Floating-point type the trajectories run in. Statistics are always f64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// A scaling-limit study: one ensemble per ladder entry, plus an optional
/// companion ensemble at the smallest `ℓ` under a second `γ`-rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Strictly decreasing scales.
    pub ladder: Vec<f64>,
    pub ensemble_size: usize,
    /// Template; `seed` is ignored in favour of `seed_root`.
    pub cfg: SolverConfig,
    /// Template; `ell` is replaced by each ladder entry.
    pub noise: NoiseSpec,
    pub observables: Vec<ObservableKind>,
    pub seed_root: u64,
    pub init: InitialCondition,
    /// Pick `dt` per entry as the largest `T/m` below the stability bound,
    /// with `m` a multiple of `checkpoints·record_every`.
    pub auto_dt: bool,
    /// Evenly spaced comparison times for weak errors and mean fields.
    pub checkpoints: usize,
    pub diagnostics: Diagnostics,
    pub precision: Precision,
    /// Entries fail when more than this fraction of trajectories abort.
    pub max_failure_fraction: f64,
    /// Second rule for the first-order discrimination test.
    pub companion_rule: Option<GammaRule>,
    /// Run the limit model and compute weak errors.
    pub weak_errors: bool,
    /// Time step of the limit reference; chosen from its stability bound when absent.
    pub limit_dt: Option<f64>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            ladder: vec![0.25, 0.125, 0.0625],
            ensemble_size: 8,
            cfg: SolverConfig::default(),
            noise: NoiseSpec::default(),
            observables: default_kinds(),
            seed_root: 0,
            init: InitialCondition::Default,
            auto_dt: false,
            checkpoints: 10,
            diagnostics: Diagnostics::default(),
            precision: Precision::F64,
            max_failure_fraction: 0.01,
            companion_rule: None,
            weak_errors: true,
            limit_dt: None,
        }
    }
}

/// Stream of the trajectory `traj` in ensemble block `block`. The ladder uses
/// blocks `0..ladder.len()`; companion runs take the blocks after it.
pub fn stream_id(block: usize, traj: usize) -> u64 {
    ((block as u64) << 32) | traj as u64
}

pub fn trajectory_rng(seed_root: u64, block: usize, traj: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed_root);
    rng.set_stream(stream_id(block, traj));
    rng
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(invalid(
                "ensemble_size",
                self.ensemble_size as f64,
                "at least two trajectories are needed for a variance",
            ));
        }
        self.validate_common()
    }

    /// Checks shared with single-trajectory runs.
    pub(crate) fn validate_common(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(invalid("ensemble_size", 0.0, "must be positive"));
        }
        if self.ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("ladder must be strictly decreasing".into()));
        }
        for &ell in &self.ladder {
            NoiseSpec {
                ell,
                ..self.noise.clone()
            }
            .validate()?;
            let n_ell = self.cfg.n as f64 * ell;
            if n_ell < MIN_CELLS_PER_VORTEX {
                return Err(Error::UnderResolved {
                    n_ell,
                    min: MIN_CELLS_PER_VORTEX,
                });
            }
        }
        if self.checkpoints == 0 {
            return Err(Error::Config("checkpoints must be at least 1".into()));
        }
        if !(self.max_failure_fraction >= 0.0 && self.max_failure_fraction < 1.0) {
            return Err(invalid(
                "max_failure_fraction",
                self.max_failure_fraction,
                "must lie in [0, 1)",
            ));
        }
        if let Some(h) = self.limit_dt {
            if !(h > 0.0) {
                return Err(invalid("limit_dt", h, "time step must be positive"));
            }
        }
        if self.auto_dt {
            let mut c = self.cfg.clone();
            c.dt = c.t_end;
            c.validate_basic()
        } else {
            self.cfg.validate_basic()?;
            self.stride(self.cfg.steps()).map(|_| ())
        }
    }

    pub fn noise_at(&self, ell: f64) -> NoiseSpec {
        NoiseSpec {
            ell,
            ..self.noise.clone()
        }
    }

    /// Steps between checkpoints; requires checkpoints to land on records.
    pub fn stride(&self, steps: usize) -> Result<usize> {
        let k = self.checkpoints;
        if steps % k != 0 || (steps / k) % self.cfg.record_every != 0 {
            return Err(Error::Config(format!(
                "{steps} steps cannot be split into {k} checkpoints on the record cadence {}",
                self.cfg.record_every
            )));
        }
        Ok(steps / k)
    }

    /// `(dt, steps)` for one entry, checked against the stability bound.
    pub fn time_step<T: Real>(
        &self,
        grid: &FourierGrid<T>,
        consts: &CovarianceConstants,
        init: &State<T>,
    ) -> Result<(f64, usize)> {
        if self.auto_dt {
            let bound = stability_bound(grid, consts, init);
            let unit = self.checkpoints * self.cfg.record_every;
            let blocks = (self.cfg.t_end / (bound * unit as f64)).ceil().max(1.0) as usize;
            let steps = blocks * unit;
            return Ok((self.cfg.t_end / steps as f64, steps));
        }
        let cfg = SolverConfig {
            n: grid.n(),
            ..self.cfg.clone()
        };
        cfg.validate(grid, consts, init)?;
        let steps = cfg.steps();
        self.stride(steps)?;
        Ok((cfg.dt, steps))
    }
}
