//! Integrating-factor Euler–Maruyama solver for the Itô form of the
//! stochastic 2D-3C system in the unknowns `(ω₃, v₃)`.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceConstants;
use crate::error::{invalid, Error, Result};
use crate::noise::{Increment, SpectralNoise};
use crate::observables::ObservableSet;
use crate::scalar::Real;
use crate::spectral::{FourierGrid, ScalarField, VectorField2};

use std::f64::consts::PI;

/// Blow-up threshold on `‖ω₃‖² + ‖v₃‖²`.
const BLOWUP_ENERGY: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    IntegratingFactorEulerMaruyama,
}

/// One Fourier mode `amp·cos(2π k·x + phase)` of an initial field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k1: i64,
    pub k2: i64,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `ω₃ = sin(2πx₁)cos(2πx₂)`, `v₃ = cos(2πx₂)`.
    #[default]
    Default,
    Modes {
        omega3: Vec<ModeSpec>,
        v3: Vec<ModeSpec>,
    },
}

impl InitialCondition {
    pub fn build<T: Real>(&self, grid: &FourierGrid<T>) -> Result<State<T>> {
        let (w, v) = match self {
            InitialCondition::Default => (
                grid.from_fn(|a, b| (2.0 * PI * a).sin() * (2.0 * PI * b).cos()),
                grid.from_fn(|_, b| (2.0 * PI * b).cos()),
            ),
            InitialCondition::Modes { omega3, v3 } => {
                let band = (grid.n() / 3) as i64;
                for m in omega3.iter().chain(v3) {
                    if m.k1.abs().max(m.k2.abs()) > band {
                        return Err(Error::Config(format!(
                            "initial mode ({}, {}) lies outside the resolved band |k| <= {band}",
                            m.k1, m.k2
                        )));
                    }
                    if m.k1 == 0 && m.k2 == 0 {
                        return Err(Error::Config("initial fields must have zero mean".into()));
                    }
                }
                let sum = |ms: &[ModeSpec]| {
                    let ms = ms.to_vec();
                    grid.from_fn(move |a, b| {
                        ms.iter()
                            .map(|m| {
                                m.amp
                                    * (2.0 * PI * (m.k1 as f64 * a + m.k2 as f64 * b) + m.phase)
                                        .cos()
                            })
                            .sum()
                    })
                };
                (sum(omega3), sum(v3))
            }
        };
        State::new(w, v)
    }
}

/// Solver state; both fields zero-mean and band-limited.
#[derive(Clone, Debug)]
pub struct State<T: Real> {
    pub omega3: ScalarField<T>,
    pub v3: ScalarField<T>,
    pub t: f64,
}

impl<T: Real> State<T> {
    pub fn new(mut omega3: ScalarField<T>, mut v3: ScalarField<T>) -> Result<Self> {
        if omega3.n() != v3.n() {
            return Err(Error::GridMismatch {
                expected: omega3.n(),
                found: v3.n(),
            });
        }
        for f in [&omega3, &v3] {
            let m = f.mean().to_f64_lossy();
            if m.abs() > 1e-12 {
                return Err(Error::NonZeroMean { mean: m });
            }
        }
        omega3.pin_mean();
        v3.pin_mean();
        Ok(Self { omega3, v3, t: 0.0 })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            omega3: ScalarField::zeros(n),
            v3: ScalarField::zeros(n),
            t: 0.0,
        }
    }

    /// `ω_H = ∇⊥v₃`.
    pub fn omega_h(&self, grid: &FourierGrid<T>) -> VectorField2<T> {
        grid.gradient(&self.v3, true)
    }

    /// `v_H = K ∗ ω₃`.
    pub fn v_h(&self, grid: &FourierGrid<T>) -> VectorField2<T> {
        grid.biot_savart(&self.omega3).expect("state has zero mean")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub n: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Steps between recorded statistics.
    pub record_every: usize,
    /// Cap `C` in `E‖ω₃‖⁴ <= C (‖ω₃⁰‖⁴ + ‖v₃⁰‖⁴)`.
    pub fourth_moment_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nu: 0.05,
            dt: 1e-3,
            t_end: 0.5,
            n: 64,
            seed: 0,
            scheme: Scheme::default(),
            record_every: 10,
            fourth_moment_cap: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Parameter checks that do not depend on the noise.
    pub fn validate_basic(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(invalid("nu", self.nu, "viscosity must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", self.dt, "time step must be positive"));
        }
        if !(self.t_end > 0.0) {
            return Err(invalid("t_end", self.t_end, "horizon must be positive"));
        }
        let k = self.t_end / self.dt;
        if (k - k.round()).abs() > 1e-6 * k.max(1.0) {
            return Err(invalid("dt", self.dt, "horizon must be an integer number of steps"));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if !(self.fourth_moment_cap > 0.0) {
            return Err(invalid("fourth_moment_cap", self.fourth_moment_cap, "must be positive"));
        }
        Ok(())
    }

    /// Full validation including the explicit-step stability bound at `init`.
    pub fn validate<T: Real>(
        &self,
        grid: &FourierGrid<T>,
        consts: &CovarianceConstants,
        init: &State<T>,
    ) -> Result<()> {
        self.validate_basic()?;
        if grid.n() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: grid.n(),
            });
        }
        let bound = stability_bound(grid, consts, init);
        if self.dt > bound {
            return Err(Error::Unstable { dt: self.dt, bound });
        }
        Ok(())
    }
}

/// `0.2·min(1/(‖v_H‖∞·2πn/3), 1/(2π²·‖Q_H‖·(n/3)²))`: advective and
/// noise-parabolic limits of the explicit step with a safety margin. Larger
/// steps are rejected.
pub fn stability_bound<T: Real>(
    grid: &FourierGrid<T>,
    consts: &CovarianceConstants,
    s: &State<T>,
) -> f64 {
    let v = s.v_h(grid);
    let a = grid.inverse(&v.u1);
    let b = grid.inverse(&v.u2);
    let vmax = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.to_f64_lossy().hypot(y.to_f64_lossy()))
        .fold(0.0, f64::max);
    let kb = grid.n() as f64 / 3.0;
    let adv = if vmax > 0.0 {
        1.0 / (vmax * 2.0 * PI * kb)
    } else {
        f64::INFINITY
    };
    let par = if consts.opnorm_qh > 0.0 {
        1.0 / (2.0 * PI * PI * consts.opnorm_qh * kb * kb)
    } else {
        f64::INFINITY
    };
    0.2 * adv.min(par)
}

/// Source of the per-step standard Gaussians `g_k`.
pub trait BrownianSource<T: Real> {
    fn next(&mut self, sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> Vec<Complex<T>>;
}

/// Fresh draws from an RNG.
pub struct FreshGaussians<'r, R: Rng> {
    pub rng: &'r mut R,
}

impl<T: Real, R: Rng> BrownianSource<T> for FreshGaussians<'_, R> {
    fn next(&mut self, sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> Vec<Complex<T>> {
        sn.draw_gaussians(grid, self.rng)
    }
}

/// Sums `factor` consecutive fine increments into one coarse one, so that a
/// coarse run sees the same Brownian path as a fine run on the same stream.
pub struct Coarsened<S> {
    pub inner: S,
    pub factor: usize,
}

impl<T: Real, S: BrownianSource<T>> BrownianSource<T> for Coarsened<S> {
    fn next(&mut self, sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> Vec<Complex<T>> {
        let mut acc = self.inner.next(sn, grid);
        for _ in 1..self.factor {
            for (a, b) in acc.iter_mut().zip(self.inner.next(sn, grid)) {
                *a = *a + b;
            }
        }
        let s = T::lit(1.0 / (self.factor as f64).sqrt());
        acc.iter_mut().for_each(|a| *a = *a * s);
        acc
    }
}

/// Optional per-trajectory diagnostics beyond the norm traces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    /// Quadratic-variation rates of the three weak-form martingales.
    pub martingales: bool,
    /// Conditional expectation of the one-step `v₃` energy residual.
    pub energy_residual: bool,
}

/// Recorded time series of one trajectory. Observable traces are indexed
/// `[observable][record]`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrajectoryStats {
    pub time: Vec<f64>,
    pub v3_sq: Vec<f64>,
    pub omega3_sq: Vec<f64>,
    pub grad_v3_sq: Vec<f64>,
    pub grad_omega3_sq: Vec<f64>,
    pub omega3_quartic: Vec<f64>,
    /// `2ν∫₀ᵗ‖∇v₃‖²` (left Riemann sum over steps).
    pub dissipation: Vec<f64>,
    /// Accumulated one-step energy residual of the scheme against the
    /// semi-discrete energy rate; see `SpdeSolver::conditional_energy_residual`.
    pub energy_residual: Vec<f64>,
    pub obs_omega3: Vec<Vec<f64>>,
    pub obs_v3: Vec<Vec<f64>>,
    /// Instantaneous quadratic-variation rates of `M1`, `M2`, `M3`.
    pub qv_rate: [Vec<Vec<f64>>; 3],
    pub steps: usize,
}

impl TrajectoryStats {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn empty(observables: usize, steps: usize) -> Self {
        let k = observables;
        Self {
            obs_omega3: vec![Vec::new(); k],
            obs_v3: vec![Vec::new(); k],
            qv_rate: [vec![Vec::new(); k], vec![Vec::new(); k], vec![Vec::new(); k]],
            steps,
            ..Default::default()
        }
    }

    /// Largest `‖v₃(t)‖² + 2ν∫‖∇v₃‖² - ‖v₃⁰‖²` normalized by `‖v₃⁰‖²`, and
    /// the corresponding allowance `10·dt·t`.
    pub fn energy_excess(&self, dt: f64) -> (f64, bool) {
        let e0 = self.v3_sq[0].max(f64::MIN_POSITIVE);
        let mut worst = f64::NEG_INFINITY;
        let mut ok = true;
        for i in 0..self.len() {
            let ex = (self.v3_sq[i] + self.dissipation[i] - self.v3_sq[0]) / e0;
            worst = worst.max(ex);
            ok &= ex <= 10.0 * dt * self.time[i] + 1e-12;
        }
        (worst, ok)
    }

    /// `∫₀ᵀ` of a recorded rate by the trapezoid rule.
    pub fn integrate(&self, rate: &[f64]) -> f64 {
        self.time
            .windows(2)
            .zip(rate.windows(2))
            .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
            .sum()
    }
}

/// Appends norms and observable pairings of `s` to `st`.
pub(crate) fn record_norms<T: Real>(
    g: &FourierGrid<T>,
    s: &State<T>,
    obs: &ObservableSet<T>,
    st: &mut TrajectoryStats,
    dissipation: f64,
) {
    let w2 = g.norm_sq(&s.omega3).to_f64_lossy();
    st.time.push(s.t);
    st.v3_sq.push(g.norm_sq(&s.v3).to_f64_lossy());
    st.omega3_sq.push(w2);
    st.grad_v3_sq.push(g.grad_norm_sq(&s.v3).to_f64_lossy());
    st.grad_omega3_sq.push(g.grad_norm_sq(&s.omega3).to_f64_lossy());
    st.omega3_quartic.push(w2 * w2);
    st.dissipation.push(dissipation);
    for (j, o) in obs.items.iter().enumerate() {
        st.obs_omega3[j].push(g.inner(&s.omega3, &o.phi).to_f64_lossy());
        st.obs_v3[j].push(g.inner(&s.v3, &o.phi).to_f64_lossy());
    }
}

/// Aborts on non-finite or runaway states.
pub(crate) fn check_state<T: Real>(grid: &FourierGrid<T>, s: &State<T>, step: usize) -> Result<()> {
    let e = grid.norm_sq(&s.omega3).to_f64_lossy() + grid.norm_sq(&s.v3).to_f64_lossy();
    if !s.omega3.is_finite() || !s.v3.is_finite() || !e.is_finite() {
        return Err(Error::BlowUp {
            time: s.t,
            step,
            reason: "non-finite coefficients".into(),
        });
    }
    if e > BLOWUP_ENERGY {
        return Err(Error::BlowUp {
            time: s.t,
            step,
            reason: format!("energy {e:e} exceeds {BLOWUP_ENERGY:e}"),
        });
    }
    Ok(())
}

/// Time stepper bound to one grid and noise.
pub struct SpdeSolver<'a, T: Real> {
    pub grid: &'a FourierGrid<T>,
    pub noise: &'a SpectralNoise<T>,
    pub consts: &'a CovarianceConstants,
    pub nu: f64,
    pub dt: f64,
    /// `exp(-(4π²ν|k|² + 2π²k·Q_H(0)k)dt)`.
    factor: Vec<T>,
    /// Symbol of `v₃ ↦ ∇·[∇Q_{H,3}(0)∇⊥v₃]`.
    stretch: Vec<T>,
    /// Physical tables of `Q̂_H` for the energy residual.
    qh_phys: Option<[Vec<T>; 3]>,
}

/// Fourier symbol of `νΔ + ½∇·[Q_H(0)∇·]`.
pub fn linear_symbol(nu: f64, q: &[[f64; 2]; 2], k1: f64, k2: f64) -> f64 {
    let kqk = q[0][0] * k1 * k1 + (q[0][1] + q[1][0]) * k1 * k2 + q[1][1] * k2 * k2;
    -4.0 * PI * PI * nu * (k1 * k1 + k2 * k2) - 2.0 * PI * PI * kqk
}

/// Fourier symbol of `v₃ ↦ ∇·[M∇⊥v₃]`: `-4π² k·M(k2, -k1)`.
pub fn stretch_symbol(m: &[[f64; 2]; 2], k1: f64, k2: f64) -> f64 {
    let (p1, p2) = (k2, -k1);
    let mp = [m[0][0] * p1 + m[0][1] * p2, m[1][0] * p1 + m[1][1] * p2];
    -4.0 * PI * PI * (k1 * mp[0] + k2 * mp[1])
}

impl<'a, T: Real> SpdeSolver<'a, T> {
    pub fn new(
        grid: &'a FourierGrid<T>,
        noise: &'a SpectralNoise<T>,
        consts: &'a CovarianceConstants,
        nu: f64,
        dt: f64,
    ) -> Result<Self> {
        if noise.n != grid.n() {
            return Err(Error::GridMismatch {
                expected: grid.n(),
                found: noise.n,
            });
        }
        if !(nu > 0.0) {
            return Err(invalid("nu", nu, "viscosity must be positive"));
        }
        if !(dt > 0.0) {
            return Err(invalid("dt", dt, "time step must be positive"));
        }
        let len = grid.spectral_len();
        let mut factor = vec![T::zero(); len];
        let mut stretch = vec![T::zero(); len];
        for idx in 0..len {
            let (a, b) = grid.wavevector(idx);
            let (a, b) = (a as f64, b as f64);
            factor[idx] = T::lit((linear_symbol(nu, &consts.q_h0, a, b) * dt).exp());
            if !grid.is_nyquist(idx) {
                stretch[idx] = T::lit(stretch_symbol(&consts.grad_qh3_0, a, b));
            }
        }
        Ok(Self {
            grid,
            noise,
            consts,
            nu,
            dt,
            factor,
            stretch,
            qh_phys: None,
        })
    }

    /// Builds the solver after checking `cfg` against `init`.
    pub fn from_config(
        grid: &'a FourierGrid<T>,
        noise: &'a SpectralNoise<T>,
        consts: &'a CovarianceConstants,
        cfg: &SolverConfig,
        init: &State<T>,
    ) -> Result<Self> {
        cfg.validate(grid, consts, init)?;
        Self::new(grid, noise, consts, cfg.nu, cfg.dt)
    }

    fn mul_sym(&self, f: &ScalarField<T>, sym: impl Fn(usize) -> T) -> ScalarField<T> {
        let c = f
            .coefficients()
            .iter()
            .enumerate()
            .map(|(i, z)| *z * sym(i))
            .collect();
        ScalarField::from_coefficients(f.n(), c).expect("length")
    }

    /// `-P(u·∇f)` for a velocity and a field given in physical space.
    fn transport(&self, u: (&[T], &[T]), d: (&[T], &[T])) -> ScalarField<T> {
        let p: Vec<T> = (0..u.0.len())
            .map(|i| -(u.0[i] * d.0[i] + u.1[i] * d.1[i]))
            .collect();
        let mut f = self.grid.forward(&p);
        self.grid.dealias_in_place(&mut f);
        f
    }

    /// Non-martingale right-hand sides `(dω₃, dv₃)`.
    pub fn ito_drift(&self, s: &State<T>) -> (ScalarField<T>, ScalarField<T>) {
        let g = self.grid;
        let v = s.v_h(g);
        let u = (g.inverse(&v.u1), g.inverse(&v.u2));
        let dw = (g.inverse(&g.derivative(&s.omega3, 0)), g.inverse(&g.derivative(&s.omega3, 1)));
        let dv = (g.inverse(&g.derivative(&s.v3, 0)), g.inverse(&g.derivative(&s.v3, 1)));
        let mut fw = self.transport((&u.0, &u.1), (&dw.0, &dw.1));
        let mut fv = self.transport((&u.0, &u.1), (&dv.0, &dv.1));
        let lin = self.linear_symbols();
        fw.axpy(T::one(), &self.mul_sym(&s.omega3, |i| lin[i]));
        fw.axpy(T::one(), &self.mul_sym(&s.v3, |i| self.stretch[i]));
        fv.axpy(T::one(), &self.mul_sym(&s.v3, |i| lin[i]));
        (fw, fv)
    }

    /// Symbol of `νΔ + ½∇·[Q_H(0)∇·]` per half-spectrum mode.
    pub fn linear_symbols(&self) -> Vec<T> {
        (0..self.grid.spectral_len())
            .map(|idx| {
                let (a, b) = self.grid.wavevector(idx);
                T::lit(linear_symbol(self.nu, &self.consts.q_h0, a as f64, b as f64))
            })
            .collect()
    }

    /// Martingale increments `(-P(dW_H·∇ω₃ - ω_H·∇dW₃), -P(dW_H·∇v₃))`.
    pub fn noise_term(&self, s: &State<T>, inc: &Increment<T>) -> (ScalarField<T>, ScalarField<T>) {
        let g = self.grid;
        let w = (g.inverse(&inc.dw_h.u1), g.inverse(&inc.dw_h.u2));
        let dw = (g.inverse(&g.derivative(&s.omega3, 0)), g.inverse(&g.derivative(&s.omega3, 1)));
        let dv = (g.inverse(&g.derivative(&s.v3, 0)), g.inverse(&g.derivative(&s.v3, 1)));
        let d3 = (g.inverse(&g.derivative(&inc.dw3, 0)), g.inverse(&g.derivative(&inc.dw3, 1)));
        // ω_H = (∂2v₃, -∂1v₃)
        let p: Vec<T> = (0..w.0.len())
            .map(|i| -(w.0[i] * dw.0[i] + w.1[i] * dw.1[i]) + (dv.1[i] * d3.0[i] - dv.0[i] * d3.1[i]))
            .collect();
        let mut fw = g.forward(&p);
        g.dealias_in_place(&mut fw);
        let fv = self.transport((&w.0, &w.1), (&dv.0, &dv.1));
        (fw, fv)
    }

    /// One step driven by standard Gaussians `gauss` (scaled by `√dt` inside).
    pub fn step_with(&self, s: &mut State<T>, gauss: &[Complex<T>]) {
        let g = self.grid;
        let dt = T::lit(self.dt);
        let inc = self.noise.increment_from(gauss, dt);
        let v = g.biot_savart(&s.omega3).expect("state has zero mean");
        let vh = (g.inverse(&v.u1), g.inverse(&v.u2));
        let dwh = (g.inverse(&inc.dw_h.u1), g.inverse(&inc.dw_h.u2));
        let dw = (g.inverse(&g.derivative(&s.omega3, 0)), g.inverse(&g.derivative(&s.omega3, 1)));
        let dv = (g.inverse(&g.derivative(&s.v3, 0)), g.inverse(&g.derivative(&s.v3, 1)));
        let d3 = (g.inverse(&g.derivative(&inc.dw3, 0)), g.inverse(&g.derivative(&inc.dw3, 1)));
        let len = vh.0.len();
        let mut pw = Vec::with_capacity(len);
        let mut pv = Vec::with_capacity(len);
        for i in 0..len {
            let u1 = vh.0[i] * dt + dwh.0[i];
            let u2 = vh.1[i] * dt + dwh.1[i];
            pw.push(-(u1 * dw.0[i] + u2 * dw.1[i]) + (dv.1[i] * d3.0[i] - dv.0[i] * d3.1[i]));
            pv.push(-(u1 * dv.0[i] + u2 * dv.1[i]));
        }
        let mut fw = g.forward(&pw);
        let mut fv = g.forward(&pv);
        g.dealias_in_place(&mut fw);
        g.dealias_in_place(&mut fv);
        let cw = s.omega3.coefficients_mut();
        let cv = s.v3.coefficients();
        for i in 0..cw.len() {
            let x = cw[i] + fw.coefficients()[i] + cv[i] * (self.stretch[i] * dt);
            cw[i] = x * self.factor[i];
        }
        let cv = s.v3.coefficients_mut();
        for i in 0..cv.len() {
            cv[i] = (cv[i] + fv.coefficients()[i]) * self.factor[i];
        }
        s.omega3.pin_mean();
        s.v3.pin_mean();
        s.t += self.dt;
    }

    pub fn step<R: Rng>(&self, s: &mut State<T>, rng: &mut R) {
        let gauss = self.noise.draw_gaussians(self.grid, rng);
        self.step_with(s, &gauss);
    }

    /// `E[‖v₃ⁿ⁺¹‖² | v₃ⁿ] - ‖v₃ⁿ‖² - R(v₃ⁿ)dt` for the scheme, computed in
    /// closed form from the Gaussian structure of the increment. `R` is
    /// [`Self::semi_discrete_energy_rate`], so the residual isolates the
    /// time-stepping error (`O(dt²)` per step).
    pub fn conditional_energy_residual(&mut self, s: &State<T>) -> f64 {
        let (step, rate) = self.energy_step_and_rate(s);
        step - self.dt * rate
    }

    /// `d/dt E‖v₃‖²` of the spectrally truncated equation in continuous time
    /// at `s`; `-2ν‖∇v₃‖²` in the continuum, slightly lower on the grid
    /// because noise energy pushed beyond the band is removed.
    pub fn semi_discrete_energy_rate(&mut self, s: &State<T>) -> f64 {
        self.energy_step_and_rate(s).1
    }

    /// `(E[‖v₃ⁿ⁺¹‖² | v₃ⁿ] - ‖v₃ⁿ‖², R(v₃ⁿ))`.
    fn energy_step_and_rate(&mut self, s: &State<T>) -> (f64, f64) {
        let g = self.grid;
        if self.qh_phys.is_none() {
            let n = g.n();
            let sn = self.noise;
            let tab = |a: &[Complex<T>], b: &[Complex<T>]| {
                let c = a.iter().zip(b).map(|(x, y)| *x * y.conj()).collect();
                g.inverse(&ScalarField::from_coefficients(n, c).expect("length"))
            };
            self.qh_phys = Some([
                tab(&sn.sigma_h1, &sn.sigma_h1),
                tab(&sn.sigma_h1, &sn.sigma_h2),
                tab(&sn.sigma_h2, &sn.sigma_h2),
            ]);
        }
        let q = self.qh_phys.as_ref().expect("tables");
        let dt = self.dt;
        // deterministic part
        let v = s.v_h(g);
        let u = (g.inverse(&v.u1), g.inverse(&v.u2));
        let dv = (g.inverse(&g.derivative(&s.v3, 0)), g.inverse(&g.derivative(&s.v3, 1)));
        let tr = self.transport((&u.0, &u.1), (&dv.0, &dv.1));
        // noise variance per mode: Σ_j Q̂_ab(j) 4π²(m-j)_a(m-j)_b |v̂(m-j)|²
        let tp2 = 4.0 * PI * PI;
        let spec = |f: &dyn Fn(f64, f64) -> f64| {
            let c = s
                .v3
                .coefficients()
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let (a, b) = g.wavevector(i);
                    let val = tp2 * f(a as f64, b as f64) * z.norm_sqr().to_f64_lossy();
                    Complex::new(T::lit(val), T::zero())
                })
                .collect();
            g.inverse(&ScalarField::from_coefficients(g.n(), c).expect("length"))
        };
        let f11 = spec(&|a, _| a * a);
        let f12 = spec(&|a, b| a * b);
        let f22 = spec(&|_, b| b * b);
        let p: Vec<T> = (0..f11.len())
            .map(|i| q[0][i] * f11[i] + T::lit(2.0) * q[1][i] * f12[i] + q[2][i] * f22[i])
            .collect();
        let var = g.forward(&p);
        let (mut change, mut rate) = (0.0, 0.0);
        for idx in 0..g.spectral_len() {
            if !g.in_band(idx) {
                continue;
            }
            let w = g.weight()[idx].to_f64_lossy();
            let f = self.factor[idx].to_f64_lossy();
            let lam = -f.ln() / dt;
            let c = s.v3.coefficients()[idx];
            let v = Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy());
            let c = tr.coefficients()[idx];
            let t = Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy());
            let q = var.coefficients()[idx].re.to_f64_lossy();
            let v2 = v.norm_sqr();
            let vt = 2.0 * (v.conj() * t).re;
            change += w * (f * f * ((v + t * dt).norm_sqr() + dt * q) - v2);
            rate += w * (-2.0 * lam * v2 + vt + q);
        }
        (change, rate)
    }

    /// Quadratic-variation rates `(Σ|σ̂_H*ŵ|²)` of the three weak-form
    /// martingales for each observable: `w = v₃∇φ`, `w = ω₃∇φ`, and
    /// `Σ|σ̂₃* ĝ|²` with `g = ω_H·∇φ`.
    pub fn martingale_rates(&self, s: &State<T>, obs: &ObservableSet<T>) -> Vec<[f64; 3]> {
        let g = self.grid;
        let vp = g.inverse(&s.v3);
        let wp = g.inverse(&s.omega3);
        let oh = s.omega_h(g);
        let oh = (g.inverse(&oh.u1), g.inverse(&oh.u2));
        let sn = self.noise;
        let pair = |w1: &ScalarField<T>, w2: &ScalarField<T>| -> f64 {
            (0..g.spectral_len())
                .map(|i| {
                    let z = sn.sigma_h1[i].conj() * w1.coefficients()[i]
                        + sn.sigma_h2[i].conj() * w2.coefficients()[i];
                    g.weight()[i].to_f64_lossy() * z.norm_sqr().to_f64_lossy()
                })
                .sum()
        };
        obs.items
            .iter()
            .map(|o| {
                let gx = g.inverse(&o.grad.u1);
                let gy = g.inverse(&o.grad.u2);
                let prod = |f: &[T], h: &[T]| g.forward(&f.iter().zip(h).map(|(a, b)| *a * *b).collect::<Vec<_>>());
                let m1 = pair(&prod(&vp, &gx), &prod(&vp, &gy));
                let m2 = pair(&prod(&wp, &gx), &prod(&wp, &gy));
                let gg: Vec<T> = (0..gx.len()).map(|i| oh.0[i] * gx[i] + oh.1[i] * gy[i]).collect();
                let gh = g.forward(&gg);
                let m3 = (0..g.spectral_len())
                    .map(|i| {
                        let z = sn.sigma3[i].conj() * gh.coefficients()[i];
                        g.weight()[i].to_f64_lossy() * z.norm_sqr().to_f64_lossy()
                    })
                    .sum();
                [m1, m2, m3]
            })
            .collect()
    }

    fn record(
        &self,
        s: &State<T>,
        obs: &ObservableSet<T>,
        diag: Diagnostics,
        st: &mut TrajectoryStats,
        dissipation: f64,
        residual: f64,
    ) {
        record_norms(self.grid, s, obs, st, dissipation);
        st.energy_residual.push(residual);
        if diag.martingales {
            for (j, r) in self.martingale_rates(s, obs).into_iter().enumerate() {
                for (m, x) in r.into_iter().enumerate() {
                    st.qv_rate[m][j].push(x);
                }
            }
        }
    }

    /// Integrates `steps` steps from `init`, recording every `record_every`
    /// steps and at the end.
    pub fn run_trajectory<B: BrownianSource<T>>(
        &mut self,
        init: &State<T>,
        steps: usize,
        record_every: usize,
        obs: &ObservableSet<T>,
        diag: Diagnostics,
        source: &mut B,
    ) -> Result<(State<T>, TrajectoryStats)> {
        self.run_observed(init, steps, record_every, obs, diag, source, &mut |_, _| {})
    }

    /// As [`run_trajectory`](Self::run_trajectory), handing each recorded
    /// state and its record index to `observer`.
    #[allow(clippy::too_many_arguments)]
    pub fn run_observed<B: BrownianSource<T>>(
        &mut self,
        init: &State<T>,
        steps: usize,
        record_every: usize,
        obs: &ObservableSet<T>,
        diag: Diagnostics,
        source: &mut B,
        observer: &mut dyn FnMut(usize, &State<T>),
    ) -> Result<(State<T>, TrajectoryStats)> {
        if steps == 0 {
            return Err(Error::Config("trajectory needs at least one step".into()));
        }
        let record_every = record_every.max(1);
        let mut st = TrajectoryStats::empty(obs.len(), steps);
        let mut s = init.clone();
        check_state(self.grid, &s, 0)?;
        let mut dissipation = 0.0;
        let mut residual = 0.0;
        self.record(&s, obs, diag, &mut st, dissipation, residual);
        observer(0, &s);
        for step in 1..=steps {
            let grad = self.grid.grad_norm_sq(&s.v3).to_f64_lossy();
            if diag.energy_residual {
                residual += self.conditional_energy_residual(&s);
            }
            let gauss = source.next(self.noise, self.grid);
            self.step_with(&mut s, &gauss);
            dissipation += 2.0 * self.nu * grad * self.dt;
            check_state(self.grid, &s, step)?;
            if step % record_every == 0 || step == steps {
                self.record(&s, obs, diag, &mut st, dissipation, residual);
                observer(st.len() - 1, &s);
            }
        }
        Ok((s, st))
    }
}

/// Per-mode assembly of `Σ_k (σ_k^H·∇ω_H)·∇σ_k³` over the real orthonormal
/// basis, returned in physical space. Quadratic in the modes, so it is summed
/// directly rather than through the covariance constants.
pub fn corrector_sum<T: Real>(
    grid: &FourierGrid<T>,
    sn: &SpectralNoise<T>,
    omega_h: &VectorField2<T>,
) -> Vec<T> {
    let n = grid.n();
    let len = grid.spectral_len();
    // Gradient of each ω_H component in physical space
    let grads: Vec<Vec<T>> = [&omega_h.u1, &omega_h.u2]
        .iter()
        .flat_map(|f| [grid.inverse(&grid.derivative(f, 0)), grid.inverse(&grid.derivative(f, 1))])
        .collect();
    let mut c = [[0.0f64; 2]; 2];
    for idx in 0..len {
        if !crate::noise::noise_mode(grid, idx) {
            continue;
        }
        let (a, b) = grid.wavevector(idx);
        if b == 0 && a < 0 {
            continue;
        }
        let k = [a as f64, b as f64];
        let sh = [
            crate::covariance::to_c64(sn.sigma_h1[idx]),
            crate::covariance::to_c64(sn.sigma_h2[idx]),
        ];
        let s3 = crate::covariance::to_c64(sn.sigma3[idx]);
        // basis pair √2 Re(σ̂ e_k), √2 Im(σ̂ e_k); summed over the pair the
        // product is x-independent: 2 Re(σ̂_j conj(2πik_m σ̂₃)).
        for j in 0..2 {
            for m in 0..2 {
                let d = Complex::new(0.0, 2.0 * PI * k[m]) * s3;
                c[j][m] += 2.0 * (sh[j] * d.conj()).re;
            }
        }
    }
    let mut out = vec![T::zero(); n * n];
    for i in 0..n * n {
        let mut acc = T::zero();
        for j in 0..2 {
            for m in 0..2 {
                // (σ^H·∇ω_H)·∇σ³ = Σ_{j,m} σ^j ∂_j ω_m ∂_m σ³
                acc = acc + T::lit(c[j][m]) * grads[2 * m + j][i];
            }
        }
        out[i] = acc;
    }
    out
}
