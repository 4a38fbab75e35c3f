//! Deterministic limit system with eddy viscosity `½∇·[Q̄∇·]` and the
//! first-order coupling `∇·(A ω_H)`, integrated by integrating-factor RK4.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::covariance::{predicted_limit_matrix, sym_eigenvalues, Mat2};
use crate::error::{invalid, Error, Result};
use crate::noise::GammaRule;
use crate::observables::ObservableSet;
use crate::scalar::Real;
use crate::spde::{check_state, linear_symbol, record_norms, stretch_symbol, State, TrajectoryStats};
use crate::spectral::{FourierGrid, ScalarField};

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub nu: f64,
    /// `Q̄`, symmetric and nonnegative.
    pub qbar: Mat2,
    /// First-order coefficient `A`.
    pub a: Mat2,
}

impl LimitParams {
    /// `Q̄ = 2κI₂` and `A = 2κ·ratio·[[0,-1],[1,0]]` for a calibrated family.
    pub fn for_rule(nu: f64, kappa: f64, rule: &GammaRule) -> Self {
        Self {
            nu,
            qbar: [[2.0 * kappa, 0.0], [0.0, 2.0 * kappa]],
            a: predicted_limit_matrix(kappa, rule),
        }
    }

    /// The same eddy viscosity with the first-order term switched off.
    pub fn without_aka(&self) -> Self {
        Self {
            a: [[0.0; 2]; 2],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(invalid("nu", self.nu, "viscosity must be positive"));
        }
        let q = &self.qbar;
        if q.iter().flatten().chain(self.a.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::Config("Q̄ and A must be finite".into()));
        }
        if (q[0][1] - q[1][0]).abs() > 1e-12 * (1.0 + q[0][1].abs()) {
            return Err(invalid("qbar", q[0][1] - q[1][0], "Q̄ must be symmetric"));
        }
        let e = sym_eigenvalues(q)[0];
        if e < -1e-12 {
            return Err(invalid("qbar", e, "Q̄ must be nonnegative definite"));
        }
        Ok(())
    }
}

/// Verdict of the uniqueness inequality `x·Q̄x + y·Q̄y + 2x·Ay⊥ >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub pass: bool,
    pub min_eigenvalue: f64,
}

/// Minimum eigenvalue of the 4×4 symmetric form `[[Q̄, AR], [(AR)ᵀ, Q̄]]`,
/// `R y = y⊥ = (y₂, -y₁)`.
pub fn uniqueness_condition(p: &LimitParams) -> UniquenessVerdict {
    let q = &p.qbar;
    let a = &p.a;
    // A R with R = [[0, 1], [-1, 0]]
    let ar = [[-a[0][1], a[0][0]], [-a[1][1], a[1][0]]];
    let qs = [
        [q[0][0], 0.5 * (q[0][1] + q[1][0])],
        [0.5 * (q[0][1] + q[1][0]), q[1][1]],
    ];
    let m = Matrix4::new(
        qs[0][0], qs[0][1], ar[0][0], ar[0][1],
        qs[1][0], qs[1][1], ar[1][0], ar[1][1],
        ar[0][0], ar[1][0], qs[0][0], qs[0][1],
        ar[0][1], ar[1][1], qs[1][0], qs[1][1],
    );
    let min = m.symmetric_eigenvalues().min();
    let scale = q.iter().flatten().chain(a.iter().flatten()).fold(0.0f64, |s, x| s.max(x.abs()));
    UniquenessVerdict {
        pass: min >= -1e-12 * scale.max(1.0),
        min_eigenvalue: min,
    }
}

/// Time step bound for the explicit advection: `0.2/(‖v_H‖∞·2πn/3)`.
pub fn limit_stability_bound<T: Real>(grid: &FourierGrid<T>, s: &State<T>) -> f64 {
    let v = s.v_h(grid);
    let a = grid.inverse(&v.u1);
    let b = grid.inverse(&v.u2);
    let vmax = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.to_f64_lossy().hypot(y.to_f64_lossy()))
        .fold(0.0, f64::max);
    if vmax > 0.0 {
        0.2 / (vmax * 2.0 * PI * grid.n() as f64 / 3.0)
    } else {
        f64::INFINITY
    }
}

/// Integrator for one parameter set on one grid.
pub struct LimitSolver<'a, T: Real> {
    pub grid: &'a FourierGrid<T>,
    pub params: LimitParams,
    lin: Vec<T>,
    stretch: Vec<T>,
}

type Pair<T> = (ScalarField<T>, ScalarField<T>);

impl<'a, T: Real> LimitSolver<'a, T> {
    pub fn new(grid: &'a FourierGrid<T>, params: LimitParams) -> Result<Self> {
        params.validate()?;
        let len = grid.spectral_len();
        let mut lin = vec![T::zero(); len];
        let mut stretch = vec![T::zero(); len];
        for idx in 0..len {
            let (a, b) = grid.wavevector(idx);
            let (a, b) = (a as f64, b as f64);
            lin[idx] = T::lit(linear_symbol(params.nu, &params.qbar, a, b));
            if !grid.is_nyquist(idx) {
                stretch[idx] = T::lit(stretch_symbol(&params.a, a, b));
            }
        }
        Ok(Self {
            grid,
            params,
            lin,
            stretch,
        })
    }

    /// Advection terms `(-P(v_H·∇ω₃), -P(v_H·∇v₃))`.
    fn advection(&self, w: &ScalarField<T>, v: &ScalarField<T>) -> Pair<T> {
        let g = self.grid;
        let vel = g.biot_savart(w).expect("zero-mean vorticity");
        let u = (g.inverse(&vel.u1), g.inverse(&vel.u2));
        let dw = (g.inverse(&g.derivative(w, 0)), g.inverse(&g.derivative(w, 1)));
        let dv = (g.inverse(&g.derivative(v, 0)), g.inverse(&g.derivative(v, 1)));
        let len = u.0.len();
        let pw: Vec<T> = (0..len).map(|i| -(u.0[i] * dw.0[i] + u.1[i] * dw.1[i])).collect();
        let pv: Vec<T> = (0..len).map(|i| -(u.0[i] * dv.0[i] + u.1[i] * dv.1[i])).collect();
        (g.dealias(&g.forward(&pw)), g.dealias(&g.forward(&pv)))
    }

    /// Full right-hand side of the limit system.
    pub fn limit_rhs(&self, s: &State<T>) -> Pair<T> {
        let (mut fw, mut fv) = self.advection(&s.omega3, &s.v3);
        for i in 0..self.lin.len() {
            let w = s.omega3.coefficients()[i];
            let v = s.v3.coefficients()[i];
            fw.coefficients_mut()[i] = fw.coefficients()[i] + w * self.lin[i] + v * self.stretch[i];
            fv.coefficients_mut()[i] = fv.coefficients()[i] + v * self.lin[i];
        }
        (fw, fv)
    }

    /// `exp(h·[[L, s], [0, L]])` applied per mode.
    fn propagate(&self, p: &Pair<T>, h: f64) -> Pair<T> {
        let ht = T::lit(h);
        let mut w = p.0.clone();
        let mut v = p.1.clone();
        for i in 0..self.lin.len() {
            let e = (self.lin[i] * ht).exp();
            let vi = p.1.coefficients()[i];
            w.coefficients_mut()[i] = (p.0.coefficients()[i] + vi * (self.stretch[i] * ht)) * e;
            v.coefficients_mut()[i] = vi * e;
        }
        (w, v)
    }

    fn axpy(a: &Pair<T>, c: f64, b: &Pair<T>) -> Pair<T> {
        let mut r = a.clone();
        r.0.axpy(T::lit(c), &b.0);
        r.1.axpy(T::lit(c), &b.1);
        r
    }

    /// One Lawson RK4 step; the linear part, including the coupling, is exact.
    pub fn step(&self, s: &mut State<T>, h: f64) {
        let u = (s.omega3.clone(), s.v3.clone());
        let n = |p: &Pair<T>| self.advection(&p.0, &p.1);
        let k1 = n(&u);
        let k2 = n(&self.propagate(&Self::axpy(&u, 0.5 * h, &k1), 0.5 * h));
        let eu_half = self.propagate(&u, 0.5 * h);
        let k3 = n(&Self::axpy(&eu_half, 0.5 * h, &k2));
        let eu = self.propagate(&u, h);
        let k4 = n(&Self::axpy(&eu, h, &self.propagate(&k3, 0.5 * h)));
        let mut mid = Self::axpy(&k2, 1.0, &k3);
        mid = self.propagate(&mid, 0.5 * h);
        let mut acc = self.propagate(&k1, h);
        acc = Self::axpy(&acc, 2.0, &mid);
        acc = Self::axpy(&acc, 1.0, &k4);
        let next = Self::axpy(&eu, h / 6.0, &acc);
        s.omega3 = next.0;
        s.v3 = next.1;
        s.omega3.pin_mean();
        s.v3.pin_mean();
        s.t += h;
    }

    /// Integrates `steps` steps of size `dt`, recording every `record_every`.
    pub fn run_limit(
        &self,
        init: &State<T>,
        dt: f64,
        steps: usize,
        record_every: usize,
        obs: &ObservableSet<T>,
    ) -> Result<(State<T>, TrajectoryStats)> {
        self.run_observed(init, dt, steps, record_every, obs, &mut |_, _| {})
    }

    /// As [`run_limit`](Self::run_limit), handing each recorded state and its
    /// record index to `observer`.
    pub fn run_observed(
        &self,
        init: &State<T>,
        dt: f64,
        steps: usize,
        record_every: usize,
        obs: &ObservableSet<T>,
        observer: &mut dyn FnMut(usize, &State<T>),
    ) -> Result<(State<T>, TrajectoryStats)> {
        if !(dt > 0.0) {
            return Err(invalid("dt", dt, "time step must be positive"));
        }
        if steps == 0 {
            return Err(Error::Config("limit run needs at least one step".into()));
        }
        let bound = limit_stability_bound(self.grid, init);
        if dt > bound {
            return Err(Error::Unstable { dt, bound });
        }
        let record_every = record_every.max(1);
        let mut st = TrajectoryStats::empty(obs.len(), steps);
        let mut s = init.clone();
        let mut diss = 0.0;
        record_norms(self.grid, &s, obs, &mut st, diss);
        observer(0, &s);
        for step in 1..=steps {
            let before = self.grid.grad_norm_sq(&s.v3).to_f64_lossy();
            self.step(&mut s, dt);
            let after = self.grid.grad_norm_sq(&s.v3).to_f64_lossy();
            // trapezoid rule, consistent with the fourth-order integrator
            diss += self.params.nu * (before + after) * dt;
            check_state(self.grid, &s, step)?;
            if step % record_every == 0 || step == steps {
                record_norms(self.grid, &s, obs, &mut st, diss);
                observer(st.len() - 1, &s);
            }
        }
        Ok((s, st))
    }

    /// `⟨ω₃, ∇·(Aω_H)⟩` directly and as `-⟨∇ω₃, Aω_H⟩`.
    pub fn pairing_two_ways(&self, s: &State<T>) -> (f64, f64) {
        let g = self.grid;
        let a = &self.params.a;
        let oh = s.omega_h(g);
        let mut m1 = oh.u1.clone();
        m1.scale(T::lit(a[0][0]));
        m1.axpy(T::lit(a[0][1]), &oh.u2);
        let mut m2 = oh.u1.clone();
        m2.scale(T::lit(a[1][0]));
        m2.axpy(T::lit(a[1][1]), &oh.u2);
        let div = {
            let mut d = g.derivative(&m1, 0);
            d.axpy(T::one(), &g.derivative(&m2, 1));
            d
        };
        let direct = g.inner(&s.omega3, &div).to_f64_lossy();
        let adjoint = -(g.inner(&g.derivative(&s.omega3, 0), &m1)
            + g.inner(&g.derivative(&s.omega3, 1), &m2))
        .to_f64_lossy();
        (direct, adjoint)
    }
}

/// Single-mode probe of the first-order coupling. For one Fourier mode `k` the
/// advection vanishes identically, so `(ω̂, v̂)` obeys the 2×2 system
/// `[[λ, s], [0, λ]]`, a Jordan block: both eigenvalues equal `λ` and the
/// coupling produces at most a `t·e^{λt}` transient, never exponential growth.
#[derive(Clone, Debug, Serialize)]
pub struct AkaProbe {
    pub k: (i64, i64),
    /// Both eigenvalues of the mode matrix.
    pub eigenvalue: f64,
    /// Off-diagonal coupling `s(k)`.
    pub coupling: f64,
    /// Decay rate of `|v̂|` fitted from the run.
    pub observed_rate: f64,
    /// Largest relative deviation of `(ω̂, v̂)` from the exact exponential.
    pub max_rel_error: f64,
    /// Peak of `|ω̂(t)| / |ω̂(0)|`, the transient amplification.
    pub peak_amplification: f64,
}

pub fn aka_probe<T: Real>(
    grid: &FourierGrid<T>,
    params: &LimitParams,
    k: (i64, i64),
    horizon: f64,
    steps: usize,
) -> Result<AkaProbe> {
    let solver = LimitSolver::new(grid, params.clone())?;
    let idx = grid
        .index_of(k.0, k.1)
        .filter(|i| grid.in_band(*i) && *i != 0)
        .ok_or_else(|| Error::Config(format!("probe mode {k:?} is not a resolved nonzero mode")))?;
    let (k1, k2) = (k.0 as f64, k.1 as f64);
    let lam = linear_symbol(params.nu, &params.qbar, k1, k2);
    let s_k = stretch_symbol(&params.a, k1, k2);
    // 0.5 cos(2π k·x) has coefficient 0.25 at ±k
    let w = grid.from_fn(|a, b| 0.5 * (2.0 * PI * (k1 * a + k2 * b)).cos());
    let v = w.clone();
    let mut s = State::new(w, v)?;
    let dt = horizon / steps as f64;
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 1.0;
    for step in 1..=steps {
        solver.step(&mut s, dt);
        let t = step as f64 * dt;
        let e = (lam * t).exp();
        let want_v = 0.25 * e;
        let want_w = (0.25 + s_k * t * 0.25) * e;
        let got_w = s.omega3.coefficients()[idx].re.to_f64_lossy();
        let got_v = s.v3.coefficients()[idx].re.to_f64_lossy();
        // ω̂ crosses zero when s(k) < 0, so scale by its envelope
        let env = 0.25 * (1.0 + s_k.abs() * t) * e;
        worst = worst
            .max((got_w - want_w).abs() / env)
            .max((got_v - want_v).abs() / want_v.abs());
        peak = peak.max(got_w.abs() / 0.25);
    }
    let vt = s.v3.coefficients()[idx].re.to_f64_lossy();
    Ok(AkaProbe {
        k,
        eigenvalue: lam,
        coupling: s_k,
        observed_rate: (vt / 0.25).ln() / horizon,
        max_rel_error: worst,
        peak_amplification: peak,
    })
}
