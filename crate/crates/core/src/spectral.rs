//! Fourier calculus on the periodic unit square `[-1/2, 1/2]^2`.
//!
//! Basis functions are `e_k(x) = exp(2πi k·x)` and the forward coefficient is
//! `f̂(k) = ∫ f(x) e_{-k}(x) dx`. Grid point `(j1, j2)` sits at `x = (j1/n, j2/n)`
//! (mod 1), so index 0 is the origin. Coefficients of real fields are stored as a
//! half spectrum: `n` rows indexed by `k1` in FFT order and `n/2 + 1` columns for
//! `k2 = 0..=n/2`.

use std::sync::Arc;

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Relative tolerance used to decide that a field has zero mean.
const MEAN_TOL: f64 = 1e-12;

pub struct FourierGrid<T: Real> {
    n: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
    k1: Vec<T>,
    k2: Vec<T>,
    ksq: Vec<T>,
    weight: Vec<T>,
    nyquist: Vec<bool>,
    in_band: Vec<bool>,
}

impl<T: Real> std::fmt::Debug for FourierGrid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierGrid").field("n", &self.n).finish()
    }
}

/// Scalar field stored by its half-spectrum Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T: Real> {
    n: usize,
    coef: Vec<Complex<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField2<T: Real> {
    pub u1: ScalarField<T>,
    pub u2: ScalarField<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coef: vec![Complex::new(T::zero(), T::zero()); n * (n / 2 + 1)],
        }
    }

    pub fn from_coefficients(n: usize, coef: Vec<Complex<T>>) -> Result<Self> {
        if coef.len() != n * (n / 2 + 1) {
            return Err(Error::GridMismatch {
                expected: n,
                found: coef.len(),
            });
        }
        Ok(Self { n, coef })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        &self.coef
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coef
    }

    pub fn into_coefficients(self) -> Vec<Complex<T>> {
        self.coef
    }

    /// Spatial mean, i.e. the `k = 0` coefficient.
    pub fn mean(&self) -> T {
        self.coef[0].re
    }

    pub fn pin_mean(&mut self) {
        self.coef[0] = Complex::new(T::zero(), T::zero());
    }

    pub fn scale(&mut self, a: T) {
        for c in &mut self.coef {
            *c = *c * a;
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: T, other: &Self) {
        debug_assert_eq!(self.n, other.n);
        for (c, o) in self.coef.iter_mut().zip(&other.coef) {
            *c = *c + *o * a;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coef.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest coefficient modulus difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.coef
            .iter()
            .zip(&other.coef)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }
}

impl<T: Real> VectorField2<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u1: ScalarField::zeros(n),
            u2: ScalarField::zeros(n),
        }
    }
}

impl<T: Real> FourierGrid<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(invalid("n", n as f64, "grid size must be even and at least 4"));
        }
        let half = n / 2 + 1;
        let mut rp = RealFftPlanner::<T>::new();
        let mut cp = FftPlanner::<T>::new();
        let cut = n as f64 / 3.0;
        let len = n * half;
        let mut k1 = Vec::with_capacity(len);
        let mut k2 = Vec::with_capacity(len);
        let mut ksq = Vec::with_capacity(len);
        let mut weight = Vec::with_capacity(len);
        let mut nyquist = Vec::with_capacity(len);
        let mut in_band = Vec::with_capacity(len);
        for i1 in 0..n {
            let a = wavenumber(i1, n);
            for b in 0..half as i64 {
                k1.push(T::lit(a as f64));
                k2.push(T::lit(b as f64));
                ksq.push(T::lit((a * a + b * b) as f64));
                let w = if b == 0 || b == (n / 2) as i64 { 1.0 } else { 2.0 };
                weight.push(T::lit(w));
                let nyq = a == -((n / 2) as i64) || b == (n / 2) as i64;
                nyquist.push(nyq);
                in_band.push((a.abs() as f64) <= cut && (b as f64) <= cut);
            }
        }
        Ok(Self {
            n,
            half,
            r2c: rp.plan_fft_forward(n),
            c2r: rp.plan_fft_inverse(n),
            col_fwd: cp.plan_fft_forward(n),
            col_inv: cp.plan_fft_inverse(n),
            k1,
            k2,
            ksq,
            weight,
            nyquist,
            in_band,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored half-spectrum coefficients.
    pub fn spectral_len(&self) -> usize {
        self.n * self.half
    }

    pub fn half_width(&self) -> usize {
        self.half
    }

    /// Storage index of the wavevector `(k1, k2)`; `None` unless `k2 >= 0` and the
    /// mode is representable.
    pub fn index_of(&self, k1: i64, k2: i64) -> Option<usize> {
        let h = (self.n / 2) as i64;
        if k2 < 0 || k2 > h || k1 < -h || k1 >= h {
            return None;
        }
        let i1 = if k1 < 0 { k1 + self.n as i64 } else { k1 } as usize;
        Some(i1 * self.half + k2 as usize)
    }

    /// Integer wavevector stored at `idx`.
    pub fn wavevector(&self, idx: usize) -> (i64, i64) {
        (wavenumber(idx / self.half, self.n), (idx % self.half) as i64)
    }

    pub fn k1(&self) -> &[T] {
        &self.k1
    }

    pub fn k2(&self) -> &[T] {
        &self.k2
    }

    pub fn k_squared(&self) -> &[T] {
        &self.ksq
    }

    /// Multiplicity of each stored mode in full-lattice sums (1 or 2).
    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    /// Modes on the Nyquist row or column.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        self.nyquist[idx]
    }

    /// Modes kept by the 2/3 rule, `max(|k1|, |k2|) <= n/3`.
    pub fn in_band(&self, idx: usize) -> bool {
        self.in_band[idx]
    }

    /// Physical coordinates of grid index `j`, wrapped into `[-1/2, 1/2)`.
    pub fn coordinate(&self, j: usize) -> f64 {
        let x = j as f64 / self.n as f64;
        if x >= 0.5 {
            x - 1.0
        } else {
            x
        }
    }

    pub fn zeros(&self) -> ScalarField<T> {
        ScalarField::zeros(self.n)
    }

    /// Samples `f(x1, x2)` at the grid points and transforms.
    pub fn from_fn(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField<T> {
        let n = self.n;
        let mut vals = vec![T::zero(); n * n];
        for j1 in 0..n {
            let x1 = self.coordinate(j1);
            for j2 in 0..n {
                vals[j1 * n + j2] = T::lit(f(x1, self.coordinate(j2)));
            }
        }
        self.forward(&vals)
    }

    /// Forward transform of row-major physical samples (`values[j1 * n + j2]`).
    pub fn forward(&self, values: &[T]) -> ScalarField<T> {
        let n = self.n;
        let h = self.half;
        assert_eq!(values.len(), n * n, "physical buffer has wrong length");
        let zero = Complex::new(T::zero(), T::zero());
        let mut rows = vec![zero; n * h];
        let mut input = vec![T::zero(); n];
        let mut scratch = self.r2c.make_scratch_vec();
        for j1 in 0..n {
            input.copy_from_slice(&values[j1 * n..(j1 + 1) * n]);
            self.r2c
                .process_with_scratch(&mut input, &mut rows[j1 * h..(j1 + 1) * h], &mut scratch)
                .expect("forward row transform");
        }
        let mut cols = vec![zero; n * h];
        transpose(&rows, &mut cols, n, h);
        self.col_fwd.process(&mut cols);
        transpose(&cols, &mut rows, h, n);
        let s = T::one() / T::lit((n * n) as f64);
        for c in &mut rows {
            *c = *c * s;
        }
        ScalarField { n, coef: rows }
    }

    /// Physical samples of a field, row-major.
    pub fn inverse(&self, f: &ScalarField<T>) -> Vec<T> {
        let n = self.n;
        let h = self.half;
        self.check(f);
        let zero = Complex::new(T::zero(), T::zero());
        let mut cols = vec![zero; n * h];
        transpose(&f.coef, &mut cols, n, h);
        self.col_inv.process(&mut cols);
        let mut rows = vec![zero; n * h];
        transpose(&cols, &mut rows, h, n);
        let mut out = vec![T::zero(); n * n];
        let mut scratch = self.c2r.make_scratch_vec();
        for j1 in 0..n {
            let row = &mut rows[j1 * h..(j1 + 1) * h];
            row[0].im = T::zero();
            row[h - 1].im = T::zero();
            self.c2r
                .process_with_scratch(row, &mut out[j1 * n..(j1 + 1) * n], &mut scratch)
                .expect("inverse row transform");
        }
        out
    }

    /// Makes the `k2 = 0` and `k2 = n/2` columns Hermitian, so coefficients set
    /// mode by mode describe a real field.
    pub fn symmetrize(&self, f: &mut ScalarField<T>) {
        let n = self.n;
        let h = self.half;
        let two = T::lit(2.0);
        for col in [0, h - 1] {
            for i1 in 0..n {
                let j1 = (n - i1) % n;
                if j1 < i1 {
                    continue;
                }
                let a = f.coef[i1 * h + col];
                let b = f.coef[j1 * h + col];
                let s = (a + b.conj()) / two;
                f.coef[i1 * h + col] = s;
                f.coef[j1 * h + col] = s.conj();
            }
        }
    }

    /// Gradient `(∂1 f, ∂2 f)`, or `∇⊥ f = (∂2 f, -∂1 f)` when `rotated`.
    pub fn gradient(&self, f: &ScalarField<T>, rotated: bool) -> VectorField2<T> {
        let d1 = self.derivative(f, 0);
        let d2 = self.derivative(f, 1);
        if rotated {
            let mut m = d1;
            m.scale(-T::one());
            VectorField2 { u1: d2, u2: m }
        } else {
            VectorField2 { u1: d1, u2: d2 }
        }
    }

    /// Partial derivative along axis `axis` (0 or 1). Nyquist modes are dropped.
    pub fn derivative(&self, f: &ScalarField<T>, axis: usize) -> ScalarField<T> {
        self.check(f);
        let tp = T::two_pi();
        let k = if axis == 0 { &self.k1 } else { &self.k2 };
        let coef = f
            .coef
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if self.nyquist[i] {
                    Complex::new(T::zero(), T::zero())
                } else {
                    *c * Complex::new(T::zero(), tp * k[i])
                }
            })
            .collect();
        ScalarField { n: self.n, coef }
    }

    pub fn divergence(&self, v: &VectorField2<T>) -> ScalarField<T> {
        let mut d = self.derivative(&v.u1, 0);
        d.axpy(T::one(), &self.derivative(&v.u2, 1));
        d
    }

    /// `∇⊥ · v = ∂2 v1 - ∂1 v2`.
    pub fn curl(&self, v: &VectorField2<T>) -> ScalarField<T> {
        let mut d = self.derivative(&v.u1, 1);
        d.axpy(-T::one(), &self.derivative(&v.u2, 0));
        d
    }

    pub fn laplacian(&self, f: &ScalarField<T>) -> ScalarField<T> {
        self.check(f);
        let c = -T::lit(4.0) * T::PI() * T::PI();
        let coef = f
            .coef
            .iter()
            .zip(&self.ksq)
            .map(|(a, k)| *a * (c * *k))
            .collect();
        ScalarField { n: self.n, coef }
    }

    fn require_zero_mean(&self, f: &ScalarField<T>) -> Result<()> {
        let mean = f.mean().to_f64_lossy();
        let scale = self.l2_norm(f).to_f64_lossy().max(1.0);
        if mean.abs() > MEAN_TOL * scale || f.coef[0].im.to_f64_lossy().abs() > MEAN_TOL * scale {
            return Err(Error::NonZeroMean { mean });
        }
        Ok(())
    }

    /// `G ∗ f`, the zero-mean solution of `-Δu = f`.
    pub fn green_convolve(&self, f: &ScalarField<T>) -> Result<ScalarField<T>> {
        self.check(f);
        self.require_zero_mean(f)?;
        let c = T::lit(4.0) * T::PI() * T::PI();
        let coef = f
            .coef
            .iter()
            .zip(&self.ksq)
            .enumerate()
            .map(|(i, (a, k))| {
                if i == 0 {
                    Complex::new(T::zero(), T::zero())
                } else {
                    *a / (c * *k)
                }
            })
            .collect();
        Ok(ScalarField { n: self.n, coef })
    }

    /// Divergence-free velocity `v = ∇⊥ψ`, `ψ = -G ∗ ω`, so that `∇⊥ · v = ω`.
    pub fn biot_savart(&self, omega: &ScalarField<T>) -> Result<VectorField2<T>> {
        let mut psi = self.green_convolve(omega)?;
        psi.scale(-T::one());
        Ok(self.gradient(&psi, true))
    }

    /// 2/3-rule truncation in place.
    pub fn dealias_in_place(&self, f: &mut ScalarField<T>) {
        self.check(f);
        for (c, keep) in f.coef.iter_mut().zip(&self.in_band) {
            if !keep {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
    }

    pub fn dealias(&self, f: &ScalarField<T>) -> ScalarField<T> {
        let mut g = f.clone();
        self.dealias_in_place(&mut g);
        g
    }

    /// Dealiased pointwise product.
    pub fn product(&self, a: &ScalarField<T>, b: &ScalarField<T>) -> ScalarField<T> {
        let pa = self.inverse(a);
        let pb = self.inverse(b);
        let p: Vec<T> = pa.iter().zip(&pb).map(|(x, y)| *x * *y).collect();
        let mut f = self.forward(&p);
        self.dealias_in_place(&mut f);
        f
    }

    /// `L²` inner product over the unit torus.
    pub fn inner(&self, f: &ScalarField<T>, g: &ScalarField<T>) -> T {
        self.check(f);
        self.check(g);
        f.coef
            .iter()
            .zip(&g.coef)
            .zip(&self.weight)
            .map(|((a, b), w)| *w * (a.re * b.re + a.im * b.im))
            .sum()
    }

    pub fn norm_sq(&self, f: &ScalarField<T>) -> T {
        self.inner(f, f)
    }

    pub fn l2_norm(&self, f: &ScalarField<T>) -> T {
        self.norm_sq(f).sqrt()
    }

    /// `‖∇f‖²`.
    pub fn grad_norm_sq(&self, f: &ScalarField<T>) -> T {
        let c = T::lit(4.0) * T::PI() * T::PI();
        f.coef
            .iter()
            .zip(&self.ksq)
            .zip(&self.weight)
            .map(|((a, k), w)| *w * c * *k * a.norm_sqr())
            .sum()
    }

    /// Point evaluation of the trigonometric interpolant at `(x1, x2)`.
    pub fn eval_at(&self, f: &ScalarField<T>, x1: f64, x2: f64) -> f64 {
        let tp = 2.0 * std::f64::consts::PI;
        f.coef
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ph = tp * (self.k1[i].to_f64_lossy() * x1 + self.k2[i].to_f64_lossy() * x2);
                self.weight[i].to_f64_lossy()
                    * (c.re.to_f64_lossy() * ph.cos() - c.im.to_f64_lossy() * ph.sin())
            })
            .sum()
    }

    /// Maximum absolute value over the grid points.
    pub fn sup_norm(&self, f: &ScalarField<T>) -> T {
        self.inverse(f)
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    fn check(&self, f: &ScalarField<T>) {
        assert_eq!(f.n, self.n, "field belongs to a different grid");
    }
}

/// Signed wavenumber of FFT index `i`.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn transpose<C: Copy>(src: &[C], dst: &mut [C], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
