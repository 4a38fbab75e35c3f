//! Numerical checks of the small-scale asymptotics of the torus Green function
//! that fix `Γ_ℓ` and the limit matrix.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::Mat2;
use crate::error::{Error, Result};
use crate::green;
use crate::noise::{noise_mode, GammaRule, MIN_CELLS_PER_VORTEX};
use crate::profile::{Bump, ChebInterp, ProfileKind, VortexProfile};
use crate::quadrature::{adaptive, GaussLegendre};
use crate::spectral::FourierGrid;

use std::f64::consts::PI;

/// `1/(4π)`.
pub const PAIR_LIMIT: f64 = 0.25 / PI;

#[derive(Clone, Debug, Serialize)]
pub struct PairIntegralResult {
    pub i: usize,
    pub j: usize,
    pub ell: f64,
    pub n: usize,
    /// `⟨∂ᵢG∗φ_ℓ, ∂ⱼG∗ψ_ℓ⟩`.
    pub value: f64,
    /// `value / log(1/ℓ)`; NaN at `ℓ = 1`.
    pub ratio: f64,
}

fn guard(n: usize, ell: f64) -> Result<()> {
    let n_ell = n as f64 * ell;
    if n_ell < MIN_CELLS_PER_VORTEX {
        return Err(Error::UnderResolved {
            n_ell,
            min: MIN_CELLS_PER_VORTEX,
        });
    }
    Ok(())
}

fn spectra(phi: &Bump, psi: &Bump, ell: f64, k_max: f64) -> (ChebInterp, ChebInterp) {
    VortexProfile {
        kind: ProfileKind::Bump,
        theta: phi.clone(),
        chi: psi.clone(),
        ell,
    }
    .spectra(k_max)
}

/// All four `⟨∂ᵢG∗φ_ℓ, ∂ⱼG∗ψ_ℓ⟩`, summed over the `n × n` lattice
/// `Σ_{k≠0} k_i k_j φ̂ψ̂ / (4π²|k|⁴)`.
pub fn pair_matrix(phi: &Bump, psi: &Bump, ell: f64, n: usize) -> Result<Mat2> {
    guard(n, ell)?;
    if n % 2 != 0 {
        return Err(Error::Config(format!("lattice size {n} must be even")));
    }
    let h = (n / 2) as i64;
    let (a, b) = spectra(phi, psi, ell, n as f64 * std::f64::consts::FRAC_1_SQRT_2 + 1.0);
    // k and -k contribute equally: rows k2 > 0 count twice, the k2 = 0 and
    // k2 = -n/2 rows once
    let rows: Vec<i64> = std::iter::once(-h).chain(0..h).collect();
    let sums: Vec<[f64; 3]> = rows
        .par_iter()
        .map(|&k2| {
            let w = if k2 > 0 { 2.0 } else { 1.0 };
            let y = k2 as f64;
            let mut s = [0.0; 3];
            for k1 in -h..h {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                let x = k1 as f64;
                let q = x * x + y * y;
                let r = q.sqrt();
                let c = w * a.eval(r) * b.eval(r) / (4.0 * PI * PI * q * q);
                s[0] += c * x * x;
                s[1] += c * x * y;
                s[2] += c * y * y;
            }
            s
        })
        .collect();
    // fixed-order reduction keeps the result independent of the thread count
    let mut m = [[0.0; 2]; 2];
    for s in sums {
        m[0][0] += s[0];
        m[0][1] += s[1];
        m[1][1] += s[2];
    }
    m[1][0] = m[0][1];
    Ok(m)
}

pub fn pair_integral(
    phi: &Bump,
    psi: &Bump,
    ell: f64,
    i: usize,
    j: usize,
    n: usize,
) -> Result<PairIntegralResult> {
    if i > 1 || j > 1 {
        return Err(Error::Config("derivative indices are 0 or 1".into()));
    }
    let m = pair_matrix(phi, psi, ell, n)?;
    let value = m[i][j];
    let ratio = if ell < 1.0 { value / (1.0 / ell).ln() } else { f64::NAN };
    Ok(PairIntegralResult {
        i,
        j,
        ell,
        n,
        value,
        ratio,
    })
}

/// Lattice size used for a ladder entry: at least 256 and `32/ℓ`, so the
/// truncated tail of `φ̂_ℓ` sits beyond `ℓ|k| = 16`.
pub fn lattice_for(ell: f64) -> usize {
    let want = (32.0 / ell).max(256.0);
    want.log2().ceil().exp2() as usize
}

/// Same pair sums restricted to the noise modes of `grid`, giving
/// `-Γγ·pairs` for the stretching gradient `∂_m Q_{j3}(0)`.
pub fn limit_matrix_from_pairs(
    grid: &FourierGrid<f64>,
    profile: &VortexProfile,
    gamma: f64,
    gamma3: f64,
) -> Mat2 {
    let k_max = grid.n() as f64 * std::f64::consts::SQRT_2 / 2.0;
    let (th, ch) = profile.spectra(k_max);
    let mut p = [[0.0; 2]; 2];
    for idx in 0..grid.spectral_len() {
        if !noise_mode(grid, idx) {
            continue;
        }
        let (a, b) = grid.wavevector(idx);
        let (x, y) = (a as f64, b as f64);
        let q = x * x + y * y;
        let r = q.sqrt();
        let c = grid.weight()[idx] * th.eval(r) * ch.eval(r) / (4.0 * PI * PI * q * q);
        p[0][0] += c * x * x;
        p[0][1] += c * x * y;
        p[1][0] += c * x * y;
        p[1][1] += c * y * y;
    }
    // σ̂_H ∝ (k2, -k1): row 1 pairs with k2, row 2 with -k1
    let s = -gamma * gamma3;
    [
        [s * p[0][1], s * p[1][1]],
        [-s * p[0][0], -s * p[1][0]],
    ]
}

/// Bump of radius `r` centered at `c`, viewed as a planar density. With
/// `mirrored` the mass is split evenly between `c` and `-c`.
#[derive(Clone, Debug)]
pub struct PlanarBump {
    pub bump: Bump,
    pub center: [f64; 2],
    pub mirrored: bool,
}

impl PlanarBump {
    /// Radius of the smallest centered disk containing the support.
    pub fn support_radius(&self) -> f64 {
        self.center[0].hypot(self.center[1]) + self.bump.radius()
    }

    /// `(∇G_{R²} ∗ ψ)(x)` by polar Gauss–Legendre quadrature about the center.
    pub fn grad_convolution(&self, x: [f64; 2]) -> [f64; 2] {
        if self.mirrored {
            let neg = [-x[0], -x[1]];
            let a = self.single(x);
            let b = self.single(neg);
            return [0.5 * (a[0] - b[0]), 0.5 * (a[1] - b[1])];
        }
        self.single(x)
    }

    fn single(&self, x: [f64; 2]) -> [f64; 2] {
        let r = self.bump.radius();
        let gl = GaussLegendre::new(24);
        let mut out = [0.0; 2];
        let angles = gl.composite_points(0.0, 2.0 * PI, 8);
        for &(rho, wr) in &gl.composite_points(0.0, r, 4) {
            let dens = self.bump.value(rho) * rho * wr;
            if dens == 0.0 {
                continue;
            }
            for &(t, wt) in &angles {
                let y = [self.center[0] + rho * t.cos(), self.center[1] + rho * t.sin()];
                let g = planar_gradient([x[0] - y[0], x[1] - y[1]]);
                out[0] += g[0] * dens * wt;
                out[1] += g[1] * dens * wt;
            }
        }
        out
    }

    /// `∇G_{R²}∗ψ - ∇G_{R²}` in closed form: outside its support a radial
    /// bump acts as a point mass at its center.
    pub fn exact_error(&self, x: [f64; 2]) -> [f64; 2] {
        let g0 = planar_gradient(x);
        let shift = |c: [f64; 2]| planar_gradient([x[0] - c[0], x[1] - c[1]]);
        let g = if self.mirrored {
            let a = shift(self.center);
            let b = shift([-self.center[0], -self.center[1]]);
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        } else {
            shift(self.center)
        };
        [g[0] - g0[0], g[1] - g0[1]]
    }

    /// Quadrature error vector `∇G_{R²}∗ψ(x) - ∇G_{R²}(x)`.
    pub fn error(&self, x: [f64; 2]) -> [f64; 2] {
        let c = self.grad_convolution(x);
        let g = planar_gradient(x);
        [c[0] - g[0], c[1] - g[1]]
    }
}

/// `∇G_{R²}(x) = -x / (2π|x|²)`.
pub fn planar_gradient(x: [f64; 2]) -> [f64; 2] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    [-x[0] / (2.0 * PI * r2), -x[1] / (2.0 * PI * r2)]
}

#[derive(Clone, Debug, Serialize)]
pub struct FarfieldRow {
    pub radius: f64,
    /// `max |∇G∗ψ(x) - ∇G(x)|·|x|²` over the shell samples.
    pub scaled_error: f64,
    /// `2(R² + 3R)/π` with `R` the support radius.
    pub bound: f64,
}

/// Far-field deviation of `∇G_{R²}∗ψ` from `∇G_{R²}` on circles `|x| = radius`.
pub fn farfield_error(psi: &PlanarBump, radii: &[f64], samples: usize) -> Result<Vec<FarfieldRow>> {
    let r_sup = psi.support_radius();
    let bound = 2.0 * (r_sup * r_sup + 3.0 * r_sup) / PI;
    radii
        .iter()
        .map(|&rad| {
            if rad < (2.0 * r_sup).max(1.0) {
                return Err(Error::Config(format!(
                    "shell radius {rad} must be at least max(2R, 1) = {}",
                    (2.0 * r_sup).max(1.0)
                )));
            }
            let mut worst: f64 = 0.0;
            for s in 0..samples {
                let t = 2.0 * PI * s as f64 / samples as f64;
                let x = [rad * t.cos(), rad * t.sin()];
                let e = psi.error(x);
                worst = worst.max(e[0].hypot(e[1]) * rad * rad);
            }
            Ok(FarfieldRow {
                radius: rad,
                scaled_error: worst,
                bound,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnulusResult {
    pub r: f64,
    pub ell: f64,
    pub i: usize,
    /// `∫ (∂ᵢG_{R²})²` over the square of side `1/ℓ` minus `B_R`.
    pub integral: f64,
    /// `integral / log(1/ℓ)`.
    pub normalized: f64,
    pub lower: f64,
    pub upper: f64,
    pub bracketed: bool,
}

/// The radial integral is exact: for direction `t` the integrand is
/// `cos²t/(4π²ρ)` on `[R, ρ_max(t)]`, leaving an adaptive angular quadrature.
pub fn annulus_integral(r: f64, ell: f64, i: usize) -> Result<AnnulusResult> {
    if !(r > 0.0 && ell > 0.0 && ell < 1.0 / r) {
        return Err(Error::Config(format!("annulus needs 0 < ell < 1/R, got R = {r}, ell = {ell}")));
    }
    let half = 0.5 / ell;
    if r >= half {
        return Err(Error::Config("disk must lie inside the square".into()));
    }
    let f = |t: f64| {
        let rho_max = half / t.cos().abs().max(t.sin().abs());
        let dir = if i == 0 { t.cos() } else { t.sin() };
        dir * dir * (rho_max / r).ln() / (4.0 * PI * PI)
    };
    // kinks of ρ_max at odd multiples of π/4
    let mut integral = 0.0;
    for p in 0..8 {
        let a = p as f64 * PI / 4.0;
        integral += adaptive(&f, a, a + PI / 4.0, 1e-14);
    }
    let l = (1.0 / ell).ln();
    let lower = PAIR_LIMIT * (0.5 / (ell * r)).ln();
    let upper = PAIR_LIMIT * (1.0 / (ell * r)).ln();
    Ok(AnnulusResult {
        r,
        ell,
        i,
        integral,
        normalized: integral / l,
        lower,
        upper,
        bracketed: integral >= lower && integral <= upper,
    })
}

/// Split of the torus pair integral into the planar main term and the three
/// corrections carrying the regular part `ζ` of the Green function.
#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    pub main: f64,
    pub mixed_left: f64,
    pub mixed_right: f64,
    pub regular: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.main + self.mixed_left + self.mixed_right + self.regular
    }
}

/// On the unit square `∂ᵢG∗φ_ℓ = a + ∂ᵢζ` with `a = ∂ᵢG_{R²}·m_φ(|x|/ℓ)`
/// (planar Newton theorem for radial densities, `m` the enclosed mass) and
/// `∇ζ` harmonic. Each product is integrated in polar coordinates about 0.
pub fn decompose_pair(phi: &Bump, psi: &Bump, ell: f64, i: usize, j: usize) -> Decomposition {
    let r_in = phi.radius().max(psi.radius()) * ell;
    let gl = GaussLegendre::new(24);
    let mut d = Decomposition {
        main: 0.0,
        mixed_left: 0.0,
        mixed_right: 0.0,
        regular: 0.0,
    };
    for p in 0..8 {
        let t0 = p as f64 * PI / 4.0;
        for &(t, wt) in &gl.composite_points(t0, t0 + PI / 4.0, 2) {
            let (c, s) = (t.cos(), t.sin());
            let rho_max = 0.5 / c.abs().max(s.abs());
            // inner disk, then geometric panels out to the boundary
            let mut nodes = gl.composite_points(0.0, r_in, 4);
            let ratio = rho_max / r_in;
            let panels = (ratio.ln() / 0.5f64.ln().abs()).ceil().max(1.0) as usize;
            let q = ratio.powf(1.0 / panels as f64);
            let mut lo = r_in;
            for _ in 0..panels {
                let hi = (lo * q).min(rho_max);
                nodes.extend(gl.composite_points(lo, hi, 1));
                lo = hi;
            }
            for (rho, wr) in nodes {
                let x = [rho * c, rho * s];
                let mf = if rho < phi.radius() * ell { phi.enclosed_mass(rho / ell) } else { 1.0 };
                let mg = if rho < psi.radius() * ell { psi.enclosed_mass(rho / ell) } else { 1.0 };
                let pg = planar_gradient(x);
                let z = green::regular_gradient(x[0], x[1]);
                let (ai, aj) = (pg[i] * mf, pg[j] * mg);
                let w = wt * wr * rho;
                d.main += w * ai * aj;
                d.mixed_left += w * ai * z[j];
                d.mixed_right += w * z[i] * aj;
                d.regular += w * z[i] * z[j];
            }
        }
    }
    d
}

/// One row of the `Γ_ℓ² log ℓ⁻¹` ladder.
#[derive(Clone, Debug, Serialize)]
pub struct GammaRow {
    pub ell: f64,
    pub gamma_sq_log: f64,
    pub target: f64,
}

/// `Γ_ℓ² log ℓ⁻¹` from the continuum calibration `Γ² = 4κ / (P₁₁ + P₂₂)`.
pub fn gamma_log_ladder(profile: &VortexProfile, kappa: f64, ells: &[f64]) -> Result<Vec<GammaRow>> {
    ells.iter()
        .map(|&ell| {
            let ell = ell * profile.ell;
            let m = pair_matrix(&profile.theta, &profile.theta, ell, lattice_for(ell))?;
            let g2 = 4.0 * kappa / (m[0][0] + m[1][1]);
            Ok(GammaRow {
                ell,
                gamma_sq_log: g2 * (1.0 / ell).ln(),
                target: 8.0 * PI * kappa,
            })
        })
        .collect()
}

/// Continuum `∇Q_{H,3}^ℓ(0)` for a calibrated family along a ladder.
pub fn limit_matrix_ladder(
    profile: &VortexProfile,
    kappa: f64,
    rule: &GammaRule,
    ells: &[f64],
) -> Result<Vec<(f64, Mat2)>> {
    ells.iter()
        .map(|&ell| {
            let ell = ell * profile.ell;
            let n = lattice_for(ell);
            let th = pair_matrix(&profile.theta, &profile.theta, ell, n)?;
            let gamma = (4.0 * kappa / (th[0][0] + th[1][1])).sqrt();
            let gamma3 = rule.gamma3(gamma, ell);
            let p = pair_matrix(&profile.theta, &profile.chi, ell, n)?;
            let s = -gamma * gamma3;
            Ok((
                ell,
                [[s * p[0][1], s * p[1][1]], [-s * p[0][0], -s * p[1][0]]],
            ))
        })
        .collect()
}
