//! Radially symmetric vortex profiles and their Fourier transforms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quadrature::GaussLegendre;

use std::f64::consts::PI;

/// Profile families available for `θ` and `χ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `c·exp(-1/(1 - |x|²/r²))` inside the disk of radius `r`.
    #[default]
    Bump,
}

/// Normalized compactly supported bump density on the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    radius: f64,
    c: f64,
}

impl Bump {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius < 0.5) {
            return Err(invalid("r", radius, "support radius must lie in (0, 1/2)"));
        }
        let unit = Bump { radius, c: 1.0 };
        let mass = unit.enclosed_mass(radius);
        Ok(Bump {
            radius,
            c: 1.0 / mass,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Normalization constant `c`.
    pub fn constant(&self) -> f64 {
        self.c
    }

    /// Density at distance `rho` from the center.
    pub fn value(&self, rho: f64) -> f64 {
        let s = rho / self.radius;
        if s >= 1.0 {
            0.0
        } else {
            self.c * (-1.0 / (1.0 - s * s)).exp()
        }
    }

    /// Mass inside the disk of radius `rho`.
    pub fn enclosed_mass(&self, rho: f64) -> f64 {
        let top = rho.min(self.radius);
        if top <= 0.0 {
            return 0.0;
        }
        let gl = GaussLegendre::new(20);
        2.0 * PI * gl.composite(0.0, top, 16, |s| self.value(s) * s)
    }

    /// `∫ |x|² θ(x) dx`.
    pub fn second_moment(&self) -> f64 {
        let gl = GaussLegendre::new(20);
        2.0 * PI * gl.composite(0.0, self.radius, 16, |s| self.value(s) * s * s * s)
    }

    /// Line integral `∫ θ(√(s² + t²)) dt` (Abel projection onto one axis).
    pub fn projection(&self, s: f64) -> f64 {
        let s = s.abs();
        if s >= self.radius {
            return 0.0;
        }
        let half = (self.radius * self.radius - s * s).sqrt();
        let gl = GaussLegendre::new(20);
        2.0 * gl.composite(0.0, half, 8, |t| self.value(s.hypot(t)))
    }

    /// Planar Fourier transform `∫ θ(x) e^{-2πi ξ·x} dx` at `|ξ| = xi`.
    pub fn transform(&self, xi: f64) -> f64 {
        RadialTransform::new(self, xi.abs()).eval(xi)
    }
}

/// Cosine transform of the projection on a fixed node set, accurate for
/// frequencies up to the one it was built for.
#[derive(Clone, Debug)]
pub struct RadialTransform {
    points: Vec<(f64, f64)>,
}

impl RadialTransform {
    pub fn new(b: &Bump, xi_max: f64) -> Self {
        let panels = 8 + (2.0 * xi_max * b.radius()).ceil() as usize;
        let gl = GaussLegendre::new(20);
        let points = gl
            .composite_points(0.0, b.radius(), panels)
            .into_iter()
            .map(|(s, w)| (s, 2.0 * w * b.projection(s)))
            .collect();
        Self { points }
    }

    pub fn eval(&self, xi: f64) -> f64 {
        let w = 2.0 * PI * xi;
        self.points.iter().map(|&(s, a)| a * (w * s).cos()).sum()
    }
}

/// Barycentric Chebyshev interpolant of a smooth function on `[0, x_max]`.
#[derive(Clone, Debug)]
pub struct ChebInterp {
    x_max: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl ChebInterp {
    pub fn new(x_max: f64, degree: usize, f: impl Fn(f64) -> f64) -> Self {
        let nodes: Vec<f64> = (0..=degree)
            .map(|j| 0.5 * x_max * (1.0 - (PI * j as f64 / degree as f64).cos()))
            .collect();
        let values = nodes.iter().map(|&x| f(x)).collect();
        Self {
            x_max,
            nodes,
            values,
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.nodes.len() - 1;
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&xj, &fj)) in self.nodes.iter().zip(&self.values).enumerate() {
            let d = x - xj;
            if d == 0.0 {
                return fj;
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == last {
                w *= 0.5;
            }
            let t = w / d;
            num += t * fj;
            den += t;
        }
        num / den
    }
}

/// The pair `(θ, χ)` defining one vortex, rescaled by `ell`:
/// `θ_ℓ(x) = ℓ⁻² θ(x/ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VortexProfile {
    pub kind: ProfileKind,
    pub theta: Bump,
    pub chi: Bump,
    pub ell: f64,
}

impl VortexProfile {
    pub fn build(kind: ProfileKind, r_theta: f64, r_chi: f64) -> Result<Self> {
        Ok(Self {
            kind,
            theta: Bump::new(r_theta)?,
            chi: Bump::new(r_chi)?,
            ell: 1.0,
        })
    }

    /// Rescaling by `ell`; scales compose multiplicatively.
    pub fn scaled(&self, ell: f64) -> Result<Self> {
        if !(ell > 0.0 && ell <= 1.0) {
            return Err(invalid("ell", ell, "scale must lie in (0, 1]"));
        }
        Ok(Self {
            ell: self.ell * ell,
            ..self.clone()
        })
    }

    pub fn theta_at(&self, x1: f64, x2: f64) -> f64 {
        self.theta.value(x1.hypot(x2) / self.ell) / (self.ell * self.ell)
    }

    pub fn chi_at(&self, x1: f64, x2: f64) -> f64 {
        self.chi.value(x1.hypot(x2) / self.ell) / (self.ell * self.ell)
    }

    /// `θ̂_ℓ(ξ) = θ̂(ℓξ)`.
    pub fn theta_hat(&self, xi: f64) -> f64 {
        self.theta.transform(self.ell * xi)
    }

    pub fn chi_hat(&self, xi: f64) -> f64 {
        self.chi.transform(self.ell * xi)
    }

    /// Interpolants of `θ̂_ℓ` and `χ̂_ℓ` valid for `|ξ| <= k_max`.
    pub fn spectra(&self, k_max: f64) -> (ChebInterp, ChebInterp) {
        let build = |b: &Bump| {
            let x = self.ell * k_max;
            let degree = 48 + (4.0 * PI * b.radius() * x).ceil() as usize;
            let rt = RadialTransform::new(b, x);
            let ell = self.ell;
            ChebInterp::new(k_max, degree, move |k| rt.eval(ell * k))
        };
        (build(&self.theta), build(&self.chi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_guard() {
        assert!(Bump::new(0.5).is_err());
        assert!(Bump::new(0.0).is_err());
        assert!(Bump::new(0.35).is_ok());
    }

    #[test]
    fn unit_mass() {
        let b = Bump::new(0.35).unwrap();
        assert!((b.enclosed_mass(1.0) - 1.0).abs() < 1e-13);
        assert!((b.transform(0.0) - 1.0).abs() < 1e-12);
    }

    /// `J0(z) = (1/π)∫₀^π cos(z sin t) dt` by the trapezoid rule.
    fn bessel_j0(z: f64) -> f64 {
        let m = 64 + z.abs().ceil() as usize;
        let h = PI / m as f64;
        let s: f64 = (1..m).map(|j| (z * (h * j as f64).sin()).cos()).sum();
        (1.0 + s) / m as f64
    }

    #[test]
    fn transform_matches_hankel_quadrature() {
        let b = Bump::new(0.35).unwrap();
        let gl = GaussLegendre::new(20);
        for &xi in &[0.0, 0.4, 2.5, 7.0, 30.0] {
            let hankel = 2.0
                * PI
                * gl.composite(0.0, 0.35, 40, |r| {
                    b.value(r) * r * bessel_j0(2.0 * PI * xi * r)
                });
            assert!((b.transform(xi) - hankel).abs() < 1e-13, "xi = {xi}");
        }
    }

    #[test]
    fn chebyshev_reproduces_transform() {
        let p = VortexProfile::build(ProfileKind::Bump, 0.35, 0.2).unwrap();
        let q = p.scaled(0.125).unwrap();
        let (t, c) = q.spectra(60.0);
        for &x in &[0.0, 1.3, 17.2, 44.4, 60.0] {
            assert!((t.eval(x) - q.theta_hat(x)).abs() < 1e-12);
            assert!((c.eval(x) - q.chi_hat(x)).abs() < 1e-12);
        }
    }
}
