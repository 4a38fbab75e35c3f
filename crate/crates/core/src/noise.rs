//! Vortex noise: calibrated intensities, Fourier factorization and Q-Wiener
//! increments.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::profile::{ProfileKind, VortexProfile};
use crate::scalar::Real;
use crate::spectral::{FourierGrid, ScalarField, VectorField2};

/// Smallest admissible `n·ℓ`.
pub const MIN_CELLS_PER_VORTEX: f64 = 8.0;

/// Rule fixing the vertical intensity `γ_ℓ` from `Γ_ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GammaRule {
    /// `γ_ℓ = q0·Γ_ℓ`.
    Proportional { q0: f64 },
    /// `γ_ℓ = Γ_ℓ·ℓ^p`, vanishing relative to `Γ_ℓ`.
    Subordinate { p: f64 },
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::Proportional { q0: 1.0 }
    }
}

impl GammaRule {
    pub fn gamma3(&self, gamma: f64, ell: f64) -> f64 {
        match *self {
            GammaRule::Proportional { q0 } => q0 * gamma,
            GammaRule::Subordinate { p } => gamma * ell.powf(p),
        }
    }

    /// `lim γ_ℓ/Γ_ℓ`.
    pub fn limit_ratio(&self) -> f64 {
        match *self {
            GammaRule::Proportional { q0 } => q0,
            GammaRule::Subordinate { .. } => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    pub r_theta: f64,
    pub r_chi: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Bump,
            r_theta: 0.35,
            r_chi: 0.35,
        }
    }
}

impl ProfileSpec {
    pub fn build(&self) -> Result<VortexProfile> {
        VortexProfile::build(self.kind, self.r_theta, self.r_chi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub ell: f64,
    pub kappa: f64,
    pub gamma_rule: GammaRule,
    pub profile: ProfileSpec,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            ell: 0.125,
            kappa: 0.25,
            gamma_rule: GammaRule::default(),
            profile: ProfileSpec::default(),
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell < 1.0) {
            return Err(invalid("ell", self.ell, "vortex size must lie in (0, 1)"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", self.kappa, "must be positive"));
        }
        match self.gamma_rule {
            GammaRule::Subordinate { p } if !(p > 0.0) => {
                Err(invalid("p", p, "subordinate exponent must be positive"))
            }
            GammaRule::Proportional { q0 } if !q0.is_finite() => {
                Err(invalid("q0", q0, "must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Fourier amplitudes of `σ = (σ_H, σ_3)` on the half spectrum.
#[derive(Clone, Debug)]
pub struct SpectralNoise<T: Real> {
    pub n: usize,
    pub ell: f64,
    pub kappa: f64,
    /// `Γ_ℓ`.
    pub gamma: f64,
    /// `γ_ℓ`.
    pub gamma3: f64,
    pub sigma_h1: Vec<Complex<T>>,
    pub sigma_h2: Vec<Complex<T>>,
    pub sigma3: Vec<Complex<T>>,
}

/// One Q-Wiener increment.
#[derive(Clone, Debug)]
pub struct Increment<T: Real> {
    pub dw_h: VectorField2<T>,
    pub dw3: ScalarField<T>,
}

/// Modes carrying noise: nonzero, inside the 2/3 band, off the Nyquist lines.
pub fn noise_mode<T: Real>(grid: &FourierGrid<T>, idx: usize) -> bool {
    idx != 0 && grid.in_band(idx) && !grid.is_nyquist(idx)
}

fn check_resolution(n: usize, ell: f64) -> Result<()> {
    let n_ell = n as f64 * ell;
    if n_ell < MIN_CELLS_PER_VORTEX {
        return Err(Error::UnderResolved {
            n_ell,
            min: MIN_CELLS_PER_VORTEX,
        });
    }
    Ok(())
}

/// `Γ_ℓ = 2√κ / ‖K∗θ_ℓ‖` together with `σ_H = Γ_ℓ K∗θ_ℓ`, so that
/// `‖σ_H‖² = 4κ` on the grid.
pub fn calibrate_gamma<T: Real>(
    grid: &FourierGrid<T>,
    profile: &VortexProfile,
    kappa: f64,
) -> Result<(f64, VectorField2<T>)> {
    check_resolution(grid.n(), profile.ell)?;
    let k_max = (grid.n() as f64) * std::f64::consts::SQRT_2 / 2.0;
    let (th, _) = profile.spectra(k_max);
    let (gamma, s1, s2, _) = amplitudes(grid, profile, kappa, &th, None);
    Ok((
        gamma,
        VectorField2 {
            u1: ScalarField::from_coefficients(grid.n(), s1)?,
            u2: ScalarField::from_coefficients(grid.n(), s2)?,
        },
    ))
}

type Amplitudes<T> = (f64, Vec<Complex<T>>, Vec<Complex<T>>, Vec<Complex<T>>);

fn amplitudes<T: Real>(
    grid: &FourierGrid<T>,
    profile: &VortexProfile,
    kappa: f64,
    theta: &crate::profile::ChebInterp,
    chi: Option<(&crate::profile::ChebInterp, &GammaRule)>,
) -> Amplitudes<T> {
    let len = grid.spectral_len();
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut th = vec![0.0; len];
    let mut norm_sq = 0.0;
    for (idx, t) in th.iter_mut().enumerate() {
        if noise_mode(grid, idx) {
            let (a, b) = grid.wavevector(idx);
            let ksq = (a * a + b * b) as f64;
            *t = theta.eval(ksq.sqrt());
            norm_sq += grid.weight()[idx].to_f64_lossy() * *t * *t / (four_pi2 * ksq);
        }
    }
    let gamma = 2.0 * kappa.sqrt() / norm_sq.sqrt();
    let gamma3 = chi.map(|(_, rule)| rule.gamma3(gamma, profile.ell));
    let zero = Complex::new(T::zero(), T::zero());
    let mut s1 = vec![zero; len];
    let mut s2 = vec![zero; len];
    let mut s3 = vec![zero; len];
    for idx in 0..len {
        if !noise_mode(grid, idx) {
            continue;
        }
        let (a, b) = grid.wavevector(idx);
        let ksq = (a * a + b * b) as f64;
        // Γ·2πi(k2, -k1)θ̂/(4π²|k|²)
        let c = gamma * 2.0 * std::f64::consts::PI * th[idx] / (four_pi2 * ksq);
        s1[idx] = Complex::new(T::zero(), T::lit(c * b as f64));
        s2[idx] = Complex::new(T::zero(), T::lit(-c * a as f64));
        if let (Some((chi, _)), Some(g3)) = (chi, gamma3) {
            s3[idx] = Complex::new(T::lit(g3 * chi.eval(ksq.sqrt()) / (four_pi2 * ksq)), T::zero());
        }
    }
    (gamma, s1, s2, s3)
}

impl<T: Real> SpectralNoise<T> {
    pub fn build(spec: &NoiseSpec, grid: &FourierGrid<T>) -> Result<Self> {
        spec.validate()?;
        let profile = spec.profile.build()?.scaled(spec.ell)?;
        Self::from_profile(&profile, spec.kappa, &spec.gamma_rule, grid)
    }

    pub fn from_profile(
        profile: &VortexProfile,
        kappa: f64,
        rule: &GammaRule,
        grid: &FourierGrid<T>,
    ) -> Result<Self> {
        check_resolution(grid.n(), profile.ell)?;
        let k_max = (grid.n() as f64) * std::f64::consts::SQRT_2 / 2.0;
        let (th, ch) = profile.spectra(k_max);
        let (gamma, s1, s2, s3) = amplitudes(grid, profile, kappa, &th, Some((&ch, rule)));
        Ok(Self {
            n: grid.n(),
            ell: profile.ell,
            kappa,
            gamma,
            gamma3: rule.gamma3(gamma, profile.ell),
            sigma_h1: s1,
            sigma_h2: s2,
            sigma3: s3,
        })
    }

    pub fn sigma_h(&self) -> VectorField2<T> {
        VectorField2 {
            u1: ScalarField::from_coefficients(self.n, self.sigma_h1.clone()).expect("length"),
            u2: ScalarField::from_coefficients(self.n, self.sigma_h2.clone()).expect("length"),
        }
    }

    pub fn sigma_3(&self) -> ScalarField<T> {
        ScalarField::from_coefficients(self.n, self.sigma3.clone()).expect("length")
    }

    /// Independent complex standard Gaussians on the half lattice, Hermitian
    /// paired on the `k2 = 0` column. `E|g_k|² = 1`.
    pub fn draw_gaussians<R: Rng + ?Sized>(&self, grid: &FourierGrid<T>, rng: &mut R) -> Vec<Complex<T>> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut g = vec![zero; grid.spectral_len()];
        let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        for (idx, slot) in g.iter_mut().enumerate() {
            if noise_mode(grid, idx) {
                let (a, b) = grid.wavevector(idx);
                if b == 0 && a < 0 {
                    continue;
                }
                *slot = Complex::new(T::standard_normal(rng) * s, T::standard_normal(rng) * s);
            }
        }
        for idx in 0..grid.spectral_len() {
            let (a, b) = grid.wavevector(idx);
            if b == 0 && a < 0 && noise_mode(grid, idx) {
                let j = grid.index_of(-a, 0).expect("mirror mode");
                g[idx] = g[j].conj();
            }
        }
        g
    }

    /// `dW = Σ_k σ̂(k) g_k √dt e_k`.
    pub fn increment_from(&self, gauss: &[Complex<T>], dt: T) -> Increment<T> {
        let sq = dt.sqrt();
        let mul = |s: &[Complex<T>]| -> ScalarField<T> {
            let c = s.iter().zip(gauss).map(|(a, g)| *a * *g * sq).collect();
            ScalarField::from_coefficients(self.n, c).expect("length")
        };
        Increment {
            dw_h: VectorField2 {
                u1: mul(&self.sigma_h1),
                u2: mul(&self.sigma_h2),
            },
            dw3: mul(&self.sigma3),
        }
    }

    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        grid: &FourierGrid<T>,
        dt: T,
        rng: &mut R,
    ) -> Result<Increment<T>> {
        if !(dt > T::zero()) {
            return Err(invalid("dt", dt.to_f64_lossy(), "time step must be positive"));
        }
        let g = self.draw_gaussians(grid, rng);
        Ok(self.increment_from(&g, dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert_eq!(GammaRule::Proportional { q0: 0.5 }.gamma3(2.0, 0.1), 1.0);
        let s = GammaRule::Subordinate { p: 1.0 };
        assert!((s.gamma3(2.0, 0.25) - 0.5).abs() < 1e-15);
        assert_eq!(s.limit_ratio(), 0.0);
    }

    #[test]
    fn resolution_guard() {
        let g = FourierGrid::<f64>::new(32).unwrap();
        let spec = NoiseSpec {
            ell: 0.125,
            ..NoiseSpec::default()
        };
        assert!(matches!(
            SpectralNoise::build(&spec, &g),
            Err(Error::UnderResolved { .. })
        ));
        let g = FourierGrid::<f64>::new(64).unwrap();
        assert!(SpectralNoise::build(&spec, &g).is_ok());
    }

    #[test]
    fn spec_validation() {
        let bad = NoiseSpec {
            gamma_rule: GammaRule::Subordinate { p: 0.0 },
            ..NoiseSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(NoiseSpec { kappa: -1.0, ..NoiseSpec::default() }.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = NoiseSpec {
            gamma_rule: GammaRule::Subordinate { p: 0.5 },
            ..NoiseSpec::default()
        };
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"rule\":\"subordinate\""));
        assert_eq!(serde_json::from_str::<NoiseSpec>(&j).unwrap(), s);
    }
}
