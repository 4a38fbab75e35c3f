//! Covariance functions of the vortex noise and the constants entering the
//! Itô system.

use nalgebra::Matrix2;
use num_complex::Complex;
use serde::Serialize;

use crate::noise::{GammaRule, NoiseSpec, SpectralNoise};
use crate::scalar::Real;
use crate::spectral::{FourierGrid, ScalarField};

use std::f64::consts::PI;

/// 2×2 matrix in row-major order.
pub type Mat2 = [[f64; 2]; 2];

/// Grid tables and constants of `Q^ℓ`.
#[derive(Clone, Debug)]
pub struct CovarianceTables<T: Real> {
    pub n: usize,
    /// `entries[i][j]` holds `Q_ij(a)` at every grid point `a` (row-major),
    /// components ordered `(1, 2, 3)`.
    pub entries: [[Vec<T>; 3]; 3],
    pub constants: CovarianceConstants,
}

/// Scalar data extracted from `Q^ℓ`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CovarianceConstants {
    /// `Q_H(0)`.
    pub q_h0: Mat2,
    /// `[∇Q_{H,3}(0)]_{jm} = ∂_m Q_{j3}(0)`.
    pub grad_qh3_0: Mat2,
    /// `∇²Q_3(0)`.
    pub hess_q3_0: Mat2,
    /// `max_k |σ̂_H(k)|²`.
    pub opnorm_qh: f64,
    /// `max_k |σ̂_3(k)|²`.
    pub opnorm_q3: f64,
}

impl CovarianceConstants {
    pub fn from_noise<T: Real>(sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> Self {
        let mut q_h0 = [[0.0; 2]; 2];
        let mut grad = [[0.0; 2]; 2];
        let mut hess = [[0.0; 2]; 2];
        let mut op_h: f64 = 0.0;
        let mut op_3: f64 = 0.0;
        for idx in 0..grid.spectral_len() {
            let s = [
                to_c64(sn.sigma_h1[idx]),
                to_c64(sn.sigma_h2[idx]),
                to_c64(sn.sigma3[idx]),
            ];
            let w = grid.weight()[idx].to_f64_lossy();
            let (a, b) = grid.wavevector(idx);
            let k = [a as f64, b as f64];
            for i in 0..2 {
                for j in 0..2 {
                    q_h0[i][j] += w * (s[i] * s[j].conj()).re;
                    let d = Complex::new(0.0, 2.0 * PI * k[j]) * s[i] * s[2].conj();
                    grad[i][j] += w * d.re;
                    hess[i][j] -= w * 4.0 * PI * PI * k[i] * k[j] * s[2].norm_sqr();
                }
            }
            op_h = op_h.max(s[0].norm_sqr() + s[1].norm_sqr());
            op_3 = op_3.max(s[2].norm_sqr());
        }
        Self {
            q_h0,
            grad_qh3_0: grad,
            hess_q3_0: hess,
            opnorm_qh: op_h,
            opnorm_q3: op_3,
        }
    }
}

pub(crate) fn to_c64<T: Real>(c: Complex<T>) -> Complex<f64> {
    Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy())
}

/// Spectral norm of a 2×2 matrix.
pub fn mat_norm(m: &Mat2) -> f64 {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
        .singular_values()
        .max()
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> [f64; 2] {
    let s = Matrix2::new(
        m[0][0],
        0.5 * (m[0][1] + m[1][0]),
        0.5 * (m[0][1] + m[1][0]),
        m[1][1],
    );
    let e = s.symmetric_eigenvalues();
    let (a, b) = (e[0], e[1]);
    [a.min(b), a.max(b)]
}

impl<T: Real> CovarianceTables<T> {
    /// Tabulates `Q(a) = Σ_k σ̂(k)σ̂(k)* e_k(a)` on the grid.
    pub fn compute(sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> Self {
        let sig = [&sn.sigma_h1, &sn.sigma_h2, &sn.sigma3];
        let table = |i: usize, j: usize| -> Vec<T> {
            let c = sig[i]
                .iter()
                .zip(sig[j].iter())
                .map(|(a, b)| *a * b.conj())
                .collect();
            grid.inverse(&ScalarField::from_coefficients(sn.n, c).expect("length"))
        };
        let entries = [
            [table(0, 0), table(0, 1), table(0, 2)],
            [table(1, 0), table(1, 1), table(1, 2)],
            [table(2, 0), table(2, 1), table(2, 2)],
        ];
        Self {
            n: sn.n,
            entries,
            constants: CovarianceConstants::from_noise(sn, grid),
        }
    }

    /// `Q(a)` at grid index `(j1, j2)`.
    pub fn at(&self, j1: usize, j2: usize) -> [[f64; 3]; 3] {
        let p = (j1 % self.n) * self.n + (j2 % self.n);
        let mut q = [[0.0; 3]; 3];
        for (i, row) in q.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.entries[i][j][p].to_f64_lossy();
            }
        }
        q
    }

    /// Largest `|Q(-a) - Q(a)ᵀ|` over the grid.
    pub fn transpose_parity_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for j1 in 0..n {
            for j2 in 0..n {
                let q = self.at(j1, j2);
                let r = self.at(n - j1, n - j2);
                for i in 0..3 {
                    for j in 0..3 {
                        worst = worst.max((r[i][j] - q[j][i]).abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest `|Q̂_ij(k) - σ̂_i(k)σ̂_j(k)*|` after transforming the tables back.
    pub fn factorization_defect(&self, sn: &SpectralNoise<T>, grid: &FourierGrid<T>) -> f64 {
        let sig = [&sn.sigma_h1, &sn.sigma_h2, &sn.sigma3];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let hat = grid.forward(&self.entries[i][j]);
                for (idx, h) in hat.coefficients().iter().enumerate() {
                    let d = *h - sig[i][idx] * sig[j][idx].conj();
                    worst = worst.max(d.re.to_f64_lossy().hypot(d.im.to_f64_lossy()));
                }
            }
        }
        worst
    }

    /// Largest violation of `Q_H` even, `Q_3` even, `Q_{H,3}` odd.
    pub fn block_parity_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for j1 in 0..n {
            for j2 in 0..n {
                let q = self.at(j1, j2);
                let r = self.at(n - j1, n - j2);
                for i in 0..3 {
                    for j in 0..3 {
                        let odd = (i == 2) != (j == 2);
                        let d = if odd { r[i][j] + q[i][j] } else { r[i][j] - q[i][j] };
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        worst
    }
}

/// Noise statistics for one rung of an `ℓ`-ladder.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisRow {
    pub ell: f64,
    pub gamma: f64,
    pub gamma3: f64,
    pub q_h0: Mat2,
    pub opnorm_qh: f64,
    pub opnorm_q3: f64,
    pub grad_qh3_0: Mat2,
    pub hess_q3_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisVerdicts {
    /// `Q_H^ℓ(0)` constant along the ladder and nonnegative definite.
    pub a_limit_covariance: bool,
    /// Both operator norms decrease along the ladder.
    pub b_vanishing_opnorms: bool,
    /// `∇Q_{H,3}^ℓ(0)` approaches the predicted limit monotonically.
    pub c_limit_matrix: bool,
    /// `‖∇²Q_3^ℓ(0)‖` stays bounded.
    pub d_bounded_hessian: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub rows: Vec<HypothesisRow>,
    /// `2κ q0 [[0, -1], [1, 0]]`.
    pub predicted_limit: Mat2,
    pub verdicts: HypothesisVerdicts,
}

/// Predicted limit of `∇Q_{H,3}^ℓ(0)` for a calibrated family.
pub fn predicted_limit_matrix(kappa: f64, rule: &GammaRule) -> Mat2 {
    let a = 2.0 * kappa * rule.limit_ratio();
    [[0.0, -a], [a, 0.0]]
}

fn mat_dist(a: &Mat2, b: &Mat2) -> f64 {
    let d = [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ];
    mat_norm(&d)
}

/// Evaluates conditions (a)–(d) of the scaling hypothesis on a ladder of specs
/// sharing `κ`, rule and profile. Each spec is built on a grid of size `n_for(ℓ)`.
pub fn hypothesis_report(
    specs: &[NoiseSpec],
    n_for: impl Fn(f64) -> usize,
) -> crate::Result<HypothesisReport> {
    if specs.len() < 3 {
        return Err(crate::Error::Config(
            "hypothesis report needs at least three ladder entries".into(),
        ));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let grid = FourierGrid::<f64>::new(n_for(spec.ell))?;
        let sn = SpectralNoise::build(spec, &grid)?;
        let c = CovarianceConstants::from_noise(&sn, &grid);
        rows.push(HypothesisRow {
            ell: spec.ell,
            gamma: sn.gamma,
            gamma3: sn.gamma3,
            q_h0: c.q_h0,
            opnorm_qh: c.opnorm_qh,
            opnorm_q3: c.opnorm_q3,
            grad_qh3_0: c.grad_qh3_0,
            hess_q3_norm: mat_norm(&c.hess_q3_0),
        });
    }
    let predicted = predicted_limit_matrix(specs[0].kappa, &specs[0].gamma_rule);
    let q0 = rows[0].q_h0;
    let a = rows.iter().all(|r| {
        mat_dist(&r.q_h0, &q0) <= 1e-8 * mat_norm(&q0).max(1e-300) && sym_eigenvalues(&r.q_h0)[0] >= -1e-12
    });
    let b = rows
        .windows(2)
        .all(|w| w[1].opnorm_qh < w[0].opnorm_qh && w[1].opnorm_q3 <= w[0].opnorm_q3);
    let slack = 1e-12 * (1.0 + mat_norm(&predicted));
    let c = rows.windows(2).all(|w| {
        mat_dist(&w[1].grad_qh3_0, &predicted) <= mat_dist(&w[0].grad_qh3_0, &predicted) + slack
    });
    let bound = 1.5
        * rows[0]
            .hess_q3_norm
            .max(2.0 * specs[0].kappa * specs[0].gamma_rule.limit_ratio().powi(2));
    let d = rows.iter().all(|r| r.hess_q3_norm.is_finite() && r.hess_q3_norm <= bound);
    Ok(HypothesisReport {
        rows,
        predicted_limit: predicted,
        verdicts: HypothesisVerdicts {
            a_limit_covariance: a,
            b_vanishing_opnorms: b,
            c_limit_matrix: c,
            d_bounded_hessian: d,
        },
    })
}
