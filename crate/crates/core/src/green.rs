//! Closed-form Green function of `-Δ` on the unit square torus (zero-mean
//! convention), written through the Jacobi theta function with nome `e^{-π}`.
//!
//! With `z = x1 + i x2`,
//! `G(x) = -(1/2π)[log 2 - π/4 + log|sin πz| + Σ_n log|1 - 2qⁿcos 2πz + q²ⁿ|] + x2²/2 - 1/24`
//! where `q = e^{-2π}`. The formula is exactly periodic, so it can be evaluated at
//! unwrapped points; `regular_part` subtracts the planar kernel `-(1/2π)log|x|`.

use num_complex::Complex64;
use std::f64::consts::PI;

const TERMS: usize = 8;

fn q_pow(n: usize) -> f64 {
    (-2.0 * PI * n as f64).exp()
}

/// `log|sin w / w|`, stable near `w = 0`.
fn log_abs_sinc(w: Complex64) -> f64 {
    if w.norm() < 1e-3 {
        let w2 = w * w;
        let s = 1.0 - w2 / 6.0 + w2 * w2 / 120.0;
        s.norm().ln()
    } else {
        (w.sin() / w).norm().ln()
    }
}

/// `cot w - 1/w`, stable near `w = 0`.
fn cot_minus_inv(w: Complex64) -> Complex64 {
    if w.norm() < 1e-2 {
        let w2 = w * w;
        -w / 3.0 - w * w2 / 45.0 - 2.0 * w * w2 * w2 / 945.0
    } else {
        w.cos() / w.sin() - 1.0 / w
    }
}

fn product_log(z: Complex64) -> f64 {
    let c = (2.0 * PI * z).cos();
    (1..=TERMS)
        .map(|n| {
            let q = q_pow(n);
            (1.0 - 2.0 * q * c + q * q).norm().ln()
        })
        .sum()
}

/// `d/dz` of `Σ log(1 - 2qⁿ cos 2πz + q²ⁿ)`.
fn product_log_derivative(z: Complex64) -> Complex64 {
    let c = (2.0 * PI * z).cos();
    let s = (2.0 * PI * z).sin();
    (1..=TERMS)
        .map(|n| {
            let q = q_pow(n);
            4.0 * PI * q * s / (1.0 - 2.0 * q * c + q * q)
        })
        .sum()
}

/// `ζ(x) = G(x) + (1/2π) log|x|`, smooth for `|x| < 1`.
pub fn regular_part(x1: f64, x2: f64) -> f64 {
    let z = Complex64::new(x1, x2);
    let inner = 2f64.ln() - PI / 4.0 + PI.ln() + log_abs_sinc(PI * z) + product_log(z);
    -inner / (2.0 * PI) + 0.5 * x2 * x2 - 1.0 / 24.0
}

/// `∇ζ(x)`.
pub fn regular_gradient(x1: f64, x2: f64) -> [f64; 2] {
    let z = Complex64::new(x1, x2);
    // derivative of log(sin πz / πz) plus the product part, w.r.t. z
    let d = PI * cot_minus_inv(PI * z) + product_log_derivative(z);
    // for holomorphic h, ∂1 log|h| = Re(h'/h) and ∂2 log|h| = -Im(h'/h)
    [-d.re / (2.0 * PI), d.im / (2.0 * PI) + x2]
}

/// Torus Green function; singular at lattice points.
pub fn green(x1: f64, x2: f64) -> f64 {
    let (y1, y2) = (wrap(x1), wrap(x2));
    regular_part(y1, y2) - y1.hypot(y2).ln() / (2.0 * PI)
}

/// `∇G(x)`.
pub fn green_gradient(x1: f64, x2: f64) -> [f64; 2] {
    let (y1, y2) = (wrap(x1), wrap(x2));
    let g = regular_gradient(y1, y2);
    let r2 = y1 * y1 + y2 * y2;
    [g[0] - y1 / (2.0 * PI * r2), g[1] - y2 / (2.0 * PI * r2)]
}

fn wrap(x: f64) -> f64 {
    x - x.round()
}
