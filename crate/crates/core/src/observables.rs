//! Finite families of smooth test functions used to probe solutions weakly.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::spectral::{FourierGrid, ScalarField, VectorField2};

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableKind {
    /// `cos(2π k·x)`.
    Cos { k1: i64, k2: i64 },
    /// `sin(2π k1 x1) cos(2π k2 x2)`.
    SinCos { k1: i64, k2: i64 },
    /// Unnormalized bump `exp(-1/(1 - |x - c|²/r²))`.
    Bump { center: [f64; 2], radius: f64 },
}

impl ObservableKind {
    pub fn name(&self) -> String {
        match self {
            ObservableKind::Cos { k1, k2 } => format!("cos_{k1}_{k2}"),
            ObservableKind::SinCos { k1, k2 } => format!("sincos_{k1}_{k2}"),
            ObservableKind::Bump { .. } => "bump".to_string(),
        }
    }

    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            ObservableKind::Cos { k1, k2 } => (2.0 * PI * (k1 as f64 * x1 + k2 as f64 * x2)).cos(),
            ObservableKind::SinCos { k1, k2 } => {
                (2.0 * PI * k1 as f64 * x1).sin() * (2.0 * PI * k2 as f64 * x2).cos()
            }
            ObservableKind::Bump { center, radius } => {
                let d1 = wrap(x1 - center[0]);
                let d2 = wrap(x2 - center[1]);
                let s2 = (d1 * d1 + d2 * d2) / (radius * radius);
                if s2 >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - s2)).exp()
                }
            }
        }
    }

    /// `‖∇φ‖∞`.
    pub fn grad_sup(&self) -> f64 {
        match *self {
            ObservableKind::Cos { k1, k2 } => 2.0 * PI * ((k1 * k1 + k2 * k2) as f64).sqrt(),
            ObservableKind::SinCos { k1, k2 } => {
                // |∇φ|² = 4π²(k1² cos²a cos²b + k2² sin²a sin²b) peaks at a corner
                2.0 * PI * (k1.abs().max(k2.abs())) as f64
            }
            ObservableKind::Bump { radius, .. } => {
                (1..20_000)
                    .map(|i| {
                        let s = i as f64 / 20_000.0;
                        let q = 1.0 - s * s;
                        (-1.0 / q).exp() * 2.0 * s / (radius * q * q)
                    })
                    .fold(0.0, f64::max)
            }
        }
    }
}

fn discrete_sup<T: Real>(grid: &FourierGrid<T>, grad: &VectorField2<T>) -> f64 {
    let a = grid.inverse(&grad.u1);
    let b = grid.inverse(&grad.u2);
    a.iter()
        .zip(&b)
        .map(|(x, y)| x.to_f64_lossy().hypot(y.to_f64_lossy()))
        .fold(0.0, f64::max)
}

fn wrap(x: f64) -> f64 {
    x - x.round()
}

#[derive(Clone, Debug)]
pub struct Observable<T: Real> {
    pub kind: ObservableKind,
    pub name: String,
    pub phi: ScalarField<T>,
    pub grad: VectorField2<T>,
    pub grad_sup: f64,
}

#[derive(Clone, Debug)]
pub struct ObservableSet<T: Real> {
    pub items: Vec<Observable<T>>,
}

/// Default probes: three low Fourier modes and one off-center bump.
pub fn default_kinds() -> Vec<ObservableKind> {
    vec![
        ObservableKind::Cos { k1: 0, k2: 1 },
        ObservableKind::SinCos { k1: 1, k2: 1 },
        ObservableKind::Cos { k1: 1, k2: 0 },
        ObservableKind::Bump {
            center: [0.2, -0.1],
            radius: 0.3,
        },
    ]
}

impl<T: Real> ObservableSet<T> {
    pub fn new(grid: &FourierGrid<T>, kinds: &[ObservableKind]) -> Self {
        let items = kinds
            .iter()
            .map(|k| {
                let phi = grid.from_fn(|a, b| k.value(a, b));
                let grad = grid.gradient(&phi, false);
                // bounds apply to the discrete gradient, which can overshoot
                // the exact sup slightly on steep profiles
                let grad_sup = k.grad_sup().max(discrete_sup(grid, &grad));
                Observable {
                    kind: k.clone(),
                    name: k.name(),
                    phi,
                    grad,
                    grad_sup,
                }
            })
            .collect();
        Self { items }
    }

    pub fn default_set(grid: &FourierGrid<T>) -> Self {
        Self::new(grid, &default_kinds())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.items.iter().map(|o| o.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_sup_matches_sampling() {
        let g = FourierGrid::<f64>::new(128).unwrap();
        for k in default_kinds() {
            let set = ObservableSet::new(&g, std::slice::from_ref(&k));
            let o = &set.items[0];
            let a = g.inverse(&o.grad.u1);
            let b = g.inverse(&o.grad.u2);
            let sampled = a
                .iter()
                .zip(&b)
                .map(|(x, y)| x.hypot(*y))
                .fold(0.0, f64::max);
            let exact = k.grad_sup();
            assert!(sampled <= o.grad_sup, "{}", o.name);
            assert!(o.grad_sup >= exact, "{}", o.name);
            // the spectral gradient agrees with the exact sup up to discretization
            assert!((sampled - exact).abs() <= 1e-3 * exact, "{} {sampled} {exact}", o.name);
        }
    }
}
