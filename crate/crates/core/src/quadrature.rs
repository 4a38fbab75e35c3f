//! One-dimensional Gauss–Legendre rules, composite and adaptive.

/// Nodes and weights of the `m`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1);
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for i in 0..m.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(m, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }

    /// Composite rule over `panels` equal panels.
    pub fn composite(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let lo = a + h * p as f64;
                self.integrate(lo, lo + h, &f)
            })
            .sum()
    }

    /// Node/weight pairs of the composite rule, for reuse across many integrands.
    pub fn composite_points(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        for p in 0..panels {
            let c = a + h * (p as f64 + 0.5);
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                out.push((c + 0.5 * h * x, 0.5 * h * w));
            }
        }
        out
    }
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection comparing a 10-point rule against its two halves.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let gl = GaussLegendre::new(10);
    let whole = gl.integrate(a, b, f);
    refine(&gl, f, a, b, whole, tol, 0)
}

fn refine(
    gl: &GaussLegendre,
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = gl.integrate(a, m, f);
    let right = gl.integrate(m, b, f);
    if (left + right - whole).abs() <= tol || depth >= 40 {
        return left + right;
    }
    refine(gl, f, a, m, left, 0.5 * tol, depth + 1) + refine(gl, f, m, b, right, 0.5 * tol, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let gl = GaussLegendre::new(5);
        let v = gl.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-11);
        let s: f64 = gl.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_rule_has_center_node() {
        let gl = GaussLegendre::new(7);
        assert!(gl.nodes()[3].abs() < 1e-15);
        let v = gl.integrate(-1.0, 1.0, |x| x * x);
        assert!((v - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn composite_matches_closed_form() {
        let gl = GaussLegendre::new(8);
        let v = gl.composite(0.0, std::f64::consts::PI, 4, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
        let pts = gl.composite_points(0.0, 1.0, 3);
        let w: f64 = pts.iter().map(|p| p.1).sum();
        assert!((w - 1.0).abs() < 1e-14);
    }
}
