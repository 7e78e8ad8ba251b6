//! Gauss-Legendre nodes and weights for the attribution path integral.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    GaussLegendre,
    Riemann,
}

/// Nodes and weights integrating over [0, 1].
pub fn rule(quadrature: Quadrature, n: usize) -> (Vec<f64>, Vec<f64>) {
    match quadrature {
        Quadrature::GaussLegendre => gauss_legendre_unit(n),
        Quadrature::Riemann => midpoint_unit(n),
    }
}

/// Midpoint Riemann rule on [0, 1].
pub fn midpoint_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let nodes = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let weights = vec![1.0 / n as f64; n];
    (nodes, weights)
}

/// Gauss-Legendre rule mapped from [-1, 1] onto [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(n);
    (
        nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Legendre polynomial value and derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights on [-1, 1] by Newton iteration from the Chebyshev
/// initial guess. Exact for polynomials of degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, dp) = legendre(n, 0.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 5, 20, 50] {
            let (_, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
            let (_, wu) = gauss_legendre_unit(n);
            assert_abs_diff_eq!(wu.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_for_polynomials() {
        // degree 2n-1 polynomial integrates exactly
        let (x, w) = gauss_legendre_unit(5);
        // integral of t^9 over [0,1] = 0.1
        let approx: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(9)).sum();
        assert_abs_diff_eq!(approx, 0.1, epsilon = 1e-13);
    }

    #[test]
    fn fifty_nodes_match_known_two_point_rule() {
        let (x, w) = gauss_legendre(2);
        let r = 1.0 / 3.0f64.sqrt();
        assert_abs_diff_eq!(x[0], -r, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], r, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn midpoint_converges_on_smooth_integrand() {
        let f = |t: f64| (3.0 * t).sin();
        let exact = (1.0 - (3.0f64).cos()) / 3.0;
        let err = |n: usize| {
            let (x, w) = midpoint_unit(n);
            (x.iter().zip(&w).map(|(t, w)| w * f(*t)).sum::<f64>() - exact).abs()
        };
        assert!(err(10) > err(100));
        assert!(err(100) > err(1000));
    }
}
