//! Quadrature on the reference triangle.
//!
//! Degrees 1 and 2 use the classic centroid and symmetric three-point rules.
//! Higher degrees use a collapsed (Duffy-type) tensor product of Gauss-Legendre
//! rules: with x = u(1-v), y = v the integral becomes
//!     int_T f = int_0^1 int_0^1 f(u(1-v), v) (1-v) du dv,
//! and a monomial x^a y^b of total degree <= d maps to a polynomial of degree
//! a <= d in u and a + b + 1 <= d + 1 in v.  Gauss-Legendre with ceil((d+1)/2)
//! points in u and ceil((d+2)/2) points in v therefore integrates every such
//! monomial exactly.  All weights are positive and all points lie strictly
//! inside the triangle.

use crate::error::{Error, Result};

/// A quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Apply the rule to a function on the reference triangle.
    pub fn integrate(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Build a rule exact for polynomials of the given total degree (1..=30).
pub fn build_quadrature(degree: usize) -> Result<QuadratureRule> {
    match degree {
        1 => Ok(QuadratureRule {
            degree,
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
        }),
        2 => Ok(QuadratureRule {
            degree,
            points: vec![
                [1.0 / 6.0, 1.0 / 6.0],
                [2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0],
            ],
            weights: vec![1.0 / 6.0; 3],
        }),
        3..=30 => {
            let nu = degree / 2 + 1; // ceil((d+1)/2)
            let nv = (degree + 1) / 2 + 1; // ceil((d+2)/2)
            let (pu, wu) = gauss_legendre_unit(nu);
            let (pv, wv) = gauss_legendre_unit(nv);
            let mut points = Vec::with_capacity(nu * nv);
            let mut weights = Vec::with_capacity(nu * nv);
            for (&v, &wvj) in pv.iter().zip(&wv) {
                for (&u, &wui) in pu.iter().zip(&wu) {
                    points.push([u * (1.0 - v), v]);
                    weights.push(wui * wvj * (1.0 - v));
                }
            }
            Ok(QuadratureRule { degree, points, weights })
        }
        _ => Err(Error::UnsupportedDegree(degree)),
    }
}

/// Gauss-Legendre nodes and weights on [0, 1] (weights sum to 1).
///
/// Nodes are Legendre roots found by Newton iteration from Chebyshev-type
/// initial guesses; this is accurate to machine precision for the point
/// counts needed here (n <= 100).
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Initial guess for the i-th root of P_n on [-1, 1], descending order.
        let mut t = (std::f64::consts::PI * (4.0 * i as f64 + 3.0)
            / (4.0 * n as f64 + 2.0))
            .cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        // Map [-1, 1] -> [0, 1].
        points[i] = 0.5 * (t + 1.0);
        weights[i] = 0.5 * w;
    }
    // Ascending order for reproducibility.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    (
        order.iter().map(|&i| points[i]).collect(),
        order.iter().map(|&i| weights[i]).collect(),
    )
}

/// Legendre polynomial P_n and its derivative at t, by the three-term recurrence.
fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for m in 2..=n {
        let mf = m as f64;
        let p2 = ((2.0 * mf - 1.0) * t * p1 - (mf - 1.0) * p0) / mf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}
