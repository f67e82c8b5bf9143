//! Smooth scalar fields with closed-form derivatives.
//!
//! Manufactured solutions are defined globally on the plane, so their
//! extension beyond the domain is exact and the forcing f = -laplacian(u)
//! is available everywhere a curved element can reach.

use crate::vec2::Vec2;

/// A smooth scalar field with value, gradient and Laplacian in closed form.
pub trait ScalarField2D {
    fn value(&self, x: Vec2) -> f64;
    fn gradient(&self, x: Vec2) -> Vec2;
    fn laplacian(&self, x: Vec2) -> f64;
}

/// Anything that can be evaluated pointwise (the minimal interface needed by
/// interpolation and load assembly).
pub trait PointValue {
    fn value_at(&self, x: Vec2) -> f64;
}

impl<T: ScalarField2D + ?Sized> PointValue for T {
    fn value_at(&self, x: Vec2) -> f64 {
        self.value(x)
    }
}

/// Adapter turning a closure into a `PointValue`.
pub struct FnField<F: Fn(Vec2) -> f64>(pub F);

impl<F: Fn(Vec2) -> f64> PointValue for FnField<F> {
    fn value_at(&self, x: Vec2) -> f64 {
        (self.0)(x)
    }
}

/// The forcing induced by a manufactured solution: value = -laplacian(u).
pub struct NegLaplacian<'a, T: ScalarField2D + ?Sized>(pub &'a T);

impl<T: ScalarField2D + ?Sized> PointValue for NegLaplacian<'_, T> {
    fn value_at(&self, x: Vec2) -> f64 {
        -self.0.laplacian(x)
    }
}

/// Polynomial in two variables: sum of coeff * x^a * y^b terms.
#[derive(Debug, Clone)]
pub struct Polynomial2D {
    /// (coefficient, x-exponent, y-exponent)
    pub terms: Vec<(f64, u32, u32)>,
}

impl Polynomial2D {
    pub fn new(terms: Vec<(f64, u32, u32)>) -> Self {
        Self { terms }
    }
}

/// x^n with the convention 0^0 = 1, returning 0 for negative powers.
fn pow_or_zero(x: f64, n: i64) -> f64 {
    if n < 0 {
        0.0
    } else {
        x.powi(n as i32)
    }
}

impl ScalarField2D for Polynomial2D {
    fn value(&self, x: Vec2) -> f64 {
        self.terms
            .iter()
            .map(|&(c, a, b)| c * x[0].powi(a as i32) * x[1].powi(b as i32))
            .sum()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let mut g = [0.0; 2];
        for &(c, a, b) in &self.terms {
            g[0] += c * a as f64 * pow_or_zero(x[0], a as i64 - 1) * pow_or_zero(x[1], b as i64);
            g[1] += c * b as f64 * pow_or_zero(x[0], a as i64) * pow_or_zero(x[1], b as i64 - 1);
        }
        g
    }

    fn laplacian(&self, x: Vec2) -> f64 {
        let mut acc = 0.0;
        for &(c, a, b) in &self.terms {
            let (af, bf) = (a as f64, b as f64);
            acc += c * af * (af - 1.0) * pow_or_zero(x[0], a as i64 - 2) * pow_or_zero(x[1], b as i64);
            acc += c * bf * (bf - 1.0) * pow_or_zero(x[0], a as i64) * pow_or_zero(x[1], b as i64 - 2);
        }
        acc
    }
}

/// A generic smooth non-polynomial field used in extension and stability tests:
/// sin(3x) cos(2y) + x^2 y / 2.
pub struct TrigField;

impl ScalarField2D for TrigField {
    fn value(&self, x: Vec2) -> f64 {
        (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + 0.5 * x[0] * x[0] * x[1]
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        [
            3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos() + x[0] * x[1],
            -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin() + 0.5 * x[0] * x[0],
        ]
    }

    fn laplacian(&self, x: Vec2) -> f64 {
        -13.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + x[1]
    }
}

/// Manufactured Dirichlet solution on the disk of radius R:
///     u(x, y) = (R^2 - x^2 - y^2) sin(x + 2y).
/// Vanishes on the boundary circle; smooth on the whole plane.
#[derive(Debug, Clone, Copy)]
pub struct DiskSolution {
    pub radius: f64,
}

impl ScalarField2D for DiskSolution {
    fn value(&self, x: Vec2) -> f64 {
        let g = self.radius * self.radius - x[0] * x[0] - x[1] * x[1];
        g * (x[0] + 2.0 * x[1]).sin()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let g = self.radius * self.radius - x[0] * x[0] - x[1] * x[1];
        let (s, c) = (x[0] + 2.0 * x[1]).sin_cos();
        [-2.0 * x[0] * s + g * c, -2.0 * x[1] * s + 2.0 * g * c]
    }

    fn laplacian(&self, x: Vec2) -> f64 {
        // u_xx = -2s - 4x c - g s, u_yy = -2s - 8y c - 4 g s.
        let g = self.radius * self.radius - x[0] * x[0] - x[1] * x[1];
        let (s, c) = (x[0] + 2.0 * x[1]).sin_cos();
        -4.0 * s - 4.0 * (x[0] + 2.0 * x[1]) * c - 5.0 * g * s
    }
}

/// Manufactured Dirichlet solution on the ellipse x^2/a^2 + y^2/b^2 <= 1:
///     u(x, y) = (1 - x^2/a^2 - y^2/b^2) cos(x - y).
#[derive(Debug, Clone, Copy)]
pub struct EllipseSolution {
    pub a: f64,
    pub b: f64,
}

impl ScalarField2D for EllipseSolution {
    fn value(&self, x: Vec2) -> f64 {
        let g = 1.0 - (x[0] / self.a).powi(2) - (x[1] / self.b).powi(2);
        g * (x[0] - x[1]).cos()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let g = 1.0 - x[0] * x[0] / a2 - x[1] * x[1] / b2;
        let (s, c) = (x[0] - x[1]).sin_cos();
        [-2.0 * x[0] / a2 * c - g * s, -2.0 * x[1] / b2 * c + g * s]
    }

    fn laplacian(&self, x: Vec2) -> f64 {
        // u_xx = -2/a^2 c + 4x/a^2 s - g c, u_yy = -2/b^2 c - 4y/b^2 s - g c.
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let g = 1.0 - x[0] * x[0] / a2 - x[1] * x[1] / b2;
        let (s, c) = (x[0] - x[1]).sin_cos();
        -2.0 * (1.0 / a2 + 1.0 / b2) * c + (4.0 * x[0] / a2 - 4.0 * x[1] / b2) * s - 2.0 * g * c
    }
}
