//! Truncated bivariate Taylor expansions ("jets") and their composition,
//! used to compute exact higher-order physical derivatives of finite element
//! fields on curved elements: the geometry map is polynomial, so its Taylor
//! expansion can be inverted order by order and composed with the reference
//! expansion of the field.  No finite differencing is involved.

use crate::femspace::space::{FeSpace, Field};
use crate::vec2::Vec2;

/// A bivariate polynomial in two offset variables (du, dv), truncated at a
/// total degree.  Coefficients are Taylor coefficients (derivatives divided
/// by factorials), stored in graded lexicographic order.
#[derive(Debug, Clone)]
pub struct Jet2 {
    pub order: usize,
    coeffs: Vec<f64>,
}

fn n_terms(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

fn slot(i: usize, j: usize) -> usize {
    let s = i + j;
    s * (s + 1) / 2 + j
}

impl Jet2 {
    pub fn zero(order: usize) -> Self {
        Self { order, coeffs: vec![0.0; n_terms(order)] }
    }

    pub fn constant(order: usize, c: f64) -> Self {
        let mut jet = Self::zero(order);
        jet.coeffs[0] = c;
        jet
    }

    /// Taylor coefficient of du^i dv^j (not the derivative itself).
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.order {
            0.0
        } else {
            self.coeffs[slot(i, j)]
        }
    }

    pub fn set_coeff(&mut self, i: usize, j: usize, c: f64) {
        assert!(i + j <= self.order);
        self.coeffs[slot(i, j)] = c;
    }

    /// The partial derivative d^{i+j} / du^i dv^j encoded by this jet.
    pub fn derivative(&self, i: usize, j: usize) -> f64 {
        let mut f = 1.0;
        for s in 2..=i {
            f *= s as f64;
        }
        for s in 2..=j {
            f *= s as f64;
        }
        self.coeff(i, j) * f
    }

    pub fn add(&self, other: &Jet2) -> Jet2 {
        assert_eq!(self.order, other.order);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Jet2 { order: self.order, coeffs }
    }

    pub fn sub(&self, other: &Jet2) -> Jet2 {
        assert_eq!(self.order, other.order);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Jet2 { order: self.order, coeffs }
    }

    pub fn scale(&self, s: f64) -> Jet2 {
        Jet2 { order: self.order, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// Truncated product.
    pub fn mul(&self, other: &Jet2) -> Jet2 {
        assert_eq!(self.order, other.order);
        let mut out = Jet2::zero(self.order);
        for i1 in 0..=self.order {
            for j1 in 0..=(self.order - i1) {
                let a = self.coeffs[slot(i1, j1)];
                if a == 0.0 {
                    continue;
                }
                for i2 in 0..=(self.order - i1 - j1) {
                    for j2 in 0..=(self.order - i1 - j1 - i2) {
                        let b = other.coeffs[slot(i2, j2)];
                        if b != 0.0 {
                            out.coeffs[slot(i1 + i2, j1 + j2)] += a * b;
                        }
                    }
                }
            }
        }
        out
    }

    /// Substitute jets (with zero constant term) for the two variables.
    pub fn compose(&self, x: &Jet2, y: &Jet2) -> Jet2 {
        assert_eq!(self.order, x.order);
        assert_eq!(self.order, y.order);
        debug_assert!(x.coeff(0, 0) == 0.0 && y.coeff(0, 0) == 0.0);
        // Powers of the inner jets up to the truncation order.
        let mut xp = vec![Jet2::constant(self.order, 1.0)];
        let mut yp = vec![Jet2::constant(self.order, 1.0)];
        for s in 1..=self.order {
            xp.push(xp[s - 1].mul(x));
            yp.push(yp[s - 1].mul(y));
        }
        let mut out = Jet2::zero(self.order);
        for i in 0..=self.order {
            for j in 0..=(self.order - i) {
                let c = self.coeffs[slot(i, j)];
                if c != 0.0 {
                    out = out.add(&xp[i].mul(&yp[j]).scale(c));
                }
            }
        }
        out
    }
}

/// Taylor jets of the two components of the geometry map F_T around a
/// reference point, in reference offset variables.
pub fn geometry_map_jet(space: &FeSpace, t: usize, xhat: Vec2, order: usize) -> [Jet2; 2] {
    let reference = space.mesh.reference();
    let mut jets = [Jet2::zero(order), Jet2::zero(order)];
    let mut factorial = vec![1.0f64; order + 1];
    for s in 1..=order {
        factorial[s] = factorial[s - 1] * s as f64;
    }
    for i in 0..=order {
        for j in 0..=(order - i) {
            let mut d = [0.0; 2];
            for (local, a) in space.mesh.geom_nodes[t].iter().enumerate() {
                let phi = reference.derivative(local, i as u32, j as u32, xhat);
                d[0] += a[0] * phi;
                d[1] += a[1] * phi;
            }
            for r in 0..2 {
                jets[r].set_coeff(i, j, d[r] / (factorial[i] * factorial[j]));
            }
        }
    }
    jets
}

/// Taylor jet of the reference expansion of a field around a reference point.
pub fn field_reference_jet(
    space: &FeSpace,
    field: &Field,
    t: usize,
    xhat: Vec2,
    order: usize,
) -> Jet2 {
    let reference = space.mesh.reference();
    let mut jet = Jet2::zero(order);
    let mut factorial = vec![1.0f64; order + 1];
    for s in 1..=order {
        factorial[s] = factorial[s - 1] * s as f64;
    }
    for i in 0..=order {
        for j in 0..=(order - i) {
            let mut d = 0.0;
            for (local, &a) in space.mesh.node_map[t].iter().enumerate() {
                d += field.coefficients[a]
                    * reference.derivative(local, i as u32, j as u32, xhat);
            }
            jet.set_coeff(i, j, d / (factorial[i] * factorial[j]));
        }
    }
    jet
}

/// Jets of the inverse geometry map: reference offsets as functions of
/// physical offsets, obtained by fixed-point iteration on the truncated
/// expansion (one Taylor order gained per sweep).
pub fn invert_map_jets(fx: &Jet2, fy: &Jet2) -> (Jet2, Jet2) {
    let order = fx.order;
    let jac = [
        [fx.coeff(1, 0), fx.coeff(0, 1)],
        [fy.coeff(1, 0), fy.coeff(0, 1)],
    ];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let jinv = [
        [jac[1][1] / det, -jac[0][1] / det],
        [-jac[1][0] / det, jac[0][0] / det],
    ];
    // Physical offset variables as jets.
    let mut du = Jet2::zero(order);
    du.set_coeff(1, 0, 1.0);
    let mut dv = Jet2::zero(order);
    dv.set_coeff(0, 1, 1.0);
    // Map jets without their constant terms (offsets only).
    let mut fx0 = fx.clone();
    fx0.set_coeff(0, 0, 0.0);
    let mut fy0 = fy.clone();
    fy0.set_coeff(0, 0, 0.0);

    let mut x1 = du.scale(jinv[0][0]).add(&dv.scale(jinv[0][1]));
    let mut x2 = du.scale(jinv[1][0]).add(&dv.scale(jinv[1][1]));
    for _ in 0..order {
        let r1 = du.sub(&fx0.compose(&x1, &x2));
        let r2 = dv.sub(&fy0.compose(&x1, &x2));
        x1 = x1.add(&r1.scale(jinv[0][0])).add(&r2.scale(jinv[0][1]));
        x2 = x2.add(&r1.scale(jinv[1][0])).add(&r2.scale(jinv[1][1]));
    }
    (x1, x2)
}

/// Taylor jet of a field as a function of *physical* offsets around the image
/// of a reference point: all physical derivatives up to the jet order, exact
/// up to rounding.
pub fn field_physical_jet(
    space: &FeSpace,
    field: &Field,
    t: usize,
    xhat: Vec2,
    order: usize,
) -> Jet2 {
    let [fx, fy] = geometry_map_jet(space, t, xhat, order);
    let (x1, x2) = invert_map_jets(&fx, &fy);
    field_reference_jet(space, field, t, xhat, order).compose(&x1, &x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::quadrature::build_quadrature;
    use crate::femspace::space::FeSpace;
    use crate::geometry::DomainDescriptor;
    use crate::meshing::{det2, triangulate, CurvedMesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk() -> DomainDescriptor {
        DomainDescriptor::disk(1.0).unwrap()
    }

    fn random_field(space: &FeSpace, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        space.field_from_coefficients(coeffs).unwrap()
    }

    /// An element with at least one curved (boundary) edge.
    fn curved_element(space: &FeSpace) -> usize {
        (0..space.mesh.n_elements())
            .find(|&t| (0..3).any(|e| space.mesh.is_boundary_edge(t, e)))
            .unwrap()
    }

    #[test]
    fn jet_product_matches_polynomial_multiplication() {
        // (1 + 2u + 3v)^2 = 1 + 4u + 6v + 4u^2 + 12uv + 9v^2.
        let mut a = Jet2::zero(2);
        a.set_coeff(0, 0, 1.0);
        a.set_coeff(1, 0, 2.0);
        a.set_coeff(0, 1, 3.0);
        let sq = a.mul(&a);
        assert_eq!(sq.coeff(0, 0), 1.0);
        assert_eq!(sq.coeff(1, 0), 4.0);
        assert_eq!(sq.coeff(0, 1), 6.0);
        assert_eq!(sq.coeff(2, 0), 4.0);
        assert_eq!(sq.coeff(1, 1), 12.0);
        assert_eq!(sq.coeff(0, 2), 9.0);
    }

    #[test]
    fn inverse_jets_compose_with_the_map_to_the_identity() {
        let tri = triangulate(&disk(), 0.3).unwrap();
        let space = FeSpace::new(CurvedMesh::curved(tri, &disk(), 3).unwrap());
        let t = curved_element(&space);
        for xhat in [[0.3, 0.3], [0.2, 0.5], [1.0 / 3.0, 1.0 / 3.0]] {
            let order = 4;
            let [fx, fy] = geometry_map_jet(&space, t, xhat, order);
            let (x1, x2) = invert_map_jets(&fx, &fy);
            let mut fx0 = fx.clone();
            fx0.set_coeff(0, 0, 0.0);
            let mut fy0 = fy.clone();
            fy0.set_coeff(0, 0, 0.0);
            let idu = fx0.compose(&x1, &x2);
            let idv = fy0.compose(&x1, &x2);
            for i in 0..=order {
                for j in 0..=(order - i) {
                    let want_u = if (i, j) == (1, 0) { 1.0 } else { 0.0 };
                    let want_v = if (i, j) == (0, 1) { 1.0 } else { 0.0 };
                    assert!(
                        (idu.coeff(i, j) - want_u).abs() < 1e-11,
                        "du^{i} dv^{j}: {}",
                        idu.coeff(i, j)
                    );
                    assert!((idv.coeff(i, j) - want_v).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn physical_jet_matches_value_and_gradient_evaluation() {
        let tri = triangulate(&disk(), 0.3).unwrap();
        let space = FeSpace::new(CurvedMesh::curved(tri, &disk(), 2).unwrap());
        let field = random_field(&space, 2);
        let t = curved_element(&space);
        let xhat = [0.25, 0.4];
        let jet = field_physical_jet(&space, &field, t, xhat, 3);
        let (v, g) = space.eval_in_element_with_gradient(&field, t, xhat);
        assert!((jet.derivative(0, 0) - v).abs() < 1e-12);
        assert!((jet.derivative(1, 0) - g[0]).abs() < 1e-11, "{} vs {}", jet.derivative(1, 0), g[0]);
        assert!((jet.derivative(0, 1) - g[1]).abs() < 1e-11);
    }

    #[test]
    fn physical_second_derivatives_match_finite_differences() {
        let tri = triangulate(&disk(), 0.3).unwrap();
        let space = FeSpace::new(CurvedMesh::curved(tri, &disk(), 2).unwrap());
        let field = random_field(&space, 7);
        let t = curved_element(&space);
        let xhat = [1.0 / 3.0, 1.0 / 3.0];
        let jet = field_physical_jet(&space, &field, t, xhat, 3);
        let (x0, _) = space.mesh.element_map(t, xhat);
        let h = 1e-4;
        let u = |dx: f64, dy: f64| space.field_eval(&field, [x0[0] + dx, x0[1] + dy]).unwrap();
        let d20 = (u(h, 0.0) - 2.0 * u(0.0, 0.0) + u(-h, 0.0)) / (h * h);
        let d02 = (u(0.0, h) - 2.0 * u(0.0, 0.0) + u(0.0, -h)) / (h * h);
        let d11 = (u(h, h) - u(h, -h) - u(-h, h) + u(-h, -h)) / (4.0 * h * h);
        let scale = 1.0 + d20.abs().max(d02.abs()).max(d11.abs());
        assert!((jet.derivative(2, 0) - d20).abs() < 1e-3 * scale, "{} vs {d20}", jet.derivative(2, 0));
        assert!((jet.derivative(0, 2) - d02).abs() < 1e-3 * scale);
        assert!((jet.derivative(1, 1) - d11).abs() < 1e-3 * scale);
    }

    #[test]
    fn order_k_plus_one_derivatives_vanish_on_straight_elements() {
        for k in [2usize, 3] {
            let tri = triangulate(&disk(), 0.35).unwrap();
            let space = FeSpace::new(CurvedMesh::straight(tri, k).unwrap());
            let field = random_field(&space, 13);
            // Pick any element; all are straight here, so the composed map is
            // affine and the field is a degree-k physical polynomial.
            let jet = field_physical_jet(&space, &field, 0, [0.3, 0.3], k + 1);
            for i in 0..=(k + 1) {
                let j = k + 1 - i;
                let d = jet.derivative(i, j);
                assert!(
                    d.abs() < 1e-8,
                    "k={k}: order-{} derivative du^{i} dv^{j} is {d}",
                    k + 1
                );
            }
        }
    }

    /// Squared Frobenius norm of the order-m derivative tensor, using the
    /// multinomial weights of the symmetric tensor.
    fn grad_m_sq(jet: &Jet2, m: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..=m {
            let j = m - i;
            let mut binom = 1.0f64;
            for s in 0..i {
                binom = binom * (m - s) as f64 / (s + 1) as f64;
            }
            let d = jet.derivative(i, j);
            acc += binom * d * d;
        }
        acc
    }

    #[test]
    fn super_approximation_ratio_is_level_stable_on_curved_elements() {
        // On curved elements |grad^{k+1} v_h|_{L2(T)} / |v_h|_{W^{k,2}(T)}
        // stays bounded as h decreases (it would be exactly zero on straight
        // elements).  Measured maxima over boundary elements per level.
        let k = 2;
        let rule = build_quadrature(2 * k + 3).unwrap();
        let mut maxima = Vec::new();
        for h in [0.4, 0.2, 0.1] {
            let tri = triangulate(&disk(), h).unwrap();
            let space = FeSpace::new(CurvedMesh::curved(tri, &disk(), k).unwrap());
            let mut level_max = 0.0f64;
            for seed in 0..3 {
                let field = random_field(&space, 100 + seed);
                for t in 0..space.mesh.n_elements() {
                    if !(0..3).any(|e| space.mesh.is_boundary_edge(t, e)) {
                        continue;
                    }
                    let mut top_sq = 0.0;
                    let mut wk_sq = 0.0;
                    for (q, &xhat) in rule.points.iter().enumerate() {
                        let (_, jac) = space.mesh.element_map(t, xhat);
                        let w = rule.weights[q] * det2(jac).abs();
                        let jet = field_physical_jet(&space, &field, t, xhat, k + 1);
                        top_sq += w * grad_m_sq(&jet, k + 1);
                        for m in 0..=k {
                            wk_sq += w * grad_m_sq(&jet, m);
                        }
                    }
                    level_max = level_max.max((top_sq / wk_sq).sqrt());
                }
            }
            maxima.push(level_max);
        }
        for w in maxima.windows(2) {
            assert!(
                w[1] <= 2.0 * w[0],
                "super-approximation ratio grows across levels: {maxima:?}"
            );
        }
    }
}
