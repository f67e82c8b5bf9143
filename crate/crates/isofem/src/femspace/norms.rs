//! Error norms between finite element fields and smooth reference functions,
//! plus the boundary-layer interpolation ratio used to monitor the stability
//! of dropping boundary node values.
//!
//! The sup norm is approximated on a dense per-element lattice (order 2k+3)
//! together with all global nodes; L2 and H1 quantities use quadrature of
//! degree 2k+3 on each curved element with |det J| weights.

use crate::error::{Error, Result};
use crate::femspace::quadrature::build_quadrature;
use crate::femspace::reference::{BasisTable, ReferenceElement};
use crate::femspace::space::{FeSpace, Field};
use crate::geometry::ScalarField2D;
use crate::meshing::{det2, solve_transposed, CurvedMesh};
use crate::vec2::Vec2;

/// The three error measures reported by convergence studies.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    /// Sup norm over the sample lattice and all nodes.
    pub linf: f64,
    /// L2 norm over the computational domain.
    pub l2: f64,
    /// H1 seminorm (L2 norm of the gradient error).
    pub h1_semi: f64,
}

/// Which Lebesgue norm a boundary-layer ratio is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpNorm {
    L2,
    LInf,
}

/// Geometry map and Jacobian from pre-tabulated basis values at one point.
fn map_from_table(
    mesh: &CurvedMesh,
    t: usize,
    values: &[f64],
    grads: &[[f64; 2]],
) -> (Vec2, [[f64; 2]; 2]) {
    let mut x = [0.0, 0.0];
    let mut jac = [[0.0; 2]; 2];
    for (i, a) in mesh.geom_nodes[t].iter().enumerate() {
        x[0] += a[0] * values[i];
        x[1] += a[1] * values[i];
        for r in 0..2 {
            jac[r][0] += a[r] * grads[i][0];
            jac[r][1] += a[r] * grads[i][1];
        }
    }
    (x, jac)
}

/// Field value and physical gradient from pre-tabulated basis values.
fn field_from_table(
    space: &FeSpace,
    field: &Field,
    t: usize,
    values: &[f64],
    grads: &[[f64; 2]],
    jac: [[f64; 2]; 2],
) -> (f64, Vec2) {
    let mut value = 0.0;
    let mut gref = [0.0; 2];
    for (i, &a) in space.mesh.node_map[t].iter().enumerate() {
        let c = field.coefficients[a];
        value += c * values[i];
        gref[0] += c * grads[i][0];
        gref[1] += c * grads[i][1];
    }
    (value, solve_transposed(jac, gref))
}

/// Compute the sup, L2 and H1-seminorm errors of `field` against `exact`.
pub fn error_norms(
    space: &FeSpace,
    field: &Field,
    exact: &(impl ScalarField2D + ?Sized),
) -> Result<ErrorNorms> {
    space.check(field)?;
    let mesh = &space.mesh;
    let degree = 2 * mesh.k + 3;
    let rule = build_quadrature(degree)?;
    let lattice = ReferenceElement::sample_lattice(degree);
    let quad_table: BasisTable = mesh.reference().tabulate(&rule.points);
    let lat_table: BasisTable = mesh.reference().tabulate(&lattice);

    let mut sup = 0.0f64;
    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    for t in 0..mesh.n_elements() {
        for q in 0..lattice.len() {
            let (x, _) = map_from_table(mesh, t, &lat_table.values[q], &lat_table.gradients[q]);
            let mut uh = 0.0;
            for (i, &a) in mesh.node_map[t].iter().enumerate() {
                uh += field.coefficients[a] * lat_table.values[q][i];
            }
            sup = sup.max((uh - exact.value(x)).abs());
        }
        for q in 0..rule.len() {
            let (x, jac) =
                map_from_table(mesh, t, &quad_table.values[q], &quad_table.gradients[q]);
            let (uh, guh) =
                field_from_table(space, field, t, &quad_table.values[q], &quad_table.gradients[q], jac);
            let w = rule.weights[q] * det2(jac).abs();
            let dv = uh - exact.value(x);
            let ge = exact.gradient(x);
            let dg = [guh[0] - ge[0], guh[1] - ge[1]];
            l2_sq += w * dv * dv;
            h1_sq += w * (dg[0] * dg[0] + dg[1] * dg[1]);
        }
    }
    // Global nodes are not all lattice points; include them in the sup.
    for (i, &p) in mesh.global_nodes.iter().enumerate() {
        sup = sup.max((field.coefficients[i] - exact.value(p)).abs());
    }
    Ok(ErrorNorms { linf: sup, l2: l2_sq.sqrt(), h1_semi: h1_sq.sqrt() })
}

/// Value (m = 0) or gradient (m = 1) Lp norm of a field over a set of
/// elements.  LInf uses the order-(2k+3) sample lattice, L2 quadrature of the
/// same degree.
fn field_lp_norm(space: &FeSpace, field: &Field, elements: &[usize], m: usize, p: LpNorm) -> f64 {
    let mesh = &space.mesh;
    let degree = 2 * mesh.k + 3;
    let rule = build_quadrature(degree).expect("degree in range");
    let lattice = ReferenceElement::sample_lattice(degree);
    let (points, weights): (&[Vec2], Option<&[f64]>) = match p {
        LpNorm::L2 => (&rule.points, Some(&rule.weights)),
        LpNorm::LInf => (&lattice, None),
    };
    let table = mesh.reference().tabulate(points);
    let mut acc = 0.0f64;
    for &t in elements {
        for q in 0..points.len() {
            let (_, jac) = map_from_table(mesh, t, &table.values[q], &table.gradients[q]);
            let (v, g) =
                field_from_table(space, field, t, &table.values[q], &table.gradients[q], jac);
            let sample = if m == 0 { v.abs() } else { (g[0] * g[0] + g[1] * g[1]).sqrt() };
            match weights {
                Some(w) => acc += w[q] * det2(jac).abs() * sample * sample,
                None => acc = acc.max(sample),
            }
        }
    }
    match p {
        LpNorm::L2 => acc.sqrt(),
        LpNorm::LInf => acc,
    }
}

/// Elements sharing at least one global node with element `t` (including `t`
/// itself): a patch containing the part of the boundary touched by `t`.
pub fn boundary_patch(space: &FeSpace, t: usize) -> Vec<usize> {
    let mine: std::collections::HashSet<usize> =
        space.mesh.node_map[t].iter().copied().collect();
    (0..space.mesh.n_elements())
        .filter(|&s| space.mesh.node_map[s].iter().any(|a| mine.contains(a)))
        .collect()
}

/// Measure the boundary-layer interpolation ratio
/// `|grad^m (v_h - Iring_h v_h)|_{Lp(T)} / (h_T^{1/p - m} |v_h|_{Lp(S)})`
/// for a boundary element T and a patch S of elements covering T's boundary
/// nodes.  Returns 0 when the numerator vanishes (0/0 convention).
pub fn lemma31_ratio(
    space: &FeSpace,
    field: &Field,
    t: usize,
    s: &[usize],
    m: usize,
    p: LpNorm,
) -> Result<f64> {
    space.check(field)?;
    if m > 1 {
        return Err(Error::Config(format!("derivative order m must be 0 or 1, got {m}")));
    }
    if t >= space.mesh.n_elements() {
        return Err(Error::Config(format!("element index {t} out of range")));
    }
    if !space.mesh.node_map[t].iter().any(|&a| space.mesh.boundary_node[a]) {
        return Err(Error::ElementNotOnBoundary(t));
    }

    // v_h - Iring_h v_h keeps exactly the boundary-node coefficients.
    let mut diff = space.zero_field();
    for &b in &space.boundary_dofs {
        diff.coefficients[b] = field.coefficients[b];
    }
    let numerator = field_lp_norm(space, &diff, &[t], m, p);
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let h_t = space.mesh.element_size(t);
    let inv_p = match p {
        LpNorm::L2 => 0.5,
        LpNorm::LInf => 0.0,
    };
    let denominator = h_t.powf(inv_p - m as f64) * field_lp_norm(space, field, s, 0, p);
    if denominator == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(numerator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::space::FeSpace;
    use crate::geometry::{DiskSolution, DomainDescriptor, Polynomial2D};
    use crate::meshing::triangulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk() -> DomainDescriptor {
        DomainDescriptor::disk(1.0).unwrap()
    }

    fn curved_space(h: f64, k: usize) -> FeSpace {
        let tri = triangulate(&disk(), h).unwrap();
        FeSpace::new(CurvedMesh::curved(tri, &disk(), k).unwrap())
    }

    #[test]
    fn interpolant_of_matching_polynomial_has_zero_error_on_straight_mesh() {
        for k in 1..=3 {
            let tri = triangulate(&disk(), 0.35).unwrap();
            let space = FeSpace::new(CurvedMesh::straight(tri, k).unwrap());
            let mut terms = Vec::new();
            let mut c = 0.83f64;
            for a in 0..=k as u32 {
                for b in 0..=(k as u32 - a) {
                    terms.push((c, a, b));
                    c = (c * 2.1).sin() + 0.4;
                }
            }
            let poly = Polynomial2D::new(terms);
            let field = space.interpolate(&poly);
            let norms = error_norms(&space, &field, &poly).unwrap();
            assert!(norms.linf < 1e-10, "k={k}: linf {}", norms.linf);
            assert!(norms.l2 < 1e-10, "k={k}: l2 {}", norms.l2);
            assert!(norms.h1_semi < 1e-10, "k={k}: h1 {}", norms.h1_semi);
        }
    }

    #[test]
    fn norms_against_zero_match_hand_computed_field_norms() {
        let space = curved_space(0.3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = space.field_from_coefficients(coeffs).unwrap();
        let zero = Polynomial2D::new(vec![]);
        let norms = error_norms(&space, &field, &zero).unwrap();

        // Independent L2 accumulation, written directly against the geometry
        // map (higher-degree rule, so also a consistency check on quadrature).
        let rule = build_quadrature(2 * 2 + 6).unwrap();
        let mut l2_sq = 0.0;
        for t in 0..space.mesh.n_elements() {
            for (q, &xhat) in rule.points.iter().enumerate() {
                let (_, jac) = space.mesh.element_map(t, xhat);
                let v = space.eval_in_element(&field, t, xhat);
                l2_sq += rule.weights[q] * det2(jac).abs() * v * v;
            }
        }
        assert!(
            (norms.l2 - l2_sq.sqrt()).abs() <= 1e-8 * l2_sq.sqrt(),
            "{} vs {}",
            norms.l2,
            l2_sq.sqrt()
        );
    }

    #[test]
    fn l2_of_unit_field_is_sqrt_area() {
        let space = curved_space(0.25, 2);
        let one = space.field_from_coefficients(vec![1.0; space.n_dofs()]).unwrap();
        let zero = Polynomial2D::new(vec![]);
        let norms = error_norms(&space, &one, &zero).unwrap();
        let rule = build_quadrature(7).unwrap();
        let area = space.mesh.total_area(&rule);
        assert!(
            (norms.l2 - area.sqrt()).abs() < 1e-3 * area.sqrt(),
            "l2 {} vs sqrt(area) {}",
            norms.l2,
            area.sqrt()
        );
        // The computational disk area itself is close to pi.
        assert!((area - std::f64::consts::PI).abs() < 1e-3);
    }

    /// Least-squares slope of log(err) against log(h).
    fn fitted_order(hs: &[f64], errs: &[f64]) -> f64 {
        let n = hs.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (&h, &e) in hs.iter().zip(errs) {
            let (x, y) = (h.ln(), e.ln());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn interpolation_error_converges_at_the_expected_rates() {
        let u = DiskSolution { radius: 1.0 };
        for k in [2usize, 3] {
            let mut hs = Vec::new();
            let (mut l2s, mut h1s, mut h1s_zero) = (Vec::new(), Vec::new(), Vec::new());
            for h in [0.4, 0.2, 0.1, 0.05] {
                let space = curved_space(h, k);
                let i_h = space.interpolate(&u);
                let i_ring = space.interpolate_zero_boundary(&u);
                let norms = error_norms(&space, &i_h, &u).unwrap();
                let norms_ring = error_norms(&space, &i_ring, &u).unwrap();
                hs.push(space.mesh.h);
                l2s.push(norms.l2);
                h1s.push(norms.h1_semi);
                h1s_zero.push(norms_ring.h1_semi);
            }
            let l2_order = fitted_order(&hs, &l2s);
            let h1_order = fitted_order(&hs, &h1s);
            let ring_order = fitted_order(&hs, &h1s_zero);
            assert!(l2_order >= k as f64 + 0.8, "k={k}: L2 order {l2_order}");
            assert!(h1_order >= k as f64 - 0.2, "k={k}: H1 order {h1_order}");
            assert!(ring_order >= k as f64 - 0.2, "k={k}: H1 order {ring_order} after dropping boundary values");
        }
    }

    #[test]
    fn lemma31_zero_field_and_interior_elements() {
        let space = curved_space(0.35, 2);
        let zero = space.zero_field();
        let t_boundary = (0..space.mesh.n_elements())
            .find(|&t| space.mesh.node_map[t].iter().any(|&a| space.mesh.boundary_node[a]))
            .unwrap();
        let s = boundary_patch(&space, t_boundary);
        let r = lemma31_ratio(&space, &zero, t_boundary, &s, 0, LpNorm::L2).unwrap();
        assert_eq!(r, 0.0);

        let t_interior = (0..space.mesh.n_elements())
            .find(|&t| !space.mesh.node_map[t].iter().any(|&a| space.mesh.boundary_node[a]))
            .unwrap();
        assert!(matches!(
            lemma31_ratio(&space, &zero, t_interior, &s, 0, LpNorm::L2),
            Err(Error::ElementNotOnBoundary(_))
        ));
    }

    #[test]
    fn lemma31_vanishing_on_patch_gives_zero_ratio() {
        let space = curved_space(0.35, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = (0..space.mesh.n_elements())
            .find(|&t| space.mesh.node_map[t].iter().any(|&a| space.mesh.boundary_node[a]))
            .unwrap();
        let s = boundary_patch(&space, t);
        let mut coeffs: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for &e in &s {
            for &a in &space.mesh.node_map[e] {
                coeffs[a] = 0.0;
            }
        }
        let field = space.field_from_coefficients(coeffs).unwrap();
        for (m, p) in [(0, LpNorm::L2), (1, LpNorm::L2), (0, LpNorm::LInf), (1, LpNorm::LInf)] {
            let r = lemma31_ratio(&space, &field, t, &s, m, p).unwrap();
            assert_eq!(r, 0.0, "m={m} p={p:?}");
        }
    }

    #[test]
    fn lemma31_ratio_is_level_stable_for_random_fields() {
        let mut maxima = Vec::new();
        for h in [0.4, 0.2, 0.1] {
            let space = curved_space(h, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(41);
            let mut level_max = 0.0f64;
            for _ in 0..5 {
                let coeffs: Vec<f64> =
                    (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let field = space.field_from_coefficients(coeffs).unwrap();
                for t in 0..space.mesh.n_elements() {
                    if !space.mesh.node_map[t].iter().any(|&a| space.mesh.boundary_node[a]) {
                        continue;
                    }
                    let s = boundary_patch(&space, t);
                    for (m, p) in [(0, LpNorm::L2), (1, LpNorm::L2), (1, LpNorm::LInf)] {
                        let r = lemma31_ratio(&space, &field, t, &s, m, p).unwrap();
                        assert!(r.is_finite());
                        level_max = level_max.max(r);
                    }
                }
            }
            maxima.push(level_max);
        }
        for w in maxima.windows(2) {
            let drift = w[1] / w[0];
            assert!(
                (0.5..=2.0).contains(&drift),
                "boundary-layer ratio drifts by {drift}: {maxima:?}"
            );
        }
    }
}
