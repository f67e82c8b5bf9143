//! Machine-checkable audit of the mesh hypotheses: conformity, shape
//! regularity and quasi-uniformity, nearness of geometry nodes to their affine
//! positions, boundedness of geometry-map derivatives, Jacobian positivity,
//! and the distance from curved boundary edges to the true boundary.

use super::CurvedMesh;
use crate::femspace::quadrature::build_quadrature;
use crate::femspace::reference::ReferenceElement;
use crate::geometry::DomainDescriptor;
use crate::meshing::det2;
use crate::vec2::{self, Vec2};

/// Measured mesh-quality constants; failures are reported, not thrown.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub h: f64,
    pub n_elements: usize,
    /// Every interior edge shared by exactly two elements.
    pub conforming: bool,
    /// sigma = max_T h_T / rho_T.
    pub shape_regularity: f64,
    /// max h_T / min h_T.
    pub quasi_uniformity: f64,
    /// Shape regularity and quasi-uniformity within their default bounds.
    pub shape_pass: bool,
    /// max_T max_i |a_i - F_affine(ahat_i)| / h_T^2.
    pub h4_constant: f64,
    /// For m = 1..=k+1 (index m-1): max over elements and a degree-2k lattice
    /// of the largest |d^alpha F_T| with |alpha| = m, normalized by h_T^m.
    pub h6_constants: Vec<f64>,
    /// Minimum det grad F_T over quadrature points of all elements.
    pub min_jacobian: f64,
    pub jacobian_positive: bool,
    /// sup over boundary-edge samples of dist(x, Gamma).
    pub h8_sup_distance: f64,
    /// The scale h^{k+1} the sup distance is expected to track.
    pub h8_expected: f64,
}

impl HypothesisReport {
    /// The hard structural requirements (H1, H2, Jacobian positivity).
    pub fn structural_pass(&self) -> bool {
        self.conforming && self.shape_pass && self.jacobian_positive
    }
}

/// Measure every hypothesis constant on the given mesh.
pub fn verify_hypotheses(mesh: &CurvedMesh, domain: &DomainDescriptor) -> HypothesisReport {
    let k = mesh.k;
    let base = &mesh.base;

    let conforming = base
        .edge_incidence()
        .map(|b| b == base.boundary_edges)
        .unwrap_or(false);
    let shape_regularity = base.shape_regularity();
    let quasi_uniformity = base.quasi_uniformity();
    let shape_pass =
        shape_regularity <= super::SIGMA_MAX && quasi_uniformity <= super::QUASI_UNIFORMITY_MAX;

    // (H4): distance of geometry nodes from their affine positions, against h_T^2.
    let reference = mesh.reference();
    let mut h4_constant = 0.0f64;
    for t in 0..mesh.n_elements() {
        let verts = base.triangle_vertices(t);
        let h_t2 = base.element_size(t).powi(2);
        for (i, &a) in mesh.geom_nodes[t].iter().enumerate() {
            let [x, y] = reference.node(i);
            let affine = vec2::add(
                vec2::scale(1.0 - x - y, verts[0]),
                vec2::add(vec2::scale(x, verts[1]), vec2::scale(y, verts[2])),
            );
            h4_constant = h4_constant.max(vec2::dist(a, affine) / h_t2);
        }
    }

    // (H6): reference derivatives of F_T up to order k+1, sampled on a
    // degree-2k lattice, normalized by h_T^m.  The basis-derivative tables are
    // element independent, so tabulate them once.
    let lattice = ReferenceElement::sample_lattice(2 * k);
    let mut h6_constants = vec![0.0f64; k + 1];
    for (m, h6_m) in h6_constants.iter_mut().enumerate() {
        let order = (m + 1) as u32;
        let alphas: Vec<(u32, u32)> = (0..=order).map(|ax| (order - ax, ax)).collect();
        // tables[alpha][point][basis i]
        let tables: Vec<Vec<Vec<f64>>> = alphas
            .iter()
            .map(|&(ax, ay)| {
                lattice
                    .iter()
                    .map(|&p| {
                        (0..reference.n_nodes())
                            .map(|i| reference.derivative(i, ax, ay, p))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        for t in 0..mesh.n_elements() {
            let scale = base.element_size(t).powi(order as i32);
            for table in &tables {
                for point_row in table {
                    let mut deriv = [0.0f64; 2];
                    for (i, &a) in mesh.geom_nodes[t].iter().enumerate() {
                        deriv[0] += a[0] * point_row[i];
                        deriv[1] += a[1] * point_row[i];
                    }
                    *h6_m = h6_m.max(deriv[0].abs().max(deriv[1].abs()) / scale);
                }
            }
        }
    }

    // Jacobian positivity at the assembly quadrature points.
    let rule = build_quadrature((2 * k + 3).min(30)).expect("degree in range");
    let mut min_jacobian = f64::INFINITY;
    for t in 0..mesh.n_elements() {
        for &p in &rule.points {
            min_jacobian = min_jacobian.min(det2(mesh.element_map(t, p).1));
        }
    }

    // (H8): distance from curved boundary edges to Gamma, 10(k+1) samples per edge.
    let n_samples = 10 * (k + 1);
    let mut h8_sup_distance = 0.0f64;
    for &(t, e) in &base.boundary_edges {
        for s in 0..n_samples {
            let r = s as f64 / (n_samples - 1) as f64;
            let xhat = edge_point(e, r);
            let (x, _) = mesh.element_map(t, xhat);
            if let Ok(p) = domain.project_to_boundary(x) {
                h8_sup_distance = h8_sup_distance.max(p.t.abs());
            } else {
                // A sample outside the tubular neighborhood means the edge is
                // nowhere near Gamma; report the tubular radius as a floor.
                h8_sup_distance = h8_sup_distance.max(domain.tubular_radius);
            }
        }
    }

    HypothesisReport {
        h: mesh.h,
        n_elements: mesh.n_elements(),
        conforming,
        shape_regularity,
        quasi_uniformity,
        shape_pass,
        h4_constant,
        h6_constants,
        min_jacobian,
        jacobian_positive: min_jacobian > 0.0,
        h8_sup_distance,
        h8_expected: mesh.h.powi(k as i32 + 1),
    }
}

/// Reference coordinates of the point at parameter r in [0, 1] along edge e.
pub fn edge_point(e: usize, r: f64) -> Vec2 {
    use crate::femspace::reference::{EDGE_VERTICES, VERTICES};
    let [a, b] = EDGE_VERTICES[e];
    let (pa, pb) = (VERTICES[a], VERTICES[b]);
    [pa[0] + r * (pb[0] - pa[0]), pa[1] + r * (pb[1] - pa[1])]
}
