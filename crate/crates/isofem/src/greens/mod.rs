//! Regularized point sources and Green functions on the unit disk.
//!
//! A regularized delta eta is a smooth bump supported strictly inside one
//! element K, built so that (eta, v_h)_K = v_h(z) for every function in the
//! element's pullback space.  Its discrete Green function g_h solves
//! a_h(v_h, g_h) = (v_h, eta) and is compared against the exact regularized
//! Green function g = G * eta, evaluated from the closed-form disk kernel.
//! The comparison is reported shell by shell over a dyadic decomposition
//! around K, which is the quantity the pointwise error analysis runs on.

use crate::assembly::{apply_dirichlet, assemble_stiffness, map_at, solve, SolveReport};
use crate::dense::{self, DenseMatrix};
use crate::error::{Error, Result};
use crate::femspace::quadrature::{build_quadrature, gauss_legendre_unit, QuadratureRule};
use crate::femspace::reference::{self, ReferenceElement};
use crate::femspace::space::{FeSpace, Field};
use crate::meshing::det2;
use crate::meshing::dyadic::dyadic_decomposition;
use crate::vec2::{self, Vec2};
use std::fmt::Write as _;

/// Fraction of the reference inradius used as the bump support radius.
const BUMP_RADIUS_RATIO: f64 = 0.4;
/// Fraction of the bump center's clearance from the reference boundary that
/// the radius occupies, leaving a strict band between supp eta and the
/// element edge.
const BUMP_EDGE_RATIO: f64 = 0.8;
/// Radial Gauss-Legendre points of the polar rule carrying all integrals
/// against the bump.  The support is an exact disk strictly inside the
/// reference triangle, so polar coordinates around its center split every
/// integrand into a radial factor (C-infinity but flat at the support edge,
/// which radial Gauss-Legendre resolves to ~1e-13) and an angular factor
/// that is a trigonometric polynomial whenever the rest of the integrand is
/// polynomial, because the bump itself is radial.
const BUMP_RADIAL_POINTS: usize = 48;
/// Angular grid size of the polar bump rule; the equispaced (trapezoid)
/// grid is exact for trigonometric polynomials of degree below this.
const BUMP_ANGULAR_POINTS: usize = 48;
/// Radial resolution of the build-time adequacy cross-check rule.
const BUMP_CHECK_RADIAL: usize = 72;
/// Angular resolution of the build-time adequacy cross-check rule.
const BUMP_CHECK_ANGULAR: usize = 64;
/// Quadrature degree applied per cell in the near-field kernel rules.
const NEAR_CELL_DEGREE: usize = 25;
/// Quadrisection sweeps resolving the bump support in the near-field rules,
/// where the kernel singularity forces cell-by-cell integration and the
/// polar rule does not apply.
const NEAR_CELL_DEPTH: usize = 4;
/// Minimum barycentric distance of the source preimage from the reference
/// triangle's boundary.
const SOURCE_MARGIN: f64 = 0.02;
/// Base number of quadrisection sweeps toward the singularity in near-field
/// evaluation; the agreement check runs one sweep deeper.
const NEAR_FIELD_DEPTH: usize = 3;
/// Two successive near-field refinements must agree to this tolerance.
const NEAR_FIELD_TOL: f64 = 1e-6;
/// Gauss-Legendre points per direction on the singular Duffy wedges.
const DUFFY_POINTS: usize = 16;

/// A smooth point source supported strictly inside one element: the bump
/// omega (fixed in reference coordinates) times the omega-weighted dual of
/// the nodal basis, combined so that (eta, v_h)_K = v_h(z).
#[derive(Debug, Clone)]
pub struct RegularizedDelta {
    /// Element K carrying the support.
    pub element: usize,
    /// Physical source point.
    pub z: Vec2,
    /// Preimage of z in the reference triangle.
    pub z_ref: Vec2,
    /// Bump center in reference coordinates (the source preimage).
    pub bump_center: Vec2,
    /// Bump support radius in reference coordinates.
    pub bump_radius: f64,
    /// Coefficients d with eta = omega * sum_l d_l phi_l on K.
    pub dual_coefficients: Vec<f64>,
    space_hash: u64,
}

/// The bump exp(-r^2 / (r^2 - |x - c|^2)) inside the disk of radius r
/// around c, zero outside; C-infinity with support exactly that disk.
fn bump(center: Vec2, radius: f64, xhat: Vec2) -> f64 {
    let d2 = vec2::dist(xhat, center).powi(2);
    let r2 = radius * radius;
    if d2 >= r2 {
        0.0
    } else {
        (-r2 / (r2 - d2)).exp()
    }
}

fn quadrisect(cell: [Vec2; 3]) -> [[Vec2; 3]; 4] {
    let m01 = vec2::scale(0.5, vec2::add(cell[0], cell[1]));
    let m12 = vec2::scale(0.5, vec2::add(cell[1], cell[2]));
    let m20 = vec2::scale(0.5, vec2::add(cell[2], cell[0]));
    [
        [cell[0], m01, m20],
        [m01, cell[1], m12],
        [m20, m12, cell[2]],
        [m01, m12, m20],
    ]
}

fn point_segment_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let ab = vec2::sub(b, a);
    let t = (vec2::dot(vec2::sub(p, a), ab) / vec2::dot(ab, ab)).clamp(0.0, 1.0);
    vec2::dist(p, vec2::add(a, vec2::scale(t, ab)))
}

/// Nearest point to `p` whose distance to the reference-triangle boundary is
/// at least `clearance`: the Euclidean projection of `p` onto the inward
/// offset triangle { x >= c, y >= c, x + y <= 1 - sqrt(2) c }, which is
/// nonempty whenever the clearance is below the inradius.
fn nearest_point_with_clearance(p: Vec2, clearance: f64) -> Vec2 {
    let c = clearance;
    let cap = 1.0 - std::f64::consts::SQRT_2 * c;
    if p[0] >= c && p[1] >= c && p[0] + p[1] <= cap {
        return p;
    }
    let corners = [[c, c], [cap - c, c], [c, cap - c]];
    let mut best = corners[0];
    let mut best_dist = f64::INFINITY;
    for e in 0..3 {
        let (a, b) = (corners[e], corners[(e + 1) % 3]);
        let ab = vec2::sub(b, a);
        let t = (vec2::dot(vec2::sub(p, a), ab) / vec2::dot(ab, ab)).clamp(0.0, 1.0);
        let q = vec2::add(a, vec2::scale(t, ab));
        let d = vec2::dist(p, q);
        if d < best_dist {
            best_dist = d;
            best = q;
        }
    }
    best
}

fn point_triangle_distance(cell: [Vec2; 3], p: Vec2) -> f64 {
    if cell_contains(cell, p) {
        return 0.0;
    }
    (0..3)
        .map(|e| point_segment_distance(cell[e], cell[(e + 1) % 3], p))
        .fold(f64::INFINITY, f64::min)
}

/// Quadrisection depth at which cells become no wider than the bump support,
/// so that per-cell rules never straddle the support edge at coarse scale.
fn support_depth(radius: f64) -> usize {
    let mut depth = NEAR_CELL_DEPTH;
    while depth < 10 && std::f64::consts::SQRT_2 / (1u32 << depth) as f64 > radius {
        depth += 1;
    }
    depth
}

/// Quadrisection cells of the reference triangle, `depth` sweeps deep,
/// restricted to those meeting the bump support (the integrand vanishes
/// identically on the rest).
fn support_cells(center: Vec2, radius: f64, depth: usize) -> Vec<[Vec2; 3]> {
    let mut cells: Vec<[Vec2; 3]> = vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]];
    for _ in 0..depth {
        cells = cells.into_iter().flat_map(quadrisect).collect();
    }
    cells
        .into_iter()
        .filter(|&c| point_triangle_distance(c, center) < radius)
        .collect()
}

/// A degree-exact base rule applied per cell of a subdivision: the composite
/// rule that carries every integral against the bump.
fn composite_rule(degree: usize, cells: &[[Vec2; 3]]) -> Result<QuadratureRule> {
    let base = build_quadrature(degree)?;
    let mut points = Vec::with_capacity(base.len() * cells.len());
    let mut weights = Vec::with_capacity(base.len() * cells.len());
    for &cell in cells {
        let double_area =
            vec2::cross(vec2::sub(cell[1], cell[0]), vec2::sub(cell[2], cell[0])).abs();
        for (&q, &w) in base.points.iter().zip(&base.weights) {
            points.push(vec2::add(
                cell[0],
                vec2::add(
                    vec2::scale(q[0], vec2::sub(cell[1], cell[0])),
                    vec2::scale(q[1], vec2::sub(cell[2], cell[0])),
                ),
            ));
            // Base weights sum to the reference area 1/2; the affine cell has
            // area double_area / 2, so the scale factor is double_area.
            weights.push(w * double_area);
        }
    }
    Ok(QuadratureRule { degree, points, weights })
}

/// Tensor rule over the bump support disk in reference coordinates: radial
/// Gauss-Legendre times an equispaced angular grid.  Exactly the right tool
/// for integrands of the form (smooth in x-hat) * (radial bump): the angular
/// direction sees a periodic analytic function (a trigonometric polynomial
/// when the smooth factor is polynomial) and the radial direction carries
/// all of the bump's edge flatness, which one-dimensional Gauss-Legendre
/// resolves far beyond what any triangle rule of practical degree can.
fn polar_bump_rule(center: Vec2, radius: f64, n_radial: usize, n_angular: usize) -> QuadratureRule {
    let (nodes, gl_weights) = gauss_legendre_unit(n_radial);
    let dtheta = std::f64::consts::TAU / n_angular as f64;
    let mut points = Vec::with_capacity(n_radial * n_angular);
    let mut weights = Vec::with_capacity(n_radial * n_angular);
    for (&u, &wu) in nodes.iter().zip(&gl_weights) {
        let rho = radius * u;
        for j in 0..n_angular {
            let th = dtheta * j as f64;
            points.push(vec2::add(center, vec2::scale(rho, [th.cos(), th.sin()])));
            // dx = rho d_rho d_theta with rho = radius * u.
            weights.push(wu * radius * rho * dtheta);
        }
    }
    QuadratureRule { degree: n_radial, points, weights }
}

impl RegularizedDelta {
    /// eta in reference coordinates of its element.
    pub fn eval_reference(&self, space: &FeSpace, xhat: Vec2) -> f64 {
        let w = bump(self.bump_center, self.bump_radius, xhat);
        if w == 0.0 {
            return 0.0;
        }
        let basis = space.mesh.reference().eval_basis(xhat);
        w * basis.iter().zip(&self.dual_coefficients).map(|(p, d)| p * d).sum::<f64>()
    }

    /// eta at a physical point (zero outside the carrying element).
    pub fn eval(&self, space: &FeSpace, x: Vec2) -> f64 {
        match space.mesh.invert_element_map(self.element, x) {
            Ok(xhat) => self.eval_reference(space, xhat),
            Err(_) => 0.0,
        }
    }

    /// The polar rule carrying every integral against eta.
    pub fn base_rule(&self) -> QuadratureRule {
        polar_bump_rule(self.bump_center, self.bump_radius, BUMP_RADIAL_POINTS, BUMP_ANGULAR_POINTS)
    }

    /// The finer polar rule used for adequacy cross-checks.
    pub fn check_rule(&self) -> QuadratureRule {
        polar_bump_rule(self.bump_center, self.bump_radius, BUMP_CHECK_RADIAL, BUMP_CHECK_ANGULAR)
    }

    /// (eta, v_h)_K by the bump quadrature rule.
    pub fn pairing(&self, space: &FeSpace, field: &Field) -> Result<f64> {
        space.check(field)?;
        if field.space_hash() != self.space_hash {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.pairing_with_rule(space, field, &self.base_rule()))
    }

    /// (eta, v_h)_K with an explicit quadrature rule (for cross-checks).
    pub fn pairing_with_rule(&self, space: &FeSpace, field: &Field, rule: &QuadratureRule) -> f64 {
        let mesh = &space.mesh;
        let ids = &mesh.node_map[self.element];
        rule.integrate(|p| {
            let (_, jac) = mesh.element_map(self.element, p);
            let basis = mesh.reference().eval_basis(p);
            let v: f64 = ids.iter().zip(&basis).map(|(&a, b)| field.coefficients[a] * b).sum();
            self.eval_reference(space, p) * v * det2(jac)
        })
    }

    /// Total mass (eta, 1)_K; unity by construction.
    pub fn mass(&self, space: &FeSpace) -> f64 {
        let mesh = &space.mesh;
        self.base_rule().integrate(|p| {
            let (_, jac) = mesh.element_map(self.element, p);
            self.eval_reference(space, p) * det2(jac)
        })
    }

    /// Physical distance between the support of eta and the element boundary,
    /// measured over dense samples of both curves.
    pub fn support_distance(&self, space: &FeSpace) -> f64 {
        let mesh = &space.mesh;
        let n = 90;
        let circle: Vec<Vec2> = (0..n)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / n as f64;
                let p = vec2::add(
                    self.bump_center,
                    vec2::scale(self.bump_radius, [th.cos(), th.sin()]),
                );
                mesh.element_map(self.element, p).0
            })
            .collect();
        let mut best = f64::INFINITY;
        for e in 0..3 {
            for i in 0..=n {
                let r = i as f64 / n as f64;
                let p = crate::meshing::hypotheses::edge_point(e, r);
                let q = mesh.element_map(self.element, p).0;
                for &c in &circle {
                    best = best.min(vec2::dist(q, c));
                }
            }
        }
        best
    }
}

/// Build the regularized delta for the source z inside element K.
///
/// The dual coefficients solve M d = phi(z_ref) with the bump-weighted moment
/// matrix M_jl = int_T phi_j omega phi_l |det J|; quadrature adequacy is
/// verified against a higher-degree rule at build time.
pub fn build_regularized_delta(space: &FeSpace, element: usize, z: Vec2) -> Result<RegularizedDelta> {
    let mesh = &space.mesh;
    if element >= mesh.n_elements() {
        return Err(Error::Config(format!(
            "element {element} out of range (mesh has {})",
            mesh.n_elements()
        )));
    }
    let z_ref = mesh.invert_element_map(element, z)?;
    let margin = (1.0 - z_ref[0] - z_ref[1]).min(z_ref[0]).min(z_ref[1]);
    if margin < SOURCE_MARGIN {
        return Err(Error::Config(format!(
            "source preimage ({}, {}) is within {margin:.2e} of the reference boundary \
             (minimum {SOURCE_MARGIN})",
            z_ref[0], z_ref[1]
        )));
    }

    // The bump radius is a fixed fraction of the reference inradius so that
    // the regularization width stays the same fraction of the element size
    // at every refinement level; a width that tracked the source's own
    // clearance from the boundary would make the Green-function error
    // constants wobble with wherever the preimage happens to land.  The
    // center is the preimage itself whenever the support then fits strictly
    // inside the reference triangle, and otherwise its projection onto the
    // offset triangle with enough clearance; this keeps the dual evaluation
    // an interpolation (or a very short extrapolation) instead of the steep
    // coefficient growth a center pinned at the incenter produces when the
    // preimage lands far from it.
    let radius = BUMP_RADIUS_RATIO * reference::inradius();
    let center = nearest_point_with_clearance(z_ref, radius / BUMP_EDGE_RATIO);
    let n_local = mesh.reference().n_nodes();
    let moment = |rule: &QuadratureRule| -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n_local, n_local);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let omega = bump(center, radius, p);
            let (_, jac) = mesh.element_map(element, p);
            let basis = mesh.reference().eval_basis(p);
            let scale = w * omega * det2(jac);
            for j in 0..n_local {
                for l in 0..n_local {
                    m[(j, l)] += scale * basis[j] * basis[l];
                }
            }
        }
        m
    };
    let m = moment(&polar_bump_rule(center, radius, BUMP_RADIAL_POINTS, BUMP_ANGULAR_POINTS));
    // Adequacy check: independent in both the radial and angular resolution.
    let m_check = moment(&polar_bump_rule(center, radius, BUMP_CHECK_RADIAL, BUMP_CHECK_ANGULAR));
    let scale = m.norm_one();
    let mut disagreement = 0.0f64;
    for i in 0..n_local {
        for j in 0..n_local {
            disagreement = disagreement.max((m[(i, j)] - m_check[(i, j)]).abs());
        }
    }
    if disagreement > 1e-10 * scale {
        return Err(Error::QuadratureSelfCheckFailed(format!(
            "bump moment matrix changes by {disagreement:e} (scale {scale:e}) when the \
             quadrature resolution is raised from {BUMP_RADIAL_POINTS}x{BUMP_ANGULAR_POINTS} \
             to {BUMP_CHECK_RADIAL}x{BUMP_CHECK_ANGULAR} radial x angular points"
        )));
    }
    let cond = dense::condition_one(&m)?;
    if cond > 1e10 {
        return Err(Error::IllConditionedDualBasis(cond));
    }

    let rhs = mesh.reference().eval_basis(z_ref);
    let dual_coefficients = dense::solve(&m, &rhs)?;
    Ok(RegularizedDelta {
        element,
        z,
        z_ref,
        bump_center: center,
        bump_radius: radius,
        dual_coefficients,
        space_hash: space.space_hash(),
    })
}

/// Pick the element whose reference preimage of z is deepest inside the
/// reference triangle (z on an element interface belongs to several).
pub fn find_delta_element(space: &FeSpace, z: Vec2) -> Result<usize> {
    let mesh = &space.mesh;
    let mut best: Option<(f64, usize)> = None;
    for t in 0..mesh.n_elements() {
        if let Ok(p) = mesh.invert_element_map(t, z) {
            let margin = (1.0 - p[0] - p[1]).min(p[0]).min(p[1]);
            if best.map_or(true, |(m, _)| margin > m) {
                best = Some((margin, t));
            }
        }
    }
    match best {
        Some((margin, t)) if margin >= SOURCE_MARGIN => Ok(t),
        Some((margin, _)) => Err(Error::Config(format!(
            "source ({}, {}) lies within {margin:.2e} of an element interface on every \
             containing element (minimum margin {SOURCE_MARGIN})",
            z[0], z[1]
        ))),
        None => Err(Error::PointNotInMesh(z[0], z[1])),
    }
}

/// Load vector (phi_a, eta): zero except on the dofs of the carrying element.
pub fn assemble_delta_load(space: &FeSpace, delta: &RegularizedDelta) -> Result<Vec<f64>> {
    if delta.space_hash != space.space_hash() {
        return Err(Error::SpaceMismatch);
    }
    let mesh = &space.mesh;
    let rule = delta.base_rule();
    let mut b = vec![0.0; space.n_dofs()];
    let ids = &mesh.node_map[delta.element];
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        let eta = delta.eval_reference(space, p);
        let (_, jac) = mesh.element_map(delta.element, p);
        let basis = mesh.reference().eval_basis(p);
        let scale = w * eta * det2(jac);
        for (i, &a) in ids.iter().enumerate() {
            b[a] += scale * basis[i];
        }
    }
    Ok(b)
}

/// Solve a_h(v_h, g_h) = (v_h, eta) for the discrete regularized Green
/// function g_h in the zero-boundary space.
pub fn solve_discrete_green(space: &FeSpace, delta: &RegularizedDelta) -> Result<SolveReport> {
    let a = assemble_stiffness(space)?;
    let b = assemble_delta_load(space, delta)?;
    let system = apply_dirichlet(&a, &b, space)?;
    solve(space, &system, 1e-12)
}

/// Green function of the unit disk:
/// G(x, y) = -(1/2pi) [ ln|x - y| - ln( |y| |x - y/|y|^2| ) ],
/// with the image factor written as | |y| x - y/|y| | so the limit y -> 0
/// is taken smoothly.
pub fn exact_disk_green(x: Vec2, y: Vec2) -> Result<f64> {
    let r = vec2::dist(x, y);
    if r < 1e-14 {
        return Err(Error::SingularArgument(format!(
            "Green kernel evaluated on its diagonal (|x - y| = {r:e})"
        )));
    }
    let ny = vec2::norm(y);
    let s = if ny < 1e-14 {
        1.0
    } else {
        vec2::dist(vec2::scale(ny, x), vec2::scale(1.0 / ny, y))
    };
    Ok((s / r).ln() / (2.0 * std::f64::consts::PI))
}

/// A fixed discretization of int_K G(x, y) eta(y) dy: physical quadrature
/// points and combined weights w * eta * |det J|, so evaluation is a plain
/// kernel sum.  Freezing the point set while x varies keeps the quadrature
/// error smooth in x, which finite-difference gradients rely on.
struct FrozenRule {
    points: Vec<Vec2>,
    coeffs: Vec<f64>,
}

impl FrozenRule {
    fn eval(&self, x: Vec2) -> Result<f64> {
        let mut acc = 0.0;
        for (&y, &c) in self.points.iter().zip(&self.coeffs) {
            acc += c * exact_disk_green(x, y)?;
        }
        Ok(acc)
    }
}

/// Evaluator for the exact regularized Green function g = G * eta on the
/// unit disk, with near-field refinement around the kernel singularity.
pub struct GreenOracle<'a> {
    space: &'a FeSpace,
    delta: &'a RegularizedDelta,
    far: FrozenRule,
    base_rule: QuadratureRule,
    /// Physical samples of the carrying element for distance queries.
    samples: Vec<Vec2>,
    h_k: f64,
}

impl<'a> GreenOracle<'a> {
    pub fn new(space: &'a FeSpace, delta: &'a RegularizedDelta) -> Result<Self> {
        if delta.space_hash != space.space_hash() {
            return Err(Error::SpaceMismatch);
        }
        let base_rule = build_quadrature(NEAR_CELL_DEGREE)?;
        let far = frozen_reference_rule(space, delta, &delta.base_rule());
        let lattice = ReferenceElement::sample_lattice(2 * space.mesh.k);
        let samples = lattice
            .iter()
            .map(|&p| space.mesh.element_map(delta.element, p).0)
            .collect();
        let h_k = space.mesh.element_size(delta.element);
        Ok(Self { space, delta, far, base_rule, samples, h_k })
    }

    fn distance_to_support(&self, x: Vec2) -> f64 {
        self.samples.iter().map(|&s| vec2::dist(x, s)).fold(f64::INFINITY, f64::min)
    }

    /// g(x), using the plain rule in the far field and the refined rule with
    /// a two-depth agreement check within h_K of the carrying element.
    pub fn value(&self, x: Vec2) -> Result<f64> {
        if self.distance_to_support(x) >= self.h_k {
            return self.far.eval(x);
        }
        let coarse = self.near_rule(x, NEAR_FIELD_DEPTH).eval(self, x)?;
        let fine = self.near_rule(x, NEAR_FIELD_DEPTH + 1).eval(self, x)?;
        let diff = (fine - coarse).abs();
        if diff > NEAR_FIELD_TOL {
            return Err(Error::NearFieldAccuracyLoss(diff));
        }
        Ok(fine)
    }

    /// g(x) and its gradient by central differences at the given step,
    /// together with the disagreement against the doubled step.
    ///
    /// All evaluations in the near field share one refined cell structure
    /// built for x, so the differences see a quadrature error that is
    /// smooth in the offset; rebuilding the refinement per stencil point
    /// would instead inject cell-structure noise amplified by 1/step.
    pub fn value_and_gradient(&self, x: Vec2, step: f64) -> Result<(f64, Vec2, f64)> {
        let eval: Box<dyn Fn(Vec2) -> Result<f64> + '_> =
            if self.distance_to_support(x) >= self.h_k {
                Box::new(|p| self.far.eval(p))
            } else {
                let near = self.near_rule(x, NEAR_FIELD_DEPTH + 1);
                Box::new(move |p| near.eval(self, p))
            };
        let value = eval(x)?;
        let mut gradient = [0.0; 2];
        let mut disagreement = 0.0f64;
        for axis in 0..2 {
            let offset = |d: f64| -> Result<f64> {
                let mut p = x;
                p[axis] += d;
                eval(p)
            };
            let d1 = (offset(step)? - offset(-step)?) / (2.0 * step);
            let d2 = (offset(2.0 * step)? - offset(-2.0 * step)?) / (4.0 * step);
            gradient[axis] = d1;
            disagreement = disagreement.max((d1 - d2).abs());
        }
        Ok((value, gradient, disagreement))
    }

    /// Refined rule for an evaluation point x: quadrisect cells near the
    /// preimage of x (or its nearest sample when x is outside the element)
    /// `depth` times, integrate smooth cells with the base rule, and hand
    /// the cell containing the singularity to a per-evaluation Duffy rule.
    fn near_rule(&self, x: Vec2, depth: usize) -> NearRule {
        let mesh = &self.space.mesh;
        let inside = mesh.invert_element_map(self.delta.element, x).ok();
        let target = inside.unwrap_or_else(|| {
            let lattice = ReferenceElement::sample_lattice(2 * mesh.k);
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for (&p, &s) in lattice.iter().zip(&self.samples) {
                let d = vec2::dist(x, s);
                if d < best.0 {
                    best = (d, p);
                }
            }
            best.1
        });

        // Start from the support-resolving cells and sharpen toward the
        // singularity only.
        let mut cells = support_cells(
            self.delta.bump_center,
            self.delta.bump_radius,
            support_depth(self.delta.bump_radius),
        );
        for _ in 0..depth {
            let mut next = Vec::with_capacity(cells.len() + 3);
            for cell in cells {
                if point_triangle_distance(cell, target) < 0.75 * cell_diameter(cell) {
                    next.extend(quadrisect(cell));
                } else {
                    next.push(cell);
                }
            }
            cells = next;
        }

        let mut frozen = FrozenRule { points: Vec::new(), coeffs: Vec::new() };
        let mut singular = None;
        for cell in cells {
            if singular.is_none() && inside.is_some() && cell_contains(cell, target) {
                singular = Some(cell);
            } else {
                let sub = frozen_cell_rule(self.space, self.delta, &self.base_rule, cell);
                frozen.points.extend(sub.points);
                frozen.coeffs.extend(sub.coeffs);
            }
        }
        let jac_inv = inside.map(|apex| {
            let (_, jac) = mesh.element_map(self.delta.element, apex);
            let det = det2(jac);
            [
                [jac[1][1] / det, -jac[0][1] / det],
                [-jac[1][0] / det, jac[0][0] / det],
            ]
        });
        NearRule { frozen, singular, anchor: x, apex: target, jac_inv }
    }

    /// Integral of G(p, .) eta over one reference cell holding the kernel
    /// singularity, by three wedges sharing the apex (the preimage of p).
    /// Each wedge is integrated in collapsed coordinates with the radial
    /// variable substituted u = s^2, which makes the u ln u behaviour of the
    /// log kernel a smooth s^3 ln s profile that Gauss-Legendre resolves.
    /// Signed wedge areas keep the decomposition exact when the apex drifts
    /// outside the cell (a finite-difference stencil point may).
    fn duffy_cell(&self, cell: [Vec2; 3], apex: Vec2, p: Vec2) -> Result<f64> {
        let mesh = &self.space.mesh;
        let (nodes, weights) = gauss_legendre_unit(DUFFY_POINTS);
        let cell_area = vec2::cross(vec2::sub(cell[1], cell[0]), vec2::sub(cell[2], cell[0])).abs();
        let mut acc = 0.0;
        for e in 0..3 {
            let b = cell[e];
            let c = cell[(e + 1) % 3];
            let double_area = vec2::cross(vec2::sub(b, apex), vec2::sub(c, apex));
            if double_area.abs() <= 1e-14 * cell_area {
                continue;
            }
            for (&s, &ws) in nodes.iter().zip(&weights) {
                let u = s * s;
                for (&t, &wt) in nodes.iter().zip(&weights) {
                    let dir = vec2::add(
                        vec2::scale(1.0 - t, vec2::sub(b, apex)),
                        vec2::scale(t, vec2::sub(c, apex)),
                    );
                    let q = vec2::add(apex, vec2::scale(u, dir));
                    // dy = 2A u du dt with du = 2 s ds.
                    let w = ws * wt * double_area * u * 2.0 * s;
                    let eta = self.delta.eval_reference(self.space, q);
                    if eta == 0.0 {
                        continue;
                    }
                    let (y, jac) = mesh.element_map(self.delta.element, q);
                    acc += w * eta * det2(jac) * exact_disk_green(p, y)?;
                }
            }
        }
        Ok(acc)
    }
}

/// Near-field quadrature for one evaluation center: a frozen rule over the
/// regular cells plus the singular cell, whose Duffy integration is redone
/// per evaluation point so the wedge apex tracks the point.  The apex for a
/// stencil point p is transported to first order via the inverse Jacobian;
/// the resulting O(step^2) apex error is far below the wedge resolution and
/// keeps the evaluation smooth in p.
struct NearRule {
    frozen: FrozenRule,
    singular: Option<[Vec2; 3]>,
    anchor: Vec2,
    apex: Vec2,
    jac_inv: Option<[[f64; 2]; 2]>,
}

impl NearRule {
    fn eval(&self, oracle: &GreenOracle, p: Vec2) -> Result<f64> {
        let mut acc = self.frozen.eval(p)?;
        if let Some(cell) = self.singular {
            let jac_inv = self.jac_inv.expect("singular cell implies an interior anchor");
            let d = vec2::sub(p, self.anchor);
            let apex = vec2::add(
                self.apex,
                [
                    jac_inv[0][0] * d[0] + jac_inv[0][1] * d[1],
                    jac_inv[1][0] * d[0] + jac_inv[1][1] * d[1],
                ],
            );
            acc += oracle.duffy_cell(cell, apex, p)?;
        }
        Ok(acc)
    }
}

/// A reference-coordinate rule with eta and the Jacobian folded into the
/// coefficients and the points mapped to physical space.
fn frozen_reference_rule(
    space: &FeSpace,
    delta: &RegularizedDelta,
    rule: &QuadratureRule,
) -> FrozenRule {
    let mesh = &space.mesh;
    let mut out = FrozenRule { points: Vec::new(), coeffs: Vec::new() };
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        let eta = delta.eval_reference(space, p);
        if eta == 0.0 {
            continue;
        }
        let (y, jac) = mesh.element_map(delta.element, p);
        out.points.push(y);
        out.coeffs.push(w * eta * det2(jac));
    }
    out
}

/// Base rule mapped affinely onto a reference-space cell, with all smooth
/// factors (eta, Jacobian, affine area) folded into the coefficients.
fn frozen_cell_rule(
    space: &FeSpace,
    delta: &RegularizedDelta,
    base: &QuadratureRule,
    cell: [Vec2; 3],
) -> FrozenRule {
    let mesh = &space.mesh;
    let double_area = vec2::cross(vec2::sub(cell[1], cell[0]), vec2::sub(cell[2], cell[0])).abs();
    let mut rule = FrozenRule { points: Vec::new(), coeffs: Vec::new() };
    for (&q, &w) in base.points.iter().zip(&base.weights) {
        let p = vec2::add(
            cell[0],
            vec2::add(
                vec2::scale(q[0], vec2::sub(cell[1], cell[0])),
                vec2::scale(q[1], vec2::sub(cell[2], cell[0])),
            ),
        );
        let eta = delta.eval_reference(space, p);
        if eta == 0.0 {
            continue;
        }
        let (y, jac) = mesh.element_map(delta.element, p);
        rule.points.push(y);
        rule.coeffs.push(w * double_area * eta * det2(jac));
    }
    rule
}

fn cell_diameter(cell: [Vec2; 3]) -> f64 {
    vec2::dist(cell[0], cell[1])
        .max(vec2::dist(cell[1], cell[2]))
        .max(vec2::dist(cell[2], cell[0]))
}

fn cell_contains(cell: [Vec2; 3], p: Vec2) -> bool {
    let d = vec2::cross(vec2::sub(cell[1], cell[0]), vec2::sub(cell[2], cell[0]));
    let l1 = vec2::cross(vec2::sub(cell[1], cell[0]), vec2::sub(p, cell[0])) / d;
    let l2 = vec2::cross(vec2::sub(p, cell[0]), vec2::sub(cell[2], cell[0])) / d;
    l1 >= -1e-12 && l2 >= -1e-12 && l1 + l2 <= 1.0 + 1e-12
}

/// The exact regularized Green function g(x) = int_K G(x, y) eta(y) dy.
pub fn exact_regularized_green(
    space: &FeSpace,
    delta: &RegularizedDelta,
    x: Vec2,
) -> Result<f64> {
    GreenOracle::new(space, delta)?.value(x)
}

/// One dyadic shell of the Green comparison.
#[derive(Debug, Clone)]
pub struct ShellRow {
    pub j: usize,
    pub d_j: f64,
    /// ||grad(g - g_h)||_{L2} over the shell.
    pub l2_grad: f64,
    /// d_j^{N/2} times the gradient L2 norm (the weighted-H1 summand).
    pub weighted_h1: f64,
    /// ||g - g_h||_{L2} over the shell.
    pub l2: f64,
    /// d_j^{N/2 - 1} times the L2 norm (the weighted-L2 summand).
    pub weighted_l2: f64,
    /// ||grad(g - g_h)||_{L1} over the shell (for the partition identity).
    pub l1_grad: f64,
}

/// Shell-by-shell comparison of g_h against the exact regularized Green
/// function, plus the global quantities the error analysis bounds.
#[derive(Debug, Clone)]
pub struct GreenDiagnostics {
    pub rows: Vec<ShellRow>,
    /// ||grad(g - g_h)||_{L1} over the whole mesh.
    pub grad_l1_total: f64,
    /// sum_j d_j^{N/2} ||grad(g - g_h)||_{L2(shell j)}.
    pub weighted_h1_sum: f64,
    /// sum_j d_j^{N/2-1} ||g - g_h||_{L2(shell j)}.
    pub weighted_l2_sum: f64,
    /// Discrete Green function at the source (positivity is recorded).
    pub g_h_at_z: f64,
    /// Worst step-halving disagreement of the oracle's FD gradients.
    pub fd_disagreement_max: f64,
    pub delta_mass: f64,
    pub solve_iterations: usize,
}

impl GreenDiagnostics {
    /// CSV table: one row per shell and a totals footer carrying the global
    /// L1 gradient norm in the gradient column and the two weighted sums.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,d_j,l2_grad_shell,weighted_h1_shell,l2_shell,weighted_l2_shell\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.j, r.d_j, r.l2_grad, r.weighted_h1, r.l2, r.weighted_l2
            );
        }
        let _ = writeln!(
            out,
            "total,,{:.16e},{:.16e},,{:.16e}",
            self.grad_l1_total, self.weighted_h1_sum, self.weighted_l2_sum
        );
        out
    }
}

/// Finite-difference step for the oracle gradient.
const ORACLE_FD_STEP: f64 = 1e-6;

/// Run the full Green comparison around the source z with dyadic stride
/// ratio L (d_0 = L h).  Disk domains only: the exact kernel is used.
pub fn green_diagnostics(
    space: &FeSpace,
    element: usize,
    z: Vec2,
    l_ratio: f64,
) -> Result<GreenDiagnostics> {
    let mesh = &space.mesh;
    let delta = build_regularized_delta(space, element, z)?;
    let report = solve_discrete_green(space, &delta)?;
    let g_h = &report.field;
    let oracle = GreenOracle::new(space, &delta)?;
    let decomposition = dyadic_decomposition(mesh, element, l_ratio)?;

    let rule = build_quadrature(2 * mesh.k + 3)?;
    let table = mesh.reference().tabulate(&rule.points);

    let n_shells = decomposition.j_max + 1;
    let mut l2_sq = vec![0.0f64; n_shells];
    let mut grad_l2_sq = vec![0.0f64; n_shells];
    let mut grad_l1 = vec![0.0f64; n_shells];
    let mut grad_l1_total = 0.0f64;
    let mut fd_disagreement_max = 0.0f64;

    for t in 0..mesh.n_elements() {
        let shell = decomposition.labels[t];
        let ids = &mesh.node_map[t];
        for q in 0..rule.len() {
            let (x, jac) = map_at(space, t, &table, q);
            let det = det2(jac).abs();
            let w = rule.weights[q] * det;

            let mut value_h = 0.0;
            let mut grad_ref = [0.0f64; 2];
            for (i, &a) in ids.iter().enumerate() {
                let c = g_h.coefficients[a];
                value_h += c * table.values[q][i];
                grad_ref[0] += c * table.gradients[q][i][0];
                grad_ref[1] += c * table.gradients[q][i][1];
            }
            let grad_h = crate::meshing::solve_transposed(jac, grad_ref);

            let (value, grad, fd_gap) = oracle.value_and_gradient(x, ORACLE_FD_STEP)?;
            fd_disagreement_max = fd_disagreement_max.max(fd_gap);

            let e = value - value_h;
            let ge = vec2::sub(grad, grad_h);
            let ge_norm = vec2::norm(ge);
            l2_sq[shell] += w * e * e;
            grad_l2_sq[shell] += w * ge_norm * ge_norm;
            grad_l1[shell] += w * ge_norm;
            grad_l1_total += w * ge_norm;
        }
    }

    let rows: Vec<ShellRow> = (0..n_shells)
        .map(|j| {
            let d_j = decomposition.scales[j];
            let l2_grad = grad_l2_sq[j].sqrt();
            let l2 = l2_sq[j].sqrt();
            ShellRow {
                j,
                d_j,
                l2_grad,
                // N = 2: the weights are d_j and d_j^0 = 1.
                weighted_h1: d_j * l2_grad,
                l2,
                weighted_l2: l2,
                l1_grad: grad_l1[j],
            }
        })
        .collect();
    let weighted_h1_sum = rows.iter().map(|r| r.weighted_h1).sum();
    let weighted_l2_sum = rows.iter().map(|r| r.weighted_l2).sum();
    let g_h_at_z = space.field_eval(g_h, z)?;
    let delta_mass = delta.mass(space);

    Ok(GreenDiagnostics {
        rows,
        grad_l1_total,
        weighted_h1_sum,
        weighted_l2_sum,
        g_h_at_z,
        fd_disagreement_max,
        delta_mass,
        solve_iterations: report.iterations,
    })
}
