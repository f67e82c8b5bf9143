//! Analytic descriptions of the smooth computational domains: boundary
//! evaluation, orthogonal projection onto the boundary, normals,
//! tubular-neighborhood queries, and the reflection extension operator.
//!
//! All supported domains are star-shaped with a smooth (C-infinity) boundary
//! given by a single global parametrization gamma(theta), theta in [0, 2pi).
//! The tubular radius delta_0 = 1/(2 max |kappa|) guarantees that every point
//! within distance delta_0 of the boundary has a unique nearest boundary point.

pub mod field;

pub use field::{
    DiskSolution, EllipseSolution, FnField, NegLaplacian, PointValue, Polynomial2D,
    ScalarField2D, TrigField,
};

use crate::error::{Error, Result};
use crate::vec2::{self, Vec2};

use std::f64::consts::{PI, TAU};

/// Number of samples used for the curvature bound behind `tubular_radius`.
const CURVATURE_SAMPLES: usize = 4096;

/// Number of points in the coarse scan used to bracket the global nearest
/// boundary parameter when Newton from the polar-angle seed is not trusted.
const SCAN_POINTS: usize = 720;

/// The supported domain shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    /// Disk of the given radius centered at the origin.
    Disk { radius: f64 },
    /// Axis-aligned ellipse x^2/a^2 + y^2/b^2 <= 1.
    Ellipse { a: f64, b: f64 },
    /// Star-shaped perturbation of a disk: r(theta) = r0 (1 + eps cos(m theta)).
    Star { base_radius: f64, amplitude: f64, frequency: u32 },
}

/// A smooth planar domain with precomputed tubular-neighborhood radius.
#[derive(Debug, Clone)]
pub struct DomainDescriptor {
    pub kind: DomainKind,
    /// Highest classical smoothness order guaranteed for the boundary;
    /// `None` means C-infinity (true for all built-in kinds).
    pub smoothness_order: Option<u32>,
    /// Radius delta_0 of the tubular neighborhood in which the orthogonal
    /// projection onto the boundary is unique: delta_0 = 1/(2 max |kappa|).
    pub tubular_radius: f64,
}

/// Result of projecting a point orthogonally onto the boundary.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Nearest boundary point.
    pub point: Vec2,
    /// Signed distance: x = point + t n(point), negative inside the domain.
    pub t: f64,
    /// Boundary parameter of the nearest point, in [0, 2pi).
    pub theta: f64,
}

impl DomainDescriptor {
    pub fn disk(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::DegenerateInput(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Self::finish(DomainKind::Disk { radius }))
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::DegenerateInput(format!("ellipse semi-axes must be positive, got ({a}, {b})")));
        }
        Ok(Self::finish(DomainKind::Ellipse { a, b }))
    }

    pub fn star(base_radius: f64, amplitude: f64, frequency: u32) -> Result<Self> {
        if !(base_radius > 0.0 && base_radius.is_finite()) {
            return Err(Error::DegenerateInput(format!("star base radius must be positive, got {base_radius}")));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::DegenerateInput(format!("star amplitude must be non-negative, got {amplitude}")));
        }
        if frequency == 0 {
            return Err(Error::DegenerateInput("star frequency must be at least 1".into()));
        }
        // Keeps r(theta) > 0 and the boundary graph-like over the polar angle.
        let wiggle = amplitude * (1.0 + (frequency as f64).powi(2));
        if wiggle >= 0.5 {
            return Err(Error::DegenerateInput(format!(
                "star perturbation too strong: amplitude*(1+m^2) = {wiggle} must be < 0.5"
            )));
        }
        Ok(Self::finish(DomainKind::Star { base_radius, amplitude, frequency }))
    }

    /// Parse the CLI domain grammar: `disk:R`, `ellipse:a,b`, `star:R0,eps,m`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(msg);
        let (name, args) = spec
            .split_once(':')
            .ok_or_else(|| bad(format!("domain spec '{spec}' must look like kind:params")))?;
        let nums: Vec<&str> = args.split(',').collect();
        let parse_f = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("invalid number '{s}' in domain spec '{spec}'")))
        };
        match (name, nums.as_slice()) {
            ("disk", [r]) => Self::disk(parse_f(r)?),
            ("ellipse", [a, b]) => Self::ellipse(parse_f(a)?, parse_f(b)?),
            ("star", [r0, eps, m]) => {
                let m: u32 = m
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("star frequency '{m}' must be a positive integer")))?;
                Self::star(parse_f(r0)?, parse_f(eps)?, m)
            }
            _ => Err(bad(format!(
                "unknown domain spec '{spec}' (expected disk:R, ellipse:a,b or star:R0,eps,m)"
            ))),
        }
        .map_err(|e| match e {
            // Construction-level complaints become configuration errors here.
            Error::DegenerateInput(msg) => Error::Config(msg),
            other => other,
        })
    }

    fn finish(kind: DomainKind) -> Self {
        let mut max_kappa = 0.0f64;
        for i in 0..CURVATURE_SAMPLES {
            let theta = TAU * i as f64 / CURVATURE_SAMPLES as f64;
            max_kappa = max_kappa.max(curvature_of(kind, theta).abs());
        }
        DomainDescriptor {
            kind,
            smoothness_order: None,
            tubular_radius: 0.5 / max_kappa,
        }
    }

    /// Boundary point gamma(theta).
    pub fn boundary_point(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        match self.kind {
            DomainKind::Disk { radius } => [radius * c, radius * s],
            DomainKind::Ellipse { a, b } => [a * c, b * s],
            DomainKind::Star { .. } => {
                let r = self.polar_radius(theta);
                [r * c, r * s]
            }
        }
    }

    /// First derivative gamma'(theta).
    pub fn boundary_velocity(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        match self.kind {
            DomainKind::Disk { radius } => [-radius * s, radius * c],
            DomainKind::Ellipse { a, b } => [-a * s, b * c],
            DomainKind::Star { base_radius, amplitude, frequency } => {
                let m = frequency as f64;
                let r = base_radius * (1.0 + amplitude * (m * theta).cos());
                let dr = -base_radius * amplitude * m * (m * theta).sin();
                [dr * c - r * s, dr * s + r * c]
            }
        }
    }

    /// Second derivative gamma''(theta).
    pub fn boundary_acceleration(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        match self.kind {
            DomainKind::Disk { radius } => [-radius * c, -radius * s],
            DomainKind::Ellipse { a, b } => [-a * c, -b * s],
            DomainKind::Star { base_radius, amplitude, frequency } => {
                let m = frequency as f64;
                let r = base_radius * (1.0 + amplitude * (m * theta).cos());
                let dr = -base_radius * amplitude * m * (m * theta).sin();
                let ddr = -base_radius * amplitude * m * m * (m * theta).cos();
                [
                    (ddr - r) * c - 2.0 * dr * s,
                    (ddr - r) * s + 2.0 * dr * c,
                ]
            }
        }
    }

    /// Signed curvature of the boundary at parameter theta (positive where
    /// the boundary curves away from the outward normal, i.e. convex parts).
    pub fn curvature(&self, theta: f64) -> f64 {
        curvature_of(self.kind, theta)
    }

    /// Outward unit normal at parameter theta.
    pub fn unit_normal(&self, theta: f64) -> Vec2 {
        let v = self.boundary_velocity(theta);
        let n = vec2::norm(v);
        // The parametrizations are counterclockwise, so the outward normal is
        // the tangent rotated by -90 degrees.
        [v[1] / n, -v[0] / n]
    }

    /// Distance from the origin to the boundary in direction phi.  Exact for
    /// all supported kinds (they are star-shaped around the origin).
    pub fn polar_radius(&self, phi: f64) -> f64 {
        match self.kind {
            DomainKind::Disk { radius } => radius,
            DomainKind::Ellipse { a, b } => {
                let (s, c) = phi.sin_cos();
                a * b / ((b * c).powi(2) + (a * s).powi(2)).sqrt()
            }
            DomainKind::Star { base_radius, amplitude, frequency } => {
                base_radius * (1.0 + amplitude * (frequency as f64 * phi).cos())
            }
        }
    }

    /// Largest distance from the origin to the boundary.
    pub fn max_radius(&self) -> f64 {
        match self.kind {
            DomainKind::Disk { radius } => radius,
            DomainKind::Ellipse { a, b } => a.max(b),
            DomainKind::Star { base_radius, amplitude, .. } => base_radius * (1.0 + amplitude),
        }
    }

    /// Whether x lies in the closed domain.  Exact: uses the polar description.
    pub fn contains(&self, x: Vec2) -> bool {
        match self.kind {
            DomainKind::Disk { radius } => vec2::norm(x) <= radius,
            DomainKind::Ellipse { a, b } => (x[0] / a).powi(2) + (x[1] / b).powi(2) <= 1.0,
            DomainKind::Star { .. } => {
                let r = vec2::norm(x);
                r <= self.polar_radius(x[1].atan2(x[0]))
            }
        }
    }

    /// Orthogonal projection of x onto the boundary.
    ///
    /// Newton iteration on theta -> (x - gamma(theta)) . gamma'(theta) = 0,
    /// seeded from the polar angle of x.  The converged candidate is checked
    /// against a coarse global scan of the boundary; if the seed led Newton to
    /// a non-global critical point, the scan bracket is refined by bisection
    /// instead.  Errors if the true distance exceeds the tubular radius.
    pub fn project_to_boundary(&self, x: Vec2) -> Result<Projection> {
        let seed = x[1].atan2(x[0]);
        let mut best = self.newton_project(x, seed);

        // Cheap global check: no boundary point from a coarse scan may be
        // meaningfully closer than the Newton result.
        let mut scan_best = (0usize, f64::INFINITY);
        let mut scan_dist = vec![0.0; SCAN_POINTS];
        for (i, d) in scan_dist.iter_mut().enumerate() {
            let theta = TAU * i as f64 / SCAN_POINTS as f64;
            *d = vec2::dist(x, self.boundary_point(theta));
            if *d < scan_best.1 {
                scan_best = (i, *d);
            }
        }
        let tol = 1e-9 * self.max_radius();
        let newton_ok = match &best {
            Ok(p) => vec2::dist(x, p.point) <= scan_best.1 + tol,
            Err(_) => false,
        };
        if !newton_ok {
            // Refine the scan bracket by bisection on the orthogonality
            // residual, then polish with Newton from the bracket midpoint.
            let i = scan_best.0;
            let lo = TAU * (i as f64 - 1.0) / SCAN_POINTS as f64;
            let hi = TAU * (i as f64 + 1.0) / SCAN_POINTS as f64;
            let theta = self.bisect_projection(x, lo, hi)?;
            best = self.newton_project(x, theta);
        }
        let proj = best?;
        if proj.t.abs() > self.tubular_radius * (1.0 + 1e-12) {
            return Err(Error::NotInTubularNeighborhood(x[0], x[1]));
        }
        Ok(proj)
    }

    /// Signed distance to the boundary for points in the tubular neighborhood
    /// (negative inside the domain).
    pub fn signed_distance(&self, x: Vec2) -> Result<f64> {
        Ok(self.project_to_boundary(x)?.t)
    }

    fn newton_project(&self, x: Vec2, seed: f64) -> Result<Projection> {
        let mut theta = seed;
        let scale = self.max_radius();
        for _ in 0..100 {
            let g = self.boundary_point(theta);
            let v = self.boundary_velocity(theta);
            let acc = self.boundary_acceleration(theta);
            let d = vec2::sub(x, g);
            let f = vec2::dot(d, v);
            let df = -vec2::dot(v, v) + vec2::dot(d, acc);
            if df == 0.0 {
                break;
            }
            let step = f / df;
            theta -= step;
            if step.abs() < 1e-15 || f.abs() <= 1e-13 * scale * scale {
                return Ok(self.projection_at(x, theta));
            }
        }
        Err(Error::NoConvergence(format!(
            "boundary projection Newton iteration for ({}, {})",
            x[0], x[1]
        )))
    }

    /// Bisection on f(theta) = (x - gamma) . gamma' over a bracket around the
    /// scan minimum.  f is the derivative of the squared distance, so it
    /// changes sign across an interior minimum.
    fn bisect_projection(&self, x: Vec2, mut lo: f64, mut hi: f64) -> Result<f64> {
        let f = |theta: f64| {
            let g = self.boundary_point(theta);
            vec2::dot(vec2::sub(x, g), self.boundary_velocity(theta))
        };
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            return Ok(lo);
        }
        if fhi == 0.0 {
            return Ok(hi);
        }
        if flo * fhi > 0.0 {
            return Err(Error::NoConvergence(format!(
                "projection bracket does not straddle a minimum for ({}, {})",
                x[0], x[1]
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fmid = f(mid);
            if fmid == 0.0 || (hi - lo) < 1e-15 {
                return Ok(mid);
            }
            if flo * fmid < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fmid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn projection_at(&self, x: Vec2, theta: f64) -> Projection {
        let theta = theta.rem_euclid(TAU);
        let point = self.boundary_point(theta);
        let n = self.unit_normal(theta);
        let t = vec2::dot(vec2::sub(x, point), n);
        Projection { point, t, theta }
    }
}

fn curvature_of(kind: DomainKind, theta: f64) -> f64 {
    // kappa = (x' y'' - y' x'') / |gamma'|^3 for any regular parametrization.
    let probe = DomainDescriptor { kind, smoothness_order: None, tubular_radius: f64::NAN };
    let v = probe.boundary_velocity(theta);
    let a = probe.boundary_acceleration(theta);
    vec2::cross(v, a) / vec2::norm(v).powi(3)
}

/// Extension by reflection across the boundary:
/// P f(x) = f(x) inside the domain, and for exterior x = xbar + t n (t > 0)
///     P f(x) = 6 f(xbar - t n) - 8 f(xbar - 2t n) + 3 f(xbar - 3t n).
/// The weights reproduce constants, linears and quadratics along the normal
/// (6-8+3 = 1, -6+16-9 = 1, 6-32+27 = 1), so P preserves C^2 regularity across
/// the boundary and |P f| <= 17 sup |f| over the sampled interior strip.
pub fn extend_by_reflection(
    domain: &DomainDescriptor,
    f: &dyn PointValue,
    x: Vec2,
) -> Result<f64> {
    if domain.contains(x) {
        return Ok(f.value_at(x));
    }
    let proj = domain.project_to_boundary(x)?;
    let t = proj.t;
    if 3.0 * t > domain.tubular_radius * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "reflection of ({}, {}) needs samples {} deep, beyond the tubular radius {}",
            x[0],
            x[1],
            3.0 * t,
            domain.tubular_radius
        )));
    }
    let n = domain.unit_normal(proj.theta);
    let sample = |s: f64| f.value_at(vec2::sub(proj.point, vec2::scale(s * t, n)));
    Ok(6.0 * sample(1.0) - 8.0 * sample(2.0) + 3.0 * sample(3.0))
}

/// Area of the boundary skin pi(S, delta) = {xbar + t n(xbar) : xbar in pi(S), |t| <= delta},
/// where pi(S) is the set of boundary points hit by projecting the samples.
///
/// The samples' projection parameters are sorted and merged into arcs
/// (consecutive parameters closer than four times the median gap belong to the
/// same arc); isolated points contribute zero area.  Over each arc the exact
/// tube area is the integral of 2 delta |gamma'(theta)| d theta, because the
/// curvature terms of the area element integrate to zero over -delta <= t <= delta.
pub fn boundary_skin_measure(
    domain: &DomainDescriptor,
    samples: &[Vec2],
    delta: f64,
) -> Result<f64> {
    if delta < 0.0 || delta > domain.tubular_radius * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "skin half-width {delta} outside [0, {}]",
            domain.tubular_radius
        )));
    }
    if delta == 0.0 || samples.len() < 2 {
        return Ok(0.0);
    }
    let mut thetas: Vec<f64> = Vec::with_capacity(samples.len());
    for &x in samples {
        thetas.push(domain.project_to_boundary(x)?.theta);
    }
    thetas.sort_by(f64::total_cmp);

    // Gaps between consecutive parameters, including the wrap-around gap.
    let n = thetas.len();
    let mut gaps: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 < n {
                thetas[i + 1] - thetas[i]
            } else {
                thetas[0] + TAU - thetas[n - 1]
            }
        })
        .collect();
    let mut sorted_gaps = gaps.clone();
    sorted_gaps.sort_by(f64::total_cmp);
    // A gap counts as covered when it is comparable to the typical sample
    // spacing; the absolute cap keeps a handful of far-apart samples from
    // being merged into one spurious arc.
    let merge_threshold = (4.0 * sorted_gaps[(n - 1) / 2]).min(PI / 8.0);

    // Integrate 2 delta |gamma'| over every merged (covered) gap.
    let (gl_pts, gl_wts) = crate::femspace::quadrature::gauss_legendre_unit(5);
    let mut area = 0.0;
    for (i, gap) in gaps.iter_mut().enumerate() {
        if *gap > merge_threshold {
            continue;
        }
        let lo = thetas[i];
        let speed_integral: f64 = gl_pts
            .iter()
            .zip(&gl_wts)
            .map(|(&u, &w)| w * vec2::norm(domain.boundary_velocity(lo + u * *gap)))
            .sum();
        area += 2.0 * delta * *gap * speed_integral;
    }
    Ok(area)
}
