//! Dyadic decomposition of the mesh around a reference element K:
//! shells Omega_{h,j} of elements at distance ~ 2^j L h from K.

use super::CurvedMesh;
use crate::error::{Error, Result};
use crate::femspace::reference::ReferenceElement;
use crate::vec2::{self, Vec2};

/// Partition of the elements into dyadic distance shells around an element K.
#[derive(Debug, Clone)]
pub struct DyadicDecomposition {
    /// Shell index per element: 0 for d(T,K) <= d_0, else the unique j with
    /// d_{j-1} < d(T,K) <= d_j.
    pub labels: Vec<usize>,
    /// Shell scales d_j = 2^j d_0 for j = 0..=j_max.
    pub scales: Vec<f64>,
    /// J = ceil(log2(diam Omega_h / d_0)), clamped at zero.
    pub j_max: usize,
    pub d0: f64,
}

/// Number of dyadic shells beyond the innermost: J = ceil(log2(diam / d0)).
pub fn shell_count(diam: f64, d0: f64) -> usize {
    let j = (diam / d0).log2().ceil();
    if j > 0.0 {
        j as usize
    } else {
        0
    }
}

/// Physical positions of a degree-2k lattice per element, used as the sample
/// set for inter-element distances.
pub fn element_samples(mesh: &CurvedMesh) -> Vec<Vec<Vec2>> {
    let lattice = ReferenceElement::sample_lattice(2 * mesh.k);
    (0..mesh.n_elements())
        .map(|t| lattice.iter().map(|&p| mesh.element_map(t, p).0).collect())
        .collect()
}

/// Approximate distance between two elements: the minimum pairwise distance
/// between their sample points (zero for the element against itself).
pub fn element_distance(samples: &[Vec<Vec2>], a: usize, b: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for &p in &samples[a] {
        for &q in &samples[b] {
            let d = vec2::dist(p, q);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Approximate element diameter from the same sample set.
pub fn element_diameter(samples: &[Vec<Vec2>], a: usize) -> f64 {
    let pts = &samples[a];
    let mut diam = 0.0f64;
    for (i, &p) in pts.iter().enumerate() {
        for &q in &pts[i + 1..] {
            diam = diam.max(vec2::dist(p, q));
        }
    }
    diam
}

/// Decompose the mesh into dyadic shells around element `center` with base
/// scale d_0 = l_ratio * h.
pub fn dyadic_decomposition(
    mesh: &CurvedMesh,
    center: usize,
    l_ratio: f64,
) -> Result<DyadicDecomposition> {
    if l_ratio < 1.0 {
        return Err(Error::Config(format!("dyadic stride ratio L = {l_ratio} must be >= 1")));
    }
    if center >= mesh.n_elements() {
        return Err(Error::Config(format!(
            "dyadic center element {center} out of range (mesh has {})",
            mesh.n_elements()
        )));
    }
    let d0 = l_ratio * mesh.h;
    let diam = mesh.domain_diameter();
    let j_max = shell_count(diam, d0);
    let scales: Vec<f64> = (0..=j_max).map(|j| d0 * (1u64 << j) as f64).collect();

    let samples = element_samples(mesh);
    let labels: Vec<usize> = (0..mesh.n_elements())
        .map(|t| {
            let d = element_distance(&samples, t, center);
            // Smallest j with d <= d_j; sampling error can push d a hair past
            // d_J, in which case the outermost shell absorbs it.
            scales.iter().position(|&dj| d <= dj).unwrap_or(j_max)
        })
        .collect();

    Ok(DyadicDecomposition { labels, scales, j_max, d0 })
}
