//! Lagrange reference element of degree k on the unit triangle
//! T_ref = {(x, y) : x >= 0, y >= 0, x + y <= 1}.
//!
//! Nodes are the lattice points (i/k, j/k), i + j <= k, ordered as
//! vertices, then edge nodes (edge 0: v0->v1, edge 1: v1->v2, edge 2: v2->v0,
//! each walked from its first vertex), then interior nodes lexicographically.
//! Basis functions are represented in the monomial basis with coefficients
//! obtained by inverting the node/monomial Vandermonde matrix, which makes
//! derivatives of any order available in closed form.

use crate::dense::{DenseMatrix, LuFactors};
use crate::error::{Error, Result};

/// Vertex pairs (start, end) of the three reference edges.
pub const EDGE_VERTICES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// Reference-element vertices.
pub const VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Incenter of the reference triangle, (1/(2+sqrt 2), 1/(2+sqrt 2)).
pub fn incenter() -> [f64; 2] {
    let c = 1.0 / (2.0 + std::f64::consts::SQRT_2);
    [c, c]
}

/// Inradius of the reference triangle, 1/(2+sqrt 2).
pub fn inradius() -> f64 {
    1.0 / (2.0 + std::f64::consts::SQRT_2)
}

/// Degree-k nodal (Lagrange) basis on the reference triangle.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub degree: usize,
    nodes: Vec<[f64; 2]>,
    /// Monomial exponents (a, b) for x^a y^b, one per basis function.
    exponents: Vec<(u32, u32)>,
    /// `coeffs[(m, i)]` is the coefficient of monomial m in basis function i.
    coeffs: DenseMatrix,
    /// For each edge, the indices of all nodes lying on it (endpoints included),
    /// ordered from the edge's first vertex to its second.
    edge_nodes: [Vec<usize>; 3],
    interior_nodes: Vec<usize>,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(Error::Config(format!(
                "polynomial degree must be in 1..=3, got {degree}"
            )));
        }
        let k = degree;
        let kf = k as f64;

        // Nodes: vertices, edge nodes, interior nodes.
        let mut nodes: Vec<[f64; 2]> = VERTICES.to_vec();
        let mut edge_nodes: [Vec<usize>; 3] = Default::default();
        for (e, [a, b]) in EDGE_VERTICES.iter().enumerate() {
            edge_nodes[e].push(*a);
            let (pa, pb) = (VERTICES[*a], VERTICES[*b]);
            for s in 1..k {
                let t = s as f64 / kf;
                edge_nodes[e].push(nodes.len());
                nodes.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
            }
            edge_nodes[e].push(*b);
        }
        let mut interior_nodes = Vec::new();
        for i in 1..k {
            for j in 1..k {
                if i + j < k {
                    interior_nodes.push(nodes.len());
                    nodes.push([i as f64 / kf, j as f64 / kf]);
                }
            }
        }
        let n = nodes.len();
        debug_assert_eq!(n, (k + 1) * (k + 2) / 2);

        // Monomial exponents a + b <= k.
        let mut exponents = Vec::with_capacity(n);
        for total in 0..=k as u32 {
            for a in (0..=total).rev() {
                exponents.push((a, total - a));
            }
        }

        // Vandermonde V[(i, m)] = mono_m(node_i); basis coefficients solve
        // V * C = I, i.e. column i of C holds the monomial coefficients of
        // the basis function that is 1 at node i and 0 at the others.
        let mut vander = DenseMatrix::zeros(n, n);
        for (i, p) in nodes.iter().enumerate() {
            for (m, &(a, b)) in exponents.iter().enumerate() {
                vander[(i, m)] = p[0].powi(a as i32) * p[1].powi(b as i32);
            }
        }
        let coeffs = LuFactors::new(&vander)?.inverse();

        Ok(Self { degree, nodes, exponents, coeffs, edge_nodes, interior_nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    /// Node indices on edge `e`, ordered along the edge (endpoints included).
    pub fn edge_nodes(&self, e: usize) -> &[usize] {
        &self.edge_nodes[e]
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// All basis function values at a point.
    pub fn eval_basis(&self, p: [f64; 2]) -> Vec<f64> {
        let n = self.n_nodes();
        let monos: Vec<f64> = self
            .exponents
            .iter()
            .map(|&(a, b)| p[0].powi(a as i32) * p[1].powi(b as i32))
            .collect();
        (0..n).map(|i| (0..n).map(|m| self.coeffs[(m, i)] * monos[m]).sum()).collect()
    }

    /// All basis function gradients at a point.
    pub fn eval_gradients(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        let n = self.n_nodes();
        let mut grads = vec![[0.0; 2]; n];
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            let dx = if a == 0 {
                0.0
            } else {
                a as f64 * p[0].powi(a as i32 - 1) * p[1].powi(b as i32)
            };
            let dy = if b == 0 {
                0.0
            } else {
                b as f64 * p[0].powi(a as i32) * p[1].powi(b as i32 - 1)
            };
            for i in 0..n {
                grads[i][0] += self.coeffs[(m, i)] * dx;
                grads[i][1] += self.coeffs[(m, i)] * dy;
            }
        }
        grads
    }

    /// Value of basis function `i` at a point.
    pub fn shape_value(&self, i: usize, p: [f64; 2]) -> f64 {
        self.derivative(i, 0, 0, p)
    }

    /// Partial derivative d^(ax+ay) phi_i / dx^ax dy^ay at a point.
    /// Exact for any order (the basis is polynomial).
    pub fn derivative(&self, i: usize, ax: u32, ay: u32, p: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            if ax > a || ay > b {
                continue;
            }
            let mut c = self.coeffs[(m, i)];
            for s in 0..ax {
                c *= (a - s) as f64;
            }
            for s in 0..ay {
                c *= (b - s) as f64;
            }
            acc += c * p[0].powi((a - ax) as i32) * p[1].powi((b - ay) as i32);
        }
        acc
    }

    /// Pre-evaluated values and gradients at a fixed point set.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> BasisTable {
        BasisTable {
            values: points.iter().map(|&p| self.eval_basis(p)).collect(),
            gradients: points.iter().map(|&p| self.eval_gradients(p)).collect(),
        }
    }

    /// Lattice of (m+1)(m+2)/2 sample points (i/m, j/m), i + j <= m, used for
    /// dense per-element sampling (sup norms, distance estimates).
    pub fn sample_lattice(m: usize) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity((m + 1) * (m + 2) / 2);
        let mf = m.max(1) as f64;
        for i in 0..=m {
            for j in 0..=(m - i) {
                pts.push([i as f64 / mf, j as f64 / mf]);
            }
        }
        pts
    }
}

/// Basis values/gradients tabulated at a point set (typically quadrature points).
#[derive(Debug, Clone)]
pub struct BasisTable {
    /// `values[q][i]` = phi_i at point q.
    pub values: Vec<Vec<f64>>,
    /// `gradients[q][i]` = grad phi_i at point q.
    pub gradients: Vec<Vec<[f64; 2]>>,
}
