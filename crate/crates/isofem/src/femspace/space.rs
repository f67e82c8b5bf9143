//! The global isoparametric finite element space V_h on a curved mesh, its
//! subspace with homogeneous boundary values, the nodal interpolation
//! operators, and pointwise field evaluation.
//!
//! Degrees of freedom are the global mesh nodes.  A `Field` stores one
//! coefficient per node together with a hash of the space it belongs to, so
//! that evaluating a field in the wrong space is caught instead of silently
//! producing garbage.

use serde::Deserialize;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointValue;
use crate::meshing::{solve_transposed, CurvedMesh};
use crate::vec2::{self, Vec2};

/// The isoparametric P_k space on a curved mesh: dofs are global nodes,
/// split into interior dofs (spanning the zero-boundary subspace) and
/// boundary dofs (nodes on the curved boundary).
#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: CurvedMesh,
    /// Global node indices not on the boundary.
    pub interior_dofs: Vec<usize>,
    /// Global node indices on the boundary (complement of `interior_dofs`).
    pub boundary_dofs: Vec<usize>,
    /// Element centroids, used to order candidates during point location.
    centroids: Vec<Vec2>,
    hash: u64,
}

impl FeSpace {
    pub fn new(mesh: CurvedMesh) -> Self {
        let mut interior_dofs = Vec::new();
        let mut boundary_dofs = Vec::new();
        for (i, &b) in mesh.boundary_node.iter().enumerate() {
            if b {
                boundary_dofs.push(i);
            } else {
                interior_dofs.push(i);
            }
        }
        let centroids = (0..mesh.n_elements())
            .map(|t| mesh.element_map(t, [1.0 / 3.0, 1.0 / 3.0]).0)
            .collect();
        let hash = space_hash(&mesh);
        Self { mesh, interior_dofs, boundary_dofs, centroids, hash }
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Hash identifying this space (degree, connectivity, node coordinates).
    pub fn space_hash(&self) -> u64 {
        self.hash
    }

    /// Error out unless the field was built for this space.
    pub fn check(&self, field: &Field) -> Result<()> {
        if field.space_hash != self.hash || field.coefficients.len() != self.n_dofs() {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    /// Wrap raw coefficients as a field of this space.
    pub fn field_from_coefficients(&self, coefficients: Vec<f64>) -> Result<Field> {
        if coefficients.len() != self.n_dofs() {
            return Err(Error::DegenerateInput(format!(
                "expected {} coefficients, got {}",
                self.n_dofs(),
                coefficients.len()
            )));
        }
        if !coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::DegenerateInput("non-finite field coefficient".into()));
        }
        Ok(Field { space_hash: self.hash, coefficients })
    }

    pub fn zero_field(&self) -> Field {
        Field { space_hash: self.hash, coefficients: vec![0.0; self.n_dofs()] }
    }

    /// Nodal interpolation I_h: coefficient at node a is v(a).
    pub fn interpolate(&self, v: &(impl PointValue + ?Sized)) -> Field {
        Field {
            space_hash: self.hash,
            coefficients: self.mesh.global_nodes.iter().map(|&p| v.value_at(p)).collect(),
        }
    }

    /// Interpolation with boundary values dropped: equals `interpolate` on
    /// interior dofs and zero on boundary dofs, so the result always lies in
    /// the zero-boundary subspace.
    pub fn interpolate_zero_boundary(&self, v: &(impl PointValue + ?Sized)) -> Field {
        let mut field = self.interpolate(v);
        for &b in &self.boundary_dofs {
            field.coefficients[b] = 0.0;
        }
        field
    }

    /// Find the element containing x and its reference preimage.
    ///
    /// Candidates are tried in order of centroid distance; the first element
    /// whose map inversion lands inside the reference triangle wins, so points
    /// on shared edges resolve deterministically.
    pub fn locate(&self, x: Vec2) -> Result<(usize, Vec2)> {
        let mut order: Vec<usize> = (0..self.mesh.n_elements()).collect();
        order.sort_by(|&a, &b| {
            vec2::dist(self.centroids[a], x)
                .total_cmp(&vec2::dist(self.centroids[b], x))
                .then(a.cmp(&b))
        });
        for t in order {
            if let Ok(xhat) = self.mesh.invert_element_map(t, x) {
                return Ok((t, xhat));
            }
        }
        Err(Error::PointNotInMesh(x[0], x[1]))
    }

    /// Value of a field at a reference point of a given element.
    pub fn eval_in_element(&self, field: &Field, t: usize, xhat: Vec2) -> f64 {
        let values = self.mesh.reference().eval_basis(xhat);
        self.mesh.node_map[t]
            .iter()
            .zip(&values)
            .map(|(&a, &phi)| field.coefficients[a] * phi)
            .sum()
    }

    /// Value and physical gradient at a reference point of a given element.
    pub fn eval_in_element_with_gradient(
        &self,
        field: &Field,
        t: usize,
        xhat: Vec2,
    ) -> (f64, Vec2) {
        let values = self.mesh.reference().eval_basis(xhat);
        let grads = self.mesh.reference().eval_gradients(xhat);
        let (_, jac) = self.mesh.element_map(t, xhat);
        let mut value = 0.0;
        let mut gref = [0.0; 2];
        for (i, &a) in self.mesh.node_map[t].iter().enumerate() {
            let c = field.coefficients[a];
            value += c * values[i];
            gref[0] += c * grads[i][0];
            gref[1] += c * grads[i][1];
        }
        (value, solve_transposed(jac, gref))
    }

    /// Evaluate a field at a physical point (element location + map inversion).
    pub fn field_eval(&self, field: &Field, x: Vec2) -> Result<f64> {
        self.check(field)?;
        let (t, xhat) = self.locate(x)?;
        Ok(self.eval_in_element(field, t, xhat))
    }

    /// Evaluate a field and its gradient at a physical point.  The gradient of
    /// the reference expansion is pushed forward through J^{-T}.
    pub fn field_eval_gradient(&self, field: &Field, x: Vec2) -> Result<(f64, Vec2)> {
        self.check(field)?;
        let (t, xhat) = self.locate(x)?;
        Ok(self.eval_in_element_with_gradient(field, t, xhat))
    }

    /// Serialize a field as JSON `{space_hash, coefficients}` with floats at
    /// 17 significant digits (bit-faithful on parse).
    pub fn field_to_json(&self, field: &Field) -> Result<String> {
        self.check(field)?;
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"space_hash\": \"{:016x}\",", field.space_hash);
        let coeffs: Vec<String> =
            field.coefficients.iter().map(|c| format!("{c:.16e}")).collect();
        let _ = writeln!(out, "  \"coefficients\": [{}]", coeffs.join(", "));
        out.push_str("}\n");
        Ok(out)
    }

    pub fn write_field(&self, field: &Field, path: &Path) -> Result<()> {
        std::fs::write(path, self.field_to_json(field)?)?;
        Ok(())
    }

    /// Parse a field dumped by `field_to_json`, verifying it belongs to this
    /// space.
    pub fn field_from_json(&self, text: &str) -> Result<Field> {
        #[derive(Deserialize)]
        struct FieldFile {
            space_hash: String,
            coefficients: Vec<f64>,
        }
        let file: FieldFile = serde_json::from_str(text)?;
        let hash = u64::from_str_radix(&file.space_hash, 16)
            .map_err(|_| Error::InvalidFile(format!("bad space hash '{}'", file.space_hash)))?;
        if hash != self.hash {
            return Err(Error::SpaceMismatch);
        }
        self.field_from_coefficients(file.coefficients)
    }

    pub fn read_field(&self, path: &Path) -> Result<Field> {
        self.field_from_json(&std::fs::read_to_string(path)?)
    }
}

/// A finite element function: one coefficient per global node of its space.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    space_hash: u64,
    pub coefficients: Vec<f64>,
}

impl Field {
    pub fn space_hash(&self) -> u64 {
        self.space_hash
    }
}

/// FNV-1a over the degree, connectivity and node coordinate bits: a stable
/// fingerprint that changes whenever the mesh (and hence the space) changes.
fn space_hash(mesh: &CurvedMesh) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(mesh.k as u64);
    eat(mesh.n_elements() as u64);
    eat(mesh.n_nodes() as u64);
    for ids in &mesh.node_map {
        for &a in ids {
            eat(a as u64);
        }
    }
    for p in &mesh.global_nodes {
        eat(p[0].to_bits());
        eat(p[1].to_bits());
    }
    for &b in &mesh.boundary_node {
        eat(b as u64);
    }
    h
}
