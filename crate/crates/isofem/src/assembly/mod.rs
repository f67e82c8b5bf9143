//! Stiffness/load assembly for the Poisson problem on a curved mesh,
//! homogeneous Dirichlet constraint by boundary-dof elimination, and a
//! Jacobi-preconditioned conjugate gradient solver.
//!
//! One quadrature rule (degree 2k+3) is shared by the stiffness matrix and
//! the load vector so both sides of the weak form see the same integration.
//! Assembly walks elements in index order, which makes the accumulated
//! floating-point sums, and hence the whole pipeline, bitwise deterministic.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::femspace::quadrature::build_quadrature;
use crate::femspace::reference::BasisTable;
use crate::femspace::space::{FeSpace, Field};
use crate::geometry::PointValue;
use crate::meshing::{det2, solve_transposed};

/// Square sparse matrix in compressed sparse row form with a symmetric
/// pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Build the pattern from per-row column lists (sorted and deduplicated
    /// here), with all values zero.
    fn from_pattern(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        let nnz = col_indices.len();
        Self { n, row_offsets, col_indices, values: vec![0.0; nnz] }
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Index into `values` for entry (i, j); the pattern must contain it.
    fn slot(&self, i: usize, j: usize) -> usize {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        lo + self.col_indices[lo..hi]
            .binary_search(&j)
            .expect("entry outside assembled pattern")
    }

    /// Entry (i, j), zero if outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[p] * x[self.col_indices[p]];
            }
            y[i] = acc;
        }
    }

    /// x^T A y (the bilinear form the matrix represents).
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n];
        self.matvec(y, &mut ax);
        x.iter().zip(&ax).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |A_ij - A_ji| over the pattern.
    pub fn symmetry_error(&self) -> f64 {
        let mut err = 0.0f64;
        for i in 0..self.n {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[p];
                if j > i {
                    err = err.max((self.values[p] - self.get(j, i)).abs());
                }
            }
        }
        err
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.values[self.row_offsets[i]..self.row_offsets[i + 1]].iter().sum())
            .collect()
    }

    /// MatrixMarket coordinate format (symmetric: lower triangle only),
    /// 17 significant digits.
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let entries: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| {
                (self.row_offsets[i]..self.row_offsets[i + 1])
                    .map(move |p| (i, self.col_indices[p], self.values[p]))
            })
            .filter(|&(i, j, _)| j <= i)
            .collect();
        let _ = writeln!(out, "{} {} {}", self.n, self.n, entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(out, "{} {} {v:.16e}", i + 1, j + 1);
        }
        out
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_matrix_market())?;
        Ok(())
    }
}

/// Shared quadrature degree for assembly on a degree-k space.
fn assembly_degree(k: usize) -> usize {
    2 * k + 3
}

/// Assemble the full (unconstrained) stiffness matrix of the Laplacian:
/// A[a][b] = sum over elements and quadrature points of
/// (J^{-T} grad phi_a) . (J^{-T} grad phi_b) |det J| w.
pub fn assemble_stiffness(space: &FeSpace) -> Result<SparseMatrix> {
    let mesh = &space.mesh;
    let n = space.n_dofs();
    let rule = build_quadrature(assembly_degree(mesh.k))?;
    let table: BasisTable = mesh.reference().tabulate(&rule.points);
    let n_local = mesh.reference().n_nodes();

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for ids in &mesh.node_map {
        for &a in ids {
            rows[a].extend_from_slice(ids);
        }
    }
    let mut matrix = SparseMatrix::from_pattern(rows);

    let mut local = vec![0.0; n_local * n_local];
    let mut phys_grads = vec![[0.0f64; 2]; n_local];
    for t in 0..mesh.n_elements() {
        local.fill(0.0);
        for q in 0..rule.len() {
            let (_, jac) = map_at(space, t, &table, q);
            let det = det2(jac);
            if det <= 0.0 {
                return Err(Error::SingularJacobian(t));
            }
            for i in 0..n_local {
                phys_grads[i] = solve_transposed(jac, table.gradients[q][i]);
            }
            let w = rule.weights[q] * det;
            for i in 0..n_local {
                for j in 0..n_local {
                    local[i * n_local + j] +=
                        w * (phys_grads[i][0] * phys_grads[j][0]
                            + phys_grads[i][1] * phys_grads[j][1]);
                }
            }
        }
        let ids = &mesh.node_map[t];
        for i in 0..n_local {
            for j in 0..n_local {
                let p = matrix.slot(ids[i], ids[j]);
                matrix.values[p] += local[i * n_local + j];
            }
        }
    }
    Ok(matrix)
}

/// Assemble the load vector b[a] = integral of f phi_a over the mesh with the
/// same quadrature rule as the stiffness matrix.
pub fn assemble_load(space: &FeSpace, f: &(impl PointValue + ?Sized)) -> Result<Vec<f64>> {
    let mesh = &space.mesh;
    let rule = build_quadrature(assembly_degree(mesh.k))?;
    let table = mesh.reference().tabulate(&rule.points);
    let mut b = vec![0.0; space.n_dofs()];
    for t in 0..mesh.n_elements() {
        for q in 0..rule.len() {
            let (x, jac) = map_at(space, t, &table, q);
            let w = rule.weights[q] * det2(jac).abs() * f.value_at(x);
            for (i, &a) in mesh.node_map[t].iter().enumerate() {
                b[a] += w * table.values[q][i];
            }
        }
    }
    Ok(b)
}

/// Geometry map and Jacobian at tabulated quadrature point q of element t.
pub(crate) fn map_at(
    space: &FeSpace,
    t: usize,
    table: &BasisTable,
    q: usize,
) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut x = [0.0, 0.0];
    let mut jac = [[0.0; 2]; 2];
    for (i, a) in space.mesh.geom_nodes[t].iter().enumerate() {
        x[0] += a[0] * table.values[q][i];
        x[1] += a[1] * table.values[q][i];
        for r in 0..2 {
            jac[r][0] += a[r] * table.gradients[q][i][0];
            jac[r][1] += a[r] * table.gradients[q][i][1];
        }
    }
    (x, jac)
}

/// The constrained SPD system on interior dofs, with the bookkeeping needed
/// to scatter a solution back to global coefficients.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    /// interior index -> global dof.
    pub interior_to_global: Vec<usize>,
    n_global: usize,
}

/// Impose the homogeneous Dirichlet condition by removing boundary rows and
/// columns (no right-hand-side lift is needed for zero data).
pub fn apply_dirichlet(a: &SparseMatrix, b: &[f64], space: &FeSpace) -> Result<LinearSystem> {
    if space.boundary_dofs.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    assert_eq!(a.n, space.n_dofs());
    assert_eq!(b.len(), space.n_dofs());
    let mut global_to_interior = vec![usize::MAX; space.n_dofs()];
    for (i, &g) in space.interior_dofs.iter().enumerate() {
        global_to_interior[g] = i;
    }
    let rows = space
        .interior_dofs
        .iter()
        .map(|&g| {
            (a.row_offsets[g]..a.row_offsets[g + 1])
                .map(|p| a.col_indices[p])
                .filter(|&j| global_to_interior[j] != usize::MAX)
                .map(|j| global_to_interior[j])
                .collect()
        })
        .collect();
    let mut matrix = SparseMatrix::from_pattern(rows);
    for (i, &g) in space.interior_dofs.iter().enumerate() {
        for p in a.row_offsets[g]..a.row_offsets[g + 1] {
            let j = global_to_interior[a.col_indices[p]];
            if j != usize::MAX {
                let slot = matrix.slot(i, j);
                matrix.values[slot] = a.values[p];
            }
        }
    }
    let rhs = space.interior_dofs.iter().map(|&g| b[g]).collect();
    Ok(LinearSystem {
        matrix,
        rhs,
        interior_to_global: space.interior_dofs.clone(),
        n_global: space.n_dofs(),
    })
}

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Solution scattered to global dofs (zero on boundary dofs).
    pub field: Field,
    pub iterations: usize,
    /// Final true residual |b - A u|_2.
    pub residual: f64,
    /// Quadratic energy 1/2 u^T A u - b^T u after each iteration; conjugate
    /// gradients decreases this monotonically.
    pub energy_history: Vec<f64>,
}

/// Solve the constrained system with Jacobi-preconditioned conjugate
/// gradients to a relative residual tolerance.
pub fn solve(space: &FeSpace, system: &LinearSystem, rel_tol: f64) -> Result<SolveReport> {
    if !(1e-14..=1e-6).contains(&rel_tol) {
        return Err(Error::Config(format!(
            "solver tolerance {rel_tol:e} outside [1e-14, 1e-6]"
        )));
    }
    if system.n_global != space.n_dofs() {
        return Err(Error::SpaceMismatch);
    }
    let a = &system.matrix;
    let b = &system.rhs;
    let n = a.n;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let b_norm = norm(b);

    let mut u = vec![0.0; n];
    let mut iterations = 0;
    let mut energy_history = Vec::new();
    let mut residual = b_norm;

    if b_norm > 0.0 {
        let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
            return Err(Error::IndefiniteMatrix(diag[i], 0));
        }
        let max_iters = (20.0 * (n as f64).sqrt()).ceil() as usize;
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        loop {
            if iterations >= max_iters {
                return Err(Error::NoConvergence(format!(
                    "CG did not reach {rel_tol:e} within {max_iters} iterations \
                     (relative residual {:e})",
                    residual / b_norm
                )));
            }
            a.matvec(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::IndefiniteMatrix(pap, iterations));
            }
            let alpha = rz / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            {
                let mut au = vec![0.0; n];
                a.matvec(&u, &mut au);
                let energy: f64 =
                    (0..n).map(|i| 0.5 * u[i] * au[i] - b[i] * u[i]).sum();
                energy_history.push(energy);
                residual = norm(&(0..n).map(|i| b[i] - au[i]).collect::<Vec<_>>());
            }
            if residual <= rel_tol * b_norm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    } else {
        residual = 0.0;
    }

    let mut coefficients = vec![0.0; system.n_global];
    for (i, &g) in system.interior_to_global.iter().enumerate() {
        coefficients[g] = u[i];
    }
    let field = space.field_from_coefficients(coefficients)?;
    Ok(SolveReport { field, iterations, residual, energy_history })
}

/// Assemble, constrain and solve in one call: the discrete Poisson problem
/// with homogeneous Dirichlet data and forcing f.
pub fn solve_poisson(
    space: &FeSpace,
    f: &(impl PointValue + ?Sized),
    rel_tol: f64,
) -> Result<SolveReport> {
    let a = assemble_stiffness(space)?;
    let b = assemble_load(space, f)?;
    let system = apply_dirichlet(&a, &b, space)?;
    solve(space, &system, rel_tol)
}

/// Post-solve weak residual, re-evaluated with an independent quadrature
/// degree: max over interior dofs of |a_h(u_h, phi_a) - (f, phi_a)|, plus the
/// L2 norm of f for scaling.
pub struct WeakResidual {
    pub max_abs: f64,
    pub load_l2: f64,
}

pub fn galerkin_residual(
    space: &FeSpace,
    field: &Field,
    f: &(impl PointValue + ?Sized),
    degree: usize,
) -> Result<WeakResidual> {
    space.check(field)?;
    let mesh = &space.mesh;
    let rule = build_quadrature(degree)?;
    let table = mesh.reference().tabulate(&rule.points);
    let n_local = mesh.reference().n_nodes();
    let mut residual = vec![0.0f64; space.n_dofs()];
    let mut f_l2_sq = 0.0;
    let mut phys_grads = vec![[0.0f64; 2]; n_local];
    for t in 0..mesh.n_elements() {
        let ids = &mesh.node_map[t];
        for q in 0..rule.len() {
            let (x, jac) = map_at(space, t, &table, q);
            let det = det2(jac).abs();
            let w = rule.weights[q] * det;
            for i in 0..n_local {
                phys_grads[i] = solve_transposed(jac, table.gradients[q][i]);
            }
            let mut grad_u = [0.0f64; 2];
            for (i, &a) in ids.iter().enumerate() {
                grad_u[0] += field.coefficients[a] * phys_grads[i][0];
                grad_u[1] += field.coefficients[a] * phys_grads[i][1];
            }
            let fx = f.value_at(x);
            f_l2_sq += w * fx * fx;
            for (i, &a) in ids.iter().enumerate() {
                residual[a] += w
                    * (grad_u[0] * phys_grads[i][0] + grad_u[1] * phys_grads[i][1]
                        - fx * table.values[q][i]);
            }
        }
    }
    let max_abs = space
        .interior_dofs
        .iter()
        .fold(0.0f64, |m, &a| m.max(residual[a].abs()));
    Ok(WeakResidual { max_abs, load_l2: f_l2_sq.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::error_norms;
    use crate::geometry::{
        DiskSolution, DomainDescriptor, FnField, NegLaplacian, Polynomial2D,
    };
    use crate::meshing::{triangulate, CurvedMesh, StraightTriangulation};
    use crate::vec2::Vec2;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk() -> DomainDescriptor {
        DomainDescriptor::disk(1.0).unwrap()
    }

    fn disk_space(h: f64, k: usize) -> FeSpace {
        let tri = triangulate(&disk(), h).unwrap();
        FeSpace::new(CurvedMesh::curved(tri, &disk(), k).unwrap())
    }

    /// n x n structured triangulation of the unit square.  Only the x = 0 and
    /// x = 1 sides are marked as boundary, leaving the other two natural.
    fn strip_mesh(n: usize) -> StraightTriangulation {
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::new();
        let mut boundary_edges = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                // Lower-right triangle (a, b, c): edge 2 = c -> a is the
                // diagonal; edge b -> c lies on x = 1 when i = n - 1.
                let t0 = triangles.len();
                triangles.push([a, b, c]);
                if i + 1 == n {
                    boundary_edges.push((t0, 1));
                }
                // Upper-left triangle (a, c, d): edge d -> a lies on x = 0
                // when i = 0.
                let t1 = triangles.len();
                triangles.push([a, c, d]);
                if i == 0 {
                    boundary_edges.push((t1, 2));
                }
            }
        }
        StraightTriangulation {
            vertices,
            triangles,
            boundary_edges,
            target_h: 1.0 / n as f64,
        }
    }

    #[test]
    fn unit_right_triangle_p1_element_matrix() {
        let tri = StraightTriangulation {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![(0, 0), (0, 1), (0, 2)],
            target_h: 1.0,
        };
        let space = FeSpace::new(CurvedMesh::straight(tri, 1).unwrap());
        let a = assemble_stiffness(&space).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a.get(i, j) - expect[i][j]).abs() < 1e-14,
                    "A[{i}][{j}] = {}",
                    a.get(i, j)
                );
            }
        }
    }

    #[test]
    fn stiffness_is_symmetric_with_zero_row_sums() {
        for k in 1..=3 {
            let space = disk_space(0.3, k);
            let a = assemble_stiffness(&space).unwrap();
            assert!(
                a.symmetry_error() <= 1e-12 * a.max_abs(),
                "k={k}: asymmetry {}",
                a.symmetry_error()
            );
            let worst = a.row_sums().iter().fold(0.0f64, |m, s| m.max(s.abs()));
            assert!(worst <= 1e-10, "k={k}: worst row sum {worst}");
        }
    }

    #[test]
    fn load_vector_sums_to_area_and_respects_symmetry() {
        let space = disk_space(0.25, 2);
        let b_one = assemble_load(&space, &FnField(|_| 1.0)).unwrap();
        let total: f64 = b_one.iter().sum();
        let rule = build_quadrature(7).unwrap();
        let area = space.mesh.total_area(&rule);
        assert!((total - area).abs() <= 1e-10, "{total} vs {area}");

        let b_x = assemble_load(&space, &FnField(|p: Vec2| p[0])).unwrap();
        let moment: f64 = b_x.iter().sum();
        assert!(moment.abs() <= 1e-8, "x-moment {moment}");

        let b_zero = assemble_load(&space, &FnField(|_| 0.0)).unwrap();
        assert!(b_zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_elimination_keeps_interior_block() {
        let space = disk_space(0.35, 2);
        let a = assemble_stiffness(&space).unwrap();
        let b = assemble_load(&space, &FnField(|_| 1.0)).unwrap();
        let system = apply_dirichlet(&a, &b, &space).unwrap();
        assert_eq!(system.matrix.n, space.interior_dofs.len());
        for (i, &g) in space.interior_dofs.iter().enumerate() {
            assert_eq!(system.rhs[i], b[g]);
            assert_eq!(system.matrix.get(i, i), a.get(g, g));
        }

        // A strip with no marked boundary cannot be constrained.
        let mut tri = strip_mesh(3);
        tri.boundary_edges.clear();
        let free = FeSpace::new(CurvedMesh::straight(tri, 1).unwrap());
        let a2 = assemble_stiffness(&free).unwrap();
        let b2 = vec![0.0; free.n_dofs()];
        assert!(matches!(apply_dirichlet(&a2, &b2, &free), Err(Error::EmptyBoundary)));
    }

    #[test]
    fn zero_rhs_solves_to_zero_in_zero_iterations() {
        let space = disk_space(0.35, 2);
        let a = assemble_stiffness(&space).unwrap();
        let b = vec![0.0; space.n_dofs()];
        let system = apply_dirichlet(&a, &b, &space).unwrap();
        let report = solve(&space, &system, 1e-12).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.field.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn solver_tolerance_range_is_enforced() {
        let space = disk_space(0.4, 1);
        let a = assemble_stiffness(&space).unwrap();
        let b = assemble_load(&space, &FnField(|_| 1.0)).unwrap();
        let system = apply_dirichlet(&a, &b, &space).unwrap();
        assert!(matches!(solve(&space, &system, 1e-5), Err(Error::Config(_))));
        assert!(matches!(solve(&space, &system, 1e-15), Err(Error::Config(_))));
    }

    #[test]
    fn patch_test_reproduces_quadratic_on_strip() {
        // u = x(1 - x) vanishes on the two constrained sides and has zero
        // normal derivative on the unconstrained ones, so the k=2 discrete
        // solution of -u'' = 2 must reproduce it to solver accuracy.
        let space = FeSpace::new(CurvedMesh::straight(strip_mesh(4), 2).unwrap());
        let report = solve_poisson(&space, &FnField(|_| 2.0), 1e-12).unwrap();
        let exact = Polynomial2D::new(vec![(1.0, 1, 0), (-1.0, 2, 0)]);
        let interp = space.interpolate(&exact);
        for (a, b) in report.field.coefficients.iter().zip(&interp.coefficients) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn energy_decreases_monotonically_and_residual_meets_tolerance() {
        let space = disk_space(0.2, 2);
        let u = DiskSolution { radius: 1.0 };
        let a = assemble_stiffness(&space).unwrap();
        let b = assemble_load(&space, &NegLaplacian(&u)).unwrap();
        let system = apply_dirichlet(&a, &b, &space).unwrap();
        let report = solve(&space, &system, 1e-12).unwrap();
        let b_norm = system.rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(report.residual <= 1e-12 * b_norm);
        for w in report.energy_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * w[0].abs(),
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn solved_field_satisfies_galerkin_orthogonality_and_energy_identity() {
        for k in [2usize, 3] {
            let space = disk_space(0.25, k);
            let u = DiskSolution { radius: 1.0 };
            let f = NegLaplacian(&u);
            let report = solve_poisson(&space, &f, 1e-12).unwrap();

            // Independent quadrature degree for the recheck.
            let wr = galerkin_residual(&space, &report.field, &f, 2 * k + 6).unwrap();
            assert!(
                wr.max_abs <= 1e-9 * wr.load_l2,
                "k={k}: residual {} vs load norm {}",
                wr.max_abs,
                wr.load_l2
            );

            // a_h(u_h, u_h) = (f, u_h) to relative 1e-8.
            let a = assemble_stiffness(&space).unwrap();
            let b = assemble_load(&space, &f).unwrap();
            let energy = a.bilinear(&report.field.coefficients, &report.field.coefficients);
            let work: f64 =
                b.iter().zip(&report.field.coefficients).map(|(x, y)| x * y).sum();
            assert!(
                (energy - work).abs() <= 1e-8 * energy.abs(),
                "k={k}: {energy} vs {work}"
            );
        }
    }

    #[test]
    fn solution_is_invariant_under_dof_permutation() {
        let space = disk_space(0.3, 2);
        let u = DiskSolution { radius: 1.0 };
        let f = NegLaplacian(&u);
        let report = solve_poisson(&space, &f, 1e-12).unwrap();

        let mut perm: Vec<usize> = (0..space.n_dofs()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let shuffled = FeSpace::new(space.mesh.renumber_nodes(&perm));
        let report2 = solve_poisson(&shuffled, &f, 1e-12).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = rng.gen_range(0.0..0.9f64).sqrt();
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = [r * th.cos(), r * th.sin()];
            let v1 = space.field_eval(&report.field, p).unwrap();
            let v2 = shuffled.field_eval(&report2.field, p).unwrap();
            assert!((v1 - v2).abs() < 1e-9, "{v1} vs {v2} at {p:?}");
        }
    }

    #[test]
    fn assembly_is_bitwise_deterministic() {
        let run = || {
            let space = disk_space(0.3, 2);
            let u = DiskSolution { radius: 1.0 };
            solve_poisson(&space, &NegLaplacian(&u), 1e-12).unwrap().field
        };
        let (f1, f2) = (run(), run());
        assert!(f1
            .coefficients
            .iter()
            .zip(&f2.coefficients)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn quadrature_degree_sweep_leaves_solution_unchanged() {
        // The default assembly degree must be high enough that raising it
        // further moves the solution by less than 1e-8.
        for k in [2usize, 3] {
            let space = disk_space(0.3, k);
            let u = DiskSolution { radius: 1.0 };
            let f = NegLaplacian(&u);
            let report = solve_poisson(&space, &f, 1e-12).unwrap();

            // Reassemble with degree 2k+6 by hand.
            let rule = build_quadrature(2 * k + 6).unwrap();
            let table = space.mesh.reference().tabulate(&rule.points);
            let n_local = space.mesh.reference().n_nodes();
            let mut rows: Vec<Vec<usize>> = vec![Vec::new(); space.n_dofs()];
            for ids in &space.mesh.node_map {
                for &a in ids {
                    rows[a].extend_from_slice(ids);
                }
            }
            let mut a_hi = SparseMatrix::from_pattern(rows);
            let mut b_hi = vec![0.0; space.n_dofs()];
            for t in 0..space.mesh.n_elements() {
                let ids = &space.mesh.node_map[t];
                for q in 0..rule.len() {
                    let (x, jac) = map_at(&space, t, &table, q);
                    let det = det2(jac);
                    let w = rule.weights[q] * det;
                    let grads: Vec<[f64; 2]> = (0..n_local)
                        .map(|i| solve_transposed(jac, table.gradients[q][i]))
                        .collect();
                    for i in 0..n_local {
                        for j in 0..n_local {
                            let p = a_hi.slot(ids[i], ids[j]);
                            a_hi.values[p] +=
                                w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        }
                        b_hi[ids[i]] += w * f.value_at(x) * table.values[q][i];
                    }
                }
            }
            let system = apply_dirichlet(&a_hi, &b_hi, &space).unwrap();
            let report_hi = solve(&space, &system, 1e-12).unwrap();
            let worst = report
                .field
                .coefficients
                .iter()
                .zip(&report_hi.field.coefficients)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(worst <= 1e-8, "k={k}: degree sweep moved coefficients by {worst}");
        }
    }

    #[test]
    fn discrete_solution_converges_on_the_disk() {
        // Light end-to-end check that the whole pipeline converges at the
        // pointwise rate k+1 (the full studies live in the harness).
        let u = DiskSolution { radius: 1.0 };
        let f = NegLaplacian(&u);
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for h in [0.4, 0.2, 0.1] {
            let space = disk_space(h, 2);
            let report = solve_poisson(&space, &f, 1e-12).unwrap();
            let norms = error_norms(&space, &report.field, &u).unwrap();
            hs.push(space.mesh.h);
            errs.push(norms.linf);
        }
        let slope = {
            let n = hs.len() as f64;
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for (&h, &e) in hs.iter().zip(&errs) {
                let (x, y) = (h.ln(), e.ln());
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        assert!(slope >= 2.7, "observed L-infinity order {slope}: errors {errs:?}");
    }

    #[test]
    fn matrix_market_export_round_trips_entries() {
        let space = disk_space(0.4, 1);
        let a = assemble_stiffness(&space).unwrap();
        let text = a.to_matrix_market();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix coordinate real symmetric");
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(header[0], a.n);
        let mut count = 0;
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (i, j): (usize, usize) = (parts[0].parse().unwrap(), parts[1].parse().unwrap());
            let v: f64 = parts[2].parse().unwrap();
            assert!(j <= i);
            assert_eq!(v.to_bits(), a.get(i - 1, j - 1).to_bits());
            count += 1;
        }
        assert_eq!(count, header[2]);
    }
}
