//! P1 finite elements on a [`TriMesh`] with homogeneous Dirichlet data.
//!
//! Matrices and load vectors are indexed by interior vertices only; boundary
//! coefficients of every [`FeFunction`] are zero and never enter a solve.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::flux::{FluxParams, Grad2};
use crate::mesh::{FeFunction, TriMesh};
use crate::noise::NoiseModel;

/// Symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSpd {
    /// Builds a matrix from a sorted, per-row column pattern with zero values.
    fn with_pattern(rows: &[BTreeSet<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows {
            cols.extend(r.iter().copied());
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Self {
            dim: rows.len(),
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    /// Dense rows to sparse, dropping exact zeros off the diagonal.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let pattern: Vec<BTreeSet<usize>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (0..r.len()).filter(|&j| j == i || r[j] != 0.0).collect())
            .collect();
        let mut m = Self::with_pattern(&pattern);
        for (i, r) in rows.iter().enumerate() {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.vals[k] = r[m.cols[k]];
            }
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// `self + alpha * other` for matrices sharing one sparsity pattern.
    pub fn add_scaled(&self, alpha: f64, other: &SparseSpd) -> SparseSpd {
        assert!(
            self.row_ptr == other.row_ptr && self.cols == other.cols,
            "pattern mismatch"
        );
        let vals = self
            .vals
            .iter()
            .zip(&other.vals)
            .map(|(a, b)| a + alpha * b)
            .collect();
        SparseSpd {
            vals,
            ..self.clone()
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self
            .vals
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in out.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.cols[k]] = self.vals[k];
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Stops once `|r| <= 1e-12 |b|` or `|r| <= 1e-14`; gives up after `10 * dim` iterations.
pub fn solve_spd(a: &SparseSpd, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    let tol = (1e-12 * b_norm).max(1e-14);
    if b_norm <= tol {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_iter = 10 * n.max(1);
    for _ in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: norm2(&r) / b_norm,
    })
}

/// Three-point edge-midpoint rule on a triangle, exact up to total degree 2.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureRule;

impl QuadratureRule {
    /// Barycentric coordinates of the quadrature points.
    pub const POINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
    /// Weights relative to the triangle area.
    pub const WEIGHTS: [f64; 3] = [1.0 / 3.0; 3];
}

/// Squared distances between two finite element functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub l2_dist_sq: f64,
    pub h1_semi_dist_sq: f64,
}

/// Element geometry and DOF bookkeeping for P1 elements on one mesh.
#[derive(Debug, Clone)]
pub struct P1Space {
    mesh: TriMesh,
    dof_of: Vec<Option<usize>>,
    interior: Vec<usize>,
    areas: Vec<f64>,
    basis_grads: Vec<[Grad2; 3]>,
    template: SparseSpd,
    scatter: Vec<[[Option<usize>; 3]; 3]>,
}

impl P1Space {
    pub fn new(mesh: TriMesh) -> Self {
        let mut dof_of = vec![None; mesh.num_vertices()];
        let mut interior = Vec::new();
        for (v, &b) in mesh.boundary_mask().iter().enumerate() {
            if !b {
                dof_of[v] = Some(interior.len());
                interior.push(v);
            }
        }

        let mut areas = Vec::with_capacity(mesh.triangles().len());
        let mut basis_grads = Vec::with_capacity(mesh.triangles().len());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let [a, b, c] = tri.map(|i| mesh.vertices()[i]);
            let area = mesh.area(t);
            let inv = 1.0 / (2.0 * area);
            // grad of barycentric coordinate i is the rotated opposite edge over 2|T|
            let g = |p: [f64; 2], q: [f64; 2]| Grad2::new((p[1] - q[1]) * inv, (q[0] - p[0]) * inv);
            basis_grads.push([g(b, c), g(c, a), g(a, b)]);
            areas.push(area);
        }

        let mut rows = vec![BTreeSet::new(); interior.len()];
        for tri in mesh.triangles() {
            for &a in tri {
                if let Some(i) = dof_of[a] {
                    rows[i].extend(tri.iter().filter_map(|&b| dof_of[b]));
                }
            }
        }
        let template = SparseSpd::with_pattern(&rows);
        let scatter = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [[None; 3]; 3];
                for (la, &a) in tri.iter().enumerate() {
                    for (lb, &b) in tri.iter().enumerate() {
                        if let (Some(i), Some(j)) = (dof_of[a], dof_of[b]) {
                            s[la][lb] = template.position(i, j);
                        }
                    }
                }
                s
            })
            .collect();

        Self {
            mesh,
            dof_of,
            interior,
            areas,
            basis_grads,
            template,
            scatter,
        }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn num_dofs(&self) -> usize {
        self.interior.len()
    }

    /// Vertex index of every interior DOF.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn num_elements(&self) -> usize {
        self.areas.len()
    }

    /// Interior coefficients of `f`.
    pub fn restrict(&self, f: &FeFunction) -> Result<Vec<f64>> {
        self.mesh.check(f)?;
        Ok(self.interior.iter().map(|&v| f.coeffs()[v]).collect())
    }

    /// The function with the given interior coefficients and zero boundary values.
    pub fn extend(&self, interior: &[f64]) -> FeFunction {
        assert_eq!(interior.len(), self.num_dofs());
        let mut coeffs = vec![0.0; self.mesh.num_vertices()];
        for (&v, &c) in self.interior.iter().zip(interior) {
            coeffs[v] = c;
        }
        self.mesh
            .function(coeffs)
            .expect("zero boundary by construction")
    }

    fn assemble(&self, local: impl Fn(usize, usize, usize) -> f64) -> SparseSpd {
        let mut m = self.template.clone();
        for (t, s) in self.scatter.iter().enumerate() {
            for la in 0..3 {
                for lb in 0..3 {
                    if let Some(k) = s[la][lb] {
                        m.vals[k] += local(t, la, lb);
                    }
                }
            }
        }
        m
    }

    fn mass_local(&self, t: usize, a: usize, b: usize) -> f64 {
        self.areas[t] * if a == b { 1.0 / 6.0 } else { 1.0 / 12.0 }
    }

    fn stiffness_local(&self, t: usize, a: usize, b: usize) -> f64 {
        self.areas[t] * self.basis_grads[t][a].dot(self.basis_grads[t][b])
    }

    /// Consistent mass matrix over interior DOFs.
    pub fn assemble_mass(&self) -> SparseSpd {
        self.assemble(|t, a, b| self.mass_local(t, a, b))
    }

    /// Stiffness matrix over interior DOFs.
    pub fn assemble_stiffness(&self) -> SparseSpd {
        self.assemble(|t, a, b| self.stiffness_local(t, a, b))
    }

    fn assemble_all_vertices(&self, local: impl Fn(usize, usize, usize) -> f64) -> SparseSpd {
        let tris = self.mesh.triangles();
        let mut rows = vec![BTreeSet::new(); self.mesh.num_vertices()];
        for tri in tris {
            for &a in tri {
                rows[a].extend(tri.iter().copied());
            }
        }
        let mut m = SparseSpd::with_pattern(&rows);
        for (t, tri) in tris.iter().enumerate() {
            for (la, &a) in tri.iter().enumerate() {
                for (lb, &b) in tri.iter().enumerate() {
                    let k = m.position(a, b).expect("pattern");
                    m.vals[k] += local(t, la, lb);
                }
            }
        }
        m
    }

    /// Mass matrix over all vertices, boundary included.
    pub fn assemble_mass_unrestricted(&self) -> SparseSpd {
        self.assemble_all_vertices(|t, a, b| self.mass_local(t, a, b))
    }

    /// Stiffness matrix over all vertices; only positive semi-definite.
    pub fn assemble_stiffness_unrestricted(&self) -> SparseSpd {
        self.assemble_all_vertices(|t, a, b| self.stiffness_local(t, a, b))
    }

    /// Gradient of `f` on element `t`, which is constant for P1.
    pub fn gradient(&self, f: &FeFunction, t: usize) -> Grad2 {
        let c = f.coeffs();
        let g = &self.basis_grads[t];
        self.mesh.triangles()[t]
            .iter()
            .zip(g)
            .fold(Grad2::ZERO, |acc, (&v, &gv)| acc + c[v] * gv)
    }

    pub fn element_gradients(&self, f: &FeFunction) -> Result<Vec<Grad2>> {
        self.mesh.check(f)?;
        Ok((0..self.num_elements())
            .map(|t| self.gradient(f, t))
            .collect())
    }

    /// `sum_T |T| phi(|grad v|)`.
    pub fn energy(&self, params: &FluxParams, v: &FeFunction) -> Result<f64> {
        self.mesh.check(v)?;
        Ok((0..self.num_elements())
            .map(|t| self.areas[t] * params.phi(self.gradient(v, t).norm()))
            .sum())
    }

    /// `(S(grad v), grad xi_i)` for every interior basis function.
    pub fn p_laplace_residual(&self, params: &FluxParams, v: &FeFunction) -> Result<Vec<f64>> {
        self.mesh.check(v)?;
        let mut out = vec![0.0; self.num_dofs()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let s = params.s(self.gradient(v, t));
            for (la, &a) in tri.iter().enumerate() {
                if let Some(i) = self.dof_of[a] {
                    out[i] += self.areas[t] * s.dot(self.basis_grads[t][la]);
                }
            }
        }
        Ok(out)
    }

    /// Derivative of [`Self::p_laplace_residual`] with respect to the interior coefficients.
    pub fn p_laplace_jacobian(&self, params: &FluxParams, v: &FeFunction) -> Result<SparseSpd> {
        self.mesh.check(v)?;
        let mut m = self.template.clone();
        for (t, s) in self.scatter.iter().enumerate() {
            // elements without interior vertices (mesh corners) do not enter
            if s.iter().flatten().all(Option::is_none) {
                continue;
            }
            let d = params.ds(self.gradient(v, t))?;
            let g = &self.basis_grads[t];
            for la in 0..3 {
                let dg = Grad2::new(
                    d[0][0] * g[la].x + d[0][1] * g[la].y,
                    d[1][0] * g[la].x + d[1][1] * g[la].y,
                );
                for lb in 0..3 {
                    if let Some(k) = s[la][lb] {
                        m.vals[k] += self.areas[t] * dg.dot(g[lb]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// Stiffness matrix weighted by `(kappa + |grad v|)^(p-2)` per element: the
    /// secant (Kacanov) linearization of [`Self::p_laplace_residual`] at `v`.
    pub fn p_laplace_secant(&self, params: &FluxParams, v: &FeFunction) -> Result<SparseSpd> {
        self.mesh.check(v)?;
        let mut m = self.template.clone();
        for (t, s) in self.scatter.iter().enumerate() {
            if s.iter().flatten().all(Option::is_none) {
                continue;
            }
            let a = params.kappa() + self.gradient(v, t).norm();
            if a == 0.0 && params.p() < 2.0 {
                return Err(Error::SingularJacobian { p: params.p() });
            }
            let w = self.areas[t] * a.powf(params.p() - 2.0);
            let g = &self.basis_grads[t];
            for la in 0..3 {
                for lb in 0..3 {
                    if let Some(k) = s[la][lb] {
                        m.vals[k] += w * g[la].dot(g[lb]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// `sum_j weights[j] (g_j(., v), xi_i)` by the edge-midpoint rule.
    pub fn noise_load_vector(
        &self,
        model: &NoiseModel,
        v: &FeFunction,
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        self.mesh.check(v)?;
        if weights.len() != model.modes() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} noise modes",
                weights.len(),
                model.modes()
            )));
        }
        let mut out = vec![0.0; self.num_dofs()];
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(out);
        }
        let c = v.coeffs();
        let verts = self.mesh.vertices();
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            for (bary, w) in QuadratureRule::POINTS.iter().zip(QuadratureRule::WEIGHTS) {
                let mut x = [0.0; 2];
                let mut u = 0.0;
                for (k, &vk) in tri.iter().enumerate() {
                    x[0] += bary[k] * verts[vk][0];
                    x[1] += bary[k] * verts[vk][1];
                    u += bary[k] * c[vk];
                }
                let g: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(j, &wj)| wj * model.eval(j, x, u))
                    .sum();
                let scale = self.areas[t] * w * g;
                for (k, &vk) in tri.iter().enumerate() {
                    if let Some(i) = self.dof_of[vk] {
                        out[i] += scale * bary[k];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Load vector `(f, xi_i)` of a pointwise field by the edge-midpoint rule.
    pub fn load_vector(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        let verts = self.mesh.vertices();
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            for (bary, w) in QuadratureRule::POINTS.iter().zip(QuadratureRule::WEIGHTS) {
                let mut x = [0.0; 2];
                for (k, &vk) in tri.iter().enumerate() {
                    x[0] += bary[k] * verts[vk][0];
                    x[1] += bary[k] * verts[vk][1];
                }
                let scale = self.areas[t] * w * f(x);
                for (k, &vk) in tri.iter().enumerate() {
                    if let Some(i) = self.dof_of[vk] {
                        out[i] += scale * bary[k];
                    }
                }
            }
        }
        out
    }

    /// Orthogonal L2 projection onto the space with zero trace.
    pub fn l2_project(&self, mass: &SparseSpd, f: impl Fn([f64; 2]) -> f64) -> Result<FeFunction> {
        let b = self.load_vector(f);
        Ok(self.extend(&solve_spd(mass, &b)?))
    }

    /// Squared L2 and H1-seminorm distances, computed element by element.
    pub fn norms(&self, a: &FeFunction, b: &FeFunction) -> Result<Distances> {
        let d = a.sub(b)?;
        self.mesh.check(&d)?;
        let c = d.coeffs();
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let v = tri.map(|i| c[i]);
            let sum = v[0] + v[1] + v[2];
            let sq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            l2 += self.areas[t] / 12.0 * (sq + sum * sum);
            h1 += self.areas[t] * self.gradient(&d, t).norm_sq();
        }
        Ok(Distances {
            l2_dist_sq: l2,
            h1_semi_dist_sq: h1,
        })
    }

    /// `||V(grad a) - V(grad b)||^2_{L2}`.
    pub fn v_distance_sq(
        &self,
        params: &FluxParams,
        a: &FeFunction,
        b: &FeFunction,
    ) -> Result<f64> {
        self.mesh.check(a)?;
        self.mesh.check(b)?;
        Ok((0..self.num_elements())
            .map(|t| {
                let dv = params.v(self.gradient(a, t)) - params.v(self.gradient(b, t));
                self.areas[t] * dv.norm_sq()
            })
            .sum())
    }

    /// Smallest eigenpair of `S u = mu M u` by inverse iteration.
    ///
    /// Seeded with the interpolant of `sin(pi x) sin(pi y)`; the eigenvector is
    /// `M`-normalized and positive at the vertex nearest the centre.
    pub fn min_eigenpair(
        &self,
        stiffness: &SparseSpd,
        mass: &SparseSpd,
    ) -> Result<(f64, FeFunction)> {
        const MAX_ITER: usize = 500;
        use std::f64::consts::PI;
        let seed = self
            .mesh
            .interpolate(|[x, y]| (PI * x).sin() * (PI * y).sin());
        let mut u = self.restrict(&seed)?;
        let normalize = |u: &mut Vec<f64>| {
            let s = mass.inner(u, u).sqrt();
            u.iter_mut().for_each(|x| *x /= s);
        };
        normalize(&mut u);
        let mut mu = stiffness.inner(&u, &u);
        for _ in 0..MAX_ITER {
            let mut next = solve_spd(stiffness, &mass.mul_vec(&u))?;
            normalize(&mut next);
            let mu_next = stiffness.inner(&next, &next);
            u = next;
            let mu_prev = std::mem::replace(&mut mu, mu_next);
            let mu_vec = mass.mul_vec(&u);
            let su = stiffness.mul_vec(&u);
            let res: Vec<f64> = su.iter().zip(&mu_vec).map(|(s, m)| s - mu * m).collect();
            if (mu - mu_prev).abs() <= 1e-10 * mu && norm2(&res) <= 1e-9 * norm2(&mu_vec) {
                let centre = self.mesh.nearest_vertex([0.5, 0.5]);
                let sign = self.dof_of[centre]
                    .map(|i| if u[i] < 0.0 { -1.0 } else { 1.0 })
                    .unwrap_or(1.0);
                u.iter_mut().for_each(|x| *x *= sign);
                return Ok((mu, self.extend(&u)));
            }
        }
        Err(Error::EigenDiverged {
            iterations: MAX_ITER,
        })
    }
}
