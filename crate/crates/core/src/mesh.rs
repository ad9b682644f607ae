//! Structured triangulations of the unit square and their uniform refinements.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Identifies a mesh by its base resolution and refinement depth.
///
/// Construction is deterministic, so two meshes with equal ids are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeshId {
    pub n0: usize,
    pub level: usize,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    id: MeshId,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h_max: f64,
    /// For each refinement step `1..=level`, the parent edge of every midpoint
    /// vertex appended at that step.
    midpoints: Arc<Vec<Vec<[usize; 2]>>>,
}

/// A continuous piecewise-linear function given by its nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    mesh: MeshId,
    coeffs: Vec<f64>,
}

fn on_boundary(v: [f64; 2]) -> bool {
    v.iter().any(|&c| c == 0.0 || c == 1.0)
}

/// `n x n` lattice of the unit square, every cell split along its lower-left to
/// upper-right diagonal.
pub fn unit_square_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "mesh resolution must be >= 1".into(),
        ));
    }
    let stride = n + 1;
    let vertices: Vec<[f64; 2]> = (0..stride)
        .flat_map(|j| (0..stride).map(move |i| [i as f64 / n as f64, j as f64 / n as f64]))
        .collect();
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let ll = j * stride + i;
            let lr = ll + 1;
            let ul = ll + stride;
            let ur = ul + 1;
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }
    let boundary = vertices.iter().copied().map(on_boundary).collect();
    Ok(TriMesh {
        id: MeshId { n0: n, level: 0 },
        vertices,
        triangles,
        boundary,
        h_max: std::f64::consts::SQRT_2 / n as f64,
        midpoints: Arc::new(Vec::new()),
    })
}

/// Splits every triangle into four congruent children through its edge midpoints.
pub fn refine_uniform(mesh: &TriMesh) -> TriMesh {
    let edges: BTreeSet<[usize; 2]> = mesh
        .triangles
        .iter()
        .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
        .map(|[a, b]| [a.min(b), a.max(b)])
        .collect();
    let edges: Vec<[usize; 2]> = edges.into_iter().collect();
    let base = mesh.vertices.len();

    let mut vertices = mesh.vertices.clone();
    vertices.extend(edges.iter().map(|&[a, b]| {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }));
    let mid = |a: usize, b: usize| -> usize {
        let key = [a.min(b), a.max(b)];
        base + edges.binary_search(&key).expect("edge of the parent mesh")
    };

    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }

    let boundary = vertices.iter().copied().map(on_boundary).collect();
    let mut history = (*mesh.midpoints).clone();
    history.push(edges);
    TriMesh {
        id: MeshId {
            n0: mesh.id.n0,
            level: mesh.id.level + 1,
        },
        vertices,
        triangles,
        boundary,
        h_max: 0.5 * mesh.h_max,
        midpoints: Arc::new(history),
    }
}

/// Base mesh `n0` refined `levels` times.
pub fn refined_square(n0: usize, levels: usize) -> Result<TriMesh> {
    let mut mesh = unit_square_mesh(n0)?;
    for _ in 0..levels {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

impl TriMesh {
    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn level(&self) -> usize {
        self.id.level
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Signed area of triangle `t` (positive for counter-clockwise orientation).
    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let p = self.triangles[t].map(|i| self.vertices[i]);
        (0..3)
            .map(|k| {
                let (u, v) = (p[k], p[(k + 1) % 3]);
                (u[0] - v[0]).hypot(u[1] - v[1])
            })
            .fold(0.0, f64::max)
    }

    /// Radius of the inscribed circle of triangle `t`.
    pub fn inradius(&self, t: usize) -> f64 {
        let p = self.triangles[t].map(|i| self.vertices[i]);
        let perimeter: f64 = (0..3)
            .map(|k| {
                let (u, v) = (p[k], p[(k + 1) % 3]);
                (u[0] - v[0]).hypot(u[1] - v[1])
            })
            .sum();
        2.0 * self.area(t).abs() / perimeter
    }

    /// Index of the vertex closest to `point`.
    pub fn nearest_vertex(&self, point: [f64; 2]) -> usize {
        let dist = |v: &[f64; 2]| (v[0] - point[0]).powi(2) + (v[1] - point[1]).powi(2);
        (0..self.vertices.len())
            .min_by(|&a, &b| dist(&self.vertices[a]).total_cmp(&dist(&self.vertices[b])))
            .expect("mesh has vertices")
    }

    /// Nodal interpolant of `f`, with zero boundary values enforced.
    pub fn interpolate(&self, mut f: impl FnMut([f64; 2]) -> f64) -> FeFunction {
        let coeffs = self
            .vertices
            .iter()
            .zip(&self.boundary)
            .map(|(&v, &b)| if b { 0.0 } else { f(v) })
            .collect();
        FeFunction {
            mesh: self.id,
            coeffs,
        }
    }

    pub fn zero_function(&self) -> FeFunction {
        FeFunction {
            mesh: self.id,
            coeffs: vec![0.0; self.vertices.len()],
        }
    }

    /// Wraps nodal values; boundary entries must be zero.
    pub fn function(&self, coeffs: Vec<f64>) -> Result<FeFunction> {
        if coeffs.len() != self.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.vertices.len(),
                coeffs.len()
            )));
        }
        if coeffs
            .iter()
            .zip(&self.boundary)
            .any(|(&c, &b)| b && c != 0.0)
        {
            return Err(Error::InvalidArgument(
                "non-zero boundary coefficient".into(),
            ));
        }
        Ok(FeFunction {
            mesh: self.id,
            coeffs,
        })
    }

    pub fn check(&self, f: &FeFunction) -> Result<()> {
        if f.mesh != self.id {
            return Err(Error::MeshMismatch {
                expected: self.id,
                found: f.mesh,
            });
        }
        Ok(())
    }
}

impl FeFunction {
    pub fn mesh_id(&self) -> MeshId {
        self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient-wise `self - other`; both must live on the same mesh.
    pub fn sub(&self, other: &FeFunction) -> Result<FeFunction> {
        if self.mesh != other.mesh {
            return Err(Error::MeshMismatch {
                expected: self.mesh,
                found: other.mesh,
            });
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(FeFunction {
            mesh: self.mesh,
            coeffs,
        })
    }

    pub fn scaled(&self, factor: f64) -> FeFunction {
        FeFunction {
            mesh: self.mesh,
            coeffs: self.coeffs.iter().map(|c| factor * c).collect(),
        }
    }

    /// Arithmetic mean of functions on one mesh.
    pub fn mean<'a>(fs: impl IntoIterator<Item = &'a FeFunction>) -> Result<FeFunction> {
        let mut it = fs.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("mean of no functions".into()))?;
        let mut acc = first.coeffs.clone();
        let mut count = 1usize;
        for f in it {
            if f.mesh != first.mesh {
                return Err(Error::MeshMismatch {
                    expected: first.mesh,
                    found: f.mesh,
                });
            }
            acc.iter_mut().zip(&f.coeffs).for_each(|(a, c)| *a += c);
            count += 1;
        }
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(FeFunction {
            mesh: first.mesh,
            coeffs: acc,
        })
    }
}

/// Represents `coarse` exactly on `fine`, a uniform-refinement descendant of its mesh.
pub fn prolongate(coarse: &FeFunction, fine: &TriMesh) -> Result<FeFunction> {
    let (cid, fid) = (coarse.mesh, fine.id);
    if cid.n0 != fid.n0 || cid.level > fid.level {
        return Err(Error::MeshMismatch {
            expected: fid,
            found: cid,
        });
    }
    let mut coeffs = coarse.coeffs.clone();
    for step in &fine.midpoints[cid.level..fid.level] {
        coeffs.reserve(step.len());
        for &[a, b] in step {
            let value = 0.5 * (coeffs[a] + coeffs[b]);
            coeffs.push(value);
        }
    }
    debug_assert_eq!(coeffs.len(), fine.num_vertices());
    Ok(FeFunction { mesh: fid, coeffs })
}
