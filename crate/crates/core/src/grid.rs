//! Uniform 1D/2D grids with node-centered scalars and face-centered vectors.
//!
//! Nodes are numbered row-major, `index = j * nx + i`, so iteration order is
//! lexicographic in `(y, x)`. Faces are split into two families: x-faces
//! between `(i, j)` and `(i + 1, j)`, followed (in 2D) by y-faces between
//! `(i, j)` and `(i, j + 1)`. A "per-face array" is a flat `Vec<f64>` over
//! x-faces then y-faces.
//!
//! The gradient is the two-point difference on each face and the divergence
//! is its negative adjoint under the trapezoidal node weights and the
//! per-family face weights, so summation by parts holds exactly for fields
//! that vanish on the boundary.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

/// Sparse face stencil: the normal difference uses `normal`, the averaged
/// transverse difference (2D only) uses `transverse`.
#[derive(Debug, Clone)]
pub struct FaceStencil {
    pub normal: [(usize, f64); 2],
    pub transverse: Vec<(usize, f64)>,
}

impl FaceStencil {
    pub fn normal_diff(&self, u: &[f64]) -> f64 {
        self.normal[0].1 * u[self.normal[0].0] + self.normal[1].1 * u[self.normal[1].0]
    }

    pub fn transverse_diff(&self, u: &[f64]) -> f64 {
        self.transverse.iter().map(|&(k, c)| c * u[k]).sum()
    }

    pub fn magnitude(&self, u: &[f64]) -> f64 {
        let a = self.normal_diff(u);
        let b = self.transverse_diff(u);
        (a * a + b * b).sqrt()
    }
}

impl Grid {
    pub fn new_1d(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::build(1, [a, 0.0], [b, 0.0], [n, 1])
    }

    pub fn new_2d(x: (f64, f64), y: (f64, f64), n: (usize, usize)) -> Result<Self> {
        Self::build(2, [x.0, y.0], [x.1, y.1], [n.0, n.1])
    }

    fn build(dim: usize, lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        let mut h = [1.0; 2];
        for axis in 0..dim {
            if n[axis] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} needs at least 3 nodes, got {}",
                    n[axis]
                )));
            }
            if !(hi[axis] > lo[axis]) || !lo[axis].is_finite() || !hi[axis].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has empty extent [{}, {}]",
                    lo[axis], hi[axis]
                )));
            }
            h[axis] = (hi[axis] - lo[axis]) / (n[axis] - 1) as f64;
        }
        Ok(Grid { dim, lo, hi, n, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.n[0]
    }

    pub fn ny(&self) -> usize {
        self.n[1]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn h_min(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(0.0, f64::max)
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn num_nodes(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn num_x_faces(&self) -> usize {
        (self.n[0] - 1) * self.n[1]
    }

    pub fn num_y_faces(&self) -> usize {
        if self.dim == 2 {
            self.n[0] * (self.n[1] - 1)
        } else {
            0
        }
    }

    pub fn num_faces(&self) -> usize {
        self.num_x_faces() + self.num_y_faces()
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    pub fn node_ij(&self, k: usize) -> (usize, usize) {
        (k % self.n[0], k / self.n[0])
    }

    pub fn node_coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(k);
        let x = self.lo[0] + i as f64 * self.h[0];
        let y = if self.dim == 2 {
            self.lo[1] + j as f64 * self.h[1]
        } else {
            0.0
        };
        (x, y)
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = self.node_ij(k);
        i == 0 || i + 1 == self.n[0] || (self.dim == 2 && (j == 0 || j + 1 == self.n[1]))
    }

    /// Trapezoidal quadrature weights (cell volumes, halved per boundary axis).
    pub fn node_weights(&self) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|k| {
                let (i, j) = self.node_ij(k);
                let mut w = self.h[0] * edge_factor(i, self.n[0]);
                if self.dim == 2 {
                    w *= self.h[1] * edge_factor(j, self.n[1]);
                }
                w
            })
            .collect()
    }

    /// Per-family face quadrature weights; each family integrates over Ω.
    pub fn face_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.num_faces());
        for j in 0..self.n[1] {
            for _ in 0..self.n[0] - 1 {
                let mut v = self.h[0];
                if self.dim == 2 {
                    v *= self.h[1] * edge_factor(j, self.n[1]);
                }
                w.push(v);
            }
        }
        if self.dim == 2 {
            for _ in 0..self.n[1] - 1 {
                for i in 0..self.n[0] {
                    w.push(self.h[1] * self.h[0] * edge_factor(i, self.n[0]));
                }
            }
        }
        w
    }

    /// Face weights normalized so that a scalar face quantity integrates over
    /// Ω once (both families share the domain in 2D).
    pub fn face_measure(&self) -> Vec<f64> {
        let scale = 1.0 / self.dim as f64;
        self.face_weights().into_iter().map(|w| w * scale).collect()
    }

    /// Face midpoints and the two nodes each face joins.
    pub fn face_nodes(&self, f: usize) -> (usize, usize) {
        let nxf = self.num_x_faces();
        if f < nxf {
            let j = f / (self.n[0] - 1);
            let i = f % (self.n[0] - 1);
            (self.node_index(i, j), self.node_index(i + 1, j))
        } else {
            let g = f - nxf;
            let j = g / self.n[0];
            let i = g % self.n[0];
            (self.node_index(i, j), self.node_index(i, j + 1))
        }
    }

    pub fn face_midpoint(&self, f: usize) -> (f64, f64) {
        let (a, b) = self.face_nodes(f);
        let pa = self.node_coords(a);
        let pb = self.node_coords(b);
        (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1))
    }

    /// Axis normal to face `f` (0 for x-faces, 1 for y-faces).
    pub fn face_axis(&self, f: usize) -> usize {
        usize::from(f >= self.num_x_faces())
    }

    /// Stencils for every face, in per-face array order.
    pub fn face_stencils(&self) -> Vec<FaceStencil> {
        (0..self.num_faces()).map(|f| self.face_stencil(f)).collect()
    }

    fn face_stencil(&self, f: usize) -> FaceStencil {
        let (a, b) = self.face_nodes(f);
        let axis = self.face_axis(f);
        let inv_h = 1.0 / self.h[axis];
        let normal = [(a, -inv_h), (b, inv_h)];
        if self.dim == 1 {
            return FaceStencil {
                normal,
                transverse: Vec::new(),
            };
        }
        // Average the transverse differences on the (up to four) neighboring
        // faces of the other family.
        let other = 1 - axis;
        let n_other = self.n[other];
        let inv_ht = 1.0 / self.h[other];
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(8);
        let mut count = 0usize;
        for &node in &[a, b] {
            let (i, j) = self.node_ij(node);
            let pos = if other == 0 { i } else { j };
            let shifted = |p: usize| -> usize {
                if other == 0 {
                    self.node_index(p, j)
                } else {
                    self.node_index(i, p)
                }
            };
            if pos > 0 {
                terms.push((node, inv_ht));
                terms.push((shifted(pos - 1), -inv_ht));
                count += 1;
            }
            if pos + 1 < n_other {
                terms.push((shifted(pos + 1), inv_ht));
                terms.push((node, -inv_ht));
                count += 1;
            }
        }
        let scale = 1.0 / count as f64;
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (k, c) in terms {
            match merged.iter_mut().find(|(m, _)| *m == k) {
                Some(entry) => entry.1 += c * scale,
                None => merged.push((k, c * scale)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        merged.sort_by_key(|&(k, _)| k);
        FaceStencil {
            normal,
            transverse: merged,
        }
    }

    /// Same grid shape check used by the field operations.
    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("fields live on different grids".into()))
        }
    }
}

fn edge_factor(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Node-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} node values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.num_nodes())
            .map(|k| {
                let (x, y) = grid.node_coords(k);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn pin_boundary(&mut self) {
        for k in 0..self.values.len() {
            if self.grid.is_boundary(k) {
                self.values[k] = 0.0;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Weighted L^p norm under the trapezoidal weights.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let w = self.grid.node_weights();
        let s: f64 = w
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.abs().powf(p))
            .sum();
        s.powf(1.0 / p)
    }
}

/// Face-centered vector field, one component array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceVectorField {
    pub fn from_components(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.num_x_faces() || y.len() != grid.num_y_faces() {
            return Err(Error::ShapeMismatch(format!(
                "face arrays must have lengths ({}, {}), got ({}, {})",
                grid.num_x_faces(),
                grid.num_y_faces(),
                x.len(),
                y.len()
            )));
        }
        Ok(FaceVectorField { grid, x, y })
    }

    /// Flat per-face array (x-faces then y-faces).
    pub fn flat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).copied().collect()
    }

    /// Per-family quadrature of the componentwise product.
    pub fn inner(&self, other: &FaceVectorField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let w = self.grid.face_weights();
        Ok(self
            .flat()
            .iter()
            .zip(other.flat())
            .zip(&w)
            .map(|((a, b), w)| w * a * b)
            .sum())
    }
}

pub fn gradient(u: &ScalarField) -> FaceVectorField {
    let g = u.grid;
    let nxf = g.num_x_faces();
    let mut x = Vec::with_capacity(nxf);
    let mut y = Vec::with_capacity(g.num_y_faces());
    for f in 0..g.num_faces() {
        let (a, b) = g.face_nodes(f);
        let d = (u.values[b] - u.values[a]) / g.h(g.face_axis(f));
        if f < nxf {
            x.push(d);
        } else {
            y.push(d);
        }
    }
    FaceVectorField { grid: g, x, y }
}

/// Negative adjoint of [`gradient`]; zero on boundary nodes.
pub fn divergence(q: &FaceVectorField) -> ScalarField {
    let g = q.grid;
    let mut out = vec![0.0; g.num_nodes()];
    let nxf = g.num_x_faces();
    let flat = q.flat();
    for (f, &v) in flat.iter().enumerate() {
        let (a, b) = g.face_nodes(f);
        let inv_h = 1.0 / g.h(usize::from(f >= nxf));
        out[a] += v * inv_h;
        out[b] -= v * inv_h;
    }
    for (k, o) in out.iter_mut().enumerate() {
        if g.is_boundary(k) {
            *o = 0.0;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// |∇u| per face: absolute difference in 1D; in 2D the normal difference
/// combined with the average of the neighboring transverse differences.
pub fn face_gradient_magnitude(u: &ScalarField) -> Vec<f64> {
    face_gradient_magnitude_with(&u.grid.face_stencils(), &u.values)
}

pub fn face_gradient_magnitude_with(stencils: &[FaceStencil], u: &[f64]) -> Vec<f64> {
    stencils.iter().map(|s| s.magnitude(u)).collect()
}

pub fn inner_product(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    u.grid.ensure_same(&v.grid)?;
    let w = u.grid.node_weights();
    Ok(w.iter()
        .zip(&u.values)
        .zip(&v.values)
        .map(|((w, a), b)| w * a * b)
        .sum())
}

/// Average of per-face values over the faces touching each node.
pub fn faces_to_nodes(grid: &Grid, face_values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; grid.num_nodes()];
    let mut count = vec![0u32; grid.num_nodes()];
    for (f, v) in face_values.iter().enumerate() {
        let (a, b) = grid.face_nodes(f);
        sum[a] += v;
        sum[b] += v;
        count[a] += 1;
        count[b] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}
