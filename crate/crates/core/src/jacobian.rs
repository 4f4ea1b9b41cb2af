//! Per-element Jacobians of piecewise-linear maps and the weighted Laplacian.
//!
//! For an element with source edge matrix `E = [V₁−V₀ … V_d−V₀]` (expressed in
//! a per-face tangent frame for surfaces in 3D) and target vertices `W`, the
//! Jacobian is `J = [W₁−W₀ … W_d−W₀] E⁻¹`. The rows of `E⁻¹` are the gradients
//! of the barycentric coordinates `1..d`; the gradient of coordinate 0 is minus
//! their sum.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::mesh::Mesh;
use crate::smallmat::{assert_dim, inverse, Mat, Vector};
use crate::sparse::CscMatrix;

#[derive(Clone, Debug)]
pub struct GradientOperator<const D: usize> {
    elements: Vec<usize>,
    inv_edges: Vec<Mat<D>>,
    num_vertices: usize,
    pattern: LaplacianPattern,
}

impl<const D: usize> GradientOperator<D> {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        assert_dim::<D>();
        if mesh.element_dim() != D {
            return Err(invalid(format!(
                "operator dimension {D} does not match a mesh of {}-simplices",
                mesh.element_dim()
            )));
        }
        let v = mesh.vertices();
        let surface = D == 2 && mesh.embed_dim() == 3;
        let mut inv_edges = Vec::with_capacity(mesh.num_elements());
        for (i, elem) in mesh.elements().enumerate() {
            let e = if surface {
                tangent_edges::<D>(v[elem[0]], v[elem[1]], v[elem[2]])
            } else {
                Mat::<D>::from_fn(|r, c| v[elem[c + 1]][r] - v[elem[0]][r])
            };
            let inv = inverse(&e).ok_or(Error::DegenerateElement {
                element: i,
                measure: 0.0,
                threshold: 0.0,
            })?;
            inv_edges.push(inv);
        }
        let elements: Vec<usize> = mesh.elements().flatten().copied().collect();
        let pattern = LaplacianPattern::new(&elements, D + 1, mesh.num_vertices());
        Ok(Self {
            elements,
            inv_edges,
            num_vertices: mesh.num_vertices(),
            pattern,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.inv_edges.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn element(&self, i: usize) -> &[usize] {
        &self.elements[i * (D + 1)..(i + 1) * (D + 1)]
    }

    /// Gradient of the `k`-th barycentric coordinate of element `i`.
    pub fn barycentric_gradient(&self, i: usize, k: usize) -> Vector<D> {
        let inv = &self.inv_edges[i];
        if k == 0 {
            -inv.row_sum().transpose()
        } else {
            inv.row(k - 1).transpose()
        }
    }

    /// Jacobian of element `i` under the map `w`.
    pub fn jacobian(&self, i: usize, w: &[Vector<D>]) -> Mat<D> {
        let elem = self.element(i);
        let w0 = w[elem[0]];
        let ew = Mat::<D>::from_fn(|r, c| w[elem[c + 1]][r] - w0[r]);
        ew * self.inv_edges[i]
    }

    pub fn apply(&self, w: &[Vector<D>]) -> Result<Vec<Mat<D>>> {
        let mut out = vec![Mat::<D>::zeros(); self.num_elements()];
        self.apply_into(w, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, w: &[Vector<D>], out: &mut [Mat<D>]) -> Result<()> {
        if w.len() != self.num_vertices {
            return Err(Error::ShapeMismatch {
                expected: self.num_vertices,
                actual: w.len(),
            });
        }
        if out.len() != self.num_elements() {
            return Err(Error::ShapeMismatch {
                expected: self.num_elements(),
                actual: out.len(),
            });
        }
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, j)| *j = self.jacobian(i, w));
        Ok(())
    }

    /// `Gᵀ R` under the unweighted Frobenius pairing.
    pub fn apply_adjoint(&self, r: &[Mat<D>]) -> Result<Vec<Vector<D>>> {
        if r.len() != self.num_elements() {
            return Err(Error::ShapeMismatch {
                expected: self.num_elements(),
                actual: r.len(),
            });
        }
        let local: Vec<Mat<D>> = r
            .par_iter()
            .zip(self.inv_edges.par_iter())
            .map(|(ri, inv)| ri * inv.transpose())
            .collect();
        let mut out = vec![Vector::<D>::zeros(); self.num_vertices];
        for (i, m) in local.iter().enumerate() {
            let elem = self.element(i);
            let mut sum = Vector::<D>::zeros();
            for c in 0..D {
                let col = m.column(c);
                out[elem[c + 1]] += col;
                sum += col;
            }
            out[elem[0]] -= sum;
        }
        Ok(out)
    }

    /// `L = Σ μ_i G_iᵀ G_i` as a scalar (per-coordinate) sparse matrix.
    pub fn assemble_weighted_laplacian(&self, mu: &[f64]) -> Result<WeightedLaplacian> {
        if mu.len() != self.num_elements() {
            return Err(Error::ShapeMismatch {
                expected: self.num_elements(),
                actual: mu.len(),
            });
        }
        if let Some((i, &m)) = mu.iter().enumerate().find(|(_, &m)| !(m > 0.0 && m.is_finite())) {
            return Err(invalid(format!("weight {i} must be positive and finite (got {m})")));
        }
        let k = D + 1;
        let mut values = vec![0.0; self.pattern.row_idx.len()];
        for (i, &m) in mu.iter().enumerate() {
            let g: Vec<Vector<D>> = (0..k).map(|a| self.barycentric_gradient(i, a)).collect();
            let slots = &self.pattern.scatter[i * k * k..(i + 1) * k * k];
            for a in 0..k {
                for b in 0..k {
                    values[slots[a * k + b]] += m * g[a].dot(&g[b]);
                }
            }
        }
        Ok(WeightedLaplacian {
            matrix: CscMatrix {
                col_ptr: self.pattern.col_ptr.clone(),
                row_idx: self.pattern.row_idx.clone(),
                values,
            },
            mu: mu.to_vec(),
        })
    }
}

/// Edge matrix of a 3D triangle in the frame `e₁ = (V₁−V₀)/‖·‖`, `e₂ = n × e₁`.
fn tangent_edges<const D: usize>(v0: [f64; 3], v1: [f64; 3], v2: [f64; 3]) -> Mat<D> {
    let a = nalgebra::Vector3::from(v1) - nalgebra::Vector3::from(v0);
    let b = nalgebra::Vector3::from(v2) - nalgebra::Vector3::from(v0);
    let e1 = a.normalize();
    let n = a.cross(&b);
    let e2 = n.cross(&e1).normalize();
    Mat::<D>::from_fn(|r, c| {
        let edge = if c == 0 { &a } else { &b };
        if r == 0 {
            edge.dot(&e1)
        } else {
            edge.dot(&e2)
        }
    })
}

/// Sparsity pattern of the vertex adjacency (full symmetric, sorted CSC) and
/// the slot each element-local entry scatters into.
#[derive(Clone, Debug)]
struct LaplacianPattern {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    scatter: Vec<usize>,
}

impl LaplacianPattern {
    fn new(elements: &[usize], k: usize, n: usize) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for elem in elements.chunks(k) {
            for &a in elem {
                for &b in elem {
                    cols[b].push(a);
                }
            }
        }
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for c in &cols {
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let mut scatter = Vec::with_capacity(elements.len() * k);
        for elem in elements.chunks(k) {
            for &a in elem {
                for &b in elem {
                    let rows = &row_idx[col_ptr[b]..col_ptr[b + 1]];
                    let pos = rows.binary_search(&a).expect("entry in pattern");
                    scatter.push(col_ptr[b] + pos);
                }
            }
        }
        Self {
            col_ptr,
            row_idx,
            scatter,
        }
    }
}

/// `Σ μ_i G_iᵀ G_i` together with the weights it was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedLaplacian {
    pub matrix: CscMatrix,
    pub mu: Vec<f64>,
}
