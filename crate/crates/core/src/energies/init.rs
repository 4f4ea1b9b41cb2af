//! Initial maps: Tutte embeddings (disk surfaces, tet volumes) and a two-pin
//! least-squares conformal map.

use std::collections::BTreeSet;

use crate::error::{invalid, Error, Result};
use crate::jacobian::GradientOperator;
use crate::mesh::{boundary_loop, boundary_vertices, HandleConstraints, Mesh};
use crate::smallmat::Vector;
use crate::sparse::{CscMatrix, PinnedCholesky};

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Unique undirected edges `(i, j)` with `i < j`, sorted.
fn edges(mesh: &Mesh) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for elem in mesh.elements() {
        for a in 0..elem.len() {
            for b in a + 1..elem.len() {
                let (i, j) = (elem[a].min(elem[b]), elem[a].max(elem[b]));
                set.insert((i, j));
            }
        }
    }
    set.into_iter().collect()
}

/// Graph Laplacian with weights `1/‖V_i − V_j‖`, plus unit diagonals for
/// vertices no element references (they are pinned anyway).
fn tutte_matrix(mesh: &Mesh) -> CscMatrix {
    let v = mesh.vertices();
    let mut t = Vec::new();
    for (i, j) in edges(mesh) {
        let w = 1.0 / dist(v[i], v[j]);
        t.push((i, i, w));
        t.push((j, j, w));
        t.push((i, j, -w));
        t.push((j, i, -w));
    }
    for u in mesh.unreferenced_vertices() {
        t.push((u, u, 1.0));
    }
    CscMatrix::from_triplets(mesh.num_vertices(), &t)
}

fn solve_pinned(
    a: &CscMatrix,
    pinned: Vec<(usize, Vec<f64>)>,
    dim: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut pinned = pinned;
    pinned.sort_by_key(|p| p.0);
    let ids: Vec<usize> = pinned.iter().map(|p| p.0).collect();
    let mut chol = PinnedCholesky::new(a, &ids)?;
    chol.factorize(a)?;
    let rhs = vec![vec![0.0; a.dim()]; dim];
    let values: Vec<Vec<f64>> = (0..dim)
        .map(|c| pinned.iter().map(|p| p.1[c]).collect())
        .collect();
    chol.solve(a, &rhs, &values)
}

/// Tutte embedding of a disk-topology triangle mesh onto the unit circle,
/// with boundary vertices spaced by arc length.
pub fn tutte_disk(mesh: &Mesh) -> Result<Vec<Vector<2>>> {
    if mesh.element_dim() != 2 {
        return Err(invalid("the disk Tutte embedding needs a triangle mesh"));
    }
    check_connected(mesh)?;
    let lp = boundary_loop(mesh)?;
    let v = mesh.vertices();
    let mut arc = vec![0.0; lp.len()];
    for k in 1..lp.len() {
        arc[k] = arc[k - 1] + dist(v[lp[k - 1]], v[lp[k]]);
    }
    let total = arc[lp.len() - 1] + dist(v[lp[lp.len() - 1]], v[lp[0]]);
    let mut pinned: Vec<(usize, Vec<f64>)> = lp
        .iter()
        .zip(&arc)
        .map(|(&id, &s)| {
            let theta = std::f64::consts::TAU * s / total;
            (id, vec![theta.cos(), theta.sin()])
        })
        .collect();
    for u in mesh.unreferenced_vertices() {
        pinned.push((u, vec![v[u][0], v[u][1]]));
    }
    let a = tutte_matrix(mesh);
    let cols = solve_pinned(&a, pinned, 2)?;
    Ok((0..mesh.num_vertices())
        .map(|i| Vector::<2>::new(cols[0][i], cols[1][i]))
        .collect())
}

/// Tutte (harmonic) extension into a tet mesh of prescribed boundary
/// positions. Every boundary vertex must be constrained.
pub fn tutte_volume(mesh: &Mesh, boundary: &HandleConstraints) -> Result<Vec<Vector<3>>> {
    if mesh.element_dim() != 3 {
        return Err(invalid("the volume Tutte extension needs a tetrahedral mesh"));
    }
    let given: BTreeSet<usize> = boundary.iter().map(|h| h.0).collect();
    let missing: Vec<usize> = boundary_vertices(mesh)?
        .into_iter()
        .filter(|b| !given.contains(b))
        .collect();
    if !missing.is_empty() {
        return Err(invalid(format!(
            "{} boundary vertices have no target position: {}",
            missing.len(),
            format_ids(&missing)
        )));
    }
    let v = mesh.vertices();
    let mut pinned: Vec<(usize, Vec<f64>)> =
        boundary.iter().map(|(id, p)| (id, p.to_vec())).collect();
    for u in mesh.unreferenced_vertices() {
        if !given.contains(&u) {
            pinned.push((u, v[u].to_vec()));
        }
    }
    let a = tutte_matrix(mesh);
    let cols = solve_pinned(&a, pinned, 3)?;
    Ok((0..mesh.num_vertices())
        .map(|i| Vector::<3>::new(cols[0][i], cols[1][i], cols[2][i]))
        .collect())
}

pub(crate) fn format_ids(ids: &[usize]) -> String {
    const SHOWN: usize = 20;
    let head: Vec<String> = ids.iter().take(SHOWN).map(|i| i.to_string()).collect();
    if ids.len() > SHOWN {
        format!("{}, … ({} more)", head.join(", "), ids.len() - SHOWN)
    } else {
        head.join(", ")
    }
}

fn check_connected(mesh: &Mesh) -> Result<()> {
    let comp = mesh.vertex_components();
    let unreferenced: BTreeSet<usize> = mesh.unreferenced_vertices().into_iter().collect();
    let mut labels = BTreeSet::new();
    for (v, &c) in comp.iter().enumerate() {
        if !unreferenced.contains(&v) {
            labels.insert(c);
        }
    }
    if labels.len() > 1 {
        return Err(Error::Topology(format!(
            "mesh has {} connected components; initializers need a single disk",
            labels.len()
        )));
    }
    Ok(())
}

/// The two boundary vertices farthest apart in the source (lowest ids win ties).
pub fn farthest_boundary_pair(mesh: &Mesh) -> Result<(usize, usize)> {
    let lp = boundary_loop(mesh)?;
    let v = mesh.vertices();
    let mut best = (lp[0], lp[1 % lp.len()]);
    let mut best_d = -1.0;
    let mut sorted = lp.clone();
    sorted.sort_unstable();
    for (a_pos, &a) in sorted.iter().enumerate() {
        for &b in &sorted[a_pos + 1..] {
            let d = dist(v[a], v[b]);
            if d > best_d {
                best_d = d;
                best = (a, b);
            }
        }
    }
    Ok(best)
}

/// Least-squares conformal map with two pinned vertices.
///
/// Minimizes `Σ w_i (½‖J_i‖² − det J_i)` with pin `a` at the origin and pin
/// `b` at `(‖V_a − V_b‖, 0)`. Pins default to [`farthest_boundary_pair`].
pub fn conformal_init(mesh: &Mesh, pins: Option<(usize, usize)>) -> Result<Vec<Vector<2>>> {
    if mesh.element_dim() != 2 {
        return Err(invalid("the conformal initializer needs a triangle mesh"));
    }
    check_connected(mesh)?;
    let (pa, pb) = match pins {
        Some(p) => p,
        None => farthest_boundary_pair(mesh)?,
    };
    let n = mesh.num_vertices();
    if pa >= n || pb >= n {
        return Err(invalid(format!("pin vertex out of range ({pa}, {pb}) for {n} vertices")));
    }
    if pa == pb {
        return Err(invalid("conformal pins must be two distinct vertices"));
    }
    let v = mesh.vertices();
    let len = dist(v[pa], v[pb]);
    if len == 0.0 {
        return Err(invalid("conformal pins coincide in the source mesh"));
    }
    let op = GradientOperator::<2>::new(mesh)?;
    let mut t = Vec::new();
    for (i, &w) in mesh.measures().iter().enumerate() {
        let elem = op.element(i);
        let mut u = Vec::with_capacity(6);
        let mut s = Vec::with_capacity(6);
        for (k, &vk) in elem.iter().enumerate() {
            let g = op.barycentric_gradient(i, k);
            u.push((2 * vk, g[0]));
            u.push((2 * vk + 1, -g[1]));
            s.push((2 * vk, g[1]));
            s.push((2 * vk + 1, g[0]));
        }
        for vec in [&u, &s] {
            for &(r, a) in vec.iter() {
                for &(c, b) in vec.iter() {
                    t.push((r, c, w * a * b));
                }
            }
        }
    }
    let mut pinned = vec![
        (2 * pa, 0.0),
        (2 * pa + 1, 0.0),
        (2 * pb, len),
        (2 * pb + 1, 0.0),
    ];
    for u in mesh.unreferenced_vertices() {
        t.push((2 * u, 2 * u, 1.0));
        t.push((2 * u + 1, 2 * u + 1, 1.0));
        pinned.push((2 * u, v[u][0]));
        pinned.push((2 * u + 1, v[u][1]));
    }
    let a = CscMatrix::from_triplets(2 * n, &t);
    pinned.sort_by_key(|p| p.0);
    let ids: Vec<usize> = pinned.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = pinned.iter().map(|p| p.1).collect();
    let mut chol = PinnedCholesky::new(&a, &ids)?;
    chol.factorize(&a)?;
    let x = chol.solve(&a, &[vec![0.0; 2 * n]], &[vals])?.remove(0);
    Ok((0..n).map(|i| Vector::<2>::new(x[2 * i], x[2 * i + 1])).collect())
}
