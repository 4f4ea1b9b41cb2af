//! Small deterministic meshes for tests, examples and demos.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::Mesh;

/// Points `(radius, angle)` on concentric rings: one center vertex, then
/// `6k` vertices on ring `k`. Interior rings are jittered.
fn ring_points(rings: usize, jitter: f64, seed: u64) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![(0.0, 0.0)]];
    for k in 1..=rings {
        let count = 6 * k;
        let step = TAU / count as f64;
        let offset = rng.random_range(0.0..step);
        let ring = (0..count)
            .map(|i| {
                let (dr, dt) = if k < rings && jitter > 0.0 {
                    (
                        rng.random_range(-jitter..jitter) / rings as f64,
                        rng.random_range(-jitter..jitter) * step,
                    )
                } else {
                    (0.0, 0.0)
                };
                (k as f64 / rings as f64 + dr, offset + i as f64 * step + dt)
            })
            .collect();
        out.push(ring);
    }
    out
}

/// Triangulates consecutive rings by merging their angular orders.
fn ring_faces(rings: &[Vec<(f64, f64)>]) -> Vec<[usize; 3]> {
    let mut faces = Vec::new();
    let mut start = vec![0usize];
    for r in rings {
        start.push(start.last().unwrap() + r.len());
    }
    let inner0 = &rings[1];
    for i in 0..inner0.len() {
        faces.push([0, 1 + i, 1 + (i + 1) % inner0.len()]);
    }
    for k in 2..rings.len() {
        let (a, b) = (&rings[k - 1], &rings[k]);
        let (sa, sb) = (start[k - 1], start[k]);
        // unwrap angles so both rings increase monotonically from a common origin
        let base = a[0].1;
        let unwrap = |t: f64| (t - base).rem_euclid(TAU);
        let b0 = (0..b.len())
            .min_by(|&x, &y| unwrap(b[x].1).total_cmp(&unwrap(b[y].1)))
            .unwrap();
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let ai = sa + i % a.len();
            let bj = sb + (b0 + j) % b.len();
            let ta = if i < a.len() { unwrap(a[(i + 1) % a.len()].1) } else { f64::INFINITY };
            let ta = if i + 1 == a.len() { TAU } else { ta };
            let tb = if j < b.len() {
                let t = unwrap(b[(b0 + j + 1) % b.len()].1);
                if j + 1 == b.len() { t + TAU } else { t }
            } else {
                f64::INFINITY
            };
            if (ta <= tb && i < a.len()) || j == b.len() {
                faces.push([ai, bj, sa + (i + 1) % a.len()]);
                i += 1;
            } else {
                faces.push([ai, bj, sb + (b0 + j + 1) % b.len()]);
                j += 1;
            }
        }
    }
    faces
}

/// Irregular planar disk of radius 1 with `6·rings²` triangles. `jitter` is
/// relative to the ring spacing; up to 0.25 keeps every triangle positive.
pub fn disk(rings: usize, jitter: f64, seed: u64) -> Mesh {
    assert!(rings >= 1 && (0.0..=0.25).contains(&jitter));
    let pts = ring_points(rings, jitter, seed);
    let faces = ring_faces(&pts);
    let v: Vec<[f64; 2]> = pts
        .iter()
        .flatten()
        .map(|&(r, t)| [r * t.cos(), r * t.sin()])
        .collect();
    Mesh::planar(&v, &faces).expect("disk fixture is valid")
}

/// Upper unit hemisphere with `6·rings²` triangles, boundary on the equator.
pub fn hemisphere(rings: usize, jitter: f64, seed: u64) -> Mesh {
    assert!(rings >= 1 && (0.0..=0.25).contains(&jitter));
    let pts = ring_points(rings, jitter, seed);
    let faces = ring_faces(&pts);
    let v: Vec<[f64; 3]> = pts
        .iter()
        .flatten()
        .map(|&(r, t)| {
            let phi = r * FRAC_PI_2;
            [phi.sin() * t.cos(), phi.sin() * t.sin(), phi.cos()]
        })
        .collect();
    Mesh::triangles(v, &faces).expect("hemisphere fixture is valid")
}

/// Rectangle `[0, lx] × [0, ly]` split into `nx × ny` cells of two triangles.
pub fn grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Mesh {
    assert!(nx >= 1 && ny >= 1);
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, c, d]);
            }
        }
    }
    Mesh::planar(&v, &faces).expect("grid fixture is valid")
}

/// Unit cube split into `n³` cells of six tetrahedra each.
pub fn cube_tets(n: usize) -> Mesh {
    assert!(n >= 1);
    let id = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
    let mut v = Vec::with_capacity((n + 1).pow(3));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                v.push([i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    if signed_volume(&v, &t) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    Mesh::tetrahedra(v, &tets).expect("cube fixture is valid")
}

fn signed_volume(v: &[[f64; 3]], t: &[usize; 4]) -> f64 {
    let e = |k: usize| {
        let (a, b) = (v[t[k]], v[t[0]]);
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    };
    let (a, b, c) = (e(1), e(2), e(3));
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Closed unit sphere from a subdivided octahedron.
pub fn sphere(subdivisions: usize) -> Mesh {
    let mut v: Vec<[f64; 3]> = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<[f64; 3]>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let p = [
                    v[a][0] + v[b][0],
                    v[a][1] + v[b][1],
                    v[a][2] + v[b][2],
                ];
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                v.push([p[0] / n, p[1] / n, p[2] / n]);
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(4 * faces.len());
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::triangles(v, &faces).expect("sphere fixture is valid")
}
