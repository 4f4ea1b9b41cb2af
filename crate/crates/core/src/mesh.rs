//! Simplicial meshes, file formats and boundary extraction.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative measure below which an element is rejected as degenerate.
pub const DEGENERATE_REL: f64 = 1e-14;

/// A triangle mesh (planar or embedded in 3D) or a tetrahedral mesh.
///
/// Vertices are always stored with three coordinates; planar meshes carry
/// `z = 0` and report an embedding dimension of 2.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    elements: Vec<usize>,
    element_dim: usize,
    embed_dim: usize,
    measures: Vec<f64>,
}

impl Mesh {
    /// Builds a triangle mesh. The mesh is planar when every `z` is zero.
    pub fn triangles(vertices: Vec<[f64; 3]>, faces: &[[usize; 3]]) -> Result<Self> {
        let embed_dim = if vertices.iter().all(|v| v[2] == 0.0) { 2 } else { 3 };
        let elements = faces.iter().flatten().copied().collect();
        Self::build(vertices, elements, 2, embed_dim)
    }

    pub fn planar(vertices: &[[f64; 2]], faces: &[[usize; 3]]) -> Result<Self> {
        let vertices = vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
        let elements = faces.iter().flatten().copied().collect();
        Self::build(vertices, elements, 2, 2)
    }

    pub fn tetrahedra(vertices: Vec<[f64; 3]>, tets: &[[usize; 4]]) -> Result<Self> {
        let elements = tets.iter().flatten().copied().collect();
        Self::build(vertices, elements, 3, 3)
    }

    fn build(
        vertices: Vec<[f64; 3]>,
        elements: Vec<usize>,
        element_dim: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, v)| v.iter().any(|c| !c.is_finite()))
        {
            return Err(invalid(format!("vertex {i} has non-finite coordinates")));
        }
        let stride = element_dim + 1;
        for (e, elem) in elements.chunks(stride).enumerate() {
            if let Some(&v) = elem.iter().find(|&&v| v >= n) {
                return Err(Error::IndexOutOfRange {
                    element: e,
                    vertex: v as i64,
                    count: n,
                });
            }
        }
        let measures: Vec<f64> = elements
            .chunks(stride)
            .map(|elem| simplex_measure(&vertices, elem))
            .collect();
        let max = measures.iter().copied().fold(0.0, f64::max);
        let threshold = DEGENERATE_REL * max;
        if let Some((e, &m)) = measures
            .iter()
            .enumerate()
            .find(|(_, &m)| !(m > threshold))
        {
            return Err(Error::DegenerateElement {
                element: e,
                measure: m,
                threshold,
            });
        }
        Ok(Self {
            vertices,
            elements,
            element_dim,
            embed_dim,
            measures,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.measures.len()
    }

    /// `d`: 2 for triangles, 3 for tetrahedra.
    pub fn element_dim(&self) -> usize {
        self.element_dim
    }

    /// `d_ι`: dimension of the space the source mesh lives in.
    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// `d_o`: dimension of the target space. Equals the element dimension.
    pub fn target_dim(&self) -> usize {
        self.element_dim
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        self.vertices[i]
    }

    pub fn element(&self, i: usize) -> &[usize] {
        let s = self.element_dim + 1;
        &self.elements[i * s..(i + 1) * s]
    }

    pub fn elements(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.elements.chunks(self.element_dim + 1)
    }

    /// Per-element area (triangles) or volume (tetrahedra).
    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn is_planar(&self) -> bool {
        self.element_dim == 2 && self.embed_dim == 2
    }

    /// Diagonal of the axis-aligned bounding box of the source vertices.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.vertices.iter().copied())
    }

    /// Source positions truncated to the target dimension. Only meaningful for
    /// planar triangle meshes and tetrahedral meshes.
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        self.vertices.clone()
    }

    /// Vertices not referenced by any element.
    pub fn unreferenced_vertices(&self) -> Vec<usize> {
        let mut used = vec![false; self.num_vertices()];
        for &v in &self.elements {
            used[v] = true;
        }
        (0..used.len()).filter(|&v| !used[v]).collect()
    }

    /// Connected components of the element graph, as a label per vertex.
    /// Unreferenced vertices form singleton components.
    pub fn vertex_components(&self) -> Vec<usize> {
        let n = self.num_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for elem in self.elements() {
            let r0 = find(&mut parent, elem[0]);
            for &v in &elem[1..] {
                let r = find(&mut parent, v);
                if r != r0 {
                    let (lo, hi) = if r < r0 { (r, r0) } else { (r0, r) };
                    parent[hi] = lo;
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut out = vec![0; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[v] = label[r];
        }
        out
    }
}

pub(crate) fn bbox_diagonal(points: impl Iterator<Item = [f64; 3]>) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in points {
        any = true;
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !any {
        return 0.0;
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn simplex_measure(v: &[[f64; 3]], elem: &[usize]) -> f64 {
    let e1 = sub(v[elem[1]], v[elem[0]]);
    let e2 = sub(v[elem[2]], v[elem[0]]);
    let n = cross(e1, e2);
    match elem.len() {
        3 => 0.5 * dot(n, n).sqrt(),
        _ => dot(n, sub(v[elem[3]], v[elem[0]])).abs() / 6.0,
    }
}

/// Ordered boundary cycle of a triangle mesh with disk topology.
///
/// The cycle follows the boundary half-edges of the faces, so it runs
/// counter-clockwise relative to the face orientation.
pub fn boundary_loop(mesh: &Mesh) -> Result<Vec<usize>> {
    if mesh.element_dim() != 2 {
        return Err(invalid("boundary loop is only defined for triangle meshes"));
    }
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for f in mesh.elements() {
        for k in 0..3 {
            let e = (f[k], f[(k + 1) % 3]);
            *directed.entry(e).or_default() += 1;
        }
    }
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(a, b), &count) in &directed {
        if count > 1 {
            return Err(Error::Topology(format!(
                "edge ({a}, {b}) is used twice with the same orientation; \
                 the mesh is non-manifold or inconsistently oriented"
            )));
        }
        if directed.contains_key(&(b, a)) {
            continue;
        }
        if next.insert(a, b).is_some() {
            return Err(Error::Topology(format!(
                "vertex {a} has more than one outgoing boundary edge"
            )));
        }
    }
    let Some((&start, _)) = next.iter().next() else {
        return Err(Error::Topology("surface is closed (no boundary)".into()));
    };
    let mut cycle = vec![start];
    let mut v = next[&start];
    while v != start {
        cycle.push(v);
        v = *next.get(&v).ok_or_else(|| {
            Error::Topology(format!("boundary is not a closed cycle at vertex {v}"))
        })?;
        if cycle.len() > next.len() {
            return Err(Error::Topology("boundary walk did not close".into()));
        }
    }
    if cycle.len() != next.len() {
        return Err(Error::Topology(format!(
            "mesh has more than one boundary loop ({} boundary edges, first loop has {})",
            next.len(),
            cycle.len()
        )));
    }
    Ok(cycle)
}

/// Boundary triangles of a tetrahedral mesh, oriented outward.
pub fn boundary_surface(mesh: &Mesh) -> Result<Vec<[usize; 3]>> {
    if mesh.element_dim() != 3 {
        return Err(invalid("boundary surface is only defined for tetrahedral meshes"));
    }
    let v = mesh.vertices();
    let mut faces: BTreeMap<[usize; 3], ([usize; 3], usize)> = BTreeMap::new();
    for t in mesh.elements() {
        let positive = dot(
            cross(sub(v[t[1]], v[t[0]]), sub(v[t[2]], v[t[0]])),
            sub(v[t[3]], v[t[0]]),
        ) > 0.0;
        let local = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
        for l in local {
            let mut f = [t[l[0]], t[l[1]], t[l[2]]];
            if !positive {
                f.swap(1, 2);
            }
            let mut key = f;
            key.sort_unstable();
            faces.entry(key).or_insert((f, 0)).1 += 1;
        }
    }
    let mut out = Vec::new();
    for (key, (f, count)) in faces {
        match count {
            1 => out.push(f),
            2 => {}
            _ => {
                return Err(Error::Topology(format!(
                    "triangle {key:?} is shared by {count} tetrahedra"
                )))
            }
        }
    }
    Ok(out)
}

/// Sorted ids of vertices on the boundary surface of a tet mesh.
pub fn boundary_vertices(mesh: &Mesh) -> Result<Vec<usize>> {
    let mut ids: Vec<usize> = if mesh.element_dim() == 3 {
        boundary_surface(mesh)?.into_iter().flatten().collect()
    } else {
        boundary_loop(mesh)?
    };
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// One pinned vertex as it appears in handle files and service messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleSpec {
    pub vertex: usize,
    pub position: Vec<f64>,
}

/// Vertex pinning constraints, kept sorted by vertex id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HandleConstraints {
    handles: Vec<(usize, [f64; 3])>,
}

impl HandleConstraints {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates ids against `num_vertices` and positions against `dim`.
    pub fn new(specs: &[HandleSpec], num_vertices: usize, dim: usize) -> Result<Self> {
        let mut handles = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if s.vertex >= num_vertices {
                return Err(invalid(format!(
                    "handle {i} references vertex {}, but the mesh has {num_vertices} vertices",
                    s.vertex
                )));
            }
            if s.position.len() != dim {
                return Err(invalid(format!(
                    "handle {i} (vertex {}) has {} coordinates, expected {dim}",
                    s.vertex,
                    s.position.len()
                )));
            }
            if s.position.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!(
                    "handle {i} (vertex {}) has a non-finite position",
                    s.vertex
                )));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&s.position);
            handles.push((s.vertex, p));
        }
        handles.sort_by_key(|h| h.0);
        if let Some(w) = handles.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(invalid(format!("duplicate handle for vertex {}", w[0].0)));
        }
        Ok(Self { handles })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, [f64; 3])>) -> Result<Self> {
        let mut handles: Vec<_> = pairs.into_iter().collect();
        handles.sort_by_key(|h| h.0);
        if let Some(w) = handles.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(invalid(format!("duplicate handle for vertex {}", w[0].0)));
        }
        Ok(Self { handles })
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, [f64; 3])> + '_ {
        self.handles.iter().copied()
    }

    /// Sorted pinned vertex ids.
    pub fn vertex_ids(&self) -> Vec<usize> {
        self.handles.iter().map(|h| h.0).collect()
    }

    pub fn same_vertex_set(&self, other: &Self) -> bool {
        self.handles.len() == other.handles.len()
            && self.handles.iter().zip(&other.handles).all(|(a, b)| a.0 == b.0)
    }

    pub fn to_specs(&self, dim: usize) -> Vec<HandleSpec> {
        self.handles
            .iter()
            .map(|&(vertex, p)| HandleSpec {
                vertex,
                position: p[..dim].to_vec(),
            })
            .collect()
    }
}

/// On-disk mesh formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
    /// `#vertices #tets` header, coordinate lines, 1-based 4-index lines.
    Tet,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("off") => Ok(Self::Off),
            Some("tet") | Some("msh") => Ok(Self::Tet),
            _ => Err(invalid(format!(
                "cannot infer mesh format from {}; expected .obj, .off or .tet",
                path.display()
            ))),
        }
    }
}

/// A loaded mesh plus the per-vertex texture coordinates found in the file.
#[derive(Clone, Debug)]
pub struct LoadedMesh {
    pub mesh: Mesh,
    pub uv: Option<Vec<[f64; 2]>>,
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    load_mesh_as(path, MeshFormat::from_path(path)?).map(|l| l.mesh)
}

pub fn load_mesh_as(path: impl AsRef<Path>, format: MeshFormat) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let loaded = match format {
        MeshFormat::Obj => parse_obj(&text, &name)?,
        MeshFormat::Off => LoadedMesh {
            mesh: parse_off(&text, &name)?,
            uv: None,
        },
        MeshFormat::Tet => LoadedMesh {
            mesh: parse_tet(&text, &name)?,
            uv: None,
        },
    };
    if loaded.mesh.num_elements() == 0 {
        return Err(perr(&name, 0, "file contains no elements"));
    }
    Ok(loaded)
}

fn perr(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, path: &str, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| perr(path, line, "missing coordinate"))?;
    tok.parse::<f64>()
        .map_err(|_| perr(path, line, format!("bad number {tok:?}")))
}

fn obj_index(tok: &str, count: usize, path: &str, line: usize) -> Result<usize> {
    let raw: i64 = tok
        .parse()
        .map_err(|_| perr(path, line, format!("bad index {tok:?}")))?;
    let idx = match raw {
        0 => return Err(perr(path, line, "index 0 is invalid (OBJ indices are 1-based)")),
        r if r > 0 => r - 1,
        r => count as i64 + r,
    };
    if idx < 0 || idx as usize >= count {
        return Err(perr(
            path,
            line,
            format!("index {raw} out of range ({count} entries so far)"),
        ));
    }
    Ok(idx as usize)
}

fn parse_obj(text: &str, path: &str) -> Result<LoadedMesh> {
    let mut verts = Vec::new();
    let mut tex = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_tex: Vec<Option<[usize; 3]>> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, ln)?;
                let y = parse_f64(toks.next(), path, ln)?;
                let z = match toks.next() {
                    Some(t) => parse_f64(Some(t), path, ln)?,
                    None => 0.0,
                };
                verts.push([x, y, z]);
            }
            Some("vt") => {
                let u = parse_f64(toks.next(), path, ln)?;
                let v = parse_f64(toks.next(), path, ln)?;
                tex.push([u, v]);
            }
            Some("f") => {
                let mut vi = Vec::new();
                let mut ti = Vec::new();
                for t in toks {
                    let mut parts = t.split('/');
                    let v = parts.next().unwrap_or("");
                    vi.push(obj_index(v, verts.len(), path, ln)?);
                    match parts.next() {
                        Some(s) if !s.is_empty() => ti.push(obj_index(s, tex.len(), path, ln)?),
                        _ => {}
                    }
                }
                if vi.len() < 3 {
                    return Err(perr(path, ln, "face with fewer than 3 vertices"));
                }
                let has_tex = ti.len() == vi.len();
                for k in 1..vi.len() - 1 {
                    faces.push([vi[0], vi[k], vi[k + 1]]);
                    face_tex.push(has_tex.then(|| [ti[0], ti[k], ti[k + 1]]));
                }
            }
            _ => {}
        }
    }
    let uv = vertex_uvs(&faces, &face_tex, &tex, verts.len(), path)?;
    let mesh = Mesh::triangles(verts, &faces)?;
    Ok(LoadedMesh { mesh, uv })
}

/// Per-vertex UVs, when every face corner carries one and no vertex is split.
fn vertex_uvs(
    faces: &[[usize; 3]],
    face_tex: &[Option<[usize; 3]>],
    tex: &[[f64; 2]],
    n: usize,
    path: &str,
) -> Result<Option<Vec<[f64; 2]>>> {
    if tex.is_empty() || face_tex.iter().any(Option::is_none) {
        return Ok(None);
    }
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    for (f, t) in faces.iter().zip(face_tex) {
        let t = t.expect("checked above");
        for k in 0..3 {
            match assigned[f[k]] {
                None => assigned[f[k]] = Some(t[k]),
                Some(prev) if prev == t[k] || tex[prev] == tex[t[k]] => {}
                Some(_) => {
                    return Err(perr(
                        path,
                        0,
                        format!("vertex {} has several texture coordinates (UV seams are not supported)", f[k] + 1),
                    ))
                }
            }
        }
    }
    Ok(Some(
        assigned
            .into_iter()
            .map(|t| t.map(|t| tex[t]).unwrap_or([0.0, 0.0]))
            .collect(),
    ))
}

/// Data lines with comments and blank lines stripped, paired with line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_off(text: &str, path: &str) -> Result<Mesh> {
    let mut lines = data_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(path, 0, "empty file"))?;
    let mut counts_line = header.strip_prefix("OFF").ok_or_else(|| perr(path, ln, "missing OFF header"))?.trim().to_string();
    let mut cln = ln;
    if counts_line.is_empty() {
        let (l, c) = lines.next().ok_or_else(|| perr(path, ln, "missing counts"))?;
        counts_line = c.to_string();
        cln = l;
    }
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(path, cln, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    let (nv, nf) = match counts[..] {
        [nv, nf, ..] => (nv, nf),
        _ => return Err(perr(path, cln, "expected vertex and face counts")),
    };
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, 0, "unexpected end of file in vertex list"))?;
        let mut t = l.split_whitespace();
        verts.push([
            parse_f64(t.next(), path, ln)?,
            parse_f64(t.next(), path, ln)?,
            parse_f64(t.next(), path, ln)?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, 0, "unexpected end of file in face list"))?;
        let idx: Vec<i64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| perr(path, ln, format!("bad index {t:?}"))))
            .collect::<Result<_>>()?;
        let k = *idx.first().ok_or_else(|| perr(path, ln, "empty face"))? as usize;
        if k < 3 || idx.len() < k + 1 {
            return Err(perr(path, ln, "malformed face"));
        }
        let vi = &idx[1..=k];
        if let Some(&bad) = vi.iter().find(|&&i| i < 0 || i as usize >= nv) {
            return Err(perr(path, ln, format!("index {bad} out of range ({nv} vertices, 0-based)")));
        }
        for j in 1..k - 1 {
            faces.push([vi[0] as usize, vi[j] as usize, vi[j + 1] as usize]);
        }
    }
    Mesh::triangles(verts, &faces)
}

fn parse_tet(text: &str, path: &str) -> Result<Mesh> {
    let mut lines = data_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(path, 0, "empty file"))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(path, ln, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    let [nv, nt] = counts[..] else {
        return Err(perr(path, ln, "header must be `#vertices #tets`"));
    };
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, 0, "unexpected end of file in vertex list"))?;
        let mut t = l.split_whitespace();
        verts.push([
            parse_f64(t.next(), path, ln)?,
            parse_f64(t.next(), path, ln)?,
            parse_f64(t.next(), path, ln)?,
        ]);
    }
    let mut tets = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, 0, "unexpected end of file in tet list"))?;
        let idx: Vec<&str> = l.split_whitespace().collect();
        if idx.len() != 4 {
            return Err(perr(path, ln, "tet line needs exactly 4 indices"));
        }
        let mut t = [0usize; 4];
        for (k, tok) in idx.iter().enumerate() {
            let raw: i64 = tok.parse().map_err(|_| perr(path, ln, format!("bad index {tok:?}")))?;
            if raw < 1 || raw as usize > nv {
                return Err(perr(path, ln, format!("index {raw} out of range (1..={nv})")));
            }
            t[k] = raw as usize - 1;
        }
        tets.push(t);
    }
    if lines.next().is_some() {
        return Err(perr(path, 0, "trailing data after tet list"));
    }
    Mesh::tetrahedra(verts, &tets)
}

fn write_vertex_lines(out: &mut String, points: &[[f64; 3]]) {
    for p in points {
        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
    }
}

/// Writes the mesh with per-vertex texture coordinates.
pub fn save_obj_with_uv(path: impl AsRef<Path>, mesh: &Mesh, uv: &[[f64; 2]]) -> Result<()> {
    if mesh.element_dim() != 2 {
        return Err(invalid("UV output needs a triangle mesh"));
    }
    if mesh.num_elements() == 0 {
        return Err(invalid("refusing to write a mesh with no faces"));
    }
    if uv.len() != mesh.num_vertices() {
        return Err(Error::ShapeMismatch {
            expected: mesh.num_vertices(),
            actual: uv.len(),
        });
    }
    let mut out = String::new();
    write_vertex_lines(&mut out, mesh.vertices());
    for t in uv {
        let _ = writeln!(out, "vt {} {}", t[0], t[1]);
    }
    for f in mesh.elements() {
        let _ = writeln!(
            out,
            "f {a}/{a} {b}/{b} {c}/{c}",
            a = f[0] + 1,
            b = f[1] + 1,
            c = f[2] + 1
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a triangle mesh with the given vertex positions.
pub fn save_obj(path: impl AsRef<Path>, mesh: &Mesh, positions: &[[f64; 3]]) -> Result<()> {
    if mesh.element_dim() != 2 {
        return Err(invalid("OBJ output needs a triangle mesh"));
    }
    if mesh.num_elements() == 0 {
        return Err(invalid("refusing to write a mesh with no faces"));
    }
    if positions.len() != mesh.num_vertices() {
        return Err(Error::ShapeMismatch {
            expected: mesh.num_vertices(),
            actual: positions.len(),
        });
    }
    let mut out = String::new();
    write_vertex_lines(&mut out, positions);
    for f in mesh.elements() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a tet mesh with the given vertex positions in the ASCII tet format.
pub fn save_tet(path: impl AsRef<Path>, mesh: &Mesh, positions: &[[f64; 3]]) -> Result<()> {
    if mesh.element_dim() != 3 {
        return Err(invalid("tet output needs a tetrahedral mesh"));
    }
    if positions.len() != mesh.num_vertices() {
        return Err(Error::ShapeMismatch {
            expected: mesh.num_vertices(),
            actual: positions.len(),
        });
    }
    let mut out = format!("{} {}\n", mesh.num_vertices(), mesh.num_elements());
    for p in positions {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    for t in mesh.elements() {
        let _ = writeln!(out, "{} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    fs::write(path, out)?;
    Ok(())
}
