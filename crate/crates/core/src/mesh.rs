//! Closed oriented triangle meshes with vertex positions in R^l, l >= 3.
//!
//! Positions are packed in a flat `Vec<f64>` with stride `dim`. Connectivity
//! is immutable after construction; flows produce new meshes that share it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative area floor below which a face counts as degenerate:
/// area < AREA_EPS_REL * (longest edge)^2.
pub const AREA_EPS_REL: f64 = 1e-12;

/// Aspect-quality floor; triangles below this abort a flow.
pub const QUALITY_FLOOR: f64 = 1e-3;

/// A closed oriented triangulated surface in R^l.
#[derive(Debug, Clone)]
pub struct TriMesh {
    dim: usize,
    vertices: Vec<f64>,
    faces: Vec<[usize; 3]>,
    oriented: bool,
    closed: bool,
}

impl TriMesh {
    /// Build a closed mesh, validating all structural invariants:
    /// valid indices, no degenerate faces, every edge on exactly two faces,
    /// consistent winding, even Euler characteristic <= 2.
    pub fn new(dim: usize, vertices: Vec<f64>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self::build(dim, vertices, faces, true)?;
        Ok(mesh)
    }

    /// Build a mesh that may have boundary (each edge on one or two faces).
    /// Used by tests for open patches; closed-surface checks are skipped.
    pub fn new_open(dim: usize, vertices: Vec<f64>, faces: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(dim, vertices, faces, false)
    }

    fn build(
        dim: usize,
        vertices: Vec<f64>,
        faces: Vec<[usize; 3]>,
        require_closed: bool,
    ) -> Result<Self> {
        if dim < 3 {
            return Err(Error::validation(
                "dim_ambient",
                format!("ambient dimension must be >= 3, got {dim}"),
            ));
        }
        if vertices.len() % dim != 0 {
            return Err(Error::validation(
                "vertices",
                format!(
                    "vertex buffer length {} is not a multiple of dim {dim}",
                    vertices.len()
                ),
            ));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("vertices", "non-finite coordinate"));
        }
        let n_v = vertices.len() / dim;
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n_v {
                    return Err(Error::NonManifoldMesh(format!(
                        "face {fi} references vertex {v} out of {n_v}"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::NonManifoldMesh(format!(
                    "face {fi} repeats a vertex"
                )));
            }
        }
        let mesh = TriMesh {
            dim,
            vertices,
            faces,
            oriented: false,
            closed: false,
        };
        for fi in 0..mesh.faces.len() {
            let area = mesh.face_area(fi);
            let l = mesh.face_max_edge(fi);
            if area < AREA_EPS_REL * l * l {
                return Err(Error::DegenerateTriangle {
                    face: fi,
                    detail: format!("area {area:.3e} below floor for edge scale {l:.3e}"),
                });
            }
        }
        // edge incidence: undirected count and directed count
        let mut undirected: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &mesh.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        let mut oriented = true;
        for (&(a, b), &count) in &undirected {
            if count > 2 || (require_closed && count != 2) {
                return Err(Error::NonManifoldMesh(format!(
                    "edge ({a},{b}) belongs to {count} faces"
                )));
            }
        }
        for (&(a, b), &count) in &directed {
            if count > 1 {
                oriented = false;
            }
            if count == 1 && undirected[&(a.min(b), a.max(b))] == 2 && !directed.contains_key(&(b, a))
            {
                oriented = false;
            }
        }
        let closed = undirected.values().all(|&c| c == 2);
        if require_closed {
            if !oriented {
                return Err(Error::NonManifoldMesh(
                    "inconsistent face winding".into(),
                ));
            }
            let chi = mesh.euler_characteristic();
            if chi % 2 != 0 || chi > 2 {
                return Err(Error::NonManifoldMesh(format!(
                    "Euler characteristic {chi} is not an even integer <= 2"
                )));
            }
        }
        Ok(TriMesh {
            oriented,
            closed,
            ..mesh
        })
    }

    /// Same connectivity, new positions. Checks finiteness only; geometric
    /// degeneracy is the caller's concern (the flow guards quality).
    pub fn with_vertices(&self, vertices: Vec<f64>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::validation(
                "vertices",
                format!(
                    "expected {} coordinates, got {}",
                    self.vertices.len(),
                    vertices.len()
                ),
            ));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("vertices", "non-finite coordinate"));
        }
        Ok(TriMesh {
            dim: self.dim,
            vertices,
            faces: self.faces.clone(),
            oriented: self.oriented,
            closed: self.closed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn same_connectivity(&self, other: &TriMesh) -> bool {
        self.dim == other.dim && self.faces == other.faces
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    pub fn genus(&self) -> i64 {
        (2 - self.euler_characteristic()) / 2
    }

    /// Triangle area in R^l via the Gram determinant.
    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let u = linalg::sub(self.vertex(b), self.vertex(a));
        let v = linalg::sub(self.vertex(c), self.vertex(a));
        let uu = linalg::norm_sq(&u);
        let vv = linalg::norm_sq(&v);
        let uv = linalg::dot(&u, &v);
        0.5 * (uu * vv - uv * uv).max(0.0).sqrt()
    }

    pub fn face_max_edge(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let ab = linalg::dist(self.vertex(a), self.vertex(b));
        let bc = linalg::dist(self.vertex(b), self.vertex(c));
        let ca = linalg::dist(self.vertex(c), self.vertex(a));
        ab.max(bc).max(ca)
    }

    /// Normalized aspect quality: 4*sqrt(3)*area / sum of squared edges.
    /// Equals 1 for an equilateral triangle, 0 for a degenerate one.
    pub fn face_quality(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let ab = linalg::dist_sq(self.vertex(a), self.vertex(b));
        let bc = linalg::dist_sq(self.vertex(b), self.vertex(c));
        let ca = linalg::dist_sq(self.vertex(c), self.vertex(a));
        let s = ab + bc + ca;
        if s == 0.0 {
            return 0.0;
        }
        4.0 * 3.0_f64.sqrt() * self.face_area(fi) / s
    }

    pub fn min_quality(&self) -> f64 {
        (0..self.faces.len())
            .map(|fi| self.face_quality(fi))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|fi| self.face_area(fi)).sum()
    }

    /// Max pairwise vertex distance; exact quadratic scan.
    pub fn diameter(&self) -> f64 {
        let n = self.vertex_count();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(linalg::dist_sq(self.vertex(i), self.vertex(j)));
            }
        }
        best.sqrt()
    }

    /// Barycentric lumped mass: one third of incident face areas per vertex.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.vertex_count()];
        for fi in 0..self.faces.len() {
            let a = self.face_area(fi) / 3.0;
            for &v in &self.faces[fi] {
                areas[v] += a;
            }
        }
        areas
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                if a < b {
                    total += linalg::dist(self.vertex(a), self.vertex(b));
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    pub fn max_edge_length(&self) -> f64 {
        let mut best: f64 = 0.0;
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                best = best.max(linalg::dist(self.vertex(a), self.vertex(b)));
            }
        }
        best
    }

    /// Area-weighted centroid.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        let mut total = 0.0;
        for fi in 0..self.faces.len() {
            let area = self.face_area(fi);
            total += area;
            let [a, b, cc] = self.faces[fi];
            for d in 0..self.dim {
                c[d] += area * (self.vertex(a)[d] + self.vertex(b)[d] + self.vertex(cc)[d]) / 3.0;
            }
        }
        if total > 0.0 {
            for v in &mut c {
                *v /= total;
            }
        }
        c
    }

    /// Axis-aligned bounding box as (min, max) corner points.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.vertex_count() {
            for (d, &x) in self.vertex(i).iter().enumerate() {
                lo[d] = lo[d].min(x);
                hi[d] = hi[d].max(x);
            }
        }
        (lo, hi)
    }

    /// One-ring neighbor lists, sorted for determinism.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertex_count()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for list in &mut nbrs {
            list.sort_unstable();
            list.dedup();
        }
        nbrs
    }

    /// Vertices on a boundary edge (only nonempty for open meshes).
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut boundary = vec![false; self.vertex_count()];
        for (&(a, b), &c) in &count {
            if c == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        boundary
    }

    /// Translate by `-x0` then scale by `c`: x -> c * (x - x0).
    pub fn translated_scaled(&self, x0: &[f64], c: f64) -> Result<TriMesh> {
        let mut v = Vec::with_capacity(self.vertices.len());
        for i in 0..self.vertex_count() {
            for d in 0..self.dim {
                v.push(c * (self.vertex(i)[d] - x0[d]));
            }
        }
        self.with_vertices(v)
    }
}

/// One vector in R^l per vertex.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VertexField {
    dim: usize,
    values: Vec<f64>,
}

impl VertexField {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() % dim != 0 {
            return Err(Error::validation(
                "values",
                "field length is not a multiple of dim",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("values", "non-finite entry"));
        }
        Ok(VertexField { dim, values })
    }

    pub fn zeros(dim: usize, n: usize) -> Self {
        VertexField {
            dim,
            values: vec![0.0; dim * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn matches(&self, mesh: &TriMesh) -> bool {
        self.dim == mesh.dim() && self.len() == mesh.vertex_count()
    }

    pub fn scaled(&self, s: f64) -> VertexField {
        VertexField {
            dim: self.dim,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Metrics record returned by [`mesh_metrics`].
#[derive(Debug, Clone)]
pub struct MeshMetrics {
    pub area: f64,
    pub diameter: f64,
    pub genus: i64,
    pub max_second_fundamental_norm: f64,
}

/// Area, exact diameter, genus from the Euler characteristic, and the
/// per-vertex shape-operator estimate of max |A|.
pub fn mesh_metrics(mesh: &TriMesh) -> Result<MeshMetrics> {
    if !mesh.is_closed() {
        return Err(Error::NonManifoldMesh(
            "mesh_metrics requires a closed mesh".into(),
        ));
    }
    Ok(MeshMetrics {
        area: mesh.total_area(),
        diameter: mesh.diameter(),
        genus: mesh.genus(),
        max_second_fundamental_norm: crate::curvature::max_second_fundamental_norm(mesh),
    })
}

/// Move each vertex by `scale * graph`, requiring the field to be normal to
/// the mesh. Connectivity (hence genus) is untouched.
pub fn apply_normal_graph(mesh: &TriMesh, graph: &VertexField, scale: f64) -> Result<TriMesh> {
    if !graph.matches(mesh) {
        return Err(Error::validation(
            "graph",
            "field does not match mesh dimensions",
        ));
    }
    let projector = crate::curvature::NormalProjector::new(mesh);
    let h = mesh.mean_edge_length();
    for i in 0..mesh.vertex_count() {
        let g = graph.vector(i);
        let mag = linalg::norm(g);
        if mag <= 1e-14 * h {
            continue;
        }
        let normal_part = projector.project(i, g);
        let tang_frac = linalg::dist(g, &normal_part) / mag;
        if tang_frac > NORMAL_GRAPH_ANGLE_TOL {
            return Err(Error::NotNormalField {
                vertex: i,
                tangential_fraction: tang_frac,
            });
        }
    }
    let mut vertices = mesh.positions().to_vec();
    for i in 0..mesh.vertex_count() {
        let g = graph.vector(i);
        for d in 0..mesh.dim() {
            vertices[i * mesh.dim() + d] += scale * g[d];
        }
    }
    let moved = mesh.with_vertices(vertices)?;
    let q = moved.min_quality();
    if q < QUALITY_FLOOR {
        return Err(Error::DegenerateResult(format!(
            "triangle quality {q:.3e} after perturbation"
        )));
    }
    Ok(moved)
}

/// Sine of the largest angle a graph vector may make with the normal space.
pub const NORMAL_GRAPH_ANGLE_TOL: f64 = 0.2;

// ---------------------------------------------------------------------------
// Catalog generators
// ---------------------------------------------------------------------------

/// Icosphere: subdivided icosahedron with vertices projected to the sphere.
pub fn icosphere(radius: f64, center: &[f64; 3], subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let s = 1.0 / (1.0 + phi * phi).sqrt();
    let mut vertices: Vec<[f64; 3]> = vec![
        [-s, phi * s, 0.0],
        [s, phi * s, 0.0],
        [-s, -phi * s, 0.0],
        [s, -phi * s, 0.0],
        [0.0, -s, phi * s],
        [0.0, s, phi * s],
        [0.0, -s, -phi * s],
        [0.0, s, -phi * s],
        [phi * s, 0.0, -s],
        [phi * s, 0.0, s],
        [-phi * s, 0.0, -s],
        [-phi * s, 0.0, s],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = [
                        (vertices[a][0] + vertices[b][0]) / 2.0,
                        (vertices[a][1] + vertices[b][1]) / 2.0,
                        (vertices[a][2] + vertices[b][2]) / 2.0,
                    ];
                    let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                    vertices.push([m[0] / n, m[1] / n, m[2] / n]);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mids[0], mids[2]]);
            new_faces.push([f[1], mids[1], mids[0]]);
            new_faces.push([f[2], mids[2], mids[1]]);
            new_faces.push(mids);
        }
        faces = new_faces;
    }
    let mut flat = Vec::with_capacity(vertices.len() * 3);
    for v in &vertices {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        for d in 0..3 {
            flat.push(center[d] + radius * v[d] / n);
        }
    }
    TriMesh::new(3, flat, faces).expect("icosphere construction is valid")
}

/// Icosphere scaled anisotropically: semi-axes (a, b, c) about `center`.
pub fn ellipsoid(semi_axes: &[f64; 3], center: &[f64; 3], subdivisions: u32) -> TriMesh {
    let unit = icosphere(1.0, &[0.0; 3], subdivisions);
    let mut v = unit.positions().to_vec();
    for i in 0..unit.vertex_count() {
        for d in 0..3 {
            v[i * 3 + d] = center[d] + semi_axes[d] * v[i * 3 + d];
        }
    }
    unit.with_vertices(v).expect("ellipsoid scaling is valid")
}

/// Ring torus of major radius `big_r` and minor radius `small_r`.
pub fn torus(big_r: f64, small_r: f64, n_major: usize, n_minor: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(n_major * n_minor * 3);
    for i in 0..n_major {
        let u = 2.0 * std::f64::consts::PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let v = 2.0 * std::f64::consts::PI * j as f64 / n_minor as f64;
            let r = big_r + small_r * v.cos();
            vertices.push(r * u.cos());
            vertices.push(r * u.sin());
            vertices.push(small_r * v.sin());
        }
    }
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let a = i * n_minor + j;
            let b = ((i + 1) % n_major) * n_minor + j;
            let c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor;
            let d = i * n_minor + (j + 1) % n_minor;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(3, vertices, faces).expect("torus construction is valid")
}

/// Geodesic sphere of geodesic radius `geo_radius` about the pole
/// (0, .., 0, rho) of the round 3-sphere of radius `rho` in R^4.
///
/// This is a Euclidean round 2-sphere of radius rho*sin(geo_radius/rho)
/// in the hyperplane x4 = rho*cos(geo_radius/rho).
pub fn geodesic_sphere_s3(rho: f64, geo_radius: f64, subdivisions: u32) -> TriMesh {
    let base = icosphere(1.0, &[0.0; 3], subdivisions);
    let angle = geo_radius / rho;
    let r = rho * angle.sin();
    let x4 = rho * angle.cos();
    let mut vertices = Vec::with_capacity(base.vertex_count() * 4);
    for i in 0..base.vertex_count() {
        let u = base.vertex(i);
        vertices.push(r * u[0]);
        vertices.push(r * u[1]);
        vertices.push(r * u[2]);
        vertices.push(x4);
    }
    TriMesh::new(4, vertices, base.faces().to_vec()).expect("geodesic sphere is valid")
}

/// Square grid patch in the z = 0 plane; open mesh for interior-vertex tests.
pub fn flat_patch(n: usize, spacing: f64) -> TriMesh {
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(i as f64 * spacing);
            vertices.push(j as f64 * spacing);
            vertices.push(0.0);
        }
    }
    let mut faces = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let v00 = j * (n + 1) + i;
            let v10 = v00 + 1;
            let v01 = v00 + n + 1;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    TriMesh::new_open(3, vertices, faces).expect("flat patch is valid")
}
