//! Triangle meshes, surface projection and barycentric anchors.
//!
//! All coordinates are millimeters. A [`TriangleMesh`] is treated as
//! immutable once loaded and cleaned; deformations produce new vertex
//! buffers over the same triangle list.

mod anchor;
mod closest;
mod io;

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use anchor::{anchor_point, evaluate_anchor, PatternCurve, SurfaceAnchor};
pub use closest::{closest_point_on_triangle, ClosestPointResult, Feature};
pub use io::{
    format_coord, load_mesh, load_mesh_with_report, save_mesh, save_mesh_with, LoadReport,
    MeshFormat, PlyEncoding,
};

pub type Vec3 = Vector3<f64>;

/// Triangles with area at or below this are dropped at load time (mm²).
pub const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
    pub face_normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Build a mesh, checking that every index is in range.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((t, tri)) = triangles
            .iter()
            .enumerate()
            .find(|(_, tri)| tri.iter().any(|&i| i >= n))
        {
            return Err(Error::TopologyMismatch(format!(
                "triangle {t} references vertex {:?} but mesh has {n} vertices",
                tri
            )));
        }
        Ok(Self {
            vertices,
            triangles,
            vertex_normals: None,
            face_normals: None,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Remove triangles with area ≤ [`DEGENERATE_AREA`]. Returns the number removed.
    pub fn drop_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let verts = &self.vertices;
        self.triangles.retain(|&[a, b, c]| {
            let area = 0.5 * (verts[b] - verts[a]).cross(&(verts[c] - verts[a])).norm();
            area > DEGENERATE_AREA
        });
        let removed = before - self.triangles.len();
        if removed > 0 {
            self.vertex_normals = None;
            self.face_normals = None;
        }
        removed
    }

    /// Indices of vertices not referenced by any triangle.
    pub fn unreferenced_vertices(&self) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &i in tri {
                used[i] = true;
            }
        }
        used.iter()
            .enumerate()
            .filter_map(|(i, &u)| (!u).then_some(i))
            .collect()
    }

    /// Drop unreferenced vertices, renumbering triangles. Returns the old index
    /// of each retained vertex.
    pub fn compact(&mut self) -> Vec<usize> {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for tri in &self.triangles {
            for &i in tri {
                if remap[i] == usize::MAX {
                    remap[i] = 0;
                }
            }
        }
        let mut vertices = Vec::new();
        for (i, slot) in remap.iter_mut().enumerate() {
            if *slot != usize::MAX {
                *slot = vertices.len();
                vertices.push(self.vertices[i]);
                kept.push(i);
            }
        }
        for tri in &mut self.triangles {
            for i in tri.iter_mut() {
                *i = remap[*i];
            }
        }
        if let Some(normals) = self.vertex_normals.take() {
            self.vertex_normals = Some(kept.iter().map(|&i| normals[i]).collect());
        }
        self.vertices = vertices;
        kept
    }

    /// Face normals from the counter-clockwise cross product and area-weighted
    /// vertex normals. Vertices without incident faces get a zero normal.
    pub fn compute_normals(&mut self) {
        let mut face = Vec::with_capacity(self.triangles.len());
        let mut vertex = vec![Vec3::zeros(); self.vertices.len()];
        for &[a, b, c] in &self.triangles {
            let cross = (self.vertices[b] - self.vertices[a])
                .cross(&(self.vertices[c] - self.vertices[a]));
            // |cross| = 2·area, so summing raw cross products area-weights.
            for i in [a, b, c] {
                vertex[i] += cross;
            }
            let len = cross.norm();
            face.push(if len > 0.0 { cross / len } else { Vec3::zeros() });
        }
        for n in &mut vertex {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        self.face_normals = Some(face);
        self.vertex_normals = Some(vertex);
    }

    pub fn with_normals(mut self) -> Self {
        self.compute_normals();
        self
    }

    /// Same topology with a new vertex buffer; normals are recomputed.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Contract(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        let mut mesh = Self {
            vertices,
            triangles: self.triangles.clone(),
            vertex_normals: None,
            face_normals: None,
        };
        mesh.compute_normals();
        Ok(mesh)
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        bounding_box(&self.vertices)
    }

    /// For each vertex, the triangles that reference it (ascending order).
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                out[i].push(t);
            }
        }
        out
    }

    /// Triangle adjacency across shared edges.
    pub fn triangle_neighbors(&self) -> Vec<Vec<usize>> {
        let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edges.entry((u.min(v), u.max(v))).or_default().push(t);
            }
        }
        let mut out = vec![Vec::new(); self.triangles.len()];
        for faces in edges.values() {
            for &f in faces {
                for &g in faces {
                    if f != g {
                        out[f].push(g);
                    }
                }
            }
        }
        for n in &mut out {
            n.sort_unstable();
            n.dedup();
        }
        out
    }

    /// Split every triangle into `n²` sub-triangles on a uniform barycentric
    /// lattice. The refined surface coincides with the original one.
    pub fn refine(&self, n: usize) -> Refinement {
        refine(self, n.max(1))
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Result of [`TriangleMesh::refine`]: the refined topology and, for each new
/// vertex, its barycentric combination of original vertices.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub triangles: Vec<[usize; 3]>,
    pub sources: Vec<[(usize, f64); 3]>,
}

impl Refinement {
    pub fn vertex_count(&self) -> usize {
        self.sources.len()
    }

    /// Evaluate refined vertex positions over (possibly deformed) original vertices.
    pub fn apply(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.sources
            .iter()
            .map(|src| {
                src.iter()
                    .filter(|(_, w)| *w != 0.0)
                    .fold(Vec3::zeros(), |acc, &(i, w)| acc + vertices[i] * w)
            })
            .collect()
    }

    pub fn mesh(&self, vertices: &[Vec3]) -> TriangleMesh {
        TriangleMesh {
            vertices: self.apply(vertices),
            triangles: self.triangles.clone(),
            vertex_normals: None,
            face_normals: None,
        }
    }
}

fn refine(mesh: &TriangleMesh, n: usize) -> Refinement {
    let mut sources: Vec<[(usize, f64); 3]> = (0..mesh.vertices.len())
        .map(|i| [(i, 1.0), (i, 0.0), (i, 0.0)])
        .collect();
    let mut edge_points: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut triangles = Vec::with_capacity(mesh.triangles.len() * n * n);
    let nf = n as f64;

    // Point k/n of the way from u to v (0 < k < n), shared between faces.
    let mut edge_point = |u: usize, v: usize, k: usize, sources: &mut Vec<[(usize, f64); 3]>| {
        let (lo, hi) = (u.min(v), u.max(v));
        let ids = edge_points.entry((lo, hi)).or_insert_with(|| {
            (1..n)
                .map(|m| {
                    let t = m as f64 / nf;
                    sources.push([(lo, 1.0 - t), (hi, t), (hi, 0.0)]);
                    sources.len() - 1
                })
                .collect()
        });
        if u == lo {
            ids[k - 1]
        } else {
            ids[n - k - 1]
        }
    };

    for &[a, b, c] in &mesh.triangles {
        // Lattice point (r, s): a + r/n (b - a) + s/n (c - a).
        let mut grid = vec![usize::MAX; (n + 1) * (n + 1)];
        let idx = |r: usize, s: usize| r * (n + 1) + s;
        for r in 0..=n {
            for s in 0..=(n - r) {
                let id = match (r, s) {
                    (0, 0) => a,
                    (r, 0) if r == n => b,
                    (0, s) if s == n => c,
                    (r, 0) => edge_point(a, b, r, &mut sources),
                    (0, s) => edge_point(a, c, s, &mut sources),
                    (r, s) if r + s == n => edge_point(b, c, s, &mut sources),
                    (r, s) => {
                        let (wb, wc) = (r as f64 / nf, s as f64 / nf);
                        sources.push([(a, 1.0 - wb - wc), (b, wb), (c, wc)]);
                        sources.len() - 1
                    }
                };
                grid[idx(r, s)] = id;
            }
        }
        for r in 0..n {
            for s in 0..(n - r) {
                triangles.push([grid[idx(r, s)], grid[idx(r + 1, s)], grid[idx(r, s + 1)]]);
                if r + s + 1 < n {
                    triangles.push([
                        grid[idx(r + 1, s)],
                        grid[idx(r + 1, s + 1)],
                        grid[idx(r, s + 1)],
                    ]);
                }
            }
        }
    }
    Refinement { triangles, sources }
}


#[cfg(test)]
pub(crate) use tests::uv_sphere;
