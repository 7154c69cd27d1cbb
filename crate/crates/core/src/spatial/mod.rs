//! Octree over scan vertices and filtered closest-point correspondences.

mod octree;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, ClosestPointResult, Feature, TriangleMesh, Vec3};

pub use octree::{LeafView, Octree, DEFAULT_MAX_DEPTH, DEFAULT_MAX_LEAF};

/// Outlier rejection thresholds for closest-point pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Maximum pair distance (mm).
    pub max_distance: f64,
    /// Maximum angle between source and target normals (degrees).
    pub max_normal_angle: f64,
    /// Drop pairs whose projection lands on an open boundary of the scan.
    pub reject_boundary: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_distance: 50.0,
            max_normal_angle: 60.0,
            reject_boundary: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_distance > 0.0) {
            return Err(Error::Config("max_distance must be > 0".into()));
        }
        if !(self.max_normal_angle > 0.0 && self.max_normal_angle <= 180.0) {
            return Err(Error::Config("max_normal_angle must be in (0, 180]".into()));
        }
        Ok(())
    }
}

/// Projection of a query onto the scan surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub triangle: usize,
    pub closest: ClosestPointResult,
    /// Surface normal at the projection (face, edge or vertex normal).
    pub normal: Vec3,
    pub on_boundary: bool,
    /// Scan vertex returned by the octree and its distance to the query.
    pub vertex: usize,
    pub vertex_distance: f64,
}

/// A scan mesh with everything needed for repeated projection queries.
#[derive(Debug, Clone)]
pub struct ScanSurface {
    mesh: TriangleMesh,
    octree: Octree,
    /// Octree slot → mesh vertex (only vertices with incident triangles are indexed).
    indexed: Vec<usize>,
    vertex_triangles: Vec<Vec<usize>>,
    vertex_normals: Vec<Vec3>,
    boundary_vertex: Vec<bool>,
    edge_faces: HashMap<(usize, usize), Vec<usize>>,
    max_edge: f64,
}

impl ScanSurface {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        Self::with_index_params(mesh, DEFAULT_MAX_LEAF, DEFAULT_MAX_DEPTH)
    }

    pub fn with_index_params(mut mesh: TriangleMesh, max_leaf: usize, max_depth: usize) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::EmptyInput("scan has no triangles".into()));
        }
        if mesh.face_normals.is_none() {
            mesh.compute_normals();
        }
        let vertex_triangles = mesh.vertex_triangles();
        let indexed: Vec<usize> = (0..mesh.vertices.len())
            .filter(|&i| !vertex_triangles[i].is_empty())
            .collect();
        let points: Vec<Vec3> = indexed.iter().map(|&i| mesh.vertices[i]).collect();
        let octree = Octree::build(&points, max_leaf, max_depth)?;

        let face_normals = mesh.face_normals.as_ref().expect("computed above");
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut max_edge: f64 = 0.0;
        for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edge_faces.entry((u.min(v), u.max(v))).or_default().push(t);
                max_edge = max_edge.max((mesh.vertices[u] - mesh.vertices[v]).norm());
            }
        }
        let mut boundary_vertex = vec![false; mesh.vertices.len()];
        for (&(u, v), faces) in &edge_faces {
            if faces.len() == 1 {
                boundary_vertex[u] = true;
                boundary_vertex[v] = true;
            }
        }

        // Angle-weighted vertex normals.
        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertices.len()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let p = mesh.vertices[tri[k]];
                let e1 = mesh.vertices[tri[(k + 1) % 3]] - p;
                let e2 = mesh.vertices[tri[(k + 2) % 3]] - p;
                let angle = e1.angle(&e2);
                vertex_normals[tri[k]] += face_normals[t] * angle;
            }
        }
        for n in &mut vertex_normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }

        Ok(Self {
            mesh,
            octree,
            indexed,
            vertex_triangles,
            vertex_normals,
            boundary_vertex,
            edge_faces,
            max_edge,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn octree(&self) -> &Octree {
        &self.octree
    }

    /// Nearest scan vertex (mesh index) and its distance.
    pub fn closest_vertex(&self, query: &Vec3) -> (usize, f64) {
        let (slot, d) = self.octree.closest_vertex(query);
        (self.indexed[slot], d)
    }

    /// Closest vertex through the octree, then the closest point over that
    /// vertex's incident triangles.
    pub fn project(&self, query: &Vec3) -> Projection {
        let (vertex, vertex_distance) = self.closest_vertex(query);
        let (triangle, closest) = self
            .best_over(query, self.vertex_triangles[vertex].iter().copied())
            .expect("indexed vertices have incident triangles");
        self.finish(triangle, closest, vertex, vertex_distance)
    }

    /// Globally closest surface point. Any triangle holding a closer point than
    /// the one-ring result has a corner within that distance plus the longest
    /// edge, so only those vertices' triangles are examined.
    pub fn project_exact(&self, query: &Vec3) -> Projection {
        let first = self.project(query);
        let radius = first.closest.distance + self.max_edge;
        let mut candidates: Vec<usize> = self
            .octree
            .within(query, radius)
            .into_iter()
            .flat_map(|slot| self.vertex_triangles[self.indexed[slot]].iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let (triangle, closest) = self
            .best_over(query, candidates.into_iter())
            .expect("query radius covers the one-ring result");
        self.finish(triangle, closest, first.vertex, first.vertex_distance)
    }

    fn best_over(
        &self,
        query: &Vec3,
        triangles: impl Iterator<Item = usize>,
    ) -> Option<(usize, ClosestPointResult)> {
        let mut best: Option<(usize, ClosestPointResult)> = None;
        for t in triangles {
            let [a, b, c] = self.mesh.corners(t);
            let r = closest_point_on_triangle(*query, a, b, c);
            if best.is_none_or(|(bt, br)| r.distance < br.distance || (r.distance == br.distance && t < bt)) {
                best = Some((t, r));
            }
        }
        best
    }

    fn finish(&self, triangle: usize, closest: ClosestPointResult, vertex: usize, vertex_distance: f64) -> Projection {
        let tri = self.mesh.triangles[triangle];
        let face_normals = self.mesh.face_normals.as_ref().expect("normals computed at build");
        let (normal, on_boundary) = match closest.feature {
            Feature::Face => (face_normals[triangle], false),
            Feature::Edge(k) => {
                let (u, v) = (tri[k as usize], tri[(k as usize + 1) % 3]);
                let faces = &self.edge_faces[&(u.min(v), u.max(v))];
                let sum: Vec3 = faces.iter().map(|&f| face_normals[f]).sum();
                let n = sum.try_normalize(1e-12).unwrap_or(face_normals[triangle]);
                (n, faces.len() == 1)
            }
            Feature::Vertex(k) => {
                let v = tri[k as usize];
                (self.vertex_normals[v], self.boundary_vertex[v])
            }
        };
        Projection {
            triangle,
            closest,
            normal,
            on_boundary,
            vertex,
            vertex_distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub source: usize,
    pub triangle: usize,
    pub target: ClosestPointResult,
    pub target_normal: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<CorrespondencePair>,
    pub rejected_count_distance: usize,
    pub rejected_count_normal: usize,
    pub rejected_count_boundary: usize,
}

impl CorrespondenceSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.target.distance).collect()
    }

    pub fn mean_distance(&self) -> Option<f64> {
        (!self.pairs.is_empty())
            .then(|| self.pairs.iter().map(|p| p.target.distance).sum::<f64>() / self.pairs.len() as f64)
    }
}

enum Outcome {
    Keep(CorrespondencePair),
    Distance,
    Boundary,
    Normal,
}

/// Pair every source vertex with its projection on the scan and apply the
/// distance, boundary and normal-angle filters. Output is ordered by source
/// index whatever the thread count.
pub fn find_correspondences(
    source_vertices: &[Vec3],
    source_normals: &[Vec3],
    scan: &ScanSurface,
    filters: &FilterConfig,
) -> CorrespondenceSet {
    let cos_limit = filters.max_normal_angle.to_radians().cos();
    let outcomes: Vec<Outcome> = source_vertices
        .par_iter()
        .zip(source_normals.par_iter())
        .enumerate()
        .map(|(i, (v, n))| {
            let p = scan.project(v);
            if p.closest.distance > filters.max_distance {
                return Outcome::Distance;
            }
            if filters.reject_boundary && p.on_boundary {
                return Outcome::Boundary;
            }
            if filters.max_normal_angle < 180.0 && n.dot(&p.normal) < cos_limit {
                return Outcome::Normal;
            }
            Outcome::Keep(CorrespondencePair {
                source: i,
                triangle: p.triangle,
                target: p.closest,
                target_normal: p.normal,
            })
        })
        .collect();
    let mut set = CorrespondenceSet::default();
    for o in outcomes {
        match o {
            Outcome::Keep(pair) => set.pairs.push(pair),
            Outcome::Distance => set.rejected_count_distance += 1,
            Outcome::Boundary => set.rejected_count_boundary += 1,
            Outcome::Normal => set.rejected_count_normal += 1,
        }
    }
    set
}
