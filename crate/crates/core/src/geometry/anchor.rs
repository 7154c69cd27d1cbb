use serde::{Deserialize, Serialize};

use super::{closest_point_on_triangle, TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// A point fixed to a mesh surface by triangle index and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAnchor {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

impl SurfaceAnchor {
    pub fn new(triangle: usize, barycentric: [f64; 3]) -> Result<Self> {
        let sum: f64 = barycentric.iter().sum();
        if barycentric.iter().any(|&b| !(b >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "barycentric {barycentric:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(Self {
            triangle,
            barycentric,
        })
    }

    pub fn evaluate(&self, triangles: &[[usize; 3]], vertices: &[Vec3]) -> Result<Vec3> {
        evaluate_anchor(triangles, vertices, self)
    }
}

/// Barycentric combination of the anchor triangle's corners in `vertices`.
pub fn evaluate_anchor(
    triangles: &[[usize; 3]],
    vertices: &[Vec3],
    anchor: &SurfaceAnchor,
) -> Result<Vec3> {
    let tri = triangles.get(anchor.triangle).ok_or_else(|| {
        Error::TopologyMismatch(format!(
            "anchor triangle {} out of range ({} triangles)",
            anchor.triangle,
            triangles.len()
        ))
    })?;
    let mut p = Vec3::zeros();
    for (&i, &w) in tri.iter().zip(&anchor.barycentric) {
        let v = vertices.get(i).ok_or_else(|| {
            Error::TopologyMismatch(format!("vertex {i} out of range ({})", vertices.len()))
        })?;
        p += v * w;
    }
    Ok(p)
}

/// Anchor `point` at the globally closest surface point (brute force; ties go
/// to the lowest triangle index).
pub fn anchor_point(mesh: &TriangleMesh, point: Vec3) -> Result<SurfaceAnchor> {
    let mut best: Option<(f64, usize, [f64; 3])> = None;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let r = closest_point_on_triangle(point, a, b, c);
        if best.is_none_or(|(d, _, _)| r.distance < d) {
            best = Some((r.distance, t, r.barycentric));
        }
    }
    let (_, triangle, barycentric) =
        best.ok_or_else(|| Error::EmptyInput("cannot anchor on a mesh without triangles".into()))?;
    Ok(SurfaceAnchor {
        triangle,
        barycentric,
    })
}

/// An ordered curve drawn on the template surface. Arrows keep their
/// direction from first to last anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCurve {
    pub name: String,
    pub arrow: bool,
    pub anchors: Vec<SurfaceAnchor>,
}

impl PatternCurve {
    pub fn validate(&self, triangle_count: usize) -> Result<()> {
        if self.anchors.len() < 2 {
            return Err(Error::Contract(format!(
                "pattern '{}' needs at least 2 anchors",
                self.name
            )));
        }
        if let Some(a) = self.anchors.iter().find(|a| a.triangle >= triangle_count) {
            return Err(Error::TopologyMismatch(format!(
                "pattern '{}' references triangle {}",
                self.name, a.triangle
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, triangles: &[[usize; 3]], vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        self.anchors
            .iter()
            .map(|a| evaluate_anchor(triangles, vertices, a))
            .collect()
    }
}
