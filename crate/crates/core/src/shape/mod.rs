//! Blendshape basis and the full deformable model: skinning applied on top
//! of `v + Σ α_k b_k`.

use crate::error::{Error, Result};
use crate::geometry::{PatternCurve, SurfaceAnchor, TriangleMesh, Vec3};
use crate::rig::{skin, BlendWeights, PoseParams, Skeleton};

#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeSet {
    names: Vec<String>,
    shapes: Vec<Vec<Vec3>>,
    support: Vec<Vec<usize>>,
    vertex_shapes: Vec<Vec<usize>>,
    vertex_count: usize,
}

impl BlendshapeSet {
    pub fn empty(vertex_count: usize) -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            support: Vec::new(),
            vertex_shapes: vec![Vec::new(); vertex_count],
            vertex_count,
        }
    }

    pub fn new(vertex_count: usize, names: Vec<String>, shapes: Vec<Vec<Vec3>>) -> Result<Self> {
        if names.len() != shapes.len() {
            return Err(Error::Contract(format!(
                "{} blendshape names for {} shapes",
                names.len(),
                shapes.len()
            )));
        }
        let mut support = Vec::with_capacity(shapes.len());
        for (name, shape) in names.iter().zip(&shapes) {
            if shape.len() != vertex_count {
                return Err(Error::Contract(format!(
                    "blendshape '{name}' has {} rows, template has {vertex_count}",
                    shape.len()
                )));
            }
            if shape.iter().any(|d| !d.iter().all(|x| x.is_finite())) {
                return Err(Error::Contract(format!("blendshape '{name}' has non-finite displacements")));
            }
            support.push(
                shape
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| **d != Vec3::zeros())
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
        let vertex_shapes = invert_support(&support, vertex_count);
        Ok(Self {
            names,
            shapes,
            support,
            vertex_shapes,
            vertex_count,
        })
    }

    /// Displacements from a sculpted copy of the template.
    pub fn displacement_from(template: &[Vec3], sculpted: &[Vec3]) -> Result<Vec<Vec3>> {
        if template.len() != sculpted.len() {
            return Err(Error::TopologyMismatch(format!(
                "shape mesh has {} vertices, template has {}",
                sculpted.len(),
                template.len()
            )));
        }
        Ok(sculpted.iter().zip(template).map(|(s, t)| s - t).collect())
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, k: usize) -> &[Vec3] {
        &self.shapes[k]
    }

    /// Vertices with a nonzero displacement in shape `k`, ascending.
    pub fn support(&self, k: usize) -> &[usize] {
        &self.support[k]
    }

    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count > self.len() {
            return Err(Error::Contract(format!(
                "cannot keep {count} of {} blendshapes",
                self.len()
            )));
        }
        let support = self.support[..count].to_vec();
        Ok(Self {
            names: self.names[..count].to_vec(),
            shapes: self.shapes[..count].to_vec(),
            vertex_shapes: invert_support(&support, self.vertex_count),
            support,
            vertex_count: self.vertex_count,
        })
    }

    /// Shapes whose support contains vertex `i`, ascending.
    pub fn vertex_shapes(&self, i: usize) -> &[usize] {
        &self.vertex_shapes[i]
    }
}

fn invert_support(support: &[Vec<usize>], vertex_count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); vertex_count];
    for (k, s) in support.iter().enumerate() {
        for &i in s {
            out[i].push(k);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub alpha: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros(count: usize) -> Self {
        Self {
            alpha: vec![0.0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub name: String,
    pub anchor: SurfaceAnchor,
}

#[derive(Debug, Clone)]
pub struct DeformableModel {
    pub template: TriangleMesh,
    pub skeleton: Skeleton,
    pub weights: BlendWeights,
    pub blendshapes: BlendshapeSet,
    pub landmarks: Vec<Landmark>,
    pub patterns: Vec<PatternCurve>,
}

impl DeformableModel {
    pub fn new(
        template: TriangleMesh,
        skeleton: Skeleton,
        weights: BlendWeights,
        blendshapes: BlendshapeSet,
        landmarks: Vec<Landmark>,
        patterns: Vec<PatternCurve>,
    ) -> Result<Self> {
        let n = template.vertex_count();
        if weights.vertex_count() != n || weights.bone_count() != skeleton.len() {
            return Err(Error::Contract(format!(
                "weights are {}×{}, model has {} bones and {n} vertices",
                weights.bone_count(),
                weights.vertex_count(),
                skeleton.len()
            )));
        }
        if blendshapes.vertex_count() != n {
            return Err(Error::Contract(format!(
                "blendshapes cover {} vertices, template has {n}",
                blendshapes.vertex_count()
            )));
        }
        let tcount = template.triangle_count();
        for l in &landmarks {
            if l.anchor.triangle >= tcount {
                return Err(Error::TopologyMismatch(format!(
                    "landmark '{}' references triangle {}",
                    l.name, l.anchor.triangle
                )));
            }
        }
        for p in &patterns {
            p.validate(tcount)?;
        }
        let template = if template.vertex_normals.is_some() {
            template
        } else {
            template.with_normals()
        };
        Ok(Self {
            template,
            skeleton,
            weights,
            blendshapes,
            landmarks,
            patterns,
        })
    }

    pub fn bone_count(&self) -> usize {
        self.skeleton.len()
    }

    pub fn shape_count(&self) -> usize {
        self.blendshapes.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn landmark_index(&self, name: &str) -> Option<usize> {
        self.landmarks.iter().position(|l| l.name == name)
    }

    /// Deformed vertex positions without building a mesh.
    pub fn deform_vertices(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<Vec<Vec3>> {
        let shaped = apply_blendshapes(&self.template.vertices, &self.blendshapes, shape)?;
        skin(&shaped, &self.skeleton, &self.weights, pose)
    }

    pub fn landmark_positions(&self, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        self.landmarks
            .iter()
            .map(|l| l.anchor.evaluate(&self.template.triangles, vertices))
            .collect()
    }
}

/// `v + Σ α_k b_k`; with α = 0 the template is returned unchanged.
pub fn apply_blendshapes(vertices: &[Vec3], shapes: &BlendshapeSet, shape: &ShapeParams) -> Result<Vec<Vec3>> {
    if vertices.len() != shapes.vertex_count() || shape.len() != shapes.len() {
        return Err(Error::Contract(format!(
            "{} vertices and {} weights for a {}×{} blendshape set",
            vertices.len(),
            shape.len(),
            shapes.len(),
            shapes.vertex_count()
        )));
    }
    let mut out = vertices.to_vec();
    for (k, &a) in shape.alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for &i in shapes.support(k) {
            out[i] += shapes.shape(k)[i] * a;
        }
    }
    Ok(out)
}

pub fn deform(model: &DeformableModel, pose: &PoseParams, shape: &ShapeParams) -> Result<TriangleMesh> {
    let vertices = model.deform_vertices(pose, shape)?;
    model.template.with_vertices(vertices)
}

/// Keep only the first `count` blendshapes.
pub fn truncate_blendshapes(model: &DeformableModel, count: usize) -> Result<DeformableModel> {
    let mut out = model.clone();
    out.blendshapes = model.blendshapes.truncated(count)?;
    Ok(out)
}
