//! Model manifest (TOML) and scan landmark files.
//!
//! ```toml
//! version = 1
//! template = "template.obj"
//! weights = [[0, 0, 1.0], [1, 5, 0.25]]   # bone, vertex, weight; omit to generate
//! weight_falloff = 2.0                      # used only when weights are omitted
//!
//! [[bones]]
//! name = "pelvis"
//! rest_rotation = [1.0, 0.0, 0.0, 0.0]      # w, x, y, z
//! rest_translation = [0.0, 0.0, 0.0]
//! joint_anchor = [0.0, 0.0, 0.0]
//! tail = [0.0, 0.0, 120.0]
//!
//! [[bones]]
//! name = "spine_lower"
//! parent = "pelvis"
//! # ...
//!
//! [[blendshapes]]
//! name = "waist"
//! file = "shapes/waist.obj"                 # same topology as the template
//!
//! [[landmarks]]
//! name = "sternal_notch"
//! triangle = 812
//! barycentric = [0.2, 0.3, 0.5]
//!
//! [[patterns]]
//! name = "inframammary_r"
//! arrow = false
//! anchors = [{ triangle = 10, barycentric = [1.0, 0.0, 0.0] }]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::ScanLandmarks;
use crate::error::{Error, Result};
use crate::geometry::{format_coord, load_mesh, save_mesh, MeshFormat, PatternCurve, SurfaceAnchor, TriangleMesh, Vec3};
use crate::rig::{BlendWeights, Bone, Quat, Skeleton};
use crate::shape::{BlendshapeSet, DeformableModel, Landmark};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub template: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_falloff: Option<f64>,
    pub bones: Vec<BoneEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blendshapes: Vec<BlendshapeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub landmarks: Vec<LandmarkEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patterns: Vec<PatternEntry>,
    /// Sparse (bone, vertex, weight) triplets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub rest_rotation: [f64; 4],
    pub rest_translation: [f64; 3],
    pub joint_anchor: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendshapeEntry {
    pub name: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkEntry {
    pub name: String,
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEntry {
    pub name: String,
    #[serde(default)]
    pub arrow: bool,
    pub anchors: Vec<SurfaceAnchor>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_model(path: &Path) -> Result<DeformableModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::format(path, 0, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            0,
            format!("unsupported manifest version {} (expected {MANIFEST_VERSION})", manifest.version),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let template_path = resolve(base, &manifest.template);
    let template = load_mesh(&template_path, MeshFormat::from_path(&template_path)?)?;

    let mut bones = Vec::with_capacity(manifest.bones.len());
    for b in &manifest.bones {
        let parent = match &b.parent {
            Some(name) => Some(
                manifest
                    .bones
                    .iter()
                    .position(|o| &o.name == name)
                    .ok_or_else(|| Error::format(path, 0, format!("bone '{}' has unknown parent '{name}'", b.name)))?,
            ),
            None => None,
        };
        let [w, x, y, z] = b.rest_rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return Err(Error::format(path, 0, format!("bone '{}' has a zero rest rotation", b.name)));
        }
        bones.push(Bone {
            name: b.name.clone(),
            parent,
            rest_rotation: Quat::new_normalize(q),
            rest_translation: b.rest_translation.into(),
            joint_anchor: b.joint_anchor.into(),
            tail: b.tail.map(Into::into),
        });
    }
    let skeleton = Skeleton::new(bones)?;

    let n = template.vertex_count();
    let weights = match &manifest.weights {
        Some(triplets) => BlendWeights::from_triplets(skeleton.len(), n, triplets)?,
        None => BlendWeights::from_bone_segments(&skeleton, &template.vertices, manifest.weight_falloff.unwrap_or(2.0)),
    };

    let mut names = Vec::with_capacity(manifest.blendshapes.len());
    let mut shapes = Vec::with_capacity(manifest.blendshapes.len());
    for s in &manifest.blendshapes {
        let p = resolve(base, &s.file);
        let sculpted = load_mesh(&p, MeshFormat::from_path(&p)?)?;
        if sculpted.triangles != template.triangles {
            return Err(Error::TopologyMismatch(format!(
                "{}: blendshape topology differs from the template",
                p.display()
            )));
        }
        shapes.push(BlendshapeSet::displacement_from(&template.vertices, &sculpted.vertices)?);
        names.push(s.name.clone());
    }
    let blendshapes = BlendshapeSet::new(n, names, shapes)?;

    let landmarks = manifest
        .landmarks
        .iter()
        .map(|l| {
            Ok(Landmark {
                name: l.name.clone(),
                anchor: SurfaceAnchor::new(l.triangle, l.barycentric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let patterns = manifest
        .patterns
        .iter()
        .map(|p| PatternCurve {
            name: p.name.clone(),
            arrow: p.arrow,
            anchors: p.anchors.clone(),
        })
        .collect();
    DeformableModel::new(template, skeleton, weights, blendshapes, landmarks, patterns)
}

/// Write `model.toml`, `template.obj` and one OBJ per blendshape into `dir`.
/// Returns the manifest path.
pub fn save_model(dir: &Path, model: &DeformableModel) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("shapes")).map_err(|e| Error::io(dir, e))?;
    let template = TriangleMesh {
        vertices: model.template.vertices.clone(),
        triangles: model.template.triangles.clone(),
        ..TriangleMesh::default()
    };
    save_mesh(&template, &dir.join("template.obj"), MeshFormat::Obj)?;
    let bones = model.skeleton.bones();
    let mut blendshapes = Vec::with_capacity(model.shape_count());
    for (k, name) in model.blendshapes.names().iter().enumerate() {
        let file = PathBuf::from("shapes").join(format!("{k:03}_{}.obj", sanitize(name)));
        let vertices: Vec<Vec3> = template
            .vertices
            .iter()
            .zip(model.blendshapes.shape(k))
            .map(|(v, d)| v + d)
            .collect();
        let sculpted = TriangleMesh {
            vertices,
            triangles: template.triangles.clone(),
            ..TriangleMesh::default()
        };
        save_mesh(&sculpted, &dir.join(&file), MeshFormat::Obj)?;
        blendshapes.push(BlendshapeEntry {
            name: name.clone(),
            file,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        template: PathBuf::from("template.obj"),
        weight_falloff: None,
        bones: bones
            .iter()
            .map(|b| BoneEntry {
                name: b.name.clone(),
                parent: b.parent.map(|p| bones[p].name.clone()),
                rest_rotation: [b.rest_rotation.w, b.rest_rotation.i, b.rest_rotation.j, b.rest_rotation.k],
                rest_translation: b.rest_translation.into(),
                joint_anchor: b.joint_anchor.into(),
                tail: b.tail.map(Into::into),
            })
            .collect(),
        blendshapes,
        landmarks: model
            .landmarks
            .iter()
            .map(|l| LandmarkEntry {
                name: l.name.clone(),
                triangle: l.anchor.triangle,
                barycentric: l.anchor.barycentric,
            })
            .collect(),
        patterns: model
            .patterns
            .iter()
            .map(|p| PatternEntry {
                name: p.name.clone(),
                arrow: p.arrow,
                anchors: p.anchors.clone(),
            })
            .collect(),
        weights: Some(model.weights.triplets()),
    };
    let path = dir.join("model.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Scan landmarks as CSV with a `name,x,y,z` header.
pub fn load_scan_landmarks(path: &Path) -> Result<ScanLandmarks> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, 1, e.to_string()))?
        .clone();
    let expected = ["name", "x", "y", "z"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| !h.eq_ignore_ascii_case(e)) {
        return Err(Error::format(path, 1, "expected header name,x,y,z"));
    }
    let mut out = ScanLandmarks::default();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::format(path, line, e.to_string()))?;
        let name = record[0].to_string();
        if name.is_empty() {
            return Err(Error::format(path, line, "empty landmark name"));
        }
        if out.get(&name).is_some() {
            return Err(Error::format(path, line, format!("duplicate landmark '{name}'")));
        }
        let mut xyz = [0.0; 3];
        for (k, slot) in xyz.iter_mut().enumerate() {
            let tok = &record[k + 1];
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, line, format!("invalid number '{tok}'")))?;
        }
        out.names.push(name);
        out.points.push(xyz.into());
    }
    Ok(out)
}

pub fn save_scan_landmarks(path: &Path, landmarks: &ScanLandmarks) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["name", "x", "y", "z"]).map_err(wrap)?;
    for (n, p) in landmarks.names.iter().zip(&landmarks.points) {
        w.write_record([n.clone(), format_coord(p.x), format_coord(p.y), format_coord(p.z)])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
