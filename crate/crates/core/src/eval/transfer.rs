use std::io::Write;

use crate::energy::ParamVector;
use crate::error::{Error, Result};
use crate::geometry::{format_coord, Vec3};
use crate::shape::DeformableModel;
use crate::spatial::{FilterConfig, ScanSurface};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferredPoint {
    /// Closest scan point.
    pub position: Vec3,
    pub triangle: usize,
    /// Distance from the anchor on the deformed model to `position`.
    pub residual: f64,
    /// False when the projection lands beyond the distance filter or on a
    /// scan boundary, usually because the anchor sits over a hole.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferredPattern {
    pub name: String,
    pub arrow: bool,
    pub points: Vec<TransferredPoint>,
}

impl TransferredPattern {
    pub fn polyline(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.points.iter().map(|p| p.residual).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> usize {
        self.points.iter().filter(|p| !p.reliable).count()
    }
}

/// Evaluate each pattern anchor on the deformed model and project it onto
/// the scan.
pub fn transfer_patterns(
    model: &DeformableModel,
    params: &ParamVector,
    scan: &ScanSurface,
    filters: &FilterConfig,
) -> Result<Vec<TransferredPattern>> {
    let vertices = model.deform_vertices(&params.pose, &params.shape)?;
    model
        .patterns
        .iter()
        .map(|pattern| {
            let points = pattern
                .evaluate(&model.template.triangles, &vertices)?
                .iter()
                .map(|q| {
                    let proj = scan.project_exact(q);
                    let residual = proj.closest.distance;
                    TransferredPoint {
                        position: proj.closest.point,
                        triangle: proj.triangle,
                        residual,
                        reliable: residual <= filters.max_distance && !proj.on_boundary,
                    }
                })
                .collect();
            Ok(TransferredPattern {
                name: pattern.name.clone(),
                arrow: pattern.arrow,
                points,
            })
        })
        .collect()
}

/// Polylines as OBJ `l` elements, one object per pattern.
pub fn write_patterns_obj<W: Write>(mut out: W, patterns: &[TransferredPattern]) -> Result<()> {
    let io = |e| Error::io("patterns", e);
    let mut base = 1;
    for p in patterns {
        writeln!(out, "o {}", p.name).map_err(io)?;
        for q in &p.points {
            let v = q.position;
            writeln!(out, "v {} {} {}", format_coord(v.x), format_coord(v.y), format_coord(v.z)).map_err(io)?;
        }
        let ids: Vec<String> = (base..base + p.points.len()).map(|i| i.to_string()).collect();
        writeln!(out, "l {}", ids.join(" ")).map_err(io)?;
        base += p.points.len();
    }
    out.flush().map_err(io)
}

/// Plain text: a `name point_count arrow|line` header, then one `x y z` row per point.
pub fn write_patterns_text<W: Write>(mut out: W, patterns: &[TransferredPattern]) -> Result<()> {
    let io = |e| Error::io("patterns", e);
    for p in patterns {
        let kind = if p.arrow { "arrow" } else { "line" };
        writeln!(out, "{} {} {kind}", p.name, p.points.len()).map_err(io)?;
        for q in &p.points {
            let v = q.position;
            writeln!(out, "{} {} {}", format_coord(v.x), format_coord(v.y), format_coord(v.z)).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Per-point residuals and reliability flags.
pub fn write_patterns_csv<W: Write>(out: W, patterns: &[TransferredPattern]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("patterns", std::io::Error::other(e));
    w.write_record(["pattern", "index", "x", "y", "z", "triangle", "residual", "reliable"])
        .map_err(wrap)?;
    for p in patterns {
        for (i, q) in p.points.iter().enumerate() {
            w.write_record([
                p.name.clone(),
                i.to_string(),
                format_coord(q.position.x),
                format_coord(q.position.y),
                format_coord(q.position.z),
                q.triangle.to_string(),
                q.residual.to_string(),
                q.reliable.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("patterns", e))
}
