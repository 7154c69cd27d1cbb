//! Registration statistics, pattern transfer and parameter sweeps.

mod report;
mod sweep;
mod transfer;

use serde::{Deserialize, Serialize};

use crate::energy::ScanLandmarks;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::shape::DeformableModel;
use crate::spatial::CorrespondenceSet;

pub use report::{write_recovery_csv, write_stats_csv, StatsRow, STATS_HEADER};
pub use sweep::{
    log_spaced, run_cell, sweep_blendshapes, sweep_lambda, sweep_landmarks, write_sweep_long, write_sweep_table,
    CellStatus, Lambda, SweepCell, SweepKind, SweepRow, SweepSettings, SweepTable, SweepTarget,
};
pub use transfer::{
    transfer_patterns, write_patterns_csv, write_patterns_obj, write_patterns_text, TransferredPattern,
    TransferredPoint,
};

/// Statistics of absolute distances, standard deviation in population form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mae: f64,
    pub sd: f64,
    pub max: f64,
    pub min: f64,
    pub n: usize,
}

pub fn distance_stats(distances: &[f64]) -> Result<DistanceStats> {
    if distances.is_empty() {
        return Err(Error::EmptyInput("no distances to summarize".into()));
    }
    let n = distances.len() as f64;
    let abs: Vec<f64> = distances.iter().map(|d| d.abs()).collect();
    let mae = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|d| (d - mae).powi(2)).sum::<f64>() / n;
    Ok(DistanceStats {
        mae,
        sd: var.sqrt(),
        max: abs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: abs.iter().copied().fold(f64::INFINITY, f64::min),
        n: distances.len(),
    })
}

/// Statistics of the retained correspondence distances.
pub fn surface_error(correspondences: &CorrespondenceSet) -> Result<DistanceStats> {
    distance_stats(&correspondences.distances())
}

/// Distances between the model landmarks on `vertices` and the scan
/// landmarks of the same name.
pub fn landmark_error(model: &DeformableModel, vertices: &[Vec3], scan: &ScanLandmarks) -> Result<DistanceStats> {
    let positions = model.landmark_positions(vertices)?;
    let d: Vec<f64> = model
        .landmarks
        .iter()
        .zip(&positions)
        .filter_map(|(l, p)| scan.get(&l.name).map(|q| (p - q).norm()))
        .collect();
    if d.is_empty() {
        return Err(Error::EmptyInput("scan marks none of the model landmarks".into()));
    }
    distance_stats(&d)
}
