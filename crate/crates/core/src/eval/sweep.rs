use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyWeights, LandmarkTargets, ScanLandmarks};
use crate::error::{Error, Result};
use crate::shape::{truncate_blendshapes, DeformableModel};
use crate::solver::{initialize_from_landmarks, register, SolverConfig};
use crate::spatial::{FilterConfig, ScanSurface};

use super::{landmark_error, surface_error};

/// A scan to register in a sweep.
#[derive(Debug, Clone)]
pub struct SweepTarget {
    pub name: String,
    pub scan: ScanSurface,
    pub landmarks: ScanLandmarks,
}

/// Settings shared by every cell; the swept quantity overrides one of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub weights: EnergyWeights,
    pub filters: FilterConfig,
    pub solver: SolverConfig,
    pub active_landmarks: usize,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            filters: FilterConfig::default(),
            solver: SolverConfig::default(),
            active_landmarks: 12,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    D,
    S,
    Bs,
    J,
    L,
}

impl Lambda {
    pub const ALL: [Lambda; 5] = [Lambda::D, Lambda::S, Lambda::Bs, Lambda::J, Lambda::L];

    pub fn name(self) -> &'static str {
        match self {
            Lambda::D => "lambda_d",
            Lambda::S => "lambda_s",
            Lambda::Bs => "lambda_bs",
            Lambda::J => "lambda_j",
            Lambda::L => "lambda_l",
        }
    }

    pub fn set(self, weights: &mut EnergyWeights, value: f64) {
        let slot = match self {
            Lambda::D => &mut weights.lambda_d,
            Lambda::S => &mut weights.lambda_s,
            Lambda::Bs => &mut weights.lambda_bs,
            Lambda::J => &mut weights.lambda_j,
            Lambda::L => &mut weights.lambda_l,
        };
        *slot = value;
    }
}

impl std::str::FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("lambda_").unwrap_or(&key);
        Lambda::ALL
            .into_iter()
            .find(|l| l.name().strip_prefix("lambda_") == Some(key))
            .ok_or_else(|| Error::Config(format!("unknown lambda '{s}' (expected d, s, bs, j or l)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepKind {
    Landmarks,
    Blendshapes,
    Lambda(Lambda),
}

impl SweepKind {
    pub fn column(&self) -> &'static str {
        match self {
            SweepKind::Landmarks => "landmarks",
            SweepKind::Blendshapes => "blendshapes",
            SweepKind::Lambda(l) => l.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Converged,
    NotConverged,
    /// The registration errored (for example no overlap); metrics are NaN.
    Failed,
}

/// One registration of one target at one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub setting: f64,
    pub target: String,
    pub status: CellStatus,
    pub surface_mae: f64,
    pub landmark_mae: f64,
    pub iterations: usize,
}

/// Means over the targets that did not fail.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: f64,
    pub surface_mae: f64,
    pub landmark_mae: f64,
    pub targets: usize,
    pub not_converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

/// Register one target; errors become a failed cell.
pub fn run_cell(
    model: &DeformableModel,
    target: &SweepTarget,
    weights: &EnergyWeights,
    settings: &SweepSettings,
    setting: f64,
) -> SweepCell {
    let attempt = || -> Result<(bool, f64, f64, usize)> {
        let initial = if target.landmarks.len() >= 3 {
            Some(initialize_from_landmarks(model, &target.landmarks)?)
        } else {
            None
        };
        let active = LandmarkTargets::select(model, &target.landmarks, settings.active_landmarks);
        let r = register(
            model,
            &target.scan,
            Some(&active),
            weights,
            &settings.filters,
            &settings.solver,
            initial.as_ref(),
        )?;
        let vertices = model.deform_vertices(&r.params.pose, &r.params.shape)?;
        let surface = surface_error(&r.correspondences)?.mae;
        let landmarks = landmark_error(model, &vertices, &target.landmarks).map_or(f64::NAN, |s| s.mae);
        Ok((r.converged, surface, landmarks, r.trace.len()))
    };
    match attempt() {
        Ok((converged, surface_mae, landmark_mae, iterations)) => SweepCell {
            setting,
            target: target.name.clone(),
            status: if converged {
                CellStatus::Converged
            } else {
                CellStatus::NotConverged
            },
            surface_mae,
            landmark_mae,
            iterations,
        },
        Err(e) => {
            log::warn!("{} at {setting}: {e}", target.name);
            SweepCell {
                setting,
                target: target.name.clone(),
                status: CellStatus::Failed,
                surface_mae: f64::NAN,
                landmark_mae: f64::NAN,
                iterations: 0,
            }
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize(kind: SweepKind, settings: &[f64], cells: Vec<SweepCell>) -> SweepTable {
    let rows = settings
        .iter()
        .map(|&s| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.setting == s).collect();
            SweepRow {
                setting: s,
                surface_mae: mean(group.iter().map(|c| c.surface_mae)),
                landmark_mae: mean(group.iter().map(|c| c.landmark_mae)),
                targets: group.len(),
                not_converged: group.iter().filter(|c| c.status == CellStatus::NotConverged).count(),
                failed: group.iter().filter(|c| c.status == CellStatus::Failed).count(),
            }
        })
        .collect();
    SweepTable { kind, rows, cells }
}

fn run_grid<F>(settings: &SweepSettings, values: &[f64], targets: &[SweepTarget], cell: F) -> Result<Vec<SweepCell>>
where
    F: Fn(usize, &SweepTarget) -> SweepCell + Sync,
{
    if targets.is_empty() {
        return Err(Error::EmptyInput("sweep has no targets".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep has no settings".into()));
    }
    let grid: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|s| (0..targets.len()).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| grid.par_iter().map(|&(s, t)| cell(s, &targets[t])).collect()))
}

/// Register every target with the first `count` landmarks active, per count.
pub fn sweep_landmarks(
    model: &DeformableModel,
    targets: &[SweepTarget],
    settings: &SweepSettings,
    counts: &[usize],
) -> Result<SweepTable> {
    settings.weights.validate()?;
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let cells = run_grid(settings, &values, targets, |s, target| {
        let local = SweepSettings {
            active_landmarks: counts[s],
            ..*settings
        };
        run_cell(model, target, &settings.weights, &local, values[s])
    })?;
    Ok(summarize(SweepKind::Landmarks, &values, cells))
}

/// Register every target against the model truncated to each shape count.
pub fn sweep_blendshapes(
    model: &DeformableModel,
    targets: &[SweepTarget],
    settings: &SweepSettings,
    counts: &[usize],
) -> Result<SweepTable> {
    settings.weights.validate()?;
    let models = counts
        .iter()
        .map(|&c| truncate_blendshapes(model, c))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let cells = run_grid(settings, &values, targets, |s, target| {
        run_cell(&models[s], target, &settings.weights, settings, values[s])
    })?;
    Ok(summarize(SweepKind::Blendshapes, &values, cells))
}

/// Vary one λ with the others held at their values in `settings`.
pub fn sweep_lambda(
    model: &DeformableModel,
    targets: &[SweepTarget],
    settings: &SweepSettings,
    which: Lambda,
    values: &[f64],
) -> Result<SweepTable> {
    let weights = values
        .iter()
        .map(|&v| {
            let mut w = settings.weights;
            which.set(&mut w, v);
            w.validate().map(|_| w)
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = run_grid(settings, values, targets, |s, target| {
        run_cell(model, target, &weights[s], settings, values[s])
    })?;
    Ok(summarize(SweepKind::Lambda(which), values, cells))
}

/// `count` values spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && count >= 1) || (count == 1 && hi != lo) {
        return Err(Error::Config(format!("cannot log-space {count} values over [{lo}, {hi}]")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)
            }
        })
        .collect())
}

fn csv_error(e: csv::Error) -> Error {
    Error::io("sweep", std::io::Error::other(e))
}

/// One row per setting.
pub fn write_sweep_table<W: Write>(out: W, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        table.kind.column(),
        "surface_mae",
        "landmark_mae",
        "targets",
        "not_converged",
        "failed",
    ])
    .map_err(csv_error)?;
    for r in &table.rows {
        w.write_record([
            r.setting.to_string(),
            r.surface_mae.to_string(),
            r.landmark_mae.to_string(),
            r.targets.to_string(),
            r.not_converged.to_string(),
            r.failed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("sweep", e))
}

/// Long format for plotting: one row per (setting, target, metric).
pub fn write_sweep_long<W: Write>(out: W, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "setting", "target", "status", "metric", "value"])
        .map_err(csv_error)?;
    for c in &table.cells {
        let status = match c.status {
            CellStatus::Converged => "converged",
            CellStatus::NotConverged => "not_converged",
            CellStatus::Failed => "failed",
        };
        for (metric, value) in [("surface_mae", c.surface_mae), ("landmark_mae", c.landmark_mae)] {
            w.write_record([
                table.kind.column(),
                &c.setting.to_string(),
                &c.target,
                status,
                metric,
                &value.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::io("sweep", e))
}
