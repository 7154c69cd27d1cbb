use std::io::Write;

use crate::error::{Error, Result};
use crate::synth::RecoveryReport;

use super::DistanceStats;

fn csv_error(e: csv::Error) -> Error {
    Error::io("report", std::io::Error::other(e))
}

/// A row of the registration statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub run: String,
    pub time_s: f64,
    pub surface: DistanceStats,
    pub landmarks: Option<DistanceStats>,
}

pub const STATS_HEADER: [&str; 12] = [
    "run", "time_s", "mae", "sd", "max", "min", "n", "landmark_mae", "landmark_sd", "landmark_max", "landmark_min",
    "landmark_n",
];

/// Time, MAE, SD, Max (and Min, n) for surface and landmark distances.
/// With `timing` off the time column is 0.
pub fn write_stats_csv<W: Write>(out: W, rows: &[StatsRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATS_HEADER).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![
            r.run.clone(),
            if timing { format!("{:.3}", r.time_s) } else { "0".into() },
        ];
        let mut push = |s: Option<&DistanceStats>| match s {
            Some(s) => rec.extend([
                s.mae.to_string(),
                s.sd.to_string(),
                s.max.to_string(),
                s.min.to_string(),
                s.n.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        };
        push(Some(&r.surface));
        push(r.landmarks.as_ref());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("report", e))
}

/// Long-format recovery report: `quantity,item,value`.
pub fn write_recovery_csv<W: Write>(out: W, report: &RecoveryReport, bone_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "item", "value"]).map_err(csv_error)?;
    let mut row = |q: &str, item: &str, v: f64| w.write_record([q, item, &v.to_string()]).map_err(csv_error);
    for (label, s) in [
        ("surface", &report.surface),
        ("clean_surface", &report.clean_surface),
        ("landmarks", &report.landmarks),
    ] {
        row(&format!("{label}_mae"), "", s.mae)?;
        row(&format!("{label}_sd"), "", s.sd)?;
        row(&format!("{label}_max"), "", s.max)?;
        row(&format!("{label}_min"), "", s.min)?;
        row(&format!("{label}_n"), "", s.n as f64)?;
    }
    let name = |j: usize| bone_names.get(j).cloned().unwrap_or_else(|| j.to_string());
    for (j, v) in report.rotation_error_deg.iter().enumerate() {
        row("rotation_error_deg", &name(j), *v)?;
    }
    for (j, v) in report.translation_error.iter().enumerate() {
        row("translation_error", &name(j), *v)?;
    }
    for (j, s) in report.scale_ratio.iter().enumerate() {
        for (axis, v) in ["x", "y", "z"].iter().zip(s) {
            row("scale_ratio", &format!("{}.{axis}", name(j)), *v)?;
        }
    }
    for (k, v) in report.alpha_error.iter().enumerate() {
        row("alpha_error", &k.to_string(), *v)?;
    }
    drop(row);
    w.flush().map_err(|e| Error::io("report", e))
}
