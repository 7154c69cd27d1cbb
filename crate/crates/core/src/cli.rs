//! Command-line driver. Exit codes: 0 success (converged), 1 input or
//! configuration error, 2 registration did not converge or found no overlap.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::energy::{LandmarkTargets, ScanLandmarks};
use crate::error::{Error, Result};
use crate::eval::{
    landmark_error, surface_error, sweep_blendshapes, sweep_lambda, sweep_landmarks, transfer_patterns,
    write_patterns_csv, write_patterns_obj, write_patterns_text, write_recovery_csv, write_stats_csv,
    write_sweep_long, write_sweep_table, Lambda, StatsRow, SweepSettings, SweepTable, SweepTarget,
};
use crate::geometry::{load_mesh, save_mesh, MeshFormat};
use crate::manifest::{load_model, load_scan_landmarks, save_model, save_scan_landmarks};
use crate::shape::DeformableModel;
use crate::solver::{correspondences_at, initialize_from_landmarks, register, save_trace_csv};
use crate::spatial::ScanSurface;
use crate::synth::{
    evaluate_recovery, generate_target, generate_template, load_ground_truth, load_params, save_ground_truth,
    save_params, SyntheticTarget,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "torsofit", version, about = "Register an articulated torso template to surface scans")]
pub struct Cli {
    /// Log every solver iteration.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register the model to a scan.
    Register(Common),
    /// Write the procedural model and a synthetic target with its ground truth.
    Synth(SynthArgs),
    /// Compare a registration result with a ground-truth sidecar.
    Eval(EvalArgs),
    /// Sweep landmark count, blendshape count or one λ over synthetic targets.
    Sweep(SweepArgs),
}

/// Flags that override keys of the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model manifest (default: the procedural template).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Scan mesh (.obj or .ply).
    #[arg(long)]
    pub scan: Option<PathBuf>,
    /// Scan landmarks as CSV `name,x,y,z`.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for synthetic targets.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Data-term λ (weight is 1/λ).
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lambda_bs: Option<f64>,
    #[arg(long)]
    pub lambda_j: Option<f64>,
    #[arg(long)]
    pub lambda_l: Option<f64>,
    /// Wall-clock budget per registration, seconds.
    #[arg(long)]
    pub max_time_s: Option<f64>,
    /// How many scan landmarks enter the landmark term.
    #[arg(long)]
    pub active_landmarks: Option<usize>,
    /// Stop when the mean correspondence distance changes by less than this (mm).
    #[arg(long)]
    pub convergence_threshold: Option<f64>,
    #[arg(long)]
    pub max_outer_iterations: Option<usize>,
    /// Fit pose with blendshape weights held before the full solve.
    #[arg(long)]
    pub pose_warmup: bool,
    /// Write zeros in the timing columns so repeated runs compare byte for byte.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Only write the model manifest.
    #[arg(long)]
    pub model_only: bool,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub hole_fraction: Option<f64>,
    #[arg(long)]
    pub max_joint_angle_deg: Option<f64>,
    #[arg(long)]
    pub root_rotation_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of a `register` run.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground-truth sidecar written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKindArg {
    Landmarks,
    Blendshapes,
    Lambda,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub kind: SweepKindArg,
    #[command(flatten)]
    pub common: Common,
    /// Which λ to vary: d, s, bs, j or l.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Comma-separated landmark or blendshape counts.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Number of synthetic targets.
    #[arg(long)]
    pub targets: Option<usize>,
}

/// Load the config file (if any) and apply flag overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $slot:expr) => {
            if let Some(v) = $flag.clone() {
                $slot = v;
            }
        };
    }
    if common.model.is_some() {
        c.model = common.model.clone();
    }
    if common.scan.is_some() {
        c.scan = common.scan.clone();
    }
    if common.landmarks.is_some() {
        c.landmarks = common.landmarks.clone();
    }
    set!(common.out => c.out);
    set!(common.seed => c.seed);
    set!(common.jobs => c.jobs);
    set!(common.lambda_d => c.weights.lambda_d);
    set!(common.lambda_s => c.weights.lambda_s);
    set!(common.lambda_bs => c.weights.lambda_bs);
    set!(common.lambda_j => c.weights.lambda_j);
    set!(common.lambda_l => c.weights.lambda_l);
    set!(common.active_landmarks => c.active_landmarks);
    set!(common.convergence_threshold => c.solver.convergence_threshold);
    set!(common.max_outer_iterations => c.solver.max_outer_iterations);
    if common.max_time_s.is_some() {
        c.solver.max_time_s = common.max_time_s;
    }
    if common.pose_warmup {
        c.solver.pose_warmup = true;
    }
    if common.no_timing {
        c.timing = false;
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Register(common) => resolve_config(&common).and_then(|c| cmd_register(&c)),
        Command::Synth(args) => cmd_synth(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NoOverlap(_) | Error::SolverStall(_) => EXIT_NOT_CONVERGED,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn load_model_for(config: &RunConfig) -> Result<DeformableModel> {
    match &config.model {
        Some(p) => load_model(p),
        None => generate_template(&config.torso),
    }
}

fn create_out(config: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    config.save(&config.out.join("config.toml"))?;
    Ok(&config.out)
}

fn writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn load_scan(path: &Path) -> Result<ScanSurface> {
    ScanSurface::new(load_mesh(path, MeshFormat::from_path(path)?)?)
}

/// Register, then write the registered mesh, parameters, trace, statistics
/// and transferred patterns.
pub fn cmd_register(config: &RunConfig) -> Result<i32> {
    let scan_path = config
        .scan
        .as_ref()
        .ok_or_else(|| Error::Config("no scan given (--scan or `scan` in the config)".into()))?;
    let model = load_model_for(config)?;
    let scan = load_scan(scan_path)?;
    let landmarks = match &config.landmarks {
        Some(p) => load_scan_landmarks(p)?,
        None => ScanLandmarks::default(),
    };
    let matched = model.landmarks.iter().filter(|l| landmarks.get(&l.name).is_some()).count();
    let initial = if matched >= 3 {
        Some(initialize_from_landmarks(&model, &landmarks)?)
    } else {
        None
    };
    let active = LandmarkTargets::select(&model, &landmarks, config.active_landmarks);
    let out = create_out(config)?;
    let result = register(
        &model,
        &scan,
        Some(&active),
        &config.weights,
        &config.filters,
        &config.solver,
        initial.as_ref(),
    )?;
    let vertices = model.deform_vertices(&result.params.pose, &result.params.shape)?;
    let registered = model.template.with_vertices(vertices.clone())?;
    save_mesh(&registered, &out.join("registered.obj"), MeshFormat::Obj)?;
    save_params(&out.join("params.toml"), &model, &result.params)?;
    save_trace_csv(&out.join("trace.csv"), &result.trace, config.timing)?;
    let row = StatsRow {
        run: scan_path.display().to_string(),
        time_s: result.total_time_s,
        surface: surface_error(&result.correspondences)?,
        landmarks: if matched > 0 {
            Some(landmark_error(&model, &vertices, &landmarks)?)
        } else {
            None
        },
    };
    write_stats_csv(writer(&out.join("stats.csv"))?, std::slice::from_ref(&row), config.timing)?;
    if !model.patterns.is_empty() {
        let patterns = transfer_patterns(&model, &result.params, &scan, &config.filters)?;
        write_patterns_obj(writer(&out.join("patterns.obj"))?, &patterns)?;
        write_patterns_text(writer(&out.join("patterns.txt"))?, &patterns)?;
        write_patterns_csv(writer(&out.join("patterns.csv"))?, &patterns)?;
        for p in patterns.iter().filter(|p| p.flagged() > 0) {
            log::warn!("pattern '{}': {} point(s) over holes or scan borders", p.name, p.flagged());
        }
    }
    println!(
        "{} after {} iterations ({:?}), surface MAE {:.4} mm over {} pairs",
        if result.converged { "converged" } else { "stopped" },
        result.trace.len(),
        result.stop_reason,
        row.surface.mae,
        row.surface.n
    );
    Ok(if result.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let mut config = resolve_config(&args.common)?;
    config.target.seed = config.seed;
    if let Some(v) = args.noise_sigma {
        config.target.noise_sigma = v;
    }
    if let Some(v) = args.hole_fraction {
        config.target.hole_fraction = v;
    }
    if let Some(v) = args.max_joint_angle_deg {
        config.target.max_joint_angle_deg = v;
    }
    if let Some(v) = args.root_rotation_deg {
        config.target.root_rotation_deg = v;
    }
    config.target.validate()?;
    let model = load_model_for(&config)?;
    let out = create_out(&config)?;
    let manifest = save_model(&out.join("model"), &model)?;
    println!("model: {}", manifest.display());
    if args.model_only {
        return Ok(EXIT_OK);
    }
    let target = generate_target(&model, &config.target)?;
    save_mesh(&target.scan, &out.join("scan.obj"), MeshFormat::Obj)?;
    save_scan_landmarks(&out.join("landmarks.csv"), &target.truth.landmarks)?;
    save_ground_truth(&out.join("truth.toml"), &model, &target.truth)?;
    println!(
        "target: {} ({} vertices, seed {})",
        out.join("scan.obj").display(),
        target.scan.vertex_count(),
        target.truth.seed
    );
    Ok(EXIT_OK)
}

/// Recovery report of a `register` output directory against ground truth.
pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let snapshot = args.result.join("config.toml");
    let mut common = args.common.clone();
    if common.config.is_none() && snapshot.is_file() {
        common.config = Some(snapshot);
    }
    if common.out.is_none() {
        common.out = Some(args.result.clone());
    }
    let config = resolve_config(&common)?;
    let scan_path = config
        .scan
        .as_ref()
        .ok_or_else(|| Error::Config("the result's config names no scan".into()))?;
    let model = load_model_for(&config)?;
    let truth = load_ground_truth(&args.truth, &model)?;
    let params = load_params(&args.result.join("params.toml"), &model)?;
    let scan_mesh = load_mesh(scan_path, MeshFormat::from_path(scan_path)?)?;
    let scan = ScanSurface::new(scan_mesh.clone())?;
    let target = SyntheticTarget::from_parts(&model, scan_mesh, truth)?;
    let correspondences = correspondences_at(&model, &params, &scan, &config.filters)?;
    let report = evaluate_recovery(&model, &params, &correspondences, &target)?;
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let names: Vec<String> = model.skeleton.bones().iter().map(|b| b.name.clone()).collect();
    let path = config.out.join("recovery.csv");
    write_recovery_csv(writer(&path)?, &report, &names)?;
    println!(
        "surface MAE {:.4} mm, clean MAE {:.4} mm, landmark MAE {:.4} mm, max rotation error {:.3} deg",
        report.surface.mae,
        report.clean_surface.mae,
        report.landmarks.mae,
        report.max_rotation_error_deg()
    );
    Ok(EXIT_OK)
}

/// Synthetic sweep targets with seeds `seed, seed + 1, …`.
pub fn sweep_targets(model: &DeformableModel, config: &RunConfig, count: usize) -> Result<Vec<SweepTarget>> {
    (0..count as u64)
        .map(|i| {
            let spec = crate::synth::TargetSpec {
                seed: config.seed + i,
                ..config.target.clone()
            };
            let t = generate_target(model, &spec)?;
            Ok(SweepTarget {
                name: format!("seed{}", spec.seed),
                scan: ScanSurface::new(t.scan)?,
                landmarks: t.truth.landmarks,
            })
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let mut config = resolve_config(&args.common)?;
    if let Some(n) = args.targets {
        config.sweep.targets = n;
    }
    if let Some(l) = &args.lambda {
        config.sweep.lambda = l.parse::<Lambda>()?;
    }
    if let Some(v) = &args.values {
        config.sweep.lambda_values = v.clone();
    }
    if let Some(c) = &args.counts {
        match args.kind {
            SweepKindArg::Landmarks => config.sweep.landmark_counts = c.clone(),
            SweepKindArg::Blendshapes => config.sweep.blendshape_counts = c.clone(),
            SweepKindArg::Lambda => {
                return Err(Error::Config("--counts applies to landmark and blendshape sweeps".into()));
            }
        }
    }
    config.validate()?;
    let model = load_model_for(&config)?;
    let out = create_out(&config)?;
    let targets = sweep_targets(&model, &config, config.sweep.targets)?;
    let settings = SweepSettings {
        weights: config.weights,
        filters: config.filters,
        solver: config.solver,
        active_landmarks: config.active_landmarks,
        jobs: config.jobs,
    };
    let table: SweepTable = match args.kind {
        SweepKindArg::Landmarks => sweep_landmarks(&model, &targets, &settings, &config.sweep.landmark_counts)?,
        SweepKindArg::Blendshapes => {
            sweep_blendshapes(&model, &targets, &settings, &config.sweep.blendshape_counts)?
        }
        SweepKindArg::Lambda => {
            sweep_lambda(&model, &targets, &settings, config.sweep.lambda, &config.sweep.lambda_values)?
        }
    };
    let stem = format!("sweep_{}", table.kind.column());
    write_sweep_table(writer(&out.join(format!("{stem}.csv")))?, &table)?;
    write_sweep_long(writer(&out.join(format!("{stem}_long.csv")))?, &table)?;
    for r in &table.rows {
        println!(
            "{} = {}: surface MAE {:.4} mm, landmark MAE {:.4} mm ({} not converged, {} failed)",
            table.kind.column(),
            r.setting,
            r.surface_mae,
            r.landmark_mae,
            r.not_converged,
            r.failed
        );
    }
    Ok(EXIT_OK)
}
