//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use torsofit::energy::{
    e_blendshape, e_data, e_joint, e_landmark, e_scale, EnergyWeights, JointRotation, LandmarkTargets, ParamVector,
    ScanLandmarks,
};
use torsofit::eval::{
    distance_stats, sweep_blendshapes, sweep_lambda, sweep_landmarks, write_stats_csv, write_sweep_table, Lambda,
    StatsRow, SweepSettings, SweepTable, SweepTarget,
};
use torsofit::geometry::{closest_point_on_triangle, load_mesh, save_mesh, ClosestPointResult, Feature, MeshFormat, Vec3};
use torsofit::manifest::{load_model, save_model};
use torsofit::shape::DeformableModel;
use torsofit::solver::{initialize_from_landmarks, register, write_trace_csv, SolverConfig};
use torsofit::spatial::{CorrespondencePair, CorrespondenceSet, FilterConfig, Octree, ScanSurface};
use torsofit::synth::{evaluate_recovery, generate_target, generate_template, SyntheticTarget, TargetSpec, TorsoSpec};

use common::{median, numeric_gradient, random_params, random_vec, relative_error, small_model};

const TARGETS: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(number: usize, title: &str, started: Instant, o: &Outcome) {
    println!(
        "criterion {number:>2} [{}] {title}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

// 1. Gradients against central differences plus exact term values.
fn equation_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(&mut rng, 4, 2, 3);
        assert_eq!(model.vertex_count(), 20);
        let params = random_params(&mut rng, &model);
        let n = model.vertex_count();
        let corr = CorrespondenceSet {
            pairs: (0..12)
                .map(|_| CorrespondencePair {
                    source: rng.random_range(0..n),
                    triangle: 0,
                    target: ClosestPointResult {
                        point: random_vec(&mut rng, 150.0),
                        feature: Feature::Face,
                        barycentric: [1.0, 0.0, 0.0],
                        distance: 0.0,
                    },
                    target_normal: Vec3::z(),
                })
                .collect(),
            ..Default::default()
        };
        let scan = ScanLandmarks {
            names: model.landmarks.iter().map(|l| l.name.clone()).collect(),
            points: (0..3).map(|_| random_vec(&mut rng, 100.0)).collect(),
        };
        let targets = LandmarkTargets::select(&model, &scan, 3);
        let mut check = |analytic: &nalgebra::DVector<f64>, f: &dyn Fn(&ParamVector) -> f64| {
            worst = worst.max(relative_error(analytic, &numeric_gradient(&params, f)));
        };
        check(&e_data(&model, &params, &corr).unwrap().gradient, &|p| e_data(&model, p, &corr).unwrap().value);
        check(&e_scale(&params).gradient, &|p| e_scale(p).value);
        if params.shape.alpha.iter().map(|a| a * a).sum::<f64>() > 1e-4 {
            check(&e_blendshape(&params).gradient, &|p| e_blendshape(p).value);
        }
        for mode in [JointRotation::Relative, JointRotation::Absolute] {
            check(&e_joint(&model.skeleton, &params, mode).gradient, &|p| e_joint(&model.skeleton, p, mode).value);
        }
        check(&e_landmark(&model, &params, &targets).unwrap().gradient, &|p| {
            e_landmark(&model, p, &targets).unwrap().value
        });
    }

    // Exact values on hand-checkable configurations.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = small_model(&mut rng, 4, 2, 3);
    let mut rest = ParamVector::rest(&model);
    let v0 = model.template.vertices[0];
    let one = CorrespondenceSet {
        pairs: vec![CorrespondencePair {
            source: 0,
            triangle: 0,
            target: ClosestPointResult {
                point: v0 - Vec3::z(),
                feature: Feature::Face,
                barycentric: [1.0, 0.0, 0.0],
                distance: 1.0,
            },
            target_normal: Vec3::z(),
        }],
        ..Default::default()
    };
    let mut exact = vec![
        ("E_D one pair 1 mm away", e_data(&model, &rest, &one).unwrap().value, 1.0),
        ("E_S at rest", e_scale(&rest).value, 0.0),
        ("E_J at rest", e_joint(&model.skeleton, &rest, JointRotation::Relative).value, 0.0),
    ];
    rest.shape.alpha = vec![3.0, 4.0, 0.0];
    exact.push(("E_BS of (3, 4, 0)", e_blendshape(&rest).value, 5.0));
    rest.pose.bones[1].scale = Vec3::new(2.0, 1.0, 1.0);
    exact.push(("E_S one axis doubled", e_scale(&rest).value, 1.0));
    let stats = distance_stats(&[1.0, -2.0, 3.0]).unwrap();
    exact.push(("MAE of [1, -2, 3]", stats.mae, 2.0));
    let mut twelve = vec![0.0; 12];
    twelve[0] = 5.0;
    exact.push(("MAE of one 5 mm landmark in 12", distance_stats(&twelve).unwrap().mae, 5.0 / 12.0));
    let wrong: Vec<&str> = exact.iter().filter(|(_, got, want)| (got - want).abs() > 1e-9).map(|(n, _, _)| *n).collect();

    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && wrong.is_empty() && elapsed < 10.0,
        format!(
            "worst relative gradient error {worst:.2e} (< 1e-5) over 50 instances, {} exact values wrong {wrong:?}, {elapsed:.2} s (< 10 s)",
            wrong.len()
        ),
    )
}

// 2. Octree and point-triangle queries against brute force.
fn closest_point_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let points: Vec<Vec3> = (0..1000).map(|_| random_vec(&mut rng, 100.0)).collect();
        let tree = Octree::build(&points, 8, 12).unwrap();
        for _ in 0..1000 {
            let q = random_vec(&mut rng, 150.0);
            let (_, d) = tree.closest_vertex(&q);
            let brute = points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            if (d - brute).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }
    let mut beaten = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let [a, b, c] = [random_vec(&mut rng, 10.0), random_vec(&mut rng, 10.0), random_vec(&mut rng, 10.0)];
        let q = random_vec(&mut rng, 20.0);
        let d = closest_point_on_triangle(q, a, b, c).distance;
        let sampled = (0..10_000)
            .map(|_| {
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    (u, v) = (1.0 - u, 1.0 - v);
                }
                (a + (b - a) * u + (c - a) * v - q).norm()
            })
            .fold(f64::INFINITY, f64::min);
        if d > sampled + 1e-12 {
            beaten += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && beaten == 0 && elapsed < 30.0,
        format!(
            "{mismatches} octree mismatches in 1e5 queries, sampling beat the exact projection {beaten} times in 1000, {elapsed:.2} s (< 30 s)"
        ),
    )
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>)) -> Vec<u8> {
    let mut out = Vec::new();
    f(&mut out);
    out
}

// 3. Template against its own rest export, through the files on disk.
fn fixed_point(template: &DeformableModel) -> (Outcome, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_model(&dir.path().join("model"), template).unwrap();
    let model = load_model(&manifest).unwrap();
    let rest = ParamVector::rest(&model);
    let exported = model.template.with_vertices(model.deform_vertices(&rest.pose, &rest.shape).unwrap()).unwrap();
    let scan_path = dir.path().join("rest.obj");
    save_mesh(&exported, &scan_path, MeshFormat::Obj).unwrap();
    let scan = ScanSurface::new(load_mesh(&scan_path, MeshFormat::Obj).unwrap()).unwrap();
    let r = register(
        &model,
        &scan,
        None,
        &EnergyWeights::default(),
        &FilterConfig::default(),
        &SolverConfig::default(),
        None,
    )
    .unwrap();
    let stats = torsofit::eval::surface_error(&r.correspondences).unwrap();
    let bytes = csv_bytes(|out| {
        write_trace_csv(&mut *out, &r.trace, false).unwrap();
        let row = StatsRow {
            run: "fixed_point".into(),
            time_s: r.total_time_s,
            surface: stats,
            landmarks: None,
        };
        write_stats_csv(out, &[row], false).unwrap();
    });
    (
        outcome(
            r.converged && r.trace.len() <= 2 && stats.mae < 1e-6,
            format!(
                "converged {} after {} outer iterations (<= 2), surface MAE {:.2e} mm (< 1e-6)",
                r.converged,
                r.trace.len(),
                stats.mae
            ),
        ),
        bytes,
    )
}

struct Recovery {
    surface: Vec<f64>,
    landmarks: Vec<f64>,
    max_rotation: Vec<f64>,
    csv: Vec<u8>,
}

fn recover(model: &DeformableModel, targets: &[SyntheticTarget], solver: &SolverConfig) -> Recovery {
    let mut out = Recovery {
        surface: Vec::new(),
        landmarks: Vec::new(),
        max_rotation: Vec::new(),
        csv: Vec::new(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "converged", "surface_mae", "clean_mae", "landmark_mae", "max_rotation_error_deg"])
        .unwrap();
    for t in targets {
        let scan = ScanSurface::new(t.scan.clone()).unwrap();
        let init = initialize_from_landmarks(model, &t.truth.landmarks).unwrap();
        let active = LandmarkTargets::select(model, &t.truth.landmarks, 12);
        let r = register(
            model,
            &scan,
            Some(&active),
            &EnergyWeights::default(),
            &FilterConfig::default(),
            solver,
            Some(&init),
        )
        .unwrap();
        let rep = evaluate_recovery(model, &r.params, &r.correspondences, t).unwrap();
        out.surface.push(rep.surface.mae);
        out.landmarks.push(rep.landmarks.mae);
        out.max_rotation.push(rep.max_rotation_error_deg());
        w.write_record([
            t.truth.seed.to_string(),
            r.converged.to_string(),
            rep.surface.mae.to_string(),
            rep.clean_surface.mae.to_string(),
            rep.landmarks.mae.to_string(),
            rep.max_rotation_error_deg().to_string(),
        ])
        .unwrap();
    }
    out.csv = w.into_inner().unwrap();
    out
}

fn clean_targets(model: &DeformableModel) -> Vec<SyntheticTarget> {
    (0..TARGETS)
        .map(|seed| {
            let spec = TargetSpec {
                max_joint_angle_deg: 45.0,
                root_rotation_deg: 45.0,
                scale_range: [0.9, 1.1],
                alpha_range: 1.0,
                seed,
                ..TargetSpec::default()
            };
            generate_target(model, &spec).unwrap()
        })
        .collect()
}

fn corrupted_spec(seed: u64) -> TargetSpec {
    TargetSpec {
        noise_sigma: 1.0,
        hole_fraction: 0.3,
        seed,
        ..TargetSpec::default()
    }
}

fn corrupted_targets(model: &DeformableModel) -> Vec<SyntheticTarget> {
    (0..TARGETS).map(|seed| generate_target(model, &corrupted_spec(seed)).unwrap()).collect()
}

fn sweep_targets(targets: &[SyntheticTarget]) -> Vec<SweepTarget> {
    targets
        .iter()
        .map(|t| SweepTarget {
            name: format!("seed{}", t.truth.seed),
            scan: ScanSurface::new(t.scan.clone()).unwrap(),
            landmarks: t.truth.landmarks.clone(),
        })
        .collect()
}

// 4. Clean recovery over the full pose range.
fn clean_recovery(model: &DeformableModel, targets: &[SyntheticTarget]) -> (Outcome, Vec<u8>) {
    let solver = SolverConfig {
        convergence_threshold: 1e-4,
        max_outer_iterations: 1000,
        pose_warmup: true,
        ..SolverConfig::default()
    };
    let r = recover(model, targets, &solver);
    let (s, l, rot) = (median(&r.surface), median(&r.landmarks), median(&r.max_rotation));
    let all_bones = r.max_rotation.iter().filter(|&&x| x < 2.0).count();
    (
        outcome(
            s < 0.1 && l < 0.5 && rot < 2.0,
            format!(
                "median surface MAE {s:.4} mm (< 0.1), median landmark MAE {l:.4} mm (< 0.5), median per-target max bone rotation error {rot:.3} deg (< 2); {all_bones}/{} targets have every bone under 2 deg",
                targets.len()
            ),
        ),
        r.csv,
    )
}

// 5. Noisy partial scans.
fn corrupted_recovery(model: &DeformableModel, targets: &[SyntheticTarget]) -> (Outcome, Vec<u8>) {
    let r = recover(model, targets, &SolverConfig::default());
    let (s, l) = (median(&r.surface), median(&r.landmarks));
    (
        outcome(s <= 2.5 && l <= 9.0, format!("median surface MAE {s:.3} mm (<= 2.5), median landmark MAE {l:.3} mm (<= 9)")),
        r.csv,
    )
}

fn table_bytes(t: &SweepTable) -> Vec<u8> {
    csv_bytes(|out| write_sweep_table(out, t).unwrap())
}

fn row(t: &SweepTable, setting: f64) -> &torsofit::eval::SweepRow {
    t.rows.iter().find(|r| r.setting == setting).unwrap()
}

// 6. Landmark term on/off.
fn landmark_effect(model: &DeformableModel, targets: &[SweepTarget]) -> (Outcome, Vec<u8>) {
    let t = sweep_landmarks(model, targets, &SweepSettings::default(), &[0, 12]).unwrap();
    let (off, on) = (row(&t, 0.0), row(&t, 12.0));
    let degrade = on.surface_mae / off.surface_mae - 1.0;
    (
        outcome(
            on.landmark_mae < off.landmark_mae && degrade < 0.05,
            format!(
                "landmark MAE {:.3} mm with 12 vs {:.3} mm with 0 (strictly lower), surface MAE change {:+.2}% (< 5%)",
                on.landmark_mae,
                off.landmark_mae,
                100.0 * degrade
            ),
        ),
        table_bytes(&t),
    )
}

// 7. Blendshape count.
fn blendshape_effect(model: &DeformableModel, targets: &[SweepTarget]) -> (Outcome, Vec<u8>) {
    let counts = [0, 10, 25, 40, 55];
    let t = sweep_blendshapes(model, targets, &SweepSettings::default(), &counts).unwrap();
    let worse: Vec<&str> = targets
        .iter()
        .filter(|target| {
            let cell = |s: f64| t.cells.iter().find(|c| c.setting == s && c.target == target.name).unwrap().surface_mae;
            !(cell(55.0) <= cell(0.0))
        })
        .map(|target| target.name.as_str())
        .collect();
    let monotone = t.rows.windows(2).all(|w| w[1].surface_mae <= w[0].surface_mae * 1.05);
    let series: Vec<String> = t.rows.iter().map(|r| format!("{:.3}", r.surface_mae)).collect();
    (
        outcome(
            worse.is_empty() && monotone,
            format!(
                "mean surface MAE over {{0,10,25,40,55}} shapes = [{}] mm, monotone within 5%: {monotone}; targets where 55 shapes beat 0 shapes: {}/{}",
                series.join(", "),
                targets.len() - worse.len(),
                targets.len()
            ),
        ),
        table_bytes(&t),
    )
}

// 8. λ_D sensitivity.
fn lambda_effect(model: &DeformableModel, targets: &[SweepTarget]) -> (Outcome, Vec<u8>) {
    let values = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    let t = sweep_lambda(model, targets, &SweepSettings::default(), Lambda::D, &values).unwrap();
    let finite = t.cells.iter().all(|c| c.surface_mae.is_finite() && c.landmark_mae.is_finite());
    // Rows are in increasing λ_D; a smaller λ_D must not be more than 5% worse.
    let ok_trend = t.rows.windows(2).all(|w| w[0].surface_mae <= w[1].surface_mae * 1.05);
    let series: Vec<String> = t.rows.iter().map(|r| format!("{:.3}", r.surface_mae)).collect();
    (
        outcome(
            finite && ok_trend,
            format!(
                "mean surface MAE over lambda_d 1e-5..1e-1 = [{}] mm, all finite: {finite}, no >5% increase as lambda_d decreases: {ok_trend}",
                series.join(", ")
            ),
        ),
        table_bytes(&t),
    )
}

// 9. Wall time on a full-size scan.
fn performance(model: &DeformableModel) -> Outcome {
    let mut times = Vec::new();
    let mut sizes = Vec::new();
    for seed in 0..10u64 {
        let t = generate_target(model, &TargetSpec { seed, ..TargetSpec::default() }).unwrap();
        sizes.push(t.scan.vertex_count());
        let start = Instant::now();
        let scan = ScanSurface::new(t.scan.clone()).unwrap();
        let init = initialize_from_landmarks(model, &t.truth.landmarks).unwrap();
        let active = LandmarkTargets::select(model, &t.truth.landmarks, 12);
        let r = register(
            model,
            &scan,
            Some(&active),
            &EnergyWeights::default(),
            &FilterConfig::default(),
            &SolverConfig::default(),
            Some(&init),
        )
        .unwrap();
        times.push(start.elapsed().as_secs_f64());
        assert!(r.converged, "seed {seed} did not converge");
    }
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p90 = sorted[8];
    outcome(
        p90 <= 3.0,
        format!(
            "{} vertices, {} bones, {} shapes against {}..{} vertex scans: p90 {p90:.2} s (<= 3 s), max {:.2} s",
            model.vertex_count(),
            model.bone_count(),
            model.shape_count(),
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
            sorted[9]
        ),
    )
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<bool> = Vec::new();
    fn run(results: &mut Vec<bool>, n: usize, title: &str, f: &mut dyn FnMut() -> Outcome) {
        let start = Instant::now();
        let o = f();
        report(n, title, start, &o);
        results.push(o.pass);
    }

    run(&mut results, 1, "equation fidelity", &mut equation_fidelity);
    run(&mut results, 2, "closest-point oracle", &mut closest_point_oracle);

    let model = generate_template(&TorsoSpec::default()).unwrap();
    let first_pass = |model: &DeformableModel| -> Vec<(Outcome, Vec<u8>)> {
        let clean = clean_targets(model);
        let corrupted = corrupted_targets(model);
        let fixtures = sweep_targets(&corrupted);
        vec![
            fixed_point(model),
            clean_recovery(model, &clean),
            corrupted_recovery(model, &corrupted),
            landmark_effect(model, &fixtures),
            blendshape_effect(model, &fixtures),
            lambda_effect(model, &fixtures),
        ]
    };
    let titles = [
        "fixed-point registration",
        "synthetic recovery, clean",
        "synthetic recovery, corrupted",
        "landmark-term effect",
        "blendshape-count effect",
        "lambda sensitivity",
    ];
    let start = Instant::now();
    let first = first_pass(&model);
    for (k, ((o, _), title)) in first.iter().zip(titles).enumerate() {
        report(k + 3, title, start, o);
        results.push(o.pass);
    }

    run(&mut results, 9, "performance envelope", &mut || performance(&model));

    let start = Instant::now();
    let second = first_pass(&model);
    let differing: Vec<usize> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|(_, ((_, a), (_, b)))| a != b)
        .map(|(k, _)| k + 3)
        .collect();
    let o = outcome(
        differing.is_empty(),
        format!("CSV outputs of criteria 3-8 rerun byte-identical; differing criteria: {differing:?}"),
    );
    report(10, "determinism", start, &o);
    results.push(o.pass);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed in {:.1} s", results.len(), total.elapsed().as_secs_f64());
    if passed != results.len() {
        std::process::exit(1);
    }
}
