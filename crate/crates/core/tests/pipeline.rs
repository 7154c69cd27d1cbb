use torsofit::config::RunConfig;
use torsofit::energy::{EnergyWeights, LandmarkTargets, ParamVector};
use torsofit::eval::{run_cell, sweep_landmarks, transfer_patterns, SweepSettings, SweepTarget};
use torsofit::geometry::evaluate_anchor;
use torsofit::manifest::{load_model, load_scan_landmarks, save_model, save_scan_landmarks};
use torsofit::shape::DeformableModel;
use torsofit::solver::{initialize_from_landmarks, register, SolverConfig};
use torsofit::spatial::{FilterConfig, ScanSurface};
use torsofit::synth::{generate_target, generate_template, SyntheticTarget, TargetSpec, TorsoSpec};

fn template() -> DeformableModel {
    generate_template(&TorsoSpec::default()).unwrap()
}

fn corrupted(model: &DeformableModel, seed: u64) -> SyntheticTarget {
    let spec = TargetSpec {
        noise_sigma: 1.0,
        hole_fraction: 0.3,
        seed,
        ..TargetSpec::default()
    };
    generate_target(model, &spec).unwrap()
}

#[test]
fn manifest_round_trip_preserves_the_model() {
    let model = template();
    let dir = tempfile::tempdir().unwrap();
    let back = load_model(&save_model(dir.path(), &model).unwrap()).unwrap();
    assert_eq!(back.template.triangles, model.template.triangles);
    assert_eq!(back.template.vertices.len(), model.template.vertices.len());
    // Coordinates are written with nine significant digits.
    for (a, b) in back.template.vertices.iter().zip(&model.template.vertices) {
        assert!((a - b).norm() < 1e-6);
    }
    assert_eq!(back.blendshapes.names(), model.blendshapes.names());
    assert_eq!(back.landmarks.len(), model.landmarks.len());
    assert_eq!(back.patterns.len(), model.patterns.len());
    let rest = ParamVector::rest(&model);
    let mut posed = rest.clone();
    posed.shape.alpha.iter_mut().enumerate().for_each(|(k, a)| *a = 0.01 * k as f64);
    for p in [&rest, &posed] {
        let a = model.deform_vertices(&p.pose, &p.shape).unwrap();
        let b = back.deform_vertices(&p.pose, &p.shape).unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        // Rounding of the template and of every sculpted shape adds up.
        assert!(worst < 1e-5, "deformations differ by {worst}");
    }
}

#[test]
fn scan_landmarks_round_trip() {
    let model = template();
    let t = corrupted(&model, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("landmarks.csv");
    save_scan_landmarks(&path, &t.truth.landmarks).unwrap();
    let back = load_scan_landmarks(&path).unwrap();
    assert_eq!(back.names, t.truth.landmarks.names);
    for (a, b) in back.points.iter().zip(&t.truth.landmarks.points) {
        assert!((a - b).norm() < 1e-6);
    }
}

#[test]
fn patterns_transfer_exactly_onto_the_rest_surface() {
    let model = template();
    let rest = ParamVector::rest(&model);
    let scan = ScanSurface::new(model.template.clone()).unwrap();
    let patterns = transfer_patterns(&model, &rest, &scan, &FilterConfig::default()).unwrap();
    assert_eq!(patterns.len(), model.patterns.len());
    for (p, curve) in patterns.iter().zip(&model.patterns) {
        assert!(p.flagged() == 0, "{} has flagged points", p.name);
        assert!(p.max_residual() <= 1e-9);
        for (point, anchor) in p.points.iter().zip(&curve.anchors) {
            let expected = evaluate_anchor(&model.template.triangles, &model.template.vertices, anchor).unwrap();
            assert!((point.position - expected).norm() <= 1e-9);
        }
    }
}

#[test]
fn patterns_over_holes_are_flagged() {
    let model = template();
    let flagged: usize = (0..6)
        .map(|seed| {
            let t = corrupted(&model, seed);
            let scan = ScanSurface::new(t.scan.clone()).unwrap();
            let patterns = transfer_patterns(&model, &t.truth.params, &scan, &FilterConfig::default()).unwrap();
            for p in &patterns {
                for q in &p.points {
                    assert!(q.residual.is_finite());
                    if q.reliable {
                        assert!(q.residual <= FilterConfig::default().max_distance);
                    }
                }
            }
            patterns.iter().map(|p| p.flagged()).sum::<usize>()
        })
        .sum();
    assert!(flagged > 0, "30% holes never touched a pattern in six scans");
}

#[test]
fn single_setting_sweep_matches_a_plain_registration() {
    let model = template();
    let t = corrupted(&model, 4);
    let target = SweepTarget {
        name: "one".into(),
        scan: ScanSurface::new(t.scan.clone()).unwrap(),
        landmarks: t.truth.landmarks.clone(),
    };
    let settings = SweepSettings::default();
    let table = sweep_landmarks(&model, std::slice::from_ref(&target), &settings, &[12]).unwrap();
    let cell = run_cell(&model, &target, &settings.weights, &settings, 12.0);
    assert_eq!(table.cells.len(), 1);
    assert_eq!(table.cells[0].surface_mae, cell.surface_mae);

    let init = initialize_from_landmarks(&model, &t.truth.landmarks).unwrap();
    let active = LandmarkTargets::select(&model, &t.truth.landmarks, 12);
    let r = register(
        &model,
        &target.scan,
        Some(&active),
        &EnergyWeights::default(),
        &FilterConfig::default(),
        &SolverConfig::default(),
        Some(&init),
    )
    .unwrap();
    let mae = torsofit::eval::surface_error(&r.correspondences).unwrap().mae;
    assert_eq!(mae, cell.surface_mae);
    assert_eq!(r.trace.len(), cell.iterations);
}

#[test]
fn config_snapshot_round_trips() {
    let mut c = RunConfig::default();
    c.weights.lambda_d = 2e-4;
    c.solver.pose_warmup = true;
    c.target.noise_sigma = 0.5;
    c.sweep.lambda_values = vec![1e-3, 1e-2];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    c.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), c);
}

#[test]
fn pose_warmup_reaches_the_same_quality() {
    let model = template();
    let t = corrupted(&model, 2);
    let scan = ScanSurface::new(t.scan.clone()).unwrap();
    let init = initialize_from_landmarks(&model, &t.truth.landmarks).unwrap();
    let active = LandmarkTargets::select(&model, &t.truth.landmarks, 12);
    let solve = |pose_warmup| {
        let config = SolverConfig { pose_warmup, ..SolverConfig::default() };
        register(&model, &scan, Some(&active), &EnergyWeights::default(), &FilterConfig::default(), &config, Some(&init)).unwrap()
    };
    let (plain, warm) = (solve(false), solve(true));
    assert!(warm.converged);
    let mae = |r: &torsofit::solver::RegistrationResult| torsofit::eval::surface_error(&r.correspondences).unwrap().mae;
    assert!(mae(&warm) < 2.5 && mae(&plain) < 2.5, "{} {}", mae(&warm), mae(&plain));
    // Iteration numbers run on across the two passes.
    assert!(warm.trace.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
}
