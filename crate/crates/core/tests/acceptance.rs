//! Acceptance suite: every exit criterion of the laboratory, one test per
//! criterion, each printing a single pass/fail line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::sync::OnceLock;

use mcflab_core::ambient::{Aabb, AmbientSpace};
use mcflab_core::flow::{run_flow, FlowConfig, FlowTrajectory};
use mcflab_core::functionals::{
    entropy, f_functional, f_gradient, shrinker_residual, EntropyOptions, SpacetimePoint,
};
use mcflab_core::harness::{
    classify_extinction, entropy_continuity_probe, piecewise_flow, verify_almost_mono_u,
    verify_entropy_almost_mono, verify_huisken, verify_j_monotone, volume_ratio_bound,
    ClassifyConfig, DilationProvider, ExtinctionVerdict, FinalClassification, PiecewiseBudget,
    ENTROPY_GAP_SIGMA,
};
use mcflab_core::linalg::{self, SplitMix64};
use mcflab_core::mesh::{ellipsoid, geodesic_sphere_s3, icosphere, mesh_metrics, torus};
use mcflab_core::curvature::mean_curvature_vector;

fn report(criterion: &str, passed: bool, detail: String) {
    println!(
        "[{}] {criterion}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "{criterion}: {detail}");
}

fn oracle_flow_config() -> FlowConfig {
    FlowConfig {
        dt_initial: 2e-4,
        c_stab: 0.05,
        stop_area: 1e-3,
        snapshot_stride: 10,
        ..FlowConfig::default()
    }
}

/// Euclidean unit-sphere trajectory stopped at radius ~0.28 for the
/// density and volume suites.
fn sphere_suite_trajectory() -> &'static FlowTrajectory {
    static TRAJ: OnceLock<FlowTrajectory> = OnceLock::new();
    TRAJ.get_or_init(|| {
        let config = FlowConfig {
            dt_initial: 5e-4,
            c_stab: 0.05,
            stop_area: 1.0,
            snapshot_stride: 20,
            ..FlowConfig::default()
        };
        run_flow(
            &icosphere(1.0, &[0.0; 3], 3),
            &AmbientSpace::euclidean(3),
            &config,
        )
    })
}

/// Geodesic-sphere trajectory in the round S^3 of radius 10.
fn curved_suite_trajectory() -> &'static FlowTrajectory {
    static TRAJ: OnceLock<FlowTrajectory> = OnceLock::new();
    TRAJ.get_or_init(|| {
        let rho = 10.0f64;
        let config = FlowConfig {
            dt_initial: 2e-4 * rho * rho,
            c_stab: 0.05,
            stop_area: 5e-3 * rho * rho,
            snapshot_stride: 20,
            ..FlowConfig::default()
        };
        run_flow(
            &geodesic_sphere_s3(rho, rho * std::f64::consts::PI / 3.0, 3),
            &AmbientSpace::round_sphere(4, rho).unwrap(),
            &config,
        )
    })
}

fn curved_density_center(traj: &FlowTrajectory) -> SpacetimePoint {
    let rho = 10.0;
    let t_end = traj.snapshots.last().unwrap().0;
    SpacetimePoint::new(vec![0.0, 0.0, 0.0, rho], t_end + 0.1 * rho * rho).unwrap()
}

#[test]
fn criterion_01_sphere_extinction() {
    let traj = run_flow(
        &icosphere(1.0, &[0.0; 3], 4),
        &AmbientSpace::euclidean(3),
        &oracle_flow_config(),
    );
    let t_est = traj.extinction_estimate().unwrap_or(f64::NAN);
    let passed = (t_est - 0.25).abs() <= 0.0025;
    report(
        "criterion 1 (sphere extinction)",
        passed,
        format!("t_est = {t_est:.6}, oracle 0.25 +- 0.0025"),
    );
}

#[test]
fn criterion_02_curved_extinction_and_stationarity() {
    let ambient = AmbientSpace::round_sphere(4, 1.0).unwrap();
    let config = FlowConfig {
        dt_initial: 2e-4,
        c_stab: 0.05,
        stop_area: 5e-3,
        snapshot_stride: 10,
        ..FlowConfig::default()
    };
    let traj = run_flow(
        &geodesic_sphere_s3(1.0, std::f64::consts::PI / 3.0, 3),
        &ambient,
        &config,
    );
    let t_est = traj.extinction_estimate().unwrap_or(f64::NAN);
    let exact = 0.5 * 2.0_f64.ln();
    let extinct_ok = (t_est - exact).abs() <= 0.02 * exact;

    // the discrete equator drifts toward its own equilibrium at the rate
    // of the tangential cotangent noise (~2e-2 at this resolution), so the
    // stationarity horizon picks a step keeping 10^4 steps well inside it
    let equator = geodesic_sphere_s3(1.0, std::f64::consts::PI / 2.0, 3);
    let stationary_cfg = FlowConfig {
        dt_initial: 2e-7,
        c_stab: 0.05,
        max_steps: 10_000,
        snapshot_stride: 10_000,
        ..FlowConfig::default()
    };
    let stat = run_flow(&equator, &ambient, &stationary_cfg);
    let last = &stat.snapshots.last().unwrap().1;
    let mut displacement: f64 = 0.0;
    for i in 0..equator.vertex_count() {
        displacement = displacement.max(linalg::dist(equator.vertex(i), last.vertex(i)));
    }
    let stationary_ok = stat.steps_total == 10_000 && displacement < 1e-4;
    report(
        "criterion 2 (curved extinction + stationarity)",
        extinct_ok && stationary_ok,
        format!(
            "t_est = {t_est:.6} vs {exact:.6} (2%), equator displacement {displacement:.3e} over 10^4 steps"
        ),
    );
}

#[test]
fn criterion_03_entropy_golden_value() {
    let exact = 4.0 / std::f64::consts::E;
    let mut detail = String::new();
    let mut passed = true;
    for (radius, center) in [
        (0.5, [0.7, -0.2, 1.3]),
        (1.0, [0.0, 0.0, 0.0]),
        (2.0, [-1.0, 2.0, 0.4]),
    ] {
        let res = entropy(&icosphere(radius, &center, 3), &EntropyOptions::default()).unwrap();
        let t_expect = radius * radius / 4.0;
        let ok = (res.lambda - exact).abs() <= 1e-2
            && (res.argmax.t0 - t_expect).abs() <= 0.05 * t_expect;
        passed &= ok;
        detail.push_str(&format!(
            "R={radius}: lambda={:.5}, t0={:.4}; ",
            res.lambda, res.argmax.t0
        ));
    }
    report(
        "criterion 3 (entropy golden value 4/e)",
        passed,
        detail.trim_end().to_string(),
    );
}

#[test]
fn criterion_04_huisken_monotonicity() {
    let traj = sphere_suite_trajectory();
    let t_end = traj.snapshots.last().unwrap().0;
    let mut grid = Vec::new();
    for &x in &[-0.3, 0.0, 0.3] {
        for &y in &[-0.2, 0.2] {
            for &off in &[0.05, 0.2, 0.5, 1.0] {
                grid.push(SpacetimePoint::new(vec![x, y, 0.0], t_end + off).unwrap());
            }
        }
    }
    grid.push(SpacetimePoint::new(vec![0.0; 3], t_end + 0.1).unwrap());
    assert_eq!(grid.len(), 25);
    let max_u: f64 = grid
        .iter()
        .map(|p| traj.gaussian_density_u(p, 0.0).unwrap())
        .fold(0.0, f64::max);
    let tol = 1e-3 * max_u;
    let rep = verify_huisken(traj, &grid, tol).unwrap();
    report(
        "criterion 4 (Huisken monotonicity + dissipation)",
        rep.passed,
        format!(
            "25-point grid, binding violation {:.3e} vs tol {tol:.3e} ({})",
            rep.worst_violation, rep.params
        ),
    );
}

#[test]
fn criterion_05_weighted_monotonicity() {
    let traj = curved_suite_trajectory();
    let region = Aabb::new(vec![-12.0; 4], vec![12.0; 4]);
    let k_bound = traj.ambient.curvature_bound(&region, 2).unwrap();
    let k_ok = (k_bound - 0.2).abs() < 1e-12 && (traj.k_used - k_bound).abs() < 1e-12;
    let y_s = curved_density_center(traj);
    let max_j = traj.gaussian_density_u(&y_s, 0.0).unwrap();
    let tol = 1e-3 * max_j;
    let weighted = verify_j_monotone(traj, &y_s, tol).unwrap();
    let stripped = verify_j_monotone(&traj.with_k(0.0), &y_s, tol).unwrap();
    let passed = k_ok && weighted.passed && stripped.worst_violation > 0.0;
    report(
        "criterion 5 (weighted monotonicity, K = 0.2)",
        passed,
        format!(
            "J violation {:.3e} vs tol {tol:.3e}; stripped-weight violation {:.3e} > 0",
            weighted.worst_violation, stripped.worst_violation
        ),
    );
}

#[test]
fn criterion_06_almost_monotonicity() {
    let traj = curved_suite_trajectory();
    let y_s = curved_density_center(traj);
    let tau = 2.0 * traj.snapshots.last().unwrap().0;
    let u_rep = verify_almost_mono_u(traj, &y_s, 2.0, tau, 1e-3).unwrap();
    let lambda_rep =
        verify_entropy_almost_mono(traj, 0.05, tau, &EntropyOptions::default(), 6).unwrap();
    report(
        "criterion 6 (almost-monotonicity of u and entropy)",
        u_rep.passed && lambda_rep.passed,
        format!(
            "u: violation {:.3e} (C = 2); entropy: violation {:.3e} (eps0 = 0.05)",
            u_rep.worst_violation, lambda_rep.worst_violation
        ),
    );
}

#[test]
fn criterion_07_gradient_correctness() {
    // finite-difference match over 100 randomized meshes and points
    let mut rng = SplitMix64::new(91);
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..100 {
        let axes = [
            rng.range(0.5, 2.0),
            rng.range(0.5, 2.0),
            rng.range(0.5, 2.0),
        ];
        let center = [
            rng.range(-1.0, 1.0),
            rng.range(-1.0, 1.0),
            rng.range(-1.0, 1.0),
        ];
        let m = ellipsoid(&axes, &center, 2);
        let d = m.diameter();
        let t0 = rng.range(0.05 * d * d, 0.5 * d * d);
        let x0 = vec![
            center[0] + rng.range(-0.5, 0.5) * d,
            center[1] + rng.range(-0.5, 0.5) * d,
            center[2] + rng.range(-0.5, 0.5) * d,
        ];
        let p = SpacetimePoint::new(x0.clone(), t0).unwrap();
        let g = f_gradient(&m, &p).unwrap();
        let hx = 1e-5 * t0.sqrt();
        let mut fd = vec![0.0; 3];
        for dcoord in 0..3 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[dcoord] += hx;
            xm[dcoord] -= hx;
            fd[dcoord] = (f_functional(&m, &SpacetimePoint::new(xp, t0).unwrap()).unwrap()
                - f_functional(&m, &SpacetimePoint::new(xm, t0).unwrap()).unwrap())
                / (2.0 * hx);
        }
        let ht = 1e-5 * t0;
        let fd_t = (f_functional(&m, &SpacetimePoint::new(x0.clone(), t0 + ht).unwrap()).unwrap()
            - f_functional(&m, &SpacetimePoint::new(x0.clone(), t0 - ht).unwrap()).unwrap())
            / (2.0 * ht);
        let gn = linalg::norm(&g.d_x0);
        if gn > 1e-8 {
            worst_rel = worst_rel.max(linalg::dist(&fd, &g.d_x0) / gn);
            checked += 1;
        }
        if g.d_t0.abs() > 1e-8 {
            worst_rel = worst_rel.max((fd_t - g.d_t0).abs() / g.d_t0.abs());
        }
    }
    let fd_ok = worst_rel < 1e-4 && checked > 80;

    // scale-derivative lower bound on a sphere grid, 5% slack
    let m = icosphere(1.0, &[0.0; 3], 3);
    let lambda = entropy(&m, &EntropyOptions::default()).unwrap().lambda;
    let h_field = mean_curvature_vector(&m).unwrap();
    let sup_h_sq = (0..m.vertex_count())
        .map(|i| linalg::norm_sq(h_field.vector(i)))
        .fold(0.0, f64::max);
    let bound = -(lambda / 4.0) * sup_h_sq * 1.05;
    let h = m.max_edge_length();
    let mut bound_ok = true;
    for ix in [-0.9, 0.0, 0.9] {
        for iy in [-0.9, 0.0, 0.9] {
            for &t0 in &[4.0 * h * h, 0.1, 0.5, 1.0, 4.0] {
                let g = f_gradient(&m, &SpacetimePoint::new(vec![ix, iy, 0.0], t0).unwrap())
                    .unwrap();
                bound_ok &= g.d_t0 >= bound;
            }
        }
    }

    // on-surface limit at t0 = 16 h^2, at the resolution where that scale
    // is still small against the curvature (16 h^2 = 0.07 at subdivision 4)
    let m_fine = icosphere(1.0, &[0.0; 3], 4);
    let h_fine = m_fine.max_edge_length();
    let x_surf = m_fine.vertex(17).to_vec();
    let f_surf = f_functional(
        &m_fine,
        &SpacetimePoint::new(x_surf, 16.0 * h_fine * h_fine).unwrap(),
    )
    .unwrap();
    let limit_ok = (f_surf - 1.0).abs() < 0.05;

    report(
        "criterion 7 (first variation)",
        fd_ok && bound_ok && limit_ok,
        format!(
            "FD worst rel err {worst_rel:.2e} over {checked} cases; scale bound {}; F at surface = {f_surf:.4}",
            if bound_ok { "holds" } else { "violated" }
        ),
    );
}

#[test]
fn criterion_08_shrinker_detection() {
    let p = SpacetimePoint::new(vec![0.0; 3], 1.0).unwrap();
    let l3 = shrinker_residual(&icosphere(2.0, &[0.0; 3], 3), &p).unwrap().l2;
    let l4 = shrinker_residual(&icosphere(2.0, &[0.0; 3], 4), &p).unwrap().l2;
    let l5 = shrinker_residual(&icosphere(2.0, &[0.0; 3], 5), &p).unwrap().l2;
    let order_34 = (l3 / l4).log2();
    let order_45 = (l4 / l5).log2();
    let m = ellipsoid(&[2.0, 1.0, 1.0], &[0.0; 3], 3);
    let best = entropy(&m, &EntropyOptions::default()).unwrap().argmax;
    let ell = shrinker_residual(&m, &best).unwrap().l2;
    let passed = order_34 >= 1.8 && order_45 >= 1.8 && ell > 0.1;
    report(
        "criterion 8 (shrinker detection)",
        passed,
        format!(
            "orders {order_34:.2}, {order_45:.2} (>= 1.8); ellipsoid residual {ell:.3} > 0.1"
        ),
    );
}

#[test]
fn criterion_09_entropy_gap_and_continuity() {
    let opt = EntropyOptions::default();
    let gap_ok = [
        entropy(&icosphere(1.0, &[0.0; 3], 3), &opt).unwrap().lambda,
        entropy(&ellipsoid(&[2.0, 1.0, 1.0], &[0.0; 3], 3), &opt)
            .unwrap()
            .lambda,
        entropy(&torus(2.0, 0.7, 40, 20), &opt).unwrap().lambda,
    ]
    .iter()
    .all(|l| *l > 1.05);

    let base = icosphere(1.0, &[0.0; 3], 2);
    let dilations: Vec<_> = (0..5)
        .map(|i| {
            base.translated_scaled(&[0.0; 3], 1.0 + i as f64 / 4.0)
                .unwrap()
        })
        .collect();
    let dil = entropy_continuity_probe(&dilations, &opt).unwrap();
    let mut dil_delta: f64 = 0.0;
    for w in dil.lambda_series.windows(2) {
        dil_delta = dil_delta.max((w[1].1 - w[0].1).abs());
    }
    let dil_ok = dil_delta < 1e-6;

    let family: Vec<_> = (0..11)
        .map(|i| {
            let s = i as f64 / 10.0;
            let mut pos = base.positions().to_vec();
            for v in 0..base.vertex_count() {
                let x = base.vertex(v);
                let factor = 1.0 + 0.5 * s * x[0] * x[0];
                for d in 0..3 {
                    pos[v * 3 + d] = factor * x[d];
                }
            }
            base.with_vertices(pos).unwrap()
        })
        .collect();
    let probe = entropy_continuity_probe(&family, &opt).unwrap();
    report(
        "criterion 9 (entropy gap + continuity)",
        gap_ok && dil_ok && probe.refinement_stable,
        format!(
            "gap > 1.05 {gap_ok}; dilation delta {dil_delta:.2e}; lipschitz {:.4} vs coarse {:.4}",
            probe.lipschitz_estimate, probe.coarse_lipschitz_estimate
        ),
    );
}

#[test]
fn criterion_10_volume_bound() {
    let flat = sphere_suite_trajectory();
    let mut rng = SplitMix64::new(17);
    let centers: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let v: Vec<f64> = (0..3).map(|_| rng.range(-1.0, 1.0)).collect();
            linalg::scale(&v, 1.0 / linalg::norm(&v).max(1e-9))
        })
        .collect();
    let flat_rep = volume_ratio_bound(flat, &[0.1, 0.3], &centers, 0.5, 0.02).unwrap();

    let curved = curved_suite_trajectory();
    let m0 = &curved.snapshots[0].1;
    let curved_centers: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let i = (rng.next_f64() * m0.vertex_count() as f64) as usize;
            m0.vertex(i.min(m0.vertex_count() - 1)).to_vec()
        })
        .collect();
    let curved_rep =
        volume_ratio_bound(curved, &[0.5, 1.5], &curved_centers, 5.0, 0.5).unwrap();
    report(
        "criterion 10 (local volume bound)",
        flat_rep.passed && curved_rep.passed,
        format!(
            "euclidean worst {:.3e}; curved worst {:.3e} (both <= 0)",
            flat_rep.worst_violation, curved_rep.worst_violation
        ),
    );
}

#[test]
fn criterion_11_piecewise_orchestration() {
    let ambient = AmbientSpace::euclidean(3);
    let flow_cfg = FlowConfig {
        dt_initial: 5e-4,
        c_stab: 0.05,
        stop_area: 1e-2,
        snapshot_stride: 10,
        tangential_smoothing: 0.5,
        ..FlowConfig::default()
    };
    let budget = PiecewiseBudget::default();
    let opt = EntropyOptions::default();
    let classify = ClassifyConfig::default();

    let log = piecewise_flow(
        &ellipsoid(&[2.0, 1.0, 1.0], &[0.0; 3], 3),
        &ambient,
        &DilationProvider,
        &budget,
        &flow_cfg,
        &opt,
        &classify,
    )
    .unwrap();
    let ellipsoid_ok = log.final_classification == FinalClassification::RoundPoint
        && log.replacements.is_empty();
    let class = classify_extinction(log.segments.last().unwrap(), &classify).unwrap();
    let verdict_ok = class.verdict == ExtinctionVerdict::RoundPoint;

    // a lambda-neutral provider must be rejected by the epsilon/2 gate;
    // an impossible residual threshold forces the replacement branch
    let force_nonround = ClassifyConfig {
        residual_threshold: 0.0,
        ..ClassifyConfig::default()
    };
    let rejected = piecewise_flow(
        &icosphere(1.0, &[0.0; 3], 3),
        &ambient,
        &DilationProvider,
        &budget,
        &flow_cfg,
        &opt,
        &force_nonround,
    )
    .unwrap();
    let gate_ok = rejected.final_classification == FinalClassification::NonRound
        && rejected
            .replacements
            .iter()
            .all(|r| !r.accepted && r.entropy_after > r.entropy_before - budget.epsilon / 2.0);

    // replacement count never exceeds the entropy-budget bound
    let bound = ((log.initial_entropy - 1.0 - ENTROPY_GAP_SIGMA) / (budget.epsilon / 4.0))
        .floor() as usize
        + 1;
    let accepted = |l: &mcflab_core::harness::PiecewiseFlowLog| {
        l.replacements.iter().filter(|r| r.accepted).count()
    };
    let budget_ok = accepted(&log) <= bound && accepted(&rejected) <= bound;

    report(
        "criterion 11 (piecewise orchestration)",
        ellipsoid_ok && verdict_ok && gate_ok && budget_ok,
        format!(
            "ellipsoid -> {:?} with {} replacements; neutral perturbation rejected {} time(s); budget bound {bound}",
            log.final_classification,
            log.replacements.len(),
            rejected.replacements.len()
        ),
    );
}

#[test]
fn genus_is_preserved_along_every_flow() {
    // connectivity never changes, so the genus is constant along flows
    let traj = sphere_suite_trajectory();
    let g0 = mesh_metrics(&traj.snapshots[0].1).unwrap().genus;
    for (_, m) in &traj.snapshots {
        assert_eq!(mesh_metrics(m).unwrap().genus, g0);
    }
}
