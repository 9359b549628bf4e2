//! Command execution: runs the requested computation, writes artifacts, and
//! maps outcomes onto exit codes (0 ok, 2 input error, 3 numerical failure,
//! 4 verification failure).

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use mcflab_core::ambient::AmbientSpace;
use mcflab_core::flow::{rescale_trajectory, run_flow, FlowTrajectory, Termination};
use mcflab_core::functionals::{entropy, f_functional, SpacetimePoint};
use mcflab_core::harness::{
    classify_extinction, piecewise_flow, verify_almost_mono_u, verify_entropy_almost_mono,
    verify_huisken, verify_j_monotone, volume_ratio_bound, ClassifyConfig, DilationProvider,
    PerturbationProvider, PiecewiseBudget, VerificationReport, ZeroProvider,
};
use mcflab_core::io;
use mcflab_core::linalg::SplitMix64;
use mcflab_core::{Error, Result};

use crate::config::{Command, RunConfig, VerifySection};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    command: &'a str,
    status: &'a str,
    config: &'a RunConfig,
    seed: u64,
    artifacts: Vec<String>,
    meta: serde_json::Value,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    status: &str,
    config: &RunConfig,
    artifacts: Vec<String>,
) -> Result<()> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        status,
        config,
        seed: config.seed,
        artifacts,
        meta: serde_json::json!({ "timestamp_unix": timestamp }),
    };
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::Validation { .. } | Error::Io(_) | Error::Json(_) => {
            EXIT_INPUT
        }
        _ => EXIT_NUMERICAL,
    }
}

/// Run `command` with the given configuration; returns the process exit code.
pub fn execute(command: Command, config: &RunConfig, out_dir: &Path, base: &Path) -> u8 {
    let command_name = match command {
        Command::Flow => "flow",
        Command::Entropy => "entropy",
        Command::Verify => "verify",
        Command::Rescale => "rescale",
        Command::Piecewise => "piecewise",
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create output directory: {e}");
        return EXIT_INPUT;
    }
    // crash forensics: the manifest lands before any long computation
    if let Err(e) = write_manifest(out_dir, command_name, "running", config, Vec::new()) {
        eprintln!("error: cannot write manifest: {e}");
        return EXIT_INPUT;
    }
    let result = match command {
        Command::Flow => run_flow_command(config, out_dir, base),
        Command::Entropy => run_entropy_command(config, out_dir, base),
        Command::Verify => run_verify_command(config, out_dir, base),
        Command::Rescale => run_rescale_command(config, out_dir, base),
        Command::Piecewise => run_piecewise_command(config, out_dir, base),
    };
    match result {
        Ok((artifacts, code)) => {
            let status = if code == EXIT_OK { "complete" } else { "failed" };
            if let Err(e) = write_manifest(out_dir, command_name, status, config, artifacts) {
                eprintln!("error: cannot finalize manifest: {e}");
                return EXIT_INPUT;
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ =
                write_manifest(out_dir, command_name, "incomplete", config, Vec::new());
            exit_code_for(&e)
        }
    }
}

fn build_ambient(config: &RunConfig) -> Result<AmbientSpace> {
    match &config.ambient {
        Some(desc) => desc.build(),
        None => Ok(AmbientSpace::euclidean(3)),
    }
}

type CommandOutcome = (Vec<String>, u8);

fn run_flow_command(config: &RunConfig, out_dir: &Path, base: &Path) -> Result<CommandOutcome> {
    let mesh = crate::config::load_mesh(config, base)?;
    let ambient = build_ambient(config)?;
    if mesh.dim() != ambient.dim() {
        return Err(Error::validation(
            "ambient",
            format!(
                "mesh dimension {} does not match ambient dimension {}",
                mesh.dim(),
                ambient.dim()
            ),
        ));
    }
    let flow_cfg = config.flow.clone().unwrap_or_default().to_config();
    let traj = run_flow(&mesh, &ambient, &flow_cfg);
    let traj_dir = out_dir.join("trajectory");
    io::export_trajectory(&traj, &traj_dir)?;
    println!(
        "flow: {} steps, termination {}",
        traj.steps_total,
        termination_label(&traj.termination)
    );
    let code = match &traj.termination {
        Termination::Failed { reason } => {
            eprintln!("flow failed: {reason}");
            EXIT_NUMERICAL
        }
        _ => EXIT_OK,
    };
    Ok((
        vec!["trajectory/manifest.json".into(), "trajectory/series.csv".into()],
        code,
    ))
}

fn termination_label(t: &Termination) -> String {
    match t {
        Termination::Extinct { t_est } => format!("extinct (t_est = {t_est})"),
        Termination::QualityStop => "quality stop".into(),
        Termination::StepLimit => "step limit".into(),
        Termination::Blowup { .. } => "blow-up".into(),
        Termination::Failed { reason } => format!("failed: {reason}"),
    }
}

fn run_entropy_command(config: &RunConfig, out_dir: &Path, base: &Path) -> Result<CommandOutcome> {
    let mesh = crate::config::load_mesh(config, base)?;
    let section = config.entropy.clone().unwrap_or_default();
    let opt = section.to_options(config.seed);
    let result = entropy(&mesh, &opt)?;
    std::fs::write(
        out_dir.join("entropy.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    println!(
        "entropy: lambda = {}, argmax t0 = {}, converged = {}",
        result.lambda, result.argmax.t0, result.converged
    );
    let mut artifacts = vec!["entropy.json".into()];
    if !section.f_grid_t0.is_empty() {
        let mut rows = Vec::new();
        let (lo, hi) = mesh.bounding_box();
        let nx = section.f_grid_nx.max(2);
        let dim = mesh.dim();
        let mut index = vec![0usize; dim];
        loop {
            let x0: Vec<f64> = (0..dim)
                .map(|d| lo[d] + (hi[d] - lo[d]) * index[d] as f64 / (nx as f64 - 1.0))
                .collect();
            for &t0 in &section.f_grid_t0 {
                let f = f_functional(&mesh, &SpacetimePoint::new(x0.clone(), t0)?)?;
                rows.push((x0.clone(), t0, f));
            }
            let mut d = 0;
            loop {
                if d == dim {
                    break;
                }
                index[d] += 1;
                if index[d] < nx {
                    break;
                }
                index[d] = 0;
                d += 1;
            }
            if d == dim {
                break;
            }
        }
        std::fs::write(out_dir.join("f_grid.csv"), io::f_grid_csv(dim, &rows))?;
        artifacts.push("f_grid.csv".into());
    }
    let code = if result.converged {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    };
    Ok((artifacts, code))
}

fn obtain_trajectory(
    config: &RunConfig,
    section: &VerifySection,
    base: &Path,
) -> Result<FlowTrajectory> {
    if let Some(dir) = &section.trajectory_dir {
        let resolved = if dir.is_absolute() {
            dir.clone()
        } else {
            base.join(dir)
        };
        return io::load_trajectory(&resolved);
    }
    let mesh = crate::config::load_mesh(config, base)?;
    let ambient = build_ambient(config)?;
    let flow_cfg = config.flow.clone().unwrap_or_default().to_config();
    Ok(run_flow(&mesh, &ambient, &flow_cfg))
}

fn run_verify_command(config: &RunConfig, out_dir: &Path, base: &Path) -> Result<CommandOutcome> {
    let section = config.verify.clone().unwrap_or_default();
    let traj = obtain_trajectory(config, &section, base)?;
    let t_end = traj
        .snapshots
        .last()
        .map(|(t, _)| *t)
        .ok_or(Error::EmptyWindow)?;
    let m0 = &traj.snapshots.first().unwrap().1;
    let diam0 = m0.diameter();
    let tau = if section.tau > 0.0 {
        section.tau
    } else {
        diam0 * diam0 / 2.0
    };
    let centroid0 = m0.centroid();

    // density grid: centroid-anchored spatial offsets at each scale offset
    let mut grid = Vec::new();
    for &frac in &[-0.15, 0.0, 0.15] {
        for &off in &section.grid_offsets {
            let mut x0 = centroid0.clone();
            x0[0] += frac * diam0;
            grid.push(SpacetimePoint::new(x0, t_end + off)?);
        }
    }
    let max_u: f64 = grid
        .iter()
        .map(|p| traj.gaussian_density_u(p, traj.snapshots[0].0))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let y_s = SpacetimePoint::new(
        centroid0.clone(),
        t_end + section.grid_offsets.last().copied().unwrap_or(1.0),
    )?;

    let mut reports: Vec<VerificationReport> = Vec::new();
    for check in &section.checks {
        let report = match check.as_str() {
            "huisken" => {
                if !traj.ambient.is_euclidean() {
                    continue;
                }
                verify_huisken(&traj, &grid, section.tol_rel * max_u)?
            }
            "j_monotone" => verify_j_monotone(&traj, &y_s, section.tol_rel * max_u)?,
            "almost_mono_u" => {
                verify_almost_mono_u(&traj, &y_s, section.c_almost, tau, section.tol_rel)?
            }
            "entropy_almost_mono" => {
                let opt = config
                    .entropy
                    .clone()
                    .unwrap_or_default()
                    .to_options(config.seed);
                verify_entropy_almost_mono(
                    &traj,
                    section.epsilon0,
                    tau,
                    &opt,
                    section.entropy_stride,
                )?
            }
            "volume_bound" => {
                let mut rng = SplitMix64::new(config.seed ^ 0x5eed);
                let centers: Vec<Vec<f64>> = (0..section.volume_centers)
                    .map(|_| {
                        let i = (rng.next_f64() * m0.vertex_count() as f64) as usize;
                        m0.vertex(i.min(m0.vertex_count() - 1)).to_vec()
                    })
                    .collect();
                let radii: Vec<f64> = section
                    .volume_radii
                    .iter()
                    .map(|r| r * diam0.max(1.0))
                    .collect();
                // S must dominate every probed radius squared
                let s_cap = section
                    .volume_s
                    .max(2.0 * radii.iter().fold(0.0f64, |a, &b| a.max(b * b)));
                volume_ratio_bound(&traj, &radii, &centers, s_cap, section.volume_t)?
            }
            other => {
                return Err(Error::validation(
                    "verify.checks",
                    format!("unknown check `{other}`"),
                ))
            }
        };
        println!(
            "verify {}: {} (worst {} vs tol {})",
            report.check_name,
            if report.passed { "pass" } else { "FAIL" },
            report.worst_violation,
            report.tolerance
        );
        reports.push(report);
    }
    std::fs::write(
        out_dir.join("reports.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    std::fs::write(out_dir.join("summary.csv"), io::reports_summary_csv(&reports))?;
    let all_passed = reports.iter().all(|r| r.passed);
    Ok((
        vec!["reports.json".into(), "summary.csv".into()],
        if all_passed { EXIT_OK } else { EXIT_VERIFICATION },
    ))
}

fn run_rescale_command(config: &RunConfig, out_dir: &Path, base: &Path) -> Result<CommandOutcome> {
    let section = config
        .rescale
        .as_ref()
        .ok_or_else(|| Error::validation("rescale", "a [rescale] section is required"))?;
    let dir = if section.trajectory_dir.is_absolute() {
        section.trajectory_dir.clone()
    } else {
        base.join(&section.trajectory_dir)
    };
    let traj = io::load_trajectory(&dir)?;
    let rescaled = rescale_trajectory(&traj, &section.x0, section.t0, section.c)?;
    let traj_dir = out_dir.join("rescaled");
    io::export_trajectory(&rescaled, &traj_dir)?;
    println!(
        "rescale: {} snapshots, K {} -> {}",
        rescaled.snapshots.len(),
        traj.k_used,
        rescaled.k_used
    );
    Ok((
        vec!["rescaled/manifest.json".into(), "rescaled/series.csv".into()],
        EXIT_OK,
    ))
}

fn run_piecewise_command(
    config: &RunConfig,
    out_dir: &Path,
    base: &Path,
) -> Result<CommandOutcome> {
    let mesh = crate::config::load_mesh(config, base)?;
    let ambient = build_ambient(config)?;
    let flow_cfg = config.flow.clone().unwrap_or_default().to_config();
    let section = config.piecewise.clone().unwrap_or_default();
    let budget = PiecewiseBudget {
        epsilon: section.epsilon,
        max_replacements: section.max_replacements,
    };
    let classify_cfg = section
        .classify
        .as_ref()
        .map(|c| c.to_config())
        .unwrap_or_else(ClassifyConfig::default);
    let entropy_opt = config
        .entropy
        .clone()
        .unwrap_or_default()
        .to_options(config.seed);
    let provider: Box<dyn PerturbationProvider> = match section.provider.as_str() {
        "dilation" => Box::new(DilationProvider),
        _ => Box::new(ZeroProvider),
    };
    let log = piecewise_flow(
        &mesh,
        &ambient,
        provider.as_ref(),
        &budget,
        &flow_cfg,
        &entropy_opt,
        &classify_cfg,
    )?;
    let mut artifacts = Vec::new();
    for (i, segment) in log.segments.iter().enumerate() {
        let dir = out_dir.join(format!("segment_{i:03}"));
        io::export_trajectory(segment, &dir)?;
        artifacts.push(format!("segment_{i:03}/manifest.json"));
    }
    let summary = serde_json::json!({
        "final_classification": log.final_classification,
        "initial_entropy": log.initial_entropy,
        "segments": log.segments.len(),
        "replacements": log.replacements,
    });
    std::fs::write(
        out_dir.join("piecewise.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    artifacts.push("piecewise.json".into());
    // classification detail for the last segment when it is available
    if let Some(last) = log.segments.last() {
        if let Ok(class) = classify_extinction(last, &classify_cfg) {
            std::fs::write(
                out_dir.join("classification.json"),
                serde_json::to_string_pretty(&class)?,
            )?;
            artifacts.push("classification.json".into());
        }
    }
    println!(
        "piecewise: {:?} after {} segment(s), {} replacement attempt(s)",
        log.final_classification,
        log.segments.len(),
        log.replacements.len()
    );
    Ok((artifacts, EXIT_OK))
}
