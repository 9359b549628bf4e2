//! Mesh and trajectory serialization: OFF and OBJ meshes, trajectory
//! directories (numbered OFF files + JSON manifest + CSV series), and the
//! verification report formats.
//!
//! OFF files may carry more than three coordinates per vertex via a
//! `#dim l` comment line before the counts; vertex lines then hold l
//! floats. Plain OFF (no directive) is read as dimension 3. CSV numbers use
//! the shortest round-trip formatting, so identical inputs serialize to
//! identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ambient::{Aabb, AmbientKind, AmbientSpace};
use crate::curvature;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTrajectory, Termination};
use crate::harness::VerificationReport;
use crate::mesh::TriMesh;
use crate::poly::Polynomial;

// ---------------------------------------------------------------------------
// OFF
// ---------------------------------------------------------------------------

pub fn write_off(mesh: &TriMesh) -> String {
    let dim = mesh.dim();
    let mut out = String::new();
    out.push_str("OFF\n");
    if dim != 3 {
        let _ = writeln!(out, "#dim {dim}");
    }
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.vertex_count(),
        mesh.face_count(),
        mesh.edge_count()
    );
    for i in 0..mesh.vertex_count() {
        let v = mesh.vertex(i);
        for (d, x) in v.iter().enumerate() {
            if d > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{x}");
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn parse_off(text: &str) -> Result<TriMesh> {
    parse_off_impl(text, false)
}

/// OFF parser that tolerates boundary edges (test meshes).
pub fn parse_off_open(text: &str) -> Result<TriMesh> {
    parse_off_impl(text, true)
}

fn parse_off_impl(text: &str, open: bool) -> Result<TriMesh> {
    let mut dim = 3usize;
    let mut lines = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("#dim") {
            dim = rest.trim().parse().map_err(|_| {
                Error::parse(format!("line {}", ln + 1), "bad #dim directive")
            })?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        lines.push((ln + 1, line));
    }
    let mut it = lines.into_iter();
    let (ln, header) = it.next().ok_or_else(|| Error::parse("line 1", "empty file"))?;
    if header != "OFF" {
        return Err(Error::parse(
            format!("line {ln}"),
            "expected OFF header",
        ));
    }
    let (ln, counts) = it
        .next()
        .ok_or_else(|| Error::parse("end of file", "missing counts line"))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(format!("line {ln}"), "bad counts line"))?;
    if counts.len() < 2 {
        return Err(Error::parse(
            format!("line {ln}"),
            "counts line needs vertices and faces",
        ));
    }
    let (n_v, n_f) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(n_v * dim);
    for _ in 0..n_v {
        let (ln, line) = it
            .next()
            .ok_or_else(|| Error::parse("end of file", "missing vertex line"))?;
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(format!("line {ln}"), "bad vertex line"))?;
        if coords.len() != dim {
            return Err(Error::parse(
                format!("line {ln}"),
                format!("expected {dim} coordinates, got {}", coords.len()),
            ));
        }
        vertices.extend(coords);
    }
    let mut faces = Vec::with_capacity(n_f);
    for _ in 0..n_f {
        let (ln, line) = it
            .next()
            .ok_or_else(|| Error::parse("end of file", "missing face line"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(format!("line {ln}"), "bad face line"))?;
        if idx.len() != 4 || idx[0] != 3 {
            return Err(Error::parse(
                format!("line {ln}"),
                "only triangle faces are supported",
            ));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    if open {
        TriMesh::new_open(dim, vertices, faces)
    } else {
        TriMesh::new(dim, vertices, faces)
    }
}

// ---------------------------------------------------------------------------
// OBJ (dimension 3 only)
// ---------------------------------------------------------------------------

pub fn write_obj(mesh: &TriMesh) -> Result<String> {
    if mesh.dim() != 3 {
        return Err(Error::validation(
            "mesh",
            "OBJ supports ambient dimension 3 only",
        ));
    }
    let mut out = String::new();
    for i in 0..mesh.vertex_count() {
        let v = mesh.vertex(i);
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    Ok(out)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(format!("line {}", ln + 1), "bad vertex"))?;
                if coords.len() != 3 {
                    return Err(Error::parse(
                        format!("line {}", ln + 1),
                        "OBJ vertices must have 3 coordinates",
                    ));
                }
                vertices.extend(coords);
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        t.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<usize>()
                            .map_err(|_| {
                                Error::parse(format!("line {}", ln + 1), "bad face index")
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::parse(
                        format!("line {}", ln + 1),
                        "only triangle faces are supported",
                    ));
                }
                if idx.iter().any(|&i| i == 0) {
                    return Err(Error::parse(
                        format!("line {}", ln + 1),
                        "OBJ face indices are 1-based",
                    ));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    TriMesh::new(3, vertices, faces)
}

/// Load a mesh by file extension (.off or .obj).
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("off") => parse_off(&text),
        Some("obj") => parse_obj(&text),
        other => Err(Error::validation(
            "mesh_path",
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("off") => write_off(mesh),
        Some("obj") => write_obj(mesh)?,
        other => {
            return Err(Error::validation(
                "mesh_path",
                format!("unsupported mesh extension {other:?}"),
            ))
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ambient descriptors
// ---------------------------------------------------------------------------

/// Serializable ambient descriptor (the implicit kind stores its polynomial
/// as the expression text).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbientDescriptor {
    Euclidean {
        dim: usize,
    },
    RoundSphere {
        dim: usize,
        radius: f64,
    },
    CliffordTorus {
        r1: f64,
        r2: f64,
    },
    Implicit {
        dim: usize,
        level: String,
        region_min: Vec<f64>,
        region_max: Vec<f64>,
    },
}

impl AmbientDescriptor {
    pub fn build(&self) -> Result<AmbientSpace> {
        match self {
            AmbientDescriptor::Euclidean { dim } => Ok(AmbientSpace::euclidean(*dim)),
            AmbientDescriptor::RoundSphere { dim, radius } => {
                AmbientSpace::round_sphere(*dim, *radius)
            }
            AmbientDescriptor::CliffordTorus { r1, r2 } => AmbientSpace::clifford_torus(*r1, *r2),
            AmbientDescriptor::Implicit {
                dim,
                level,
                region_min,
                region_max,
            } => {
                let poly = Polynomial::parse(level, *dim)?;
                AmbientSpace::implicit(
                    *dim,
                    poly,
                    &Aabb::new(region_min.clone(), region_max.clone()),
                )
            }
        }
    }

    pub fn describe(ambient: &AmbientSpace) -> AmbientDescriptor {
        match ambient.kind() {
            AmbientKind::Euclidean => AmbientDescriptor::Euclidean {
                dim: ambient.dim(),
            },
            AmbientKind::RoundSphere { radius } => AmbientDescriptor::RoundSphere {
                dim: ambient.dim(),
                radius: *radius,
            },
            AmbientKind::CliffordTorus { r1, r2 } => AmbientDescriptor::CliffordTorus {
                r1: *r1,
                r2: *r2,
            },
            AmbientKind::ImplicitHypersurface { level } => AmbientDescriptor::Implicit {
                dim: ambient.dim(),
                level: level.to_string(),
                region_min: vec![-10.0; ambient.dim()],
                region_max: vec![10.0; ambient.dim()],
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory directories
// ---------------------------------------------------------------------------

/// On-disk manifest of an exported trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub version: String,
    pub status: String,
    pub times: Vec<f64>,
    pub snapshot_files: Vec<String>,
    pub k_used: f64,
    pub termination: Termination,
    pub ambient: AmbientDescriptor,
    pub config: FlowConfig,
    pub steps_total: usize,
    /// Free-form block excluded from determinism comparisons.
    pub meta: serde_json::Value,
}

/// Write numbered OFF snapshots, `manifest.json`, and `series.csv` into
/// `dir` (created if missing).
pub fn export_trajectory(traj: &FlowTrajectory, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut snapshot_files = Vec::with_capacity(traj.snapshots.len());
    for (i, (_, mesh)) in traj.snapshots.iter().enumerate() {
        let name = format!("snap_{i:06}.off");
        std::fs::write(dir.join(&name), write_off(mesh))?;
        snapshot_files.push(name);
    }
    let manifest = TrajectoryManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: "complete".to_string(),
        times: traj.times(),
        snapshot_files,
        k_used: traj.k_used,
        termination: traj.termination.clone(),
        ambient: AmbientDescriptor::describe(&traj.ambient),
        config: traj.config.clone(),
        steps_total: traj.steps_total,
        meta: serde_json::json!({}),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(dir.join("series.csv"), trajectory_series_csv(traj))?;
    Ok(())
}

/// CSV time series: t, area, diameter, max |A|, and the diameter ratio
/// diam/sqrt(t_est - t) (blank unless the trajectory went extinct).
pub fn trajectory_series_csv(traj: &FlowTrajectory) -> String {
    let t_est = traj.extinction_estimate();
    let mut out = String::from("t,area,diameter,max_a,diameter_ratio\n");
    for (t, mesh) in &traj.snapshots {
        let area = mesh.total_area();
        let diam = mesh.diameter();
        let max_a = curvature::max_second_fundamental_norm(mesh);
        let ratio = match t_est {
            Some(te) if te - t > 0.0 => format!("{}", diam / (te - t).sqrt()),
            _ => String::new(),
        };
        let _ = writeln!(out, "{t},{area},{diam},{max_a},{ratio}");
    }
    out
}

/// Load a trajectory directory written by [`export_trajectory`].
pub fn load_trajectory(dir: &Path) -> Result<FlowTrajectory> {
    let manifest: TrajectoryManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.times.len() != manifest.snapshot_files.len() {
        return Err(Error::validation(
            "manifest",
            "times and snapshot_files disagree",
        ));
    }
    let mut snapshots = Vec::with_capacity(manifest.times.len());
    for (t, file) in manifest.times.iter().zip(&manifest.snapshot_files) {
        let mesh = parse_off(&std::fs::read_to_string(dir.join(file))?)?;
        snapshots.push((*t, mesh));
    }
    Ok(FlowTrajectory {
        snapshots,
        ambient: manifest.ambient.build()?,
        k_used: manifest.k_used,
        termination: manifest.termination,
        steps_total: manifest.steps_total,
        config: manifest.config,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// FNV-1a of the canonical JSON of a report's parameters.
pub fn params_hash(params: &serde_json::Value) -> String {
    let text = params.to_string();
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Summary CSV over verification reports:
/// check, params-hash, worst_violation, tolerance, passed.
pub fn reports_summary_csv(reports: &[VerificationReport]) -> String {
    let mut out = String::from("check,params_hash,worst_violation,tolerance,passed\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.check_name,
            params_hash(&r.params),
            r.worst_violation,
            r.tolerance,
            r.passed
        );
    }
    out
}

/// Batch CSV of F evaluations over a spacetime grid:
/// one x0 column per coordinate, then t0 and F.
pub fn f_grid_csv(dim: usize, rows: &[(Vec<f64>, f64, f64)]) -> String {
    let mut out = String::new();
    for d in 0..dim {
        let _ = write!(out, "x0_{},", d + 1);
    }
    out.push_str("t0,f\n");
    for (x0, t0, f) in rows {
        for c in x0 {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{t0},{f}");
    }
    out
}
