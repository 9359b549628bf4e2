//! Run configuration: strict TOML with defaults. Unknown keys are fatal so
//! a typo in a tolerance name cannot silently fake a passing suite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcflab_core::flow::{FlowConfig, Scheme};
use mcflab_core::functionals::EntropyOptions;
use mcflab_core::harness::{ClassifyConfig, PiecewiseBudget};
use mcflab_core::io::AmbientDescriptor;
use mcflab_core::{Error, Result, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Flow,
    Entropy,
    Verify,
    Rescale,
    Piecewise,
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(Command::Flow),
            "entropy" => Ok(Command::Entropy),
            "verify" => Ok(Command::Verify),
            "rescale" => Ok(Command::Rescale),
            "piecewise" => Ok(Command::Piecewise),
            other => Err(Error::validation(
                "command",
                format!("unknown command `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerateSection {
    Icosphere {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        center: Option<[f64; 3]>,
        subdivisions: u32,
    },
    Ellipsoid {
        semi_axes: [f64; 3],
        #[serde(default)]
        center: Option<[f64; 3]>,
        subdivisions: u32,
    },
    Torus {
        big_r: f64,
        small_r: f64,
        n_major: usize,
        n_minor: usize,
    },
    GeodesicSphereS3 {
        rho: f64,
        geo_radius: f64,
        subdivisions: u32,
    },
}

fn default_radius() -> f64 {
    1.0
}

impl GenerateSection {
    pub fn build(&self) -> TriMesh {
        match self {
            GenerateSection::Icosphere {
                radius,
                center,
                subdivisions,
            } => mcflab_core::mesh::icosphere(
                *radius,
                &center.unwrap_or([0.0; 3]),
                *subdivisions,
            ),
            GenerateSection::Ellipsoid {
                semi_axes,
                center,
                subdivisions,
            } => mcflab_core::mesh::ellipsoid(
                semi_axes,
                &center.unwrap_or([0.0; 3]),
                *subdivisions,
            ),
            GenerateSection::Torus {
                big_r,
                small_r,
                n_major,
                n_minor,
            } => mcflab_core::mesh::torus(*big_r, *small_r, *n_major, *n_minor),
            GenerateSection::GeodesicSphereS3 {
                rho,
                geo_radius,
                subdivisions,
            } => mcflab_core::mesh::geodesic_sphere_s3(*rho, *geo_radius, *subdivisions),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "FlowDefaults::dt_initial")]
    pub dt_initial: f64,
    #[serde(default = "FlowDefaults::c_stab")]
    pub c_stab: f64,
    #[serde(default = "FlowDefaults::max_steps")]
    pub max_steps: usize,
    #[serde(default = "FlowDefaults::stop_area")]
    pub stop_area: f64,
    #[serde(default = "FlowDefaults::stop_quality")]
    pub stop_quality: f64,
    #[serde(default = "FlowDefaults::scheme")]
    pub scheme: Scheme,
    #[serde(default = "FlowDefaults::snapshot_stride")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub tangential_smoothing: f64,
}

struct FlowDefaults;

impl FlowDefaults {
    fn dt_initial() -> f64 {
        FlowConfig::default().dt_initial
    }
    fn c_stab() -> f64 {
        FlowConfig::default().c_stab
    }
    fn max_steps() -> usize {
        FlowConfig::default().max_steps
    }
    fn stop_area() -> f64 {
        FlowConfig::default().stop_area
    }
    fn stop_quality() -> f64 {
        FlowConfig::default().stop_quality
    }
    fn scheme() -> Scheme {
        FlowConfig::default().scheme
    }
    fn snapshot_stride() -> usize {
        FlowConfig::default().snapshot_stride
    }
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        FlowSection {
            dt_initial: d.dt_initial,
            c_stab: d.c_stab,
            max_steps: d.max_steps,
            stop_area: d.stop_area,
            stop_quality: d.stop_quality,
            scheme: d.scheme,
            snapshot_stride: d.snapshot_stride,
            tangential_smoothing: d.tangential_smoothing,
        }
    }
}

impl FlowSection {
    pub fn to_config(&self) -> FlowConfig {
        FlowConfig {
            dt_initial: self.dt_initial,
            c_stab: self.c_stab,
            max_steps: self.max_steps,
            stop_area: self.stop_area,
            stop_quality: self.stop_quality,
            scheme: self.scheme,
            snapshot_stride: self.snapshot_stride,
            tangential_smoothing: self.tangential_smoothing,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    #[serde(default = "EntropyDefaults::grid_nx")]
    pub grid_nx: usize,
    #[serde(default = "EntropyDefaults::grid_nt")]
    pub grid_nt: usize,
    #[serde(default = "EntropyDefaults::n_starts")]
    pub n_starts: usize,
    #[serde(default = "EntropyDefaults::ascent_tol")]
    pub ascent_tol: f64,
    #[serde(default = "EntropyDefaults::max_iters")]
    pub max_iters: usize,
    /// Optional scale list for a batch F-grid CSV export.
    #[serde(default)]
    pub f_grid_t0: Vec<f64>,
    /// Spatial samples per axis for the F-grid export.
    #[serde(default = "EntropyDefaults::f_grid_nx")]
    pub f_grid_nx: usize,
}

struct EntropyDefaults;

impl EntropyDefaults {
    fn grid_nx() -> usize {
        EntropyOptions::default().grid_nx
    }
    fn grid_nt() -> usize {
        EntropyOptions::default().grid_nt
    }
    fn n_starts() -> usize {
        EntropyOptions::default().n_starts
    }
    fn ascent_tol() -> f64 {
        EntropyOptions::default().ascent_tol
    }
    fn max_iters() -> usize {
        EntropyOptions::default().max_iters
    }
    fn f_grid_nx() -> usize {
        3
    }
}

impl Default for EntropySection {
    fn default() -> Self {
        let d = EntropyOptions::default();
        EntropySection {
            grid_nx: d.grid_nx,
            grid_nt: d.grid_nt,
            n_starts: d.n_starts,
            ascent_tol: d.ascent_tol,
            max_iters: d.max_iters,
            f_grid_t0: Vec::new(),
            f_grid_nx: 3,
        }
    }
}

impl EntropySection {
    pub fn to_options(&self, seed: u64) -> EntropyOptions {
        EntropyOptions {
            grid_nx: self.grid_nx,
            grid_nt: self.grid_nt,
            n_starts: self.n_starts,
            ascent_tol: self.ascent_tol,
            max_iters: self.max_iters,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Trajectory directory to verify; omitted means run the flow first.
    #[serde(default)]
    pub trajectory_dir: Option<PathBuf>,
    #[serde(default = "VerifyDefaults::checks")]
    pub checks: Vec<String>,
    /// Relative tolerance (times the series maximum) for the density checks.
    #[serde(default = "VerifyDefaults::tol_rel")]
    pub tol_rel: f64,
    #[serde(default = "VerifyDefaults::c_almost")]
    pub c_almost: f64,
    /// Pair horizon; 0 selects the comparison-sphere default diam^2 / 2.
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "VerifyDefaults::epsilon0")]
    pub epsilon0: f64,
    #[serde(default = "VerifyDefaults::entropy_stride")]
    pub entropy_stride: usize,
    /// Kernel-scale offsets past the final snapshot time for density grids.
    #[serde(default = "VerifyDefaults::grid_offsets")]
    pub grid_offsets: Vec<f64>,
    #[serde(default = "VerifyDefaults::volume_radii")]
    pub volume_radii: Vec<f64>,
    #[serde(default = "VerifyDefaults::volume_centers")]
    pub volume_centers: usize,
    #[serde(default = "VerifyDefaults::volume_s")]
    pub volume_s: f64,
    #[serde(default = "VerifyDefaults::volume_t")]
    pub volume_t: f64,
}

struct VerifyDefaults;

impl VerifyDefaults {
    fn checks() -> Vec<String> {
        vec![
            "huisken".into(),
            "j_monotone".into(),
            "almost_mono_u".into(),
            "entropy_almost_mono".into(),
            "volume_bound".into(),
        ]
    }
    fn tol_rel() -> f64 {
        1e-3
    }
    fn c_almost() -> f64 {
        2.0
    }
    fn epsilon0() -> f64 {
        0.05
    }
    fn entropy_stride() -> usize {
        6
    }
    fn grid_offsets() -> Vec<f64> {
        vec![0.05, 0.2, 0.5, 1.0]
    }
    fn volume_radii() -> Vec<f64> {
        vec![0.1, 0.3]
    }
    fn volume_centers() -> usize {
        5
    }
    fn volume_s() -> f64 {
        0.5
    }
    fn volume_t() -> f64 {
        0.02
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            trajectory_dir: None,
            checks: VerifyDefaults::checks(),
            tol_rel: VerifyDefaults::tol_rel(),
            c_almost: VerifyDefaults::c_almost(),
            tau: 0.0,
            epsilon0: VerifyDefaults::epsilon0(),
            entropy_stride: VerifyDefaults::entropy_stride(),
            grid_offsets: VerifyDefaults::grid_offsets(),
            volume_radii: VerifyDefaults::volume_radii(),
            volume_centers: VerifyDefaults::volume_centers(),
            volume_s: VerifyDefaults::volume_s(),
            volume_t: VerifyDefaults::volume_t(),
        }
    }
}

pub const KNOWN_CHECKS: &[&str] = &[
    "huisken",
    "j_monotone",
    "almost_mono_u",
    "entropy_almost_mono",
    "volume_bound",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleSection {
    pub trajectory_dir: PathBuf,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseSection {
    #[serde(default = "PiecewiseDefaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "PiecewiseDefaults::max_replacements")]
    pub max_replacements: usize,
    #[serde(default = "PiecewiseDefaults::provider")]
    pub provider: String,
    #[serde(default)]
    pub classify: Option<ClassifySection>,
}

struct PiecewiseDefaults;

impl PiecewiseDefaults {
    fn epsilon() -> f64 {
        PiecewiseBudget::default().epsilon
    }
    fn max_replacements() -> usize {
        PiecewiseBudget::default().max_replacements
    }
    fn provider() -> String {
        "zero".into()
    }
}

impl Default for PiecewiseSection {
    fn default() -> Self {
        PiecewiseSection {
            epsilon: PiecewiseDefaults::epsilon(),
            max_replacements: PiecewiseDefaults::max_replacements(),
            provider: PiecewiseDefaults::provider(),
            classify: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    #[serde(default = "ClassifyDefaults::window")]
    pub window: usize,
    #[serde(default = "ClassifyDefaults::residual_threshold")]
    pub residual_threshold: f64,
    #[serde(default = "ClassifyDefaults::fit_error_frac")]
    pub fit_error_frac: f64,
    #[serde(default = "ClassifyDefaults::gap_floor_frac")]
    pub gap_floor_frac: f64,
}

struct ClassifyDefaults;

impl ClassifyDefaults {
    fn window() -> usize {
        ClassifyConfig::default().window
    }
    fn residual_threshold() -> f64 {
        ClassifyConfig::default().residual_threshold
    }
    fn fit_error_frac() -> f64 {
        ClassifyConfig::default().fit_error_frac
    }
    fn gap_floor_frac() -> f64 {
        ClassifyConfig::default().gap_floor_frac
    }
}

impl ClassifySection {
    pub fn to_config(&self) -> ClassifyConfig {
        ClassifyConfig {
            window: self.window,
            residual_threshold: self.residual_threshold,
            fit_error_frac: self.fit_error_frac,
            gap_floor_frac: self.gap_floor_frac,
        }
    }
}

/// The full parsed and validated run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mesh: Option<MeshSection>,
    #[serde(default)]
    pub ambient: Option<AmbientDescriptor>,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub entropy: Option<EntropySection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub rescale: Option<RescaleSection>,
    #[serde(default)]
    pub piecewise: Option<PiecewiseSection>,
}

/// Parse a config document: strict keys, defaults filled, fields validated.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let position = e
            .span()
            .map(|s| format!("byte offset {}", s.start))
            .unwrap_or_else(|| "unknown position".into());
        Error::Parse {
            position,
            message: e.message().to_string(),
        }
    })?;
    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<()> {
    if let Some(mesh) = &config.mesh {
        match (&mesh.path, &mesh.generate) {
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "mesh",
                    "give either `path` or `generate`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::validation(
                    "mesh",
                    "one of `path` or `generate` is required",
                ))
            }
            _ => {}
        }
    }
    if let Some(flow) = &config.flow {
        flow.to_config().validate()?;
    }
    if let Some(entropy) = &config.entropy {
        for (i, t0) in entropy.f_grid_t0.iter().enumerate() {
            if !(*t0 > 0.0) {
                return Err(Error::validation(
                    format!("entropy.f_grid_t0[{i}]"),
                    format!("kernel scale must be positive, got {t0}"),
                ));
            }
        }
        if entropy.grid_nx < 2 || entropy.grid_nt < 2 {
            return Err(Error::validation(
                "entropy.grid_nx",
                "grid must have at least 2 samples per axis",
            ));
        }
    }
    if let Some(verify) = &config.verify {
        for check in &verify.checks {
            if !KNOWN_CHECKS.contains(&check.as_str()) {
                return Err(Error::validation(
                    "verify.checks",
                    format!("unknown check `{check}`"),
                ));
            }
        }
        for (i, off) in verify.grid_offsets.iter().enumerate() {
            if !(*off > 0.0) {
                return Err(Error::validation(
                    format!("verify.grid_offsets[{i}]"),
                    "kernel-scale offsets must be positive",
                ));
            }
        }
        if !(verify.c_almost > 1.0) {
            return Err(Error::validation("verify.c_almost", "must exceed 1"));
        }
        if verify.tau < 0.0 {
            return Err(Error::validation("verify.tau", "must be nonnegative"));
        }
    }
    if let Some(rescale) = &config.rescale {
        if !(rescale.c > 0.0) {
            return Err(Error::validation("rescale.c", "must be positive"));
        }
    }
    if let Some(piecewise) = &config.piecewise {
        if !(piecewise.epsilon > 0.0) {
            return Err(Error::validation("piecewise.epsilon", "must be positive"));
        }
        if !matches!(piecewise.provider.as_str(), "dilation" | "zero") {
            return Err(Error::validation(
                "piecewise.provider",
                format!("unknown provider `{}`", piecewise.provider),
            ));
        }
    }
    Ok(())
}

/// Resolve the mesh from the config, relative to `base`.
pub fn load_mesh(config: &RunConfig, base: &Path) -> Result<TriMesh> {
    let mesh = config
        .mesh
        .as_ref()
        .ok_or_else(|| Error::validation("mesh", "a [mesh] section is required"))?;
    if let Some(path) = &mesh.path {
        let resolved = if path.is_absolute() {
            path.clone()
        } else {
            base.join(path)
        };
        if !resolved.exists() {
            return Err(Error::validation(
                "mesh.path",
                format!("{} does not exist", resolved.display()),
            ));
        }
        return mcflab_core::io::load_mesh(&resolved);
    }
    Ok(mesh.generate.as_ref().unwrap().build())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flow_config_fills_defaults() {
        let text = r#"
            [mesh.generate]
            kind = "icosphere"
            subdivisions = 2

            [ambient]
            kind = "euclidean"
            dim = 3
        "#;
        let config = parse_config(text).unwrap();
        assert!(config.command.is_none());
        assert_eq!(config.seed, 0);
        let flow = config.flow.unwrap_or_default().to_config();
        assert_eq!(flow.snapshot_stride, FlowConfig::default().snapshot_stride);
        assert_eq!(flow.scheme, Scheme::SemiImplicit);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let text = r#"
            [mesh.generate]
            kind = "icosphere"
            subdivisions = 2

            [flow]
            remesh = true
        "#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("remesh"), "{err}");
    }

    #[test]
    fn nonpositive_scale_names_the_field() {
        let text = r#"
            [entropy]
            f_grid_t0 = [0.5, -1.0]
        "#;
        let err = parse_config(text).unwrap_err();
        match err {
            Error::Validation { field, .. } => {
                assert_eq!(field, "entropy.f_grid_t0[1]")
            }
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn unknown_check_is_rejected() {
        let text = r#"
            [verify]
            checks = ["huisken", "telepathy"]
        "#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("telepathy"));
    }

    #[test]
    fn mesh_requires_exactly_one_source() {
        let both = r#"
            [mesh]
            path = "a.off"
            [mesh.generate]
            kind = "icosphere"
            subdivisions = 1
        "#;
        assert!(parse_config(both).is_err());
        let neither = "[mesh]\n";
        assert!(parse_config(neither).is_err());
    }

    #[test]
    fn ambient_descriptors_parse() {
        let text = r#"
            [ambient]
            kind = "round_sphere"
            dim = 4
            radius = 10.0
        "#;
        let config = parse_config(text).unwrap();
        let ambient = config.ambient.unwrap().build().unwrap();
        assert_eq!(ambient.dim(), 4);
        assert!((ambient.forcing_bound() - 0.2).abs() < 1e-12);

        let implicit = r#"
            [ambient]
            kind = "implicit"
            dim = 3
            level = "x^2 + y^2 + z^2 - 4"
            region_min = [-3.0, -3.0, -3.0]
            region_max = [3.0, 3.0, 3.0]
        "#;
        let config = parse_config(implicit).unwrap();
        let ambient = config.ambient.unwrap().build().unwrap();
        assert_eq!(ambient.codim(), 1);
    }
}
