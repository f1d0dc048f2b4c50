//! Run manifests: one TOML file per command invocation.

use std::path::{Path, PathBuf};

use parametrix_core::coefficients::{BallQuadSpec, FieldConfig, FreezeSpec, ProbeSpec};
use parametrix_core::grid::GridSpec;
use parametrix_core::oracle::FdGridSpec;
use parametrix_core::parametrix::ParametrixConfig;
use parametrix_core::SpaceTime;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Dmo,
    Freeze,
    Phi,
    Build,
    Verify,
    Bounds,
    Chain,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Dmo => "dmo",
            Command::Freeze => "freeze",
            Command::Phi => "phi",
            Command::Build => "build",
            Command::Verify => "verify",
            Command::Bounds => "bounds",
            Command::Chain => "chain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// When present it must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub field: FieldConfig,
    #[serde(default)]
    pub dmo: DmoParams,
    #[serde(default)]
    pub freeze: FreezeParams,
    #[serde(default)]
    pub phi: PhiParams,
    #[serde(default)]
    pub build: BuildParams,
    #[serde(default)]
    pub verify: VerifyParams,
    #[serde(default)]
    pub bounds: BoundsParams,
    #[serde(default)]
    pub chain: ChainParams,
}

/// Space-time points: every time in `times` crossed with the lattice `grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSet {
    pub times: Vec<f64>,
    pub grid: GridSpec,
}

impl PointSet {
    pub fn points(&self) -> Vec<SpaceTime> {
        self.times.iter().flat_map(|&t| self.grid.space_times(t)).collect()
    }

    fn single(t: f64, half_width: f64, nodes: usize) -> Self {
        Self {
            times: vec![t],
            grid: GridSpec::new(&[0.0], half_width, nodes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmoParams {
    /// Radii 2^-min_exp .. 1.
    pub min_exp: u32,
    pub probe: ProbeSpec,
    pub ball: BallQuadSpec,
}

impl Default for DmoParams {
    fn default() -> Self {
        Self {
            min_exp: 14,
            probe: ProbeSpec::default(),
            ball: BallQuadSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreezeParams {
    pub x0: Vec<f64>,
    pub spec: FreezeSpec,
    /// Time samples of the frozen curve written to curve.csv.
    pub samples: usize,
}

impl Default for FreezeParams {
    fn default() -> Self {
        Self {
            x0: Vec::new(),
            spec: FreezeSpec::default(),
            samples: 101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiParams {
    pub targets: PointSet,
    pub sources: PointSet,
    pub kappa_ratio: f64,
}

impl Default for PhiParams {
    fn default() -> Self {
        Self {
            targets: PointSet::single(1.0, 3.0, 13),
            sources: PointSet::single(0.0, 0.0, 1),
            kappa_ratio: 0.5,
        }
    }
}

/// Global extension: the short kernel is built on `grid` from t0 to
/// t0 + step and composed up to t0 + total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionParams {
    pub grid: GridSpec,
    pub step: f64,
    pub total: f64,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildParams {
    pub targets: PointSet,
    pub sources: PointSet,
    pub parametrix: ParametrixConfig,
    /// Replaces the computed horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    pub kappa_ratio: f64,
    pub dini_min_exp: u32,
    pub probe: ProbeSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionParams>,
    /// Oracle used under --force for fields the parametrix does not cover.
    pub fd: FdGridSpec,
    pub eps: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            targets: PointSet::single(1.0, 3.0, 13),
            sources: PointSet::single(0.0, 0.0, 1),
            parametrix: ParametrixConfig::default(),
            delta0: None,
            kappa_ratio: 0.5,
            dini_min_exp: 14,
            probe: ProbeSpec::default(),
            composition: None,
            fd: FdGridSpec::default(),
            eps: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    /// Kernel to check; relative paths resolve against the manifest directory.
    pub kernel: PathBuf,
    /// Any of mass, envelope, residual, cross, ck, symmetry.
    pub checks: Vec<String>,
    pub mass_tol: f64,
    /// Envelope limit as a multiple of C0 / (1 - eps0).
    pub envelope_slack: f64,
    pub residual_exclusion: f64,
    pub residual_threshold: f64,
    pub cross_tol: f64,
    pub ck: Option<CkParams>,
    pub symmetry: Option<SymmetryParams>,
    pub fd: FdGridSpec,
    pub eps: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            kernel: PathBuf::from("kernel.csv"),
            checks: vec!["mass".into(), "envelope".into()],
            mass_tol: 1e-2,
            envelope_slack: 1.2,
            residual_exclusion: 0.3,
            residual_threshold: 1.0,
            cross_tol: 0.05,
            ck: None,
            symmetry: None,
            fd: FdGridSpec::default(),
            eps: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkParams {
    pub first: PathBuf,
    pub second: PathBuf,
    pub direct: PathBuf,
    pub tau_mid: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryParams {
    pub t: f64,
    pub x: Vec<f64>,
    pub sources: PointSet,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsParams {
    pub kappa_ratio: f64,
    /// Optional kernel for empirical envelope constants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<PathBuf>,
    pub deltas: Vec<f64>,
    pub xi_max: f64,
    pub xi_points: usize,
    pub t: f64,
    pub tail_checks: Vec<(u32, f64)>,
}

impl Default for BoundsParams {
    fn default() -> Self {
        Self {
            kappa_ratio: 0.5,
            kernel: None,
            deltas: vec![0.25, 0.5, 0.75],
            xi_max: 50.0,
            xi_points: 101,
            t: 1.0,
            tail_checks: vec![(0, 1.0), (2, 1.0), (5, 0.5), (10, 2.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    pub deltas: Vec<f64>,
    pub t: f64,
    /// Scan xi geometrically over [xi_min, xi_max_factor * R0].
    pub xi_min: f64,
    pub xi_max_factor: f64,
    pub points: usize,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            deltas: vec![0.25, 0.5, 0.75],
            t: 1.0,
            xi_min: 1.0,
            xi_max_factor: 100.0,
            points: 400,
        }
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
command = "build"
seed = 7

[field]
family = "x_sine"
lambda = 0.7
Lambda = 1.3
d = 1
params = { amplitude = 0.3 }

[build]
delta0 = 0.7071067811865476
targets = { times = [0.1, 0.2], grid = { center = [0.0], half_width = 2.0, nodes = 9 } }
"#;

    #[test]
    fn round_trip_is_bit_identical() {
        let m = RunManifest::parse(SAMPLE).unwrap();
        let text = m.to_toml();
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_toml(), text);
        assert_eq!(m.build.targets.points().len(), 18);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunManifest::parse(&SAMPLE.replace("seed = 7", "sed = 7")).unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }
}
