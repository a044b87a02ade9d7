//! Experiment configuration, run records, on-disk layout and the pipelines
//! behind the command-line tool.

mod heatmap;
mod pipeline;
mod runner;
mod store;
pub mod validation;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adaptive::{AdaptiveError, BpSettings, RunError, RunErrorKind, WpSettings};
use crate::design::{CcdStep, DesignError, DesignPoint, DesignSpace, MaximaRule};
use crate::geometry::{BoxGeometry, GeometryError, PathFamily, PlanSettings, DEFAULT_APPROACH_LENGTH, DEFAULT_SPACING};
use crate::indices::{IndexError, IndexKind, ScoringSettings};
use crate::kriging::{FitOptions, KernelKind, KrigingError, ThetaSpec, TrendBasis};
use crate::rng::{derive_seed, mix64};
use crate::sim::{NoiseParams, SimError, VehicleParams};

pub use heatmap::{colormap, render_ppm};
pub use pipeline::{
    fit_from_csv, fit_from_runs, grid_command, indices_command, run_adaptive, run_factorial, simulate_command,
    FactorialResult,
};
pub use runner::{run_point, RunRecord, SimRunner};
pub use store::{read_stamped_csv, stamp_csv, Stamped, Store};

/// Straight-line D_A bound under the shipped configuration, meters.
pub const STRAIGHT_LINE_D_A_BOUND: f64 = 0.2;
/// Straight-line D_H bound under the shipped configuration, meters.
pub const STRAIGHT_LINE_D_H_BOUND: f64 = 0.3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible geometry: {0}")]
    Geometry(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Geometry(_) => 3,
            ExperimentError::Numeric(_) => 4,
            ExperimentError::Io(_) => 5,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<GeometryError> for ExperimentError {
    fn from(e: GeometryError) -> Self {
        ExperimentError::Geometry(e.to_string())
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Params(_) => ExperimentError::Config(e.to_string()),
            SimError::Telemetry(_) => ExperimentError::Io(e.to_string()),
            _ => ExperimentError::Numeric(e.to_string()),
        }
    }
}

impl From<IndexError> for ExperimentError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::OutsideBox(_) => ExperimentError::Geometry(e.to_string()),
            _ => ExperimentError::Numeric(e.to_string()),
        }
    }
}

impl From<KrigingError> for ExperimentError {
    fn from(e: KrigingError) -> Self {
        ExperimentError::Numeric(e.to_string())
    }
}

impl From<DesignError> for ExperimentError {
    fn from(e: DesignError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<RunError> for ExperimentError {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e.kind {
            RunErrorKind::Geometry => ExperimentError::Geometry(msg),
            RunErrorKind::Numeric => ExperimentError::Numeric(msg),
            RunErrorKind::Io => ExperimentError::Io(msg),
            RunErrorKind::Other => ExperimentError::Config(msg),
        }
    }
}

impl From<AdaptiveError> for ExperimentError {
    fn from(e: AdaptiveError) -> Self {
        match e {
            AdaptiveError::Design(e) => e.into(),
            AdaptiveError::Kriging(e) => e.into(),
            AdaptiveError::Run { source, .. } => source.into(),
            AdaptiveError::GridMismatch => ExperimentError::Numeric(e.to_string()),
            AdaptiveError::Settings(_) => ExperimentError::Config(e.to_string()),
        }
    }
}

impl ExperimentError {
    pub(crate) fn into_run_error(self, point: DesignPoint) -> RunError {
        let (kind, message) = match self {
            ExperimentError::Config(m) => (RunErrorKind::Other, m),
            ExperimentError::Geometry(m) => (RunErrorKind::Geometry, m),
            ExperimentError::Numeric(m) => (RunErrorKind::Numeric, m),
            ExperimentError::Io(m) => (RunErrorKind::Io, m),
        };
        RunError { point, kind, message }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureKind {
    #[default]
    Wp,
    Bp,
    FullFactorial,
    Manual,
}

impl ProcedureKind {
    /// Prefix of the artifacts written by the procedure.
    pub fn prefix(self) -> &'static str {
        match self {
            ProcedureKind::Wp => "wp",
            ProcedureKind::Bp => "bp",
            ProcedureKind::FullFactorial => "ff",
            ProcedureKind::Manual => "manual",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub family: PathFamily,
    /// Reference sample spacing, meters.
    pub spacing: f64,
    pub approach_length: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { family: PathFamily::Sine, spacing: DEFAULT_SPACING, approach_length: DEFAULT_APPROACH_LENGTH }
    }
}

/// Noise half-widths; per-run seeds derive from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub a: f64,
    pub heading_max: f64,
    pub speed_max: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseParams::default();
        NoiseConfig { a: n.a, heading_max: n.heading_max, speed_max: n.speed_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub n1: usize,
    /// Step-2 budget of the worst-performance design.
    pub n2: usize,
    /// Step-2 budget of the best-prediction design.
    pub bp_n2: usize,
    pub maxima: MaximaRule,
    pub ccd: CcdStep,
    /// Neighbours of the largest-MSE point in the best-prediction design.
    pub bp_neighbors: usize,
    /// Amplitude pitch of the full-factorial and best-prediction lattice.
    pub lattice_pitch: f64,
    /// Points of a manual design as `[x1, x2]` pairs.
    pub manual_points: Vec<[f64; 2]>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            n1: 10,
            n2: 8,
            bp_n2: 9,
            maxima: MaximaRule::Argmax,
            ccd: CcdStep::default(),
            bp_neighbors: 3,
            lattice_pitch: 2.5,
            manual_points: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingConfig {
    pub basis: TrendBasis,
    pub kernel: KernelKind,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub theta_start: f64,
    /// Fixed correlation scales; skips the likelihood search when present.
    pub theta_fixed: Option<Vec<f64>>,
    pub standardize: bool,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            basis: TrendBasis::Constant,
            kernel: KernelKind::Gaussian,
            theta_lower: 1e-2,
            theta_upper: 20.0,
            theta_start: 10.0,
            theta_fixed: None,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { resolution: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub procedure: ProcedureKind,
    pub index: IndexKind,
    pub output: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    /// Embed full telemetry in run records.
    pub store_telemetry: bool,
    #[serde(rename = "box")]
    pub box_geometry: BoxGeometry,
    pub path: PathConfig,
    pub vehicle: VehicleParams,
    pub noise: NoiseConfig,
    pub space: DesignSpace,
    pub scoring: ScoringSettings,
    pub design: DesignConfig,
    pub kriging: KrigingConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            procedure: ProcedureKind::Wp,
            index: IndexKind::Area,
            output: PathBuf::from("experiment"),
            jobs: 0,
            store_telemetry: false,
            box_geometry: BoxGeometry::default(),
            path: PathConfig::default(),
            vehicle: VehicleParams::default(),
            noise: NoiseConfig::default(),
            space: DesignSpace::default(),
            scoring: ScoringSettings::default(),
            design: DesignConfig::default(),
            kriging: KrigingConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |e: &dyn std::fmt::Display| ExperimentError::Config(e.to_string());
        self.box_geometry.validate().map_err(|e| bad(&e))?;
        self.vehicle.validate().map_err(|e| bad(&e))?;
        self.noise_params(0).validate().map_err(|e| bad(&e))?;
        self.space.validate().map_err(|e| bad(&e))?;
        self.lattice().validate().map_err(|e| bad(&e))?;
        let cfg = |m: String| Err(ExperimentError::Config(m));
        if !(self.path.spacing.is_finite() && self.path.spacing > 0.0) {
            return cfg(format!("path.spacing must be positive, got {}", self.path.spacing));
        }
        if !(self.path.approach_length.is_finite() && self.path.approach_length > 0.0) {
            return cfg("path.approach_length must be positive".into());
        }
        if self.space.x1_max > 0.5 * self.box_geometry.r2 {
            return cfg(format!(
                "amplitudes up to {} leave the central box of half-width {}",
                self.space.x1_max,
                0.5 * self.box_geometry.r2
            ));
        }
        if self.design.n1 < 2 || self.design.n2 < 1 || self.design.bp_n2 < 1 {
            return cfg(format!(
                "need n1 >= 2 and n2, bp_n2 >= 1, got {}, {} and {}",
                self.design.n1, self.design.n2, self.design.bp_n2
            ));
        }
        if self.grid.resolution < 2 {
            return cfg("grid.resolution must be at least 2".into());
        }
        let k = &self.kriging;
        if !(k.theta_lower > 0.0 && k.theta_lower <= k.theta_start && k.theta_start <= k.theta_upper) {
            return cfg("theta bounds must satisfy 0 < lower <= start <= upper".into());
        }
        if let Some(t) = &k.theta_fixed {
            if t.len() != 2 || t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return cfg("theta_fixed needs two positive values".into());
            }
        }
        for p in &self.design.manual_points {
            self.point(p[0], p[1])?;
        }
        Ok(())
    }

    /// Hash of everything that shapes the persisted artifacts.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output: PathBuf::new(), jobs: 0, ..self.clone() };
        sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }

    /// Hash of the settings that shape a single run record.
    pub fn sim_hash(&self) -> String {
        let parts = serde_json::json!({
            "seed": self.seed,
            "box": self.box_geometry,
            "path": self.path,
            "vehicle": self.vehicle,
            "noise": self.noise,
            "scoring": self.scoring,
        });
        sha256_hex(parts.to_string().as_bytes())
    }

    /// Lattice of the full-factorial and best-prediction designs.
    pub fn lattice(&self) -> DesignSpace {
        self.space.with_pitch(self.design.lattice_pitch)
    }

    pub fn plan_settings(&self) -> PlanSettings {
        PlanSettings { spacing: self.path.spacing, approach_length: self.path.approach_length }
    }

    pub fn noise_params(&self, seed: u64) -> NoiseParams {
        NoiseParams { a: self.noise.a, heading_max: self.noise.heading_max, speed_max: self.noise.speed_max, seed }
    }

    /// Noise seed of the run at `point`; the same point always gets the same
    /// seed, whichever design it belongs to.
    pub fn run_seed(&self, point: &DesignPoint) -> u64 {
        derive_seed(self.seed, mix64(point.x1.to_bits()) ^ u64::from(point.x2))
    }

    /// Validates a raw point against the space bounds.
    pub fn point(&self, x1: f64, x2: f64) -> Result<DesignPoint, ExperimentError> {
        let (lo, hi) = self.space.bounds();
        if !(x1.is_finite() && x1 >= lo[0] && x1 <= hi[0]) || !(x2 >= 0.0 && x2 <= hi[1] && x2.fract() == 0.0) {
            return Err(ExperimentError::Config(format!("point ({x1}, {x2}) is outside the design space")));
        }
        Ok(DesignPoint::new(x1, x2 as u32))
    }

    pub fn fit_options(&self) -> FitOptions {
        let k = &self.kriging;
        FitOptions {
            basis: k.basis,
            kernel: k.kernel,
            theta: match &k.theta_fixed {
                Some(t) => ThetaSpec::Fixed(t.clone()),
                None => ThetaSpec::Optimize { lower: k.theta_lower, upper: k.theta_upper, start: k.theta_start },
            },
            standardize: k.standardize,
        }
    }

    pub fn wp_settings(&self) -> WpSettings {
        WpSettings {
            n1: self.design.n1,
            n2: self.design.n2,
            rule: self.design.maxima,
            step: self.design.ccd,
            fit: self.fit_options(),
            resolution: self.grid.resolution,
        }
    }

    pub fn bp_settings(&self) -> BpSettings {
        BpSettings {
            n1: self.design.n1,
            n2: self.design.bp_n2,
            neighbors: self.design.bp_neighbors,
            pitch: self.design.lattice_pitch,
            interim_fit: self.fit_options(),
            fit: self.fit_options(),
            resolution: self.grid.resolution,
        }
    }

    /// Runs `f` on a pool of `jobs` workers.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if self.jobs > 0 {
            b = b.num_threads(self.jobs);
        }
        let pool = b.build().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(pool.install(f))
    }
}
