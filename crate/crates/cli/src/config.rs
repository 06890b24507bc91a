//! Experiment configuration: a TOML document layered as defaults, recipe,
//! config file and `--set key=value` overrides.

use std::fs;
use std::path::Path;

use coarsen_core::bootstrap::BootstrapModel;
use coarsen_core::dynamics::{ClockSites, RunOptions, Scheme, UpdateRule};
use coarsen_core::environment::{EnvironmentMode, EnvironmentParams, InitialSpins};
use coarsen_core::io::read_environment;
use coarsen_core::lattice::{Boundary, LatticeGeometry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Free,
    Periodic,
    Slab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub dim: usize,
    /// Window extents; for a slab, the lateral base only.
    pub extents: Vec<usize>,
    pub boundary: BoundaryKind,
    /// Slab height `K`: the slab has layers `0..=K`.
    pub slab_height: usize,
    pub periodic_lateral: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            extents: vec![60, 60],
            boundary: BoundaryKind::Periodic,
            slab_height: 1,
            periodic_lateral: true,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<LatticeGeometry, CliError> {
        let geom = match self.boundary {
            BoundaryKind::Slab => {
                if self.extents.len() + 1 != self.dim {
                    return Err(CliError::config(format!(
                        "slab of dimension {} needs {} lateral extents, got {}",
                        self.dim,
                        self.dim.saturating_sub(1),
                        self.extents.len()
                    )));
                }
                LatticeGeometry::slab(&self.extents, self.slab_height, self.periodic_lateral)?
            }
            kind => {
                if self.extents.len() != self.dim {
                    return Err(CliError::config(format!(
                        "dimension {} but {} extents given",
                        self.dim,
                        self.extents.len()
                    )));
                }
                let b = if kind == BoundaryKind::Free { Boundary::Free } else { Boundary::Periodic };
                LatticeGeometry::new(self.extents.clone(), b)?
            }
        };
        Ok(geom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicy {
    AllMinus,
    AllPlus,
    Bernoulli,
    /// Spins (and frozen mask) read from `initial_file`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub mode: EnvironmentMode,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<f64>,
    pub initial: InitialPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_file: Option<String>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            mode: EnvironmentMode::Disordered,
            rho_plus: 0.05,
            rho_minus: 0.0,
            theta: 0.5,
            field: None,
            initial: InitialPolicy::Bernoulli,
            initial_file: None,
        }
    }
}

impl EnvironmentConfig {
    pub fn params(&self, seed: u64) -> EnvironmentParams {
        let initial = match self.initial {
            InitialPolicy::AllMinus => InitialSpins::AllMinus,
            InitialPolicy::AllPlus => InitialSpins::AllPlus,
            InitialPolicy::Bernoulli | InitialPolicy::File => InitialSpins::Bernoulli,
        };
        EnvironmentParams {
            rho_plus: self.rho_plus,
            rho_minus: self.rho_minus,
            theta: self.theta,
            seed,
            mode: self.mode,
            field: self.field,
            initial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub scheme: Scheme,
    pub tie_plus_prob: f64,
    pub clocks: ClockSites,
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub stop_at_consensus: bool,
    /// Extra clock rings simulated after consensus to confirm absorption.
    pub post_consensus_events: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ContinuousTime,
            tie_plus_prob: 0.5,
            clocks: ClockSites::Unfrozen,
            horizon: 100.0,
            snapshot_times: Vec::new(),
            stop_at_consensus: false,
            post_consensus_events: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn rule(&self) -> UpdateRule {
        UpdateRule {
            tie_plus_prob: self.tie_plus_prob,
            scheme: self.scheme,
            clocks: self.clocks,
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            horizon: self.horizon,
            snapshot_times: self.snapshot_times.clone(),
            stop_at_consensus: self.stop_at_consensus,
            max_events: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Box half-widths `L` searched by `renorm`.
    pub half_widths: Vec<usize>,
    /// Corner tolerances `M` searched by `renorm`; pairs with `M >= L` are skipped.
    pub m_values: Vec<usize>,
    pub window_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            half_widths: vec![7],
            m_values: vec![3],
            window_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub dim: usize,
    pub half_widths: Vec<usize>,
    pub densities: Vec<f64>,
    pub models: Vec<BootstrapModel>,
    pub samples: u64,
    /// Also sum over every configuration when the box has at most 24 sites.
    pub exact: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            half_widths: vec![1, 2, 4],
            densities: vec![0.5],
            models: vec![BootstrapModel::Standard],
            samples: 1000,
            exact: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    /// Explicit seeds; when absent, `count` seeds starting at `base_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub count: u64,
    pub base_seed: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            seeds: None,
            count: 4,
            base_seed: 1,
        }
    }
}

impl ReplicationConfig {
    /// Seeds in ascending order without repeats.
    pub fn seeds(&self) -> Result<Vec<u64>, CliError> {
        let mut seeds = match &self.seeds {
            Some(list) if list.is_empty() => return Err(CliError::config("replication.seeds is empty")),
            Some(list) => list.clone(),
            None if self.count == 0 => return Err(CliError::config("replication.count must be positive")),
            None => (0..self.count)
                .map(|i| {
                    self.base_seed
                        .checked_add(i)
                        .ok_or_else(|| CliError::config("seed range overflows u64"))
                })
                .collect::<Result<_, _>>()?,
        };
        seeds.sort_unstable();
        seeds.dedup();
        Ok(seeds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Write per-site rows (`sites.csv`).
    pub sites: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            sites: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub environment: EnvironmentConfig,
    pub dynamics: DynamicsConfig,
    pub analysis: AnalysisConfig,
    pub bootstrap: BootstrapConfig,
    pub replication: ReplicationConfig,
    pub output: OutputConfig,
}

fn prob(name: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} = {v} is not a probability")))
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks shared by every command; command-specific checks live with the command.
    pub fn validate_common(&self) -> Result<(), CliError> {
        self.replication.seeds()?;
        if !(self.dynamics.horizon >= 0.0 && self.dynamics.horizon.is_finite()) {
            return Err(CliError::config(format!(
                "dynamics.horizon = {} must be finite and nonnegative",
                self.dynamics.horizon
            )));
        }
        if self.dynamics.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            return Err(CliError::config("snapshot times must be nonnegative"));
        }
        self.dynamics.rule().validate()?;
        let w = self.analysis.window_fraction;
        if !(w > 0.0 && w < 1.0) {
            return Err(CliError::config(format!("analysis.window_fraction = {w} must lie in (0, 1)")));
        }
        prob("environment.theta", self.environment.theta)?;
        prob("environment.rho_plus", self.environment.rho_plus)?;
        prob("environment.rho_minus", self.environment.rho_minus)?;
        if self.environment.initial == InitialPolicy::File && self.environment.initial_file.is_none() {
            return Err(CliError::config("initial = \"file\" needs environment.initial_file"));
        }
        Ok(())
    }

    /// Environment for one replica.
    pub fn environment(
        &self,
        geom: &LatticeGeometry,
        seed: u64,
    ) -> Result<coarsen_core::environment::Environment, CliError> {
        if self.environment.initial == InitialPolicy::File {
            let path = self.environment.initial_file.as_deref().unwrap_or_default();
            let file = fs::File::open(path)
                .map_err(|e| CliError::config(format!("cannot open initial_file {path}: {e}")))?;
            let env = read_environment(std::io::BufReader::new(file), geom.boundary())?;
            if env.geom.extents() != geom.extents() {
                return Err(CliError::config("initial_file extents differ from the geometry"));
            }
            return Ok(env);
        }
        Ok(coarsen_core::environment::Environment::generate(
            geom,
            &self.environment.params(seed),
        )?)
    }
}

/// Parse `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::config("empty --set key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Layer `file` (if any) and `overrides` (`key=value`) over `base`.
pub fn load(base: &ExperimentConfig, file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut table: toml::Table = toml::from_str(&base.to_toml()).expect("canonical config parses");
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let top: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        merge(&mut table, top);
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects key=value, got {o:?}")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(e.to_string()))
}
