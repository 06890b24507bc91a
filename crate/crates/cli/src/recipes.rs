//! Canned experiment configurations.

use coarsen_core::bootstrap::BootstrapModel;
use coarsen_core::environment::EnvironmentMode;

use crate::commands::Command;
use crate::config::{BoundaryKind, ExperimentConfig, InitialPolicy};
use crate::CliError;

pub const RECIPES: &[(&str, &str)] = &[
    ("fixation", "frozen plus only, all-minus start: fixation to plus consensus (simulate)"),
    ("flipper", "single flipper between two frozen plus and two frozen minus sites (simulate)"),
    ("renorm", "rare frozen minus: renormalized bad boxes and containment of minus/flipper clusters (renorm)"),
    ("slab", "slab with frozen plus bottom layer: pillar absorption and consensus (slab)"),
    ("growth", "bootstrap spanning probability growing with box size (bootstrap)"),
    ("oracle", "exact 3x3 spanning probability next to its Monte Carlo estimate (bootstrap)"),
];

pub fn recipe(name: &str) -> Result<(Command, ExperimentConfig), CliError> {
    let mut c = ExperimentConfig::default();
    let command = match name {
        "fixation" => {
            c.geometry.extents = vec![128, 128];
            c.environment.rho_plus = 0.05;
            c.environment.rho_minus = 0.0;
            c.environment.initial = InitialPolicy::AllMinus;
            c.dynamics.horizon = 1e4;
            c.dynamics.stop_at_consensus = true;
            c.dynamics.post_consensus_events = 1000;
            c.replication.count = 50;
            c.output.sites = false;
            Command::Simulate
        }
        "flipper" => {
            c.geometry.extents = vec![9, 9];
            c.geometry.boundary = BoundaryKind::Free;
            c.environment.mode = EnvironmentMode::FlipperGadget;
            c.environment.rho_plus = 0.0;
            c.dynamics.horizon = 1e3;
            c.replication.count = 20;
            Command::Simulate
        }
        "renorm" => {
            c.geometry.extents = vec![255, 255];
            c.environment.rho_plus = 0.2;
            c.environment.rho_minus = 1e-3;
            c.dynamics.horizon = 1e3;
            c.analysis.half_widths = vec![7, 8, 25];
            c.analysis.m_values = vec![2, 3, 6, 7, 24];
            c.replication.count = 30;
            c.output.sites = false;
            Command::Renorm
        }
        "slab" => {
            c.geometry.dim = 3;
            c.geometry.extents = vec![64, 64];
            c.geometry.boundary = BoundaryKind::Slab;
            c.geometry.slab_height = 1;
            c.environment.mode = EnvironmentMode::EngineeredSlab;
            c.environment.rho_plus = 0.0;
            c.environment.theta = 0.3;
            c.dynamics.horizon = 1e4;
            c.dynamics.stop_at_consensus = true;
            c.dynamics.post_consensus_events = 1000;
            c.replication.count = 30;
            Command::Slab
        }
        "growth" => {
            c.bootstrap.dim = 2;
            c.bootstrap.half_widths = vec![5, 10, 20, 40];
            c.bootstrap.densities = vec![0.1];
            c.bootstrap.models = vec![BootstrapModel::Standard];
            c.bootstrap.samples = 200;
            c.bootstrap.exact = false;
            Command::Bootstrap
        }
        "oracle" => {
            c.bootstrap.dim = 2;
            c.bootstrap.half_widths = vec![1];
            c.bootstrap.densities = vec![0.5];
            c.bootstrap.models = vec![BootstrapModel::Standard, BootstrapModel::ModifiedBasic];
            c.bootstrap.samples = 10_000;
            c.bootstrap.exact = true;
            Command::Bootstrap
        }
        other => {
            let names: Vec<&str> = RECIPES.iter().map(|r| r.0).collect();
            return Err(CliError::config(format!(
                "unknown recipe {other:?}; known: {}",
                names.join(", ")
            )));
        }
    };
    Ok((command, c))
}
