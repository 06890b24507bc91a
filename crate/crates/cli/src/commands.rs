//! The four experiment commands. Each returns its summary plus the artifact
//! files it would write; replicas run in parallel and are reduced in seed order.

use std::sync::Arc;

use coarsen_core::analysis::{
    classify_sites, clusters, containment_check, p_star, pillar_analysis, renormalize, Component, SiteClass,
    SiteClassification,
};
use coarsen_core::bootstrap::{exact_spanning_probability, spanning_probability, BootstrapModel};
use coarsen_core::dynamics::{DynamicsState, Observer, RunOptions, Trajectory};
use coarsen_core::environment::{gadget_center, Environment, EnvironmentMode, SiteKind, Spin};
use coarsen_core::io::{write_frozen_pgm, write_spin_pgm};
use coarsen_core::lattice::{Adjacency, Boundary, LatticeGeometry, NeighborTable, SiteIndex};
use coarsen_core::rng::replica_seed;
use coarsen_core::stats::{summarize, Estimate, Z95};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BoundaryKind, ExperimentConfig};
use crate::output::{time_tag, Artifacts, Provenance};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Bootstrap,
    Renorm,
    Slab,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Bootstrap => "bootstrap",
            Command::Renorm => "renorm",
            Command::Slab => "slab",
        }
    }
}

/// Summary plus artifacts of one command invocation.
#[derive(Clone, Debug)]
pub struct Outcome<S> {
    pub summary: S,
    pub artifacts: Artifacts,
    /// Seeds whose replica failed; the rest still ran.
    pub failed: Vec<u64>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

/// Run `f` on every seed with at most `jobs` threads; results keep seed order.
fn replicate<T: Send>(seeds: &[u64], jobs: usize, f: impl Fn(u64) -> T + Sync) -> Result<Vec<T>, CliError> {
    Ok(pool(jobs)?.install(|| seeds.par_iter().map(|&s| f(s)).collect()))
}

fn coords_string(geom: &LatticeGeometry, site: SiteIndex) -> String {
    geom.coords(site)
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Default)]
struct Snapshots(Vec<(f64, Vec<Spin>)>);

impl Observer for Snapshots {
    fn on_snapshot(&mut self, state: &DynamicsState, time: f64) -> coarsen_core::Result<()> {
        self.0.push((time, state.spins().to_vec()));
        Ok(())
    }
}

/// Flips over `events` further clock rings.
fn flips_after(state: &mut DynamicsState, events: u64) -> Result<u64, CliError> {
    let total = |s: &DynamicsState| s.flip_count().iter().map(|&c| c as u64).sum::<u64>();
    let before = total(state);
    let opts = RunOptions {
        horizon: f64::INFINITY,
        snapshot_times: Vec::new(),
        stop_at_consensus: false,
        max_events: Some(events),
    };
    state.run(&opts, &mut [])?;
    Ok(total(state) - before)
}

#[derive(Clone, Debug, Serialize)]
struct SiteRow {
    seed: u64,
    site: usize,
    coords: String,
    kind: u8,
    final_spin: i8,
    class: SiteClass,
    certified: bool,
    flips: u32,
    last_flip: Option<f64>,
}

fn site_rows(seed: u64, env: &Environment, traj: &Trajectory, cls: &SiteClassification) -> Vec<SiteRow> {
    (0..env.geom.len())
        .map(|s| SiteRow {
            seed,
            site: s,
            coords: coords_string(&env.geom, s),
            kind: SiteKind::of(env.frozen[s], env.initial_spins[s]) as u8,
            final_spin: traj.spins[s],
            class: cls.classes[s],
            certified: cls.certified[s],
            flips: traj.flip_count[s],
            last_flip: traj.last_flip[s],
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
struct ClusterOut {
    seed: u64,
    id: usize,
    size: usize,
    touches_boundary: bool,
    spans: bool,
    contained_in_closure: Option<bool>,
}

/// Statistics of the fixed-minus and flipper clusters.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ClusterStats {
    pub count: usize,
    pub largest_fraction: f64,
    /// Some cluster winds around a periodic axis or joins two faces of a free axis.
    pub spans: bool,
    /// Some cluster touches two opposite faces (trivial across a periodic seam).
    pub touches_opposite_faces: bool,
}

fn cluster_stats(geom: &LatticeGeometry, comps: &[Component]) -> ClusterStats {
    ClusterStats {
        count: comps.len(),
        largest_fraction: comps.iter().map(Component::size).max().unwrap_or(0) as f64 / geom.len() as f64,
        spans: comps.iter().any(|c| c.spans(geom)),
        touches_opposite_faces: comps.iter().any(Component::touches_opposite_faces),
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ClassCounts {
    pub fixed_plus: usize,
    pub fixed_minus: usize,
    pub flippers: usize,
    pub certified: usize,
}

fn class_counts(c: &SiteClassification) -> ClassCounts {
    ClassCounts {
        fixed_plus: c.count(SiteClass::FixedPlus),
        fixed_minus: c.count(SiteClass::FixedMinus),
        flippers: c.count(SiteClass::Flipper),
        certified: c.certified.iter().filter(|&&b| b).count(),
    }
}

fn check_replica_geometry(cfg: &ExperimentConfig) -> Result<LatticeGeometry, CliError> {
    cfg.validate_common()?;
    let geom = cfg.geometry.build()?;
    cfg.environment.params(0).validate(&geom)?;
    Ok(geom)
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, Default, Serialize)]
pub struct SimulateReplica {
    pub seed: u64,
    pub error: Option<String>,
    pub events: u64,
    pub time: f64,
    pub consensus_time: Option<f64>,
    pub terminal: bool,
    /// Flips seen in the extra rings after consensus.
    pub post_consensus_flips: Option<u64>,
    pub minus_final: usize,
    pub classes: ClassCounts,
    pub clusters: ClusterStats,
    /// Sign changes of the flipper site of the flipper pattern.
    pub center_flips: Option<u32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub runs: usize,
    pub failed: Vec<u64>,
    pub consensus_runs: usize,
    pub consensus_rate: f64,
    pub consensus_time_mean: Option<f64>,
    pub consensus_time_min: Option<f64>,
    pub consensus_time_max: Option<f64>,
    /// Every run that reached consensus stayed there over the extra rings.
    pub absorbed_after_consensus: bool,
    pub center_flips_min: Option<u32>,
    pub replicas: Vec<SimulateReplica>,
}

struct SimulateDetail {
    env: Environment,
    traj: Trajectory,
    classification: SiteClassification,
    comps: Vec<Component>,
    snapshots: Vec<(f64, Vec<Spin>)>,
}

fn simulate_one(
    cfg: &ExperimentConfig,
    geom: &LatticeGeometry,
    table: &Arc<NeighborTable>,
    seed: u64,
) -> Result<(SimulateReplica, SimulateDetail), CliError> {
    let env = cfg.environment(geom, seed)?;
    let mut state = DynamicsState::with_table(&env, table.clone(), cfg.dynamics.rule(), seed)?;
    let mut snaps = Snapshots::default();
    let traj = state.run(&cfg.dynamics.run_options(), &mut [&mut snaps])?;
    let post = match traj.consensus_time {
        Some(_) if cfg.dynamics.post_consensus_events > 0 => {
            Some(flips_after(&mut state, cfg.dynamics.post_consensus_events)?)
        }
        _ => None,
    };
    let classification = classify_sites(&traj, cfg.dynamics.horizon, cfg.analysis.window_fraction)?;
    let comps = clusters(geom, &classification.minus_or_flipper(), Adjacency::Nn);
    let center_flips =
        (cfg.environment.mode == EnvironmentMode::FlipperGadget).then(|| traj.flip_count[gadget_center(geom)]);
    let replica = SimulateReplica {
        seed,
        error: None,
        events: traj.events,
        time: traj.time,
        consensus_time: traj.consensus_time,
        terminal: traj.terminal,
        post_consensus_flips: post,
        minus_final: traj.minus_count(),
        classes: class_counts(&classification),
        clusters: cluster_stats(geom, &comps),
        center_flips,
    };
    Ok((
        replica,
        SimulateDetail {
            env,
            traj,
            classification,
            comps,
            snapshots: snaps.0,
        },
    ))
}

pub fn simulate(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome<SimulateSummary>, CliError> {
    let geom = check_replica_geometry(cfg)?;
    let seeds = cfg.replication.seeds()?;
    let table = Arc::new(geom.neighbor_table());
    let results = replicate(&seeds, jobs, |seed| simulate_one(cfg, &geom, &table, seed))?;

    let prov = Provenance::new(Command::Simulate.name(), cfg);
    let mut art = Artifacts::default();
    let mut replicas = Vec::new();
    let mut failed = Vec::new();
    let mut sites = Vec::new();
    let mut cluster_rows = Vec::new();
    for (seed, r) in seeds.iter().copied().zip(results) {
        match r {
            Ok((rep, d)) => {
                if cfg.output.sites {
                    sites.extend(site_rows(seed, &d.env, &d.traj, &d.classification));
                }
                cluster_rows.extend(d.comps.iter().enumerate().map(|(id, c)| ClusterOut {
                    seed,
                    id,
                    size: c.size(),
                    touches_boundary: c.touches_opposite_faces(),
                    spans: c.spans(&geom),
                    contained_in_closure: None,
                }));
                if !d.snapshots.is_empty() {
                    let mut raw = Vec::new();
                    write_frozen_pgm(&mut raw, &geom, &d.env.frozen)?;
                    art.pgm(&format!("snapshots/seed_{seed}/mask.pgm"), &prov, raw);
                }
                for (t, spins) in &d.snapshots {
                    let mut raw = Vec::new();
                    write_spin_pgm(&mut raw, &geom, spins)?;
                    art.pgm(
                        &format!("snapshots/seed_{seed}/snapshot_t{}.pgm", time_tag(*t)),
                        &prov,
                        raw,
                    );
                }
                replicas.push(rep);
            }
            Err(e) => {
                failed.push(seed);
                replicas.push(SimulateReplica {
                    seed,
                    error: Some(e.to_string()),
                    ..Default::default()
                });
            }
        }
    }
    let ok: Vec<&SimulateReplica> = replicas.iter().filter(|r| r.error.is_none()).collect();
    let times: Vec<f64> = ok.iter().filter_map(|r| r.consensus_time).collect();
    let stats = summarize(&times);
    let summary = SimulateSummary {
        runs: replicas.len(),
        failed: failed.clone(),
        consensus_runs: times.len(),
        consensus_rate: times.len() as f64 / ok.len().max(1) as f64,
        consensus_time_mean: stats.map(|s| s.0),
        consensus_time_min: stats.map(|s| s.1),
        consensus_time_max: stats.map(|s| s.2),
        absorbed_after_consensus: ok.iter().all(|r| r.post_consensus_flips.unwrap_or(0) == 0),
        center_flips_min: ok.iter().filter_map(|r| r.center_flips).min(),
        replicas,
    };
    art.json("summary.json", &prov, &summary)?;
    if cfg.output.sites {
        art.csv_with_header(
            "sites.csv",
            &prov,
            Some(&[
                "seed", "site", "coords", "kind", "final_spin", "class", "certified", "flips", "last_flip",
            ]),
            &sites,
        )?;
    }
    art.csv_with_header(
        "clusters.csv",
        &prov,
        Some(&["seed", "id", "size", "touches_boundary", "spans", "contained_in_closure"]),
        &cluster_rows,
    )?;
    Ok(Outcome {
        summary,
        artifacts: art,
        failed,
    })
}

// ---------------------------------------------------------------- bootstrap

#[derive(Clone, Debug, Serialize)]
pub struct SpanningRow {
    pub dim: usize,
    pub half_width: usize,
    pub p: f64,
    pub model: BootstrapModel,
    pub seed: u64,
    pub samples: u64,
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub exact: Option<f64>,
}

/// Behaviour of the estimate as `L` grows at fixed `p` and model.
#[derive(Clone, Debug, Serialize)]
pub struct Trend {
    pub model: BootstrapModel,
    pub p: f64,
    pub half_widths: Vec<usize>,
    pub estimates: Vec<f64>,
    /// No drop between consecutive `L` larger than the combined 95% noise.
    pub nondecreasing_within_noise: bool,
    /// Estimate at the largest `L` minus the estimate at the smallest.
    pub increase: f64,
    /// 95% intervals at the smallest and largest `L` do not overlap.
    pub endpoints_disjoint: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BootstrapSummary {
    pub rows: Vec<SpanningRow>,
    pub trends: Vec<Trend>,
}

fn validate_bootstrap(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let b = &cfg.bootstrap;
    cfg.replication.seeds()?;
    if b.dim == 0 {
        return Err(CliError::config("bootstrap.dim must be positive"));
    }
    if b.half_widths.is_empty() || b.densities.is_empty() || b.models.is_empty() {
        return Err(CliError::config("bootstrap needs half_widths, densities and models"));
    }
    if let Some(p) = b.densities.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(CliError::config(format!("bootstrap density {p} must lie in (0, 1]")));
    }
    if b.samples == 0 {
        return Err(CliError::config("bootstrap.samples must be positive"));
    }
    Ok(())
}

pub fn bootstrap(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome<BootstrapSummary>, CliError> {
    validate_bootstrap(cfg)?;
    let b = &cfg.bootstrap;
    let base = cfg.replication.seeds()?[0];
    let mut half_widths = b.half_widths.clone();
    half_widths.sort_unstable();
    half_widths.dedup();
    let mut grid = Vec::new();
    for &model in &b.models {
        for &p in &b.densities {
            for &l in &half_widths {
                grid.push((model, p, l));
            }
        }
    }
    let rows: Vec<Result<SpanningRow, CliError>> = pool(jobs)?.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &(model, p, l))| {
                let seed = replica_seed(base, i as u64);
                let est = spanning_probability(b.dim, l, p, b.samples, model, seed)?;
                let small = (2 * l + 1).checked_pow(b.dim as u32).is_some_and(|v| v <= 24);
                let exact = if b.exact && small {
                    Some(exact_spanning_probability(b.dim, l, p, model)?)
                } else {
                    None
                };
                Ok(SpanningRow {
                    dim: b.dim,
                    half_width: l,
                    p,
                    model,
                    seed,
                    samples: est.samples,
                    estimate: est.mean,
                    std_err: est.std_err,
                    ci_lo: est.ci_lo,
                    ci_hi: est.ci_hi,
                    exact,
                })
            })
            .collect()
    });
    let rows: Vec<SpanningRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let mut trends = Vec::new();
    for chunk in rows.chunks(half_widths.len()) {
        let first = &chunk[0];
        let last = &chunk[chunk.len() - 1];
        let est = |r: &SpanningRow| Estimate {
            samples: r.samples,
            successes: 0,
            mean: r.estimate,
            std_err: r.std_err,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
        };
        trends.push(Trend {
            model: first.model,
            p: first.p,
            half_widths: chunk.iter().map(|r| r.half_width).collect(),
            estimates: chunk.iter().map(|r| r.estimate).collect(),
            nondecreasing_within_noise: chunk.windows(2).all(|w| {
                w[1].estimate >= w[0].estimate - Z95 * (w[0].std_err.powi(2) + w[1].std_err.powi(2)).sqrt()
            }),
            increase: last.estimate - first.estimate,
            endpoints_disjoint: chunk.len() > 1 && est(first).disjoint(&est(last)),
        });
    }
    let prov = Provenance::new(Command::Bootstrap.name(), cfg);
    let mut art = Artifacts::default();
    let summary = BootstrapSummary { rows, trends };
    art.json("summary.json", &prov, &summary)?;
    art.csv("spanning.csv", &prov, &summary.rows)?;
    Ok(Outcome {
        summary,
        artifacts: art,
        failed: Vec::new(),
    })
}

// ---------------------------------------------------------------- renorm

#[derive(Clone, Debug, Serialize)]
pub struct GridVerdict {
    pub half_width: usize,
    pub m: usize,
    pub boxes: usize,
    pub bad_boxes: usize,
    pub bad_fraction: f64,
    pub below_p_star: bool,
    pub bad_percolates: bool,
    pub containment_ok: bool,
    pub violating_sites: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RenormReplica {
    pub seed: u64,
    pub error: Option<String>,
    pub events: u64,
    pub classes: ClassCounts,
    pub clusters: ClusterStats,
    pub grid: Vec<GridVerdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub half_width: usize,
    pub m: usize,
    /// Bad boxes over all boxes of all successful runs.
    pub bad_fraction: f64,
    pub bad_fraction_std_err: f64,
    pub below_p_star: bool,
    pub containment_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureDump {
    pub seed: u64,
    pub half_width: usize,
    pub m: usize,
    pub file: String,
    pub violating_sites: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RenormSummary {
    pub p_star: f64,
    pub grid: Vec<GridSummary>,
    /// Grid point with the smallest pooled bad fraction (first on ties).
    pub selected_half_width: usize,
    pub selected_m: usize,
    pub bad_fraction: f64,
    pub below_p_star: bool,
    /// Runs with no spanning fixed-minus/flipper cluster.
    pub no_spanning_rate: f64,
    /// Runs with no fixed-minus/flipper cluster touching two opposite faces.
    pub no_face_touching_rate: f64,
    /// Runs whose containment check passed at the selected grid point.
    pub containment_rate: f64,
    pub runs: usize,
    pub failed: Vec<u64>,
    pub failures: Vec<FailureDump>,
    pub replicas: Vec<RenormReplica>,
}

fn renorm_grid(cfg: &ExperimentConfig, geom: &LatticeGeometry) -> Result<Vec<(usize, usize)>, CliError> {
    let a = &cfg.analysis;
    if a.half_widths.is_empty() || a.m_values.is_empty() {
        return Err(CliError::config("renorm needs analysis.half_widths and analysis.m_values"));
    }
    let mut grid = Vec::new();
    for &l in &a.half_widths {
        geom.tile_boxes(l)?;
        for &m in &a.m_values {
            if m < l {
                grid.push((l, m));
            }
        }
    }
    if grid.is_empty() {
        return Err(CliError::config("no (L, M) pair with M < L in the analysis grid"));
    }
    Ok(grid)
}

struct RenormDetail {
    env: Environment,
    traj: Trajectory,
    classification: SiteClassification,
    boxes: Vec<Vec<BoxRow>>,
    containment: Vec<coarsen_core::analysis::Containment>,
}

#[derive(Clone, Debug, Serialize)]
struct BoxRow {
    seed: u64,
    half_width: usize,
    m: usize,
    y: String,
    entrapped: bool,
    captured: bool,
    m_captured: bool,
    m_good: bool,
}

fn renorm_one(
    cfg: &ExperimentConfig,
    geom: &LatticeGeometry,
    table: &Arc<NeighborTable>,
    grid: &[(usize, usize)],
    seed: u64,
) -> Result<(RenormReplica, RenormDetail), CliError> {
    let env = cfg.environment(geom, seed)?;
    let mut state = DynamicsState::with_table(&env, table.clone(), cfg.dynamics.rule(), seed)?;
    let traj = state.run(&cfg.dynamics.run_options(), &mut [])?;
    let classification = classify_sites(&traj, cfg.dynamics.horizon, cfg.analysis.window_fraction)?;
    let comps = clusters(geom, &classification.minus_or_flipper(), Adjacency::Nn);
    let mut verdicts = Vec::new();
    let mut boxes = Vec::new();
    let mut containment = Vec::new();
    for &(l, m) in grid {
        let mut report = renormalize(&env, l, m)?;
        let c = containment_check(geom, &classification, &report)?;
        report.containment_ok = Some(c.ok);
        verdicts.push(GridVerdict {
            half_width: l,
            m,
            boxes: report.good.len(),
            bad_boxes: report.bad_count(),
            bad_fraction: report.bad_fraction,
            below_p_star: report.below_p_star,
            bad_percolates: report.bad_percolates,
            containment_ok: c.ok,
            violating_sites: c.violations.len(),
        });
        boxes.push(
            report
                .classes
                .iter()
                .enumerate()
                .map(|(y, bc)| BoxRow {
                    seed,
                    half_width: l,
                    m,
                    y: coords_string(&report.tiling.grid, y),
                    entrapped: bc.entrapped,
                    captured: bc.captured,
                    m_captured: bc.m_captured,
                    m_good: bc.m_good,
                })
                .collect(),
        );
        containment.push(c);
    }
    let replica = RenormReplica {
        seed,
        error: None,
        events: traj.events,
        classes: class_counts(&classification),
        clusters: cluster_stats(geom, &comps),
        grid: verdicts,
    };
    Ok((
        replica,
        RenormDetail {
            env,
            traj,
            classification,
            boxes,
            containment,
        },
    ))
}

#[derive(Clone, Debug, Serialize)]
struct VerdictRow {
    seed: u64,
    half_width: usize,
    m: usize,
    bad_fraction: f64,
    below_p_star: bool,
    bad_percolates: bool,
    containment_ok: bool,
    violating_sites: usize,
    minus_or_flipper_spans: bool,
    minus_or_flipper_touches_faces: bool,
}

#[derive(Clone, Debug, Serialize)]
struct ViolationRow {
    site: usize,
    coords: String,
    class: SiteClass,
    final_spin: i8,
    last_flip: Option<f64>,
}

pub fn renorm(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome<RenormSummary>, CliError> {
    let geom = check_replica_geometry(cfg)?;
    if cfg.geometry.boundary == BoundaryKind::Slab {
        return Err(CliError::config("renorm works on free or periodic windows"));
    }
    let grid = renorm_grid(cfg, &geom)?;
    let seeds = cfg.replication.seeds()?;
    let table = Arc::new(geom.neighbor_table());
    let results = replicate(&seeds, jobs, |seed| renorm_one(cfg, &geom, &table, &grid, seed))?;

    let prov = Provenance::new(Command::Renorm.name(), cfg);
    let mut art = Artifacts::default();
    let mut replicas = Vec::new();
    let mut details = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().copied().zip(results) {
        match r {
            Ok((rep, d)) => {
                replicas.push(rep);
                details.push(d);
            }
            Err(e) => {
                failed.push(seed);
                replicas.push(RenormReplica {
                    seed,
                    error: Some(e.to_string()),
                    ..Default::default()
                });
            }
        }
    }
    let ok: Vec<&RenormReplica> = replicas.iter().filter(|r| r.error.is_none()).collect();
    let runs = ok.len().max(1) as f64;
    let ps = p_star(geom.dim());
    let grid_summary: Vec<GridSummary> = grid
        .iter()
        .enumerate()
        .map(|(k, &(l, m))| {
            let bad: usize = ok.iter().map(|r| r.grid[k].bad_boxes).sum();
            let total: usize = ok.iter().map(|r| r.grid[k].boxes).sum();
            let est = Estimate::proportion(bad as u64, total.max(1) as u64);
            GridSummary {
                half_width: l,
                m,
                bad_fraction: est.mean,
                bad_fraction_std_err: est.std_err,
                below_p_star: est.mean < ps,
                containment_rate: ok.iter().filter(|r| r.grid[k].containment_ok).count() as f64 / runs,
            }
        })
        .collect();
    let sel = (0..grid.len())
        .min_by(|&a, &b| grid_summary[a].bad_fraction.total_cmp(&grid_summary[b].bad_fraction))
        .expect("grid is nonempty");

    let mut verdict_rows = Vec::new();
    let mut box_rows = Vec::new();
    let mut cluster_rows = Vec::new();
    let mut sites = Vec::new();
    let mut failures = Vec::new();
    for (rep, d) in ok.iter().zip(&details) {
        let seed = rep.seed;
        for (k, v) in rep.grid.iter().enumerate() {
            verdict_rows.push(VerdictRow {
                seed,
                half_width: v.half_width,
                m: v.m,
                bad_fraction: v.bad_fraction,
                below_p_star: v.below_p_star,
                bad_percolates: v.bad_percolates,
                containment_ok: v.containment_ok,
                violating_sites: v.violating_sites,
                minus_or_flipper_spans: rep.clusters.spans,
                minus_or_flipper_touches_faces: rep.clusters.touches_opposite_faces,
            });
            box_rows.extend(d.boxes[k].iter().cloned());
            if !v.containment_ok {
                let file = format!("failures/seed_{seed}_L{}_M{}.csv", v.half_width, v.m);
                let rows: Vec<ViolationRow> = d.containment[k]
                    .violations
                    .iter()
                    .map(|&s| ViolationRow {
                        site: s,
                        coords: coords_string(&geom, s),
                        class: d.classification.classes[s],
                        final_spin: d.traj.spins[s],
                        last_flip: d.traj.last_flip[s],
                    })
                    .collect();
                art.csv(&file, &prov, &rows)?;
                failures.push(FailureDump {
                    seed,
                    half_width: v.half_width,
                    m: v.m,
                    file,
                    violating_sites: v.violating_sites,
                });
            }
        }
        cluster_rows.extend(d.containment[sel].clusters.iter().map(|c| ClusterOut {
            seed,
            id: c.id,
            size: c.size,
            touches_boundary: c.touches_boundary,
            spans: c.spans,
            contained_in_closure: Some(c.contained_in_closure),
        }));
        if cfg.output.sites {
            sites.extend(site_rows(seed, &d.env, &d.traj, &d.classification));
        }
    }
    let summary = RenormSummary {
        p_star: ps,
        selected_half_width: grid[sel].0,
        selected_m: grid[sel].1,
        bad_fraction: grid_summary[sel].bad_fraction,
        below_p_star: grid_summary[sel].below_p_star,
        no_spanning_rate: ok.iter().filter(|r| !r.clusters.spans).count() as f64 / runs,
        no_face_touching_rate: ok.iter().filter(|r| !r.clusters.touches_opposite_faces).count() as f64 / runs,
        containment_rate: grid_summary[sel].containment_rate,
        grid: grid_summary,
        runs: replicas.len(),
        failed: failed.clone(),
        failures,
        replicas,
    };
    art.json("summary.json", &prov, &summary)?;
    art.csv_with_header(
        "verdicts.csv",
        &prov,
        Some(&[
            "seed",
            "half_width",
            "m",
            "bad_fraction",
            "below_p_star",
            "bad_percolates",
            "containment_ok",
            "violating_sites",
            "minus_or_flipper_spans",
            "minus_or_flipper_touches_faces",
        ]),
        &verdict_rows,
    )?;
    art.csv_with_header(
        "boxes.csv",
        &prov,
        Some(&["seed", "half_width", "m", "y", "entrapped", "captured", "m_captured", "m_good"]),
        &box_rows,
    )?;
    art.csv_with_header(
        "clusters.csv",
        &prov,
        Some(&["seed", "id", "size", "touches_boundary", "spans", "contained_in_closure"]),
        &cluster_rows,
    )?;
    if cfg.output.sites {
        art.csv_with_header(
            "sites.csv",
            &prov,
            Some(&[
                "seed", "site", "coords", "kind", "final_spin", "class", "certified", "flips", "last_flip",
            ]),
            &sites,
        )?;
    }
    Ok(Outcome {
        summary,
        artifacts: art,
        failed,
    })
}

// ---------------------------------------------------------------- slab

#[derive(Clone, Debug, Default, Serialize)]
pub struct SlabReplica {
    pub seed: u64,
    pub error: Option<String>,
    pub events: u64,
    pub consensus_time: Option<f64>,
    pub post_consensus_flips: Option<u64>,
    pub minus_final: usize,
    pub pillars: usize,
    pub initial_all_plus: usize,
    pub initial_fraction: f64,
    pub expected_fraction: f64,
    pub std_err: f64,
    pub within_three_se: bool,
    pub final_all_plus: usize,
    pub reversions: usize,
    pub nondecreasing: bool,
    pub count_changes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlabSummary {
    pub height: usize,
    pub runs: usize,
    pub failed: Vec<u64>,
    pub consensus_rate: f64,
    pub consensus_time_mean: Option<f64>,
    pub consensus_time_max: Option<f64>,
    /// Initial all-plus pillar fraction pooled over runs.
    pub pooled_initial_fraction: f64,
    pub expected_fraction: f64,
    pub pooled_std_err: f64,
    pub pooled_within_three_se: bool,
    pub all_nondecreasing: bool,
    pub total_reversions: usize,
    pub absorbed_after_consensus: bool,
    pub replicas: Vec<SlabReplica>,
}

fn slab_one(
    cfg: &ExperimentConfig,
    geom: &LatticeGeometry,
    table: &Arc<NeighborTable>,
    seed: u64,
) -> Result<SlabReplica, CliError> {
    let env = cfg.environment(geom, seed)?;
    let mut state = DynamicsState::with_table(&env, table.clone(), cfg.dynamics.rule(), seed)?;
    let (traj, report) = pillar_analysis(&mut state, &cfg.dynamics.run_options(), cfg.environment.theta)?;
    let post = match traj.consensus_time {
        Some(_) if cfg.dynamics.post_consensus_events > 0 => {
            Some(flips_after(&mut state, cfg.dynamics.post_consensus_events)?)
        }
        _ => None,
    };
    Ok(SlabReplica {
        seed,
        error: None,
        events: traj.events,
        consensus_time: traj.consensus_time,
        post_consensus_flips: post,
        minus_final: traj.minus_count(),
        pillars: report.initial_all_plus.len(),
        initial_all_plus: report.initial_all_plus.iter().filter(|&&b| b).count(),
        initial_fraction: report.initial_fraction,
        expected_fraction: report.expected_fraction,
        std_err: report.std_err,
        within_three_se: report.within_three_se,
        final_all_plus: report.final_all_plus,
        reversions: report.reversions,
        nondecreasing: report.nondecreasing,
        count_changes: report.count_series.len().saturating_sub(1),
    })
}

pub fn slab(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome<SlabSummary>, CliError> {
    if cfg.geometry.boundary != BoundaryKind::Slab {
        return Err(CliError::config("slab needs geometry.boundary = \"slab\""));
    }
    if cfg.environment.mode != EnvironmentMode::EngineeredSlab {
        return Err(CliError::config("slab needs environment.mode = \"engineered_slab\""));
    }
    let geom = check_replica_geometry(cfg)?;
    if let Some(e) = cfg.geometry.extents.iter().find(|e| *e % 2 != 0) {
        return Err(CliError::config(format!("slab lateral extent {e} must be even for pillars")));
    }
    debug_assert!(matches!(geom.boundary(), Boundary::Slab { .. }));
    let seeds = cfg.replication.seeds()?;
    let table = Arc::new(geom.neighbor_table());
    let results = replicate(&seeds, jobs, |seed| slab_one(cfg, &geom, &table, seed))?;
    let mut replicas = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().copied().zip(results) {
        match r {
            Ok(rep) => replicas.push(rep),
            Err(e) => {
                failed.push(seed);
                replicas.push(SlabReplica {
                    seed,
                    error: Some(e.to_string()),
                    ..Default::default()
                });
            }
        }
    }
    let ok: Vec<&SlabReplica> = replicas.iter().filter(|r| r.error.is_none()).collect();
    let times: Vec<f64> = ok.iter().filter_map(|r| r.consensus_time).collect();
    let stats = summarize(&times);
    let pillars: usize = ok.iter().map(|r| r.pillars).sum();
    let plus: usize = ok.iter().map(|r| r.initial_all_plus).sum();
    let expected = ok.first().map_or(0.0, |r| r.expected_fraction);
    let pooled = plus as f64 / pillars.max(1) as f64;
    let pooled_se = (expected * (1.0 - expected) / pillars.max(1) as f64).sqrt();
    let summary = SlabSummary {
        height: cfg.geometry.slab_height,
        runs: replicas.len(),
        failed: failed.clone(),
        consensus_rate: times.len() as f64 / ok.len().max(1) as f64,
        consensus_time_mean: stats.map(|s| s.0),
        consensus_time_max: stats.map(|s| s.2),
        pooled_initial_fraction: pooled,
        expected_fraction: expected,
        pooled_std_err: pooled_se,
        pooled_within_three_se: (pooled - expected).abs() <= 3.0 * pooled_se,
        all_nondecreasing: ok.iter().all(|r| r.nondecreasing),
        total_reversions: ok.iter().map(|r| r.reversions).sum(),
        absorbed_after_consensus: ok.iter().all(|r| r.post_consensus_flips.unwrap_or(0) == 0),
        replicas,
    };
    let prov = Provenance::new(Command::Slab.name(), cfg);
    let mut art = Artifacts::default();
    art.json("summary.json", &prov, &summary)?;
    art.csv("pillars.csv", &prov, &summary.replicas)?;
    Ok(Outcome {
        summary,
        artifacts: art,
        failed,
    })
}
