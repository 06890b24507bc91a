//! Site classification, clusters, box renormalization and slab pillars.

use std::collections::VecDeque;

use serde::Serialize;

use crate::bootstrap::{classify_tiling, BoxClass};
use crate::dynamics::{plus_core, DynamicsState, Event, Observer, Trajectory};
use crate::environment::{Environment, Frozen, Spin};
use crate::error::{config, domain, Result};
use crate::lattice::{unit_displacements, Adjacency, LatticeGeometry, SiteIndex, Tiling};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteClass {
    FixedPlus,
    FixedMinus,
    Flipper,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiteClassification {
    pub classes: Vec<SiteClass>,
    /// Backed by the plus-core certificate rather than the flip record.
    pub certified: Vec<bool>,
    pub horizon: f64,
    pub window_fraction: f64,
}

impl SiteClassification {
    pub fn count(&self, class: SiteClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Fixed-minus sites and flippers.
    pub fn minus_or_flipper(&self) -> Vec<bool> {
        self.classes.iter().map(|&c| c != SiteClass::FixedPlus).collect()
    }
}

/// A site is a flipper when it changed sign in the last `w * T` of the run;
/// otherwise it is fixed at its final spin. Sites in the plus core of the
/// final configuration are fixed plus whatever their record shows.
pub fn classify_sites(traj: &Trajectory, horizon: f64, window_fraction: f64) -> Result<SiteClassification> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return config(format!("window fraction {window_fraction} must lie in (0, 1)"));
    }
    let core = plus_core(&traj.table, &traj.spins, &traj.frozen);
    let cutoff = (1.0 - window_fraction) * horizon;
    let classes = (0..traj.spins.len())
        .map(|i| {
            if core[i] {
                SiteClass::FixedPlus
            } else if traj.last_flip[i].is_some_and(|t| t > cutoff) {
                SiteClass::Flipper
            } else if traj.spins[i] > 0 {
                SiteClass::FixedPlus
            } else {
                SiteClass::FixedMinus
            }
        })
        .collect();
    Ok(SiteClassification {
        classes,
        certified: core,
        horizon,
        window_fraction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub sites: Vec<SiteIndex>,
    pub bbox_min: Vec<usize>,
    pub bbox_max: Vec<usize>,
    /// Per axis: some member sits on the low face / the high face.
    pub touches_low: Vec<bool>,
    pub touches_high: Vec<bool>,
    /// Per axis: the component winds around a periodic axis.
    pub wraps: Vec<bool>,
}

impl Component {
    pub fn size(&self) -> usize {
        self.sites.len()
    }

    /// Touches both faces along some axis.
    pub fn touches_opposite_faces(&self) -> bool {
        self.touches_low.iter().zip(&self.touches_high).any(|(&a, &b)| a && b)
    }

    /// Finite-window percolation: winds around a periodic axis, or joins the
    /// two faces of a free axis.
    pub fn spans(&self, geom: &LatticeGeometry) -> bool {
        (0..geom.dim()).any(|axis| {
            if geom.wraps(axis) {
                self.wraps[axis]
            } else {
                self.touches_low[axis] && self.touches_high[axis]
            }
        })
    }
}

/// Connected components of `mask` by breadth-first search, ordered by their
/// smallest site. Unwrapped coordinates are carried along so that winding
/// around a periodic axis is detected.
pub fn clusters(geom: &LatticeGeometry, mask: &[bool], adjacency: Adjacency) -> Vec<Component> {
    let d = geom.dim();
    let disps = unit_displacements(d, adjacency);
    let mut seen = vec![false; geom.len()];
    let mut unwrapped = vec![0i64; geom.len() * d];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut coords = vec![0usize; d];
    for start in 0..geom.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        geom.coords_into(start, &mut coords);
        for a in 0..d {
            unwrapped[start * d + a] = coords[a] as i64;
        }
        queue.push_back(start);
        let mut comp = Component {
            sites: Vec::new(),
            bbox_min: vec![usize::MAX; d],
            bbox_max: vec![0; d],
            touches_low: vec![false; d],
            touches_high: vec![false; d],
            wraps: vec![false; d],
        };
        while let Some(x) = queue.pop_front() {
            comp.sites.push(x);
            geom.coords_into(x, &mut coords);
            for a in 0..d {
                comp.bbox_min[a] = comp.bbox_min[a].min(coords[a]);
                comp.bbox_max[a] = comp.bbox_max[a].max(coords[a]);
                comp.touches_low[a] |= coords[a] == 0;
                comp.touches_high[a] |= coords[a] + 1 == geom.extents()[a];
            }
            for disp in &disps {
                let Some(y) = geom.offset(x, disp) else { continue };
                if !mask[y] || y == x {
                    continue;
                }
                if seen[y] {
                    for a in 0..d {
                        if unwrapped[y * d + a] != unwrapped[x * d + a] + disp[a] as i64 {
                            comp.wraps[a] = true;
                        }
                    }
                    continue;
                }
                seen[y] = true;
                for a in 0..d {
                    unwrapped[y * d + a] = unwrapped[x * d + a] + disp[a] as i64;
                }
                queue.push_back(y);
            }
        }
        comp.sites.sort_unstable();
        out.push(comp);
    }
    out
}

/// Safe density for independent site percolation with `3^d - 1` neighbors.
pub fn p_star(dim: usize) -> f64 {
    1.0 / (3f64.powi(dim as i32) - 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct RenormReport {
    pub half_width: usize,
    pub m: usize,
    pub grid_extents: Vec<usize>,
    /// Per renormalized site: the box is M-good.
    pub good: Vec<bool>,
    pub classes: Vec<BoxClass>,
    /// Bad boxes grouped by `l_inf` adjacency on the renormalized lattice.
    pub bad_clusters: Vec<Vec<usize>>,
    /// Each bad cluster together with its good `l_inf` neighbors.
    pub closures: Vec<Vec<usize>>,
    pub p_star: f64,
    pub bad_fraction: f64,
    pub below_p_star: bool,
    /// Some bad cluster spans the renormalized window.
    pub bad_percolates: bool,
    pub containment_ok: Option<bool>,
    #[serde(skip)]
    pub tiling: Tiling,
}

impl RenormReport {
    /// Clusters and closures of the bad boxes of `tiling`.
    pub fn from_flags(tiling: Tiling, good: Vec<bool>, classes: Vec<BoxClass>, m: usize) -> Self {
        let grid = &tiling.grid;
        let bad: Vec<bool> = good.iter().map(|g| !g).collect();
        let comps = clusters(grid, &bad, Adjacency::Linf);
        let bad_percolates = comps.iter().any(|c| c.spans(grid));
        let closures = comps
            .iter()
            .map(|c| {
                let mut cl = c.sites.clone();
                for &y in &c.sites {
                    for z in grid.linf_neighbors_of(y) {
                        if good[z] {
                            cl.push(z);
                        }
                    }
                }
                cl.sort_unstable();
                cl.dedup();
                cl
            })
            .collect();
        let n_bad = bad.iter().filter(|&&b| b).count();
        let bad_fraction = n_bad as f64 / good.len().max(1) as f64;
        let p = p_star(grid.dim());
        Self {
            half_width: tiling.half_width,
            m,
            grid_extents: grid.extents().to_vec(),
            good,
            classes,
            bad_clusters: comps.into_iter().map(|c| c.sites).collect(),
            closures,
            p_star: p,
            bad_fraction,
            below_p_star: bad_fraction < p,
            bad_percolates,
            containment_ok: None,
            tiling,
        }
    }

    pub fn bad_count(&self) -> usize {
        self.good.iter().filter(|&&g| !g).count()
    }
}

/// Tile the window with boxes of half-width `L`, mark each M-good box good,
/// and group the bad boxes.
pub fn renormalize(env: &Environment, half_width: usize, m: usize) -> Result<RenormReport> {
    if m >= half_width {
        return domain(format!("renormalization needs M < L (got M = {m}, L = {half_width})"));
    }
    let tiling = env.geom.tile_boxes(half_width)?;
    let classes = classify_tiling(env, &tiling, m)?;
    let good = classes.iter().map(|c| c.m_good).collect();
    Ok(RenormReport::from_flags(tiling, good, classes, m))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterRow {
    pub id: usize,
    pub size: usize,
    pub touches_boundary: bool,
    pub spans: bool,
    pub contained_in_closure: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Containment {
    pub ok: bool,
    pub clusters: Vec<ClusterRow>,
    /// Sites of clusters that escape every closure.
    pub violations: Vec<SiteIndex>,
}

/// Every nearest-neighbor cluster of fixed-minus and flipper sites must lie in
/// the boxes of a single closure of a bad box cluster.
pub fn containment_check(
    geom: &LatticeGeometry,
    classification: &SiteClassification,
    report: &RenormReport,
) -> Result<Containment> {
    if classification.classes.len() != geom.len() {
        return config("classification does not match the window");
    }
    let n_boxes = report.good.len();
    let mut closures_of: Vec<Vec<usize>> = vec![Vec::new(); n_boxes];
    for (k, cl) in report.closures.iter().enumerate() {
        for &y in cl {
            closures_of[y].push(k);
        }
    }
    let comps = clusters(geom, &classification.minus_or_flipper(), Adjacency::Nn);
    let mut rows = Vec::with_capacity(comps.len());
    let mut violations = Vec::new();
    for (id, comp) in comps.iter().enumerate() {
        let mut candidates = closures_of[report.tiling.box_of(geom, comp.sites[0])].clone();
        for &s in &comp.sites[1..] {
            if candidates.is_empty() {
                break;
            }
            let here = &closures_of[report.tiling.box_of(geom, s)];
            candidates.retain(|k| here.contains(k));
        }
        let contained = !candidates.is_empty();
        if !contained {
            violations.extend(&comp.sites);
        }
        rows.push(ClusterRow {
            id,
            size: comp.size(),
            touches_boundary: comp.touches_opposite_faces(),
            spans: comp.spans(geom),
            contained_in_closure: contained,
        });
    }
    violations.sort_unstable();
    Ok(Containment {
        ok: violations.is_empty(),
        clusters: rows,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PillarReport {
    pub height: usize,
    pub pillar_grid: Vec<usize>,
    pub initial_all_plus: Vec<bool>,
    pub initial_fraction: f64,
    /// `theta^(2^(d-1) K)`.
    pub expected_fraction: f64,
    pub std_err: f64,
    pub within_three_se: bool,
    /// `(time, all-plus pillar count)` at every change of the count.
    pub count_series: Vec<(f64, usize)>,
    pub final_all_plus: usize,
    /// Times an all-plus pillar lost its state; absorption means zero.
    pub reversions: usize,
    pub nondecreasing: bool,
}

/// Tracks the `2^(d-1) x (K+1)` pillars of a slab while it evolves.
#[derive(Clone, Debug)]
pub struct PillarTracker {
    pillar_of: Vec<u32>,
    minus_in: Vec<u32>,
    pillar_grid: Vec<usize>,
    height: usize,
    initial_all_plus: Vec<bool>,
    all_plus: usize,
    series: Vec<(f64, usize)>,
    reversions: usize,
}

impl PillarTracker {
    pub fn new(geom: &LatticeGeometry, spins: &[Spin]) -> Result<Self> {
        let Some(height) = geom.slab_height() else {
            return config("pillar analysis needs a slab geometry");
        };
        let d = geom.dim();
        let lateral = &geom.extents()[..d - 1];
        if let Some(axis) = lateral.iter().position(|e| e % 2 != 0) {
            return config(format!("slab axis {axis} has odd extent {}", lateral[axis]));
        }
        let pillar_grid: Vec<usize> = lateral.iter().map(|e| e / 2).collect();
        let pgeom = LatticeGeometry::new(pillar_grid.clone(), crate::lattice::Boundary::Free)?;
        let mut coords = vec![0usize; d];
        let pillar_of: Vec<u32> = (0..geom.len())
            .map(|s| {
                geom.coords_into(s, &mut coords);
                let p: Vec<usize> = coords[..d - 1].iter().map(|c| c / 2).collect();
                pgeom.index(&p).expect("pillar inside grid") as u32
            })
            .collect();
        let mut minus_in = vec![0u32; pgeom.len()];
        for (s, &sp) in spins.iter().enumerate() {
            if sp < 0 {
                minus_in[pillar_of[s] as usize] += 1;
            }
        }
        let initial_all_plus: Vec<bool> = minus_in.iter().map(|&m| m == 0).collect();
        let all_plus = initial_all_plus.iter().filter(|&&b| b).count();
        Ok(Self {
            pillar_of,
            minus_in,
            pillar_grid,
            height,
            initial_all_plus,
            all_plus,
            series: vec![(0.0, all_plus)],
            reversions: 0,
        })
    }

    pub fn all_plus_count(&self) -> usize {
        self.all_plus
    }

    pub fn pillar_count(&self) -> usize {
        self.minus_in.len()
    }

    fn record(&mut self, site: SiteIndex, spin: Spin, time: f64) {
        let p = self.pillar_of[site] as usize;
        if spin < 0 {
            if self.minus_in[p] == 0 {
                self.all_plus -= 1;
                self.reversions += 1;
                self.series.push((time, self.all_plus));
            }
            self.minus_in[p] += 1;
        } else {
            self.minus_in[p] -= 1;
            if self.minus_in[p] == 0 {
                self.all_plus += 1;
                self.series.push((time, self.all_plus));
            }
        }
    }

    pub fn report(&self, theta: f64) -> PillarReport {
        let lateral_dim = self.pillar_grid.len();
        let n = self.pillar_count() as f64;
        let expected = theta.powi(((1usize << lateral_dim) * self.height) as i32);
        let initial = self.initial_all_plus.iter().filter(|&&b| b).count() as f64 / n;
        let std_err = (expected * (1.0 - expected) / n).sqrt();
        let nondecreasing = self.series.windows(2).all(|w| w[1].1 >= w[0].1);
        PillarReport {
            height: self.height,
            pillar_grid: self.pillar_grid.clone(),
            initial_all_plus: self.initial_all_plus.clone(),
            initial_fraction: initial,
            expected_fraction: expected,
            std_err,
            within_three_se: (initial - expected).abs() <= 3.0 * std_err,
            count_series: self.series.clone(),
            final_all_plus: self.all_plus,
            reversions: self.reversions,
            nondecreasing,
        }
    }
}

impl Observer for PillarTracker {
    fn on_flip(&mut self, _state: &DynamicsState, event: &Event) -> Result<()> {
        self.record(event.site, event.spin, event.time);
        Ok(())
    }
}

/// Run `state` to `horizon` while tracking its pillars.
pub fn pillar_analysis(
    state: &mut DynamicsState,
    opts: &crate::dynamics::RunOptions,
    theta: f64,
) -> Result<(Trajectory, PillarReport)> {
    let mut tracker = PillarTracker::new(state.geom(), state.spins())?;
    let traj = state.run(opts, &mut [&mut tracker])?;
    Ok((traj, tracker.report(theta)))
}

/// Frozen kinds as seen by the classification (frozen minus is fixed minus).
pub fn frozen_consistent(classification: &SiteClassification, frozen: &[Frozen]) -> bool {
    classification.classes.iter().zip(frozen).all(|(&c, &f)| match f {
        Frozen::Plus => c == SiteClass::FixedPlus,
        Frozen::Minus => c == SiteClass::FixedMinus,
        Frozen::No => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{RunOptions, UpdateRule};
    use crate::environment::{engineered_slab, gadget_center, flipper_gadget};
    use crate::lattice::Boundary;

    fn geom(ext: &[usize], b: Boundary) -> LatticeGeometry {
        LatticeGeometry::new(ext.to_vec(), b).unwrap()
    }

    #[test]
    fn cluster_basics() {
        let g = geom(&[4, 4], Boundary::Free);
        assert!(clusters(&g, &vec![false; 16], Adjacency::Nn).is_empty());
        let full = clusters(&g, &vec![true; 16], Adjacency::Nn);
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].size(), 16);
        assert!(full[0].touches_low.iter().chain(&full[0].touches_high).all(|&t| t));
        let mut diag = vec![false; 16];
        diag[g.index(&[1, 1]).unwrap()] = true;
        diag[g.index(&[2, 2]).unwrap()] = true;
        assert_eq!(clusters(&g, &diag, Adjacency::Linf).len(), 1);
        assert_eq!(clusters(&g, &diag, Adjacency::Nn).len(), 2);
    }

    #[test]
    fn periodic_winding_detection() {
        let g = geom(&[6, 6], Boundary::Periodic);
        // a full row winds along axis 0
        let mut row = vec![false; 36];
        for x in 0..6 {
            row[g.index(&[x, 2]).unwrap()] = true;
        }
        let c = clusters(&g, &row, Adjacency::Nn);
        assert_eq!(c.len(), 1);
        assert!(c[0].wraps[0] && !c[0].wraps[1]);
        assert!(c[0].spans(&g));
        // a small cluster straddling the seam touches both faces but does not wind
        let mut seam = vec![false; 36];
        seam[g.index(&[0, 3]).unwrap()] = true;
        seam[g.index(&[5, 3]).unwrap()] = true;
        let c = clusters(&g, &seam, Adjacency::Nn);
        assert_eq!(c.len(), 1);
        assert!(c[0].touches_opposite_faces());
        assert!(!c[0].spans(&g));
    }

    #[test]
    fn p_star_values() {
        assert_eq!(p_star(2), 1.0 / 8.0);
        assert_eq!(p_star(3), 1.0 / 26.0);
    }

    #[test]
    fn flipper_classified() {
        let g = geom(&[5, 5], Boundary::Periodic);
        let env = flipper_gadget(&g).unwrap();
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 8).unwrap();
        let tr = st.run(&RunOptions::until(1000.0), &mut []).unwrap();
        let cl = classify_sites(&tr, 1000.0, 0.2).unwrap();
        assert_eq!(cl.classes[gadget_center(&g)], SiteClass::Flipper);
        assert!(frozen_consistent(&cl, &env.frozen));
        assert!(classify_sites(&tr, 1000.0, 1.0).is_err());
    }

    #[test]
    fn consensus_all_fixed_plus() {
        let g = geom(&[16, 16], Boundary::Periodic);
        let mut frozen = vec![Frozen::No; g.len()];
        frozen[0] = Frozen::Plus;
        let env = Environment::from_parts(g.clone(), frozen, vec![1; g.len()]).unwrap();
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 1).unwrap();
        let tr = st.run(&RunOptions::until(100.0), &mut []).unwrap();
        let cl = classify_sites(&tr, 100.0, 0.2).unwrap();
        assert_eq!(cl.count(SiteClass::FixedPlus), g.len());
        assert!(cl.certified[0]);
    }

    #[test]
    fn renormalize_all_good() {
        let g = geom(&[15, 15], Boundary::Periodic);
        let env = Environment::from_parts(g.clone(), vec![Frozen::Plus; g.len()], vec![1; g.len()]).unwrap();
        let r = renormalize(&env, 2, 1).unwrap();
        assert!(r.good.iter().all(|&x| x));
        assert!(r.bad_clusters.is_empty() && r.closures.is_empty());
        assert_eq!(r.p_star, 0.125);
        assert!(r.below_p_star);
        let cl = SiteClassification {
            classes: vec![SiteClass::FixedPlus; g.len()],
            certified: vec![true; g.len()],
            horizon: 1.0,
            window_fraction: 0.2,
        };
        assert!(containment_check(&g, &cl, &r).unwrap().ok);
        assert!(renormalize(&env, 2, 2).is_err());
        assert!(renormalize(&env, 3, 1).is_err());
    }

    #[test]
    fn flipper_in_bad_box_is_contained() {
        let g = geom(&[15, 15], Boundary::Periodic);
        let mut frozen = vec![Frozen::Plus; g.len()];
        let v = g.index(&[7, 7]).unwrap();
        frozen[v] = Frozen::Minus;
        let env = Environment::from_parts(g.clone(), frozen, vec![1; g.len()]).unwrap();
        let r = renormalize(&env, 2, 1).unwrap();
        assert_eq!(r.bad_count(), 1);
        assert_eq!(r.closures[0].len(), 9);
        let mut classes = vec![SiteClass::FixedPlus; g.len()];
        classes[v] = SiteClass::Flipper;
        let cl = SiteClassification {
            classes: classes.clone(),
            certified: vec![false; g.len()],
            horizon: 1.0,
            window_fraction: 0.2,
        };
        assert!(containment_check(&g, &cl, &r).unwrap().ok);
        // a flipper far from every bad box escapes
        classes[g.index(&[0, 0]).unwrap()] = SiteClass::Flipper;
        let cl = SiteClassification { classes, ..cl };
        let c = containment_check(&g, &cl, &r).unwrap();
        // (0,0) lies in box (0,0), an l_inf neighbor of the bad center box
        assert!(c.ok);
        let g2 = geom(&[25, 25], Boundary::Free);
        let mut frozen = vec![Frozen::Plus; g2.len()];
        frozen[g2.index(&[2, 2]).unwrap()] = Frozen::Minus;
        let env2 = Environment::from_parts(g2.clone(), frozen, vec![1; g2.len()]).unwrap();
        let r2 = renormalize(&env2, 2, 1).unwrap();
        let mut classes = vec![SiteClass::FixedPlus; g2.len()];
        classes[g2.index(&[22, 22]).unwrap()] = SiteClass::Flipper;
        let cl2 = SiteClassification {
            classes,
            certified: vec![false; g2.len()],
            horizon: 1.0,
            window_fraction: 0.2,
        };
        let c2 = containment_check(&g2, &cl2, &r2).unwrap();
        assert!(!c2.ok);
        assert_eq!(c2.violations, vec![g2.index(&[22, 22]).unwrap()]);
    }

    #[test]
    fn pillar_tracking() {
        let g = LatticeGeometry::slab(&[8, 8], 1, true).unwrap();
        let env = engineered_slab(&g, 1.0, 0).unwrap();
        let t = PillarTracker::new(&g, &env.initial_spins).unwrap();
        assert_eq!(t.all_plus_count(), 16);
        let odd = LatticeGeometry::slab(&[7, 8], 1, true).unwrap();
        assert!(PillarTracker::new(&odd, &vec![1; odd.len()]).is_err());
        assert!(PillarTracker::new(&geom(&[4, 4], Boundary::Free), &[1; 16]).is_err());
    }

    #[test]
    fn all_plus_pillar_never_reverts() {
        // one all-plus pillar inside an all-minus slab
        for k in [1usize, 2, 3] {
            let g = LatticeGeometry::slab(&[8, 8], k, true).unwrap();
            let base = engineered_slab(&g, 0.0, 0).unwrap();
            let mut spins = base.initial_spins.clone();
            for s in 0..g.len() {
                let c = g.coords(s);
                if c[0] / 2 == 1 && c[1] / 2 == 1 {
                    spins[s] = 1;
                }
            }
            let env = base.with_initial(&spins).unwrap();
            let core = plus_core(&g.neighbor_table(), &env.initial_spins, &env.frozen);
            for s in 0..g.len() {
                let c = g.coords(s);
                if c[0] / 2 == 1 && c[1] / 2 == 1 {
                    assert!(core[s], "pillar site {c:?} not certified");
                }
            }
            let mut st = DynamicsState::new(&env, UpdateRule::default(), k as u64).unwrap();
            let opts = RunOptions {
                max_events: Some(1000),
                ..RunOptions::until(1e9)
            };
            let (_, rep) = pillar_analysis(&mut st, &opts, 0.0).unwrap();
            assert_eq!(rep.reversions, 0);
            assert!(rep.nondecreasing);
        }
    }
}
