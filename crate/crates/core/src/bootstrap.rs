//! Bootstrap percolation `u -> s` and the box classes built on it.
//!
//! Frozen-plus sites play the part of stable sites `s`. A box is *entrapped*
//! when its frozen-plus sites internally span it, *captured* when in addition
//! all `2^d` corners are frozen plus, *M-captured* when each corner has a frozen
//! plus site within distance `M` along every axis, and *M-good* when it is
//! M-captured and holds no frozen-minus site.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Frozen};
use crate::error::{domain, Result};
use crate::lattice::{Boundary, LatticeBox, LatticeGeometry, NeighborTable, SiteIndex, Tiling};
use crate::rng::{stream, Stream};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapModel {
    /// `u -> s` with at least `gamma` stable neighbors.
    Standard,
    /// `u -> s` with a stable neighbor along every coordinate axis.
    ModifiedBasic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BootstrapField {
    /// `true` for `s`, `false` for `u`.
    pub stable: Vec<bool>,
    pub gamma: usize,
    pub model: BootstrapModel,
}

impl BootstrapField {
    /// Threshold `gamma = d`.
    pub fn new(geom: &LatticeGeometry, stable: Vec<bool>, model: BootstrapModel) -> Self {
        Self {
            stable,
            gamma: geom.dim(),
            model,
        }
    }

    pub fn count_stable(&self) -> usize {
        self.stable.iter().filter(|&&s| s).count()
    }
}

/// Sites taking part in the automaton; neighbor counts only see region members.
#[derive(Clone, Debug)]
pub struct Region {
    member: Vec<bool>,
    sites: Vec<SiteIndex>,
}

impl Region {
    pub fn whole(geom: &LatticeGeometry) -> Self {
        Self {
            member: vec![true; geom.len()],
            sites: (0..geom.len()).collect(),
        }
    }

    pub fn from_sites(geom: &LatticeGeometry, sites: &[SiteIndex]) -> Result<Self> {
        let mut member = vec![false; geom.len()];
        for &s in sites {
            geom.check(s)?;
            member[s] = true;
        }
        let sites = (0..geom.len()).filter(|&s| member[s]).collect();
        Ok(Self { member, sites })
    }

    pub fn from_box(geom: &LatticeGeometry, bx: &LatticeBox) -> Self {
        Self::from_sites(geom, &bx.sites(geom)).expect("box sites lie in the window")
    }

    pub fn contains(&self, site: SiteIndex) -> bool {
        self.member[site]
    }

    pub fn sites(&self) -> &[SiteIndex] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPoint {
    pub field: BootstrapField,
    /// Synchronous steps that changed at least one site.
    pub steps: usize,
}

/// Geometry plus neighbor table, reused across many fields on the same window.
#[derive(Clone, Debug)]
pub struct BootstrapEngine {
    geom: LatticeGeometry,
    table: NeighborTable,
}

impl BootstrapEngine {
    pub fn new(geom: &LatticeGeometry) -> Self {
        Self {
            geom: geom.clone(),
            table: geom.neighbor_table(),
        }
    }

    /// Free-boundary box `[0, 2L]^d`.
    pub fn for_box(dim: usize, half_width: usize) -> Self {
        let geom = LatticeGeometry::new(vec![2 * half_width + 1; dim], Boundary::Free)
            .expect("box geometry is valid");
        Self::new(&geom)
    }

    pub fn geom(&self) -> &LatticeGeometry {
        &self.geom
    }

    fn converts(&self, x: SiteIndex, stable: &[bool], region: &Region, field: &BootstrapField) -> bool {
        match field.model {
            BootstrapModel::Standard => {
                let count = self
                    .table
                    .of(x)
                    .iter()
                    .filter(|&&y| region.member[y as usize] && stable[y as usize])
                    .count();
                count >= field.gamma
            }
            BootstrapModel::ModifiedBasic => (0..self.geom.dim()).all(|axis| {
                [false, true].iter().any(|&plus| {
                    self.geom
                        .step(x, axis, plus)
                        .is_some_and(|y| region.member[y] && stable[y])
                })
            }),
        }
    }

    /// Synchronous iteration to the fixed point. Only sites adjacent to a
    /// site stabilized in the previous step are re-examined.
    pub fn fixed_point(&self, field: &BootstrapField, region: &Region) -> FixedPoint {
        let mut stable = field.stable.clone();
        let mut stamp = vec![0u32; stable.len()];
        let mut generation = 0u32;
        let mut candidates: Vec<SiteIndex> = region.sites.iter().copied().filter(|&x| !stable[x]).collect();
        let mut steps = 0;
        loop {
            let newly: Vec<SiteIndex> = candidates
                .iter()
                .copied()
                .filter(|&x| !stable[x] && self.converts(x, &stable, region, field))
                .collect();
            if newly.is_empty() {
                break;
            }
            for &x in &newly {
                stable[x] = true;
            }
            steps += 1;
            generation += 1;
            candidates.clear();
            for &x in &newly {
                for &y in self.table.of(x) {
                    let y = y as usize;
                    if region.member[y] && !stable[y] && stamp[y] != generation {
                        stamp[y] = generation;
                        candidates.push(y);
                    }
                }
            }
        }
        FixedPoint {
            field: BootstrapField {
                stable,
                gamma: field.gamma,
                model: field.model,
            },
            steps,
        }
    }

    pub fn spans(&self, region: &Region, stable: &[bool], model: BootstrapModel) -> bool {
        let field = BootstrapField {
            stable: stable.to_vec(),
            gamma: self.geom.dim(),
            model,
        };
        let fp = self.fixed_point(&field, region);
        region.sites.iter().all(|&x| fp.field.stable[x])
    }
}

pub fn bootstrap_fixed_point(geom: &LatticeGeometry, field: &BootstrapField, region: &Region) -> FixedPoint {
    BootstrapEngine::new(geom).fixed_point(field, region)
}

/// Does `stable` (restricted to `region`) end with every region site stable?
pub fn internally_spans(geom: &LatticeGeometry, region: &Region, stable: &[bool], model: BootstrapModel) -> bool {
    let restricted: Vec<bool> = (0..geom.len()).map(|x| stable[x] && region.member[x]).collect();
    BootstrapEngine::new(geom).spans(region, &restricted, model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BoxClass {
    pub entrapped: bool,
    pub captured: bool,
    pub m_captured: bool,
    pub m_good: bool,
    pub m: usize,
}

/// Classifies boxes of one half-width against an environment.
#[derive(Clone, Debug)]
pub struct BoxClassifier {
    engine: BootstrapEngine,
    region: Region,
    half_width: usize,
}

impl BoxClassifier {
    pub fn new(dim: usize, half_width: usize) -> Self {
        let engine = BootstrapEngine::for_box(dim, half_width);
        let region = Region::whole(engine.geom());
        Self {
            engine,
            region,
            half_width,
        }
    }

    fn local_frozen_plus(&self, env: &Environment, bx: &LatticeBox) -> Vec<bool> {
        bx.sites(&env.geom)
            .into_iter()
            .map(|s| env.frozen[s] == Frozen::Plus)
            .collect()
    }

    pub fn entrapped(&self, env: &Environment, bx: &LatticeBox) -> bool {
        let stable = self.local_frozen_plus(env, bx);
        self.engine.spans(&self.region, &stable, BootstrapModel::Standard)
    }

    pub fn classify(&self, env: &Environment, bx: &LatticeBox, m: usize) -> Result<BoxClass> {
        if bx.half_width != self.half_width || bx.dim() != self.engine.geom().dim() {
            return domain("box does not match the classifier's shape");
        }
        if m > bx.half_width {
            return domain(format!("M = {m} exceeds L = {}", bx.half_width));
        }
        let geom = &env.geom;
        let entrapped = self.entrapped(env, bx);
        let is_plus = |local: &[usize]| env.frozen[bx.site_at(geom, local)] == Frozen::Plus;
        let dim = bx.dim();
        let top = bx.side() - 1;
        let mut captured = true;
        let mut near = true;
        for i in 0..1usize << dim {
            let corner = bx.corner_local(i);
            captured &= is_plus(&corner);
            for j in 0..dim {
                let hit = (0..=m.min(top)).any(|step| {
                    let mut c = corner.clone();
                    c[j] = if i >> j & 1 == 1 { top - step } else { step };
                    is_plus(&c)
                });
                near &= hit;
            }
        }
        let m_captured = entrapped && near;
        let no_minus = bx.sites(geom).into_iter().all(|s| env.frozen[s] != Frozen::Minus);
        Ok(BoxClass {
            entrapped,
            captured: entrapped && captured,
            m_captured,
            m_good: m_captured && no_minus,
            m,
        })
    }
}

pub fn classify_box(env: &Environment, bx: &LatticeBox, m: usize) -> Result<BoxClass> {
    BoxClassifier::new(bx.dim(), bx.half_width).classify(env, bx, m)
}

pub fn classify_tiling(env: &Environment, tiling: &Tiling, m: usize) -> Result<Vec<BoxClass>> {
    let classifier = BoxClassifier::new(env.geom.dim(), tiling.half_width);
    tiling.boxes.iter().map(|b| classifier.classify(env, b, m)).collect()
}

/// Frozen-plus sites of an entrapped box; `None` when the box is not entrapped.
/// The automaton is monotone, so when any subset spans, the whole frozen-plus
/// set spans and is the unique maximal spanning subset.
pub fn maximal_spanning_subset(env: &Environment, bx: &LatticeBox) -> Option<Vec<SiteIndex>> {
    let classifier = BoxClassifier::new(bx.dim(), bx.half_width);
    classifier.entrapped(env, bx).then(|| {
        bx.sites(&env.geom)
            .into_iter()
            .filter(|&s| env.frozen[s] == Frozen::Plus)
            .collect()
    })
}

/// Monte Carlo estimate of `P(B_L internally spanned)` under i.i.d. density `p`.
pub fn spanning_probability(
    dim: usize,
    half_width: usize,
    p: f64,
    samples: u64,
    model: BootstrapModel,
    seed: u64,
) -> Result<Estimate> {
    if !(p > 0.0 && p <= 1.0) {
        return domain(format!("density p = {p} must lie in (0, 1]"));
    }
    if samples == 0 {
        return domain("need at least one sample");
    }
    let engine = BootstrapEngine::for_box(dim, half_width);
    let region = Region::whole(engine.geom());
    let mut rng = stream(seed, Stream::Bootstrap);
    let mut stable = vec![false; engine.geom().len()];
    let mut hits = 0;
    for _ in 0..samples {
        for s in stable.iter_mut() {
            *s = rng.random::<f64>() < p;
        }
        hits += engine.spans(&region, &stable, model) as u64;
    }
    Ok(Estimate::proportion(hits, samples))
}

/// Exact `P(B_L internally spanned)` by summing over every configuration.
/// Limited to boxes of at most 24 sites.
pub fn exact_spanning_probability(dim: usize, half_width: usize, p: f64, model: BootstrapModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("density p = {p} is not a probability"));
    }
    let engine = BootstrapEngine::for_box(dim, half_width);
    let n = engine.geom().len();
    if n > 24 {
        return domain(format!("exact enumeration over {n} sites is too large"));
    }
    let region = Region::whole(engine.geom());
    let mut total = 0.0;
    let mut stable = vec![false; n];
    for mask in 0u32..1 << n {
        for (i, s) in stable.iter_mut().enumerate() {
            *s = mask >> i & 1 == 1;
        }
        if engine.spans(&region, &stable, model) {
            let k = mask.count_ones() as i32;
            total += p.powi(k) * (1.0 - p).powi(n as i32 - k);
        }
    }
    Ok(total)
}
