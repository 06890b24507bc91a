//! Frozen-vertex environments and initial spin configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::lattice::{LatticeGeometry, SiteIndex};
use crate::rng::{stream, Stream};

pub type Spin = i8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frozen {
    #[default]
    No,
    Plus,
    Minus,
}

impl Frozen {
    pub fn value(self) -> Option<Spin> {
        match self {
            Frozen::No => None,
            Frozen::Plus => Some(1),
            Frozen::Minus => Some(-1),
        }
    }

    pub fn is_frozen(self) -> bool {
        self != Frozen::No
    }
}

/// One byte per site in environment files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SiteKind {
    UnfrozenMinus = 0,
    UnfrozenPlus = 1,
    FrozenMinus = 2,
    FrozenPlus = 3,
}

impl SiteKind {
    pub fn of(frozen: Frozen, spin: Spin) -> Self {
        match (frozen, spin > 0) {
            (Frozen::Plus, _) => SiteKind::FrozenPlus,
            (Frozen::Minus, _) => SiteKind::FrozenMinus,
            (Frozen::No, true) => SiteKind::UnfrozenPlus,
            (Frozen::No, false) => SiteKind::UnfrozenMinus,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => SiteKind::UnfrozenMinus,
            1 => SiteKind::UnfrozenPlus,
            2 => SiteKind::FrozenMinus,
            3 => SiteKind::FrozenPlus,
            _ => return None,
        })
    }

    pub fn split(self) -> (Frozen, Spin) {
        match self {
            SiteKind::UnfrozenMinus => (Frozen::No, -1),
            SiteKind::UnfrozenPlus => (Frozen::No, 1),
            SiteKind::FrozenMinus => (Frozen::Minus, -1),
            SiteKind::FrozenPlus => (Frozen::Plus, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentMode {
    Disordered,
    EngineeredSlab,
    FlipperGadget,
    RandomFieldPreset,
}

/// Spins given to unfrozen sites at time zero.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSpins {
    AllMinus,
    AllPlus,
    /// i.i.d. `+1` with probability `theta`.
    Bernoulli,
    /// One spin per site; entries at frozen sites are overwritten.
    Given(Vec<Spin>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentParams {
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub theta: f64,
    pub seed: u64,
    pub mode: EnvironmentMode,
    /// Field strength `H` of the random-field preset.
    pub field: Option<f64>,
    pub initial: InitialSpins,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            rho_plus: 0.0,
            rho_minus: 0.0,
            theta: 0.5,
            seed: 0,
            mode: EnvironmentMode::Disordered,
            field: None,
            initial: InitialSpins::Bernoulli,
        }
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        config(format!("{name} = {v} is not a probability"))
    }
}

impl EnvironmentParams {
    pub fn validate(&self, geom: &LatticeGeometry) -> Result<()> {
        check_prob("rho_plus", self.rho_plus)?;
        check_prob("rho_minus", self.rho_minus)?;
        check_prob("theta", self.theta)?;
        if self.rho_plus + self.rho_minus > 1.0 {
            return config("rho_plus + rho_minus exceeds 1");
        }
        if let InitialSpins::Given(s) = &self.initial {
            if s.len() != geom.len() {
                return config(format!(
                    "initial spin file has {} sites, window has {}",
                    s.len(),
                    geom.len()
                ));
            }
            if s.iter().any(|&v| v != 1 && v != -1) {
                return config("initial spins must be +1 or -1");
            }
        }
        if self.mode == EnvironmentMode::RandomFieldPreset {
            let h = self
                .field
                .ok_or_else(|| crate::Error::Config("random-field preset needs field H".into()))?;
            let bound = 2.0 * geom.dim() as f64;
            if !(h > bound) {
                return config(format!("field H = {h} must exceed 2d = {bound}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub geom: LatticeGeometry,
    pub frozen: Vec<Frozen>,
    pub initial_spins: Vec<Spin>,
}

impl Environment {
    /// Build the environment selected by `params.mode`.
    pub fn generate(geom: &LatticeGeometry, params: &EnvironmentParams) -> Result<Self> {
        match params.mode {
            EnvironmentMode::Disordered => sample_disordered(geom, params),
            EnvironmentMode::EngineeredSlab => engineered_slab(geom, params.theta, params.seed),
            EnvironmentMode::FlipperGadget => flipper_gadget(geom),
            EnvironmentMode::RandomFieldPreset => random_field_preset(geom, params),
        }
    }

    /// Assemble from parts; frozen sites are forced to their frozen value.
    pub fn from_parts(geom: LatticeGeometry, frozen: Vec<Frozen>, mut spins: Vec<Spin>) -> Result<Self> {
        if frozen.len() != geom.len() || spins.len() != geom.len() {
            return config("environment arrays do not match the window size");
        }
        for (s, f) in spins.iter_mut().zip(&frozen) {
            if let Some(v) = f.value() {
                *s = v;
            }
        }
        Ok(Self {
            geom,
            frozen,
            initial_spins: spins,
        })
    }

    pub fn frozen_plus(&self) -> Vec<SiteIndex> {
        self.sites_where(Frozen::Plus)
    }

    pub fn frozen_minus(&self) -> Vec<SiteIndex> {
        self.sites_where(Frozen::Minus)
    }

    fn sites_where(&self, kind: Frozen) -> Vec<SiteIndex> {
        self.frozen
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == kind).then_some(i))
            .collect()
    }

    pub fn kinds(&self) -> impl Iterator<Item = SiteKind> + '_ {
        self.frozen
            .iter()
            .zip(&self.initial_spins)
            .map(|(&f, &s)| SiteKind::of(f, s))
    }

    /// Replace the spins of unfrozen sites, keeping the frozen mask.
    pub fn with_initial(&self, spins: &[Spin]) -> Result<Self> {
        Self::from_parts(self.geom.clone(), self.frozen.clone(), spins.to_vec())
    }
}

/// Frozen types from the mask stream: one uniform draw per site.
fn draw_mask(geom: &LatticeGeometry, rho_plus: f64, rho_minus: f64, seed: u64) -> Vec<Frozen> {
    let mut rng = stream(seed, Stream::Mask);
    (0..geom.len())
        .map(|_| {
            let u: f64 = rng.random();
            if u < rho_plus {
                Frozen::Plus
            } else if u < rho_plus + rho_minus {
                Frozen::Minus
            } else {
                Frozen::No
            }
        })
        .collect()
}

/// Initial spins from the spin stream. One draw per site regardless of the
/// mask, so the spins a site receives do not depend on the frozen sites.
fn draw_spins(geom: &LatticeGeometry, policy: &InitialSpins, theta: f64, seed: u64) -> Vec<Spin> {
    match policy {
        InitialSpins::AllMinus => vec![-1; geom.len()],
        InitialSpins::AllPlus => vec![1; geom.len()],
        InitialSpins::Given(s) => s.clone(),
        InitialSpins::Bernoulli => {
            let mut rng = stream(seed, Stream::Spins);
            (0..geom.len())
                .map(|_| if rng.random::<f64>() < theta { 1 } else { -1 })
                .collect()
        }
    }
}

pub fn sample_disordered(geom: &LatticeGeometry, params: &EnvironmentParams) -> Result<Environment> {
    params.validate(geom)?;
    let frozen = draw_mask(geom, params.rho_plus, params.rho_minus, params.seed);
    let spins = draw_spins(geom, &params.initial, params.theta, params.seed);
    Environment::from_parts(geom.clone(), frozen, spins)
}

/// Slab with layer 0 frozen plus and every other layer i.i.d. with bias `theta`.
pub fn engineered_slab(geom: &LatticeGeometry, theta: f64, seed: u64) -> Result<Environment> {
    if geom.slab_height().is_none() {
        return config("engineered slab needs a slab geometry");
    }
    check_prob("theta", theta)?;
    let top_axis = geom.dim() - 1;
    let mut coords = vec![0; geom.dim()];
    let frozen = (0..geom.len())
        .map(|s| {
            geom.coords_into(s, &mut coords);
            if coords[top_axis] == 0 {
                Frozen::Plus
            } else {
                Frozen::No
            }
        })
        .collect();
    let spins = draw_spins(geom, &InitialSpins::Bernoulli, theta, seed);
    Environment::from_parts(geom.clone(), frozen, spins)
}

/// Site at the window center: frozen `+1` on both sides along axis 0,
/// frozen `-1` on both sides along axis 1, everything else unfrozen `-1`.
pub fn flipper_gadget(geom: &LatticeGeometry) -> Result<Environment> {
    if geom.dim() != 2 {
        return config("flipper pattern is defined for d = 2");
    }
    if geom.extents().iter().any(|&e| e < 3) {
        return config("flipper pattern needs a window of at least 3x3");
    }
    let center: Vec<usize> = geom.extents().iter().map(|e| e / 2).collect();
    let v = geom.index(&center).expect("center inside window");
    let mut frozen = vec![Frozen::No; geom.len()];
    for (axis, kind) in [(0, Frozen::Plus), (1, Frozen::Minus)] {
        for plus in [false, true] {
            let n = geom.step(v, axis, plus).expect("window at least 3 wide");
            frozen[n] = kind;
        }
    }
    Environment::from_parts(geom.clone(), frozen, vec![-1; geom.len()])
}

/// Site of the flipper in [`flipper_gadget`].
pub fn gadget_center(geom: &LatticeGeometry) -> SiteIndex {
    let center: Vec<usize> = geom.extents().iter().map(|e| e / 2).collect();
    geom.index(&center).expect("center inside window")
}

/// Random-field energy `-sum s_x s_y - sum h_x s_x` with `h_x` in `{H, -H, 0}`.
/// A site with `|h_x| > 2d` agrees with its field after its first update
/// whatever its neighbors do, so it is treated as frozen from time zero.
pub fn random_field_preset(geom: &LatticeGeometry, params: &EnvironmentParams) -> Result<Environment> {
    let mut p = params.clone();
    p.mode = EnvironmentMode::RandomFieldPreset;
    p.validate(geom)?;
    let h = p.field.expect("validated");
    let bound = 2.0 * geom.dim() as f64;
    let fields: Vec<f64> = draw_mask(geom, p.rho_plus, p.rho_minus, p.seed)
        .into_iter()
        .map(|f| match f {
            Frozen::Plus => h,
            Frozen::Minus => -h,
            Frozen::No => 0.0,
        })
        .collect();
    let frozen = fields
        .iter()
        .map(|&hx| {
            if hx > bound {
                Frozen::Plus
            } else if hx < -bound {
                Frozen::Minus
            } else {
                Frozen::No
            }
        })
        .collect();
    let spins = draw_spins(geom, &p.initial, p.theta, p.seed);
    Environment::from_parts(geom.clone(), frozen, spins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;

    fn square(n: usize) -> LatticeGeometry {
        LatticeGeometry::new(vec![n, n], Boundary::Periodic).unwrap()
    }

    fn params(rho_plus: f64, rho_minus: f64, theta: f64, seed: u64) -> EnvironmentParams {
        EnvironmentParams {
            rho_plus,
            rho_minus,
            theta,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn all_frozen_plus() {
        let env = sample_disordered(&square(10), &params(1.0, 0.0, 0.5, 1)).unwrap();
        assert!(env.frozen.iter().all(|&f| f == Frozen::Plus));
        assert!(env.initial_spins.iter().all(|&s| s == 1));
    }

    #[test]
    fn no_frozen_all_plus() {
        let env = sample_disordered(&square(10), &params(0.0, 0.0, 1.0, 1)).unwrap();
        assert!(env.frozen.iter().all(|&f| f == Frozen::No));
        assert!(env.initial_spins.iter().all(|&s| s == 1));
    }

    #[test]
    fn frozen_plus_fraction_within_three_se() {
        let env = sample_disordered(&square(100), &params(0.3, 0.01, 0.5, 99)).unwrap();
        let n = env.geom.len() as f64;
        let frac = env.frozen_plus().len() as f64 / n;
        let se = (0.3f64 * 0.7 / n).sqrt();
        assert!((frac - 0.3).abs() < 3.0 * se, "{frac}");
    }

    #[test]
    fn invalid_parameters() {
        let g = square(4);
        assert!(sample_disordered(&g, &params(0.7, 0.5, 0.5, 0)).is_err());
        assert!(sample_disordered(&g, &params(-0.1, 0.0, 0.5, 0)).is_err());
        assert!(sample_disordered(&g, &params(0.1, 0.0, 1.5, 0)).is_err());
        let mut p = params(0.1, 0.0, 0.5, 0);
        p.initial = InitialSpins::Given(vec![1; 3]);
        assert!(sample_disordered(&g, &p).is_err());
    }

    #[test]
    fn same_seed_same_environment_and_independent_streams() {
        let g = square(32);
        let a = sample_disordered(&g, &params(0.2, 0.05, 0.5, 5)).unwrap();
        let b = sample_disordered(&g, &params(0.2, 0.05, 0.5, 5)).unwrap();
        assert_eq!(a, b);
        // a different spin policy leaves the mask untouched
        let mut p = params(0.2, 0.05, 0.5, 5);
        p.initial = InitialSpins::AllMinus;
        let c = sample_disordered(&g, &p).unwrap();
        assert_eq!(a.frozen, c.frozen);
        // changing the density leaves unfrozen spins on commonly unfrozen sites untouched
        let d = sample_disordered(&g, &params(0.1, 0.0, 0.5, 5)).unwrap();
        for i in 0..g.len() {
            if !a.frozen[i].is_frozen() && !d.frozen[i].is_frozen() {
                assert_eq!(a.initial_spins[i], d.initial_spins[i]);
            }
        }
    }

    #[test]
    fn site_type_counts_pass_chi_square() {
        // 3 categories, 2 degrees of freedom; 1% critical value 9.2103
        let g = square(128);
        let (rp, rm) = (0.2, 0.1);
        for seed in 0..5 {
            let env = sample_disordered(&g, &params(rp, rm, 0.5, seed)).unwrap();
            let n = g.len() as f64;
            let obs = [
                env.frozen_plus().len() as f64,
                env.frozen_minus().len() as f64,
                env.frozen.iter().filter(|f| !f.is_frozen()).count() as f64,
            ];
            let exp = [rp * n, rm * n, (1.0 - rp - rm) * n];
            let chi2: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
            assert!(chi2 < 9.2103, "seed {seed}: chi2 = {chi2}");
        }
    }

    #[test]
    fn engineered_slab_layers() {
        let g = LatticeGeometry::slab(&[8, 8], 1, true).unwrap();
        let env = engineered_slab(&g, 0.0, 3).unwrap();
        for s in 0..g.len() {
            let c = g.coords(s);
            if c[2] == 0 {
                assert_eq!(env.frozen[s], Frozen::Plus);
                assert_eq!(env.initial_spins[s], 1);
            } else {
                assert_eq!(env.frozen[s], Frozen::No);
                assert_eq!(env.initial_spins[s], -1);
            }
        }
        assert!(env.frozen_minus().is_empty());
        let all = engineered_slab(&g, 1.0, 3).unwrap();
        assert!(all.initial_spins.iter().all(|&s| s == 1));

        let g = LatticeGeometry::slab(&[64, 64], 2, true).unwrap();
        let env = engineered_slab(&g, 0.3, 11).unwrap();
        assert_eq!(env.frozen_plus().len(), 64 * 64);
    }

    #[test]
    fn engineered_slab_rejects_plain_window() {
        assert!(engineered_slab(&square(4), 0.5, 0).is_err());
    }

    #[test]
    fn flipper_has_balanced_frozen_neighbors() {
        let g = square(5);
        let env = flipper_gadget(&g).unwrap();
        let v = gadget_center(&g);
        assert_eq!(env.frozen[v], Frozen::No);
        let sum: i32 = g
            .neighbors(v)
            .unwrap()
            .iter()
            .map(|&n| {
                assert!(env.frozen[n].is_frozen());
                env.initial_spins[n] as i32
            })
            .sum();
        assert_eq!(sum, 0);
        assert_eq!(env.frozen_plus().len(), 2);
        assert_eq!(env.frozen_minus().len(), 2);
        assert!(flipper_gadget(&square(2)).is_err());
        assert!(flipper_gadget(&LatticeGeometry::new(vec![5, 5, 5], Boundary::Free).unwrap()).is_err());
    }

    #[test]
    fn flipper_pattern_frequency_matches_product_formula() {
        // frequency of the pattern (unfrozen center, + along axis 0, - along axis 1)
        // against (1 - rho+ - rho-) rho+^2 rho-^2
        let (rp, rm) = (0.3, 0.3);
        let g = square(100);
        let mut hits = 0usize;
        let mut trials = 0usize;
        for seed in 0..20 {
            let env = sample_disordered(&g, &params(rp, rm, 0.5, seed)).unwrap();
            for v in 0..g.len() {
                trials += 1;
                let ok = env.frozen[v] == Frozen::No
                    && [false, true].iter().all(|&p| env.frozen[g.step(v, 0, p).unwrap()] == Frozen::Plus)
                    && [false, true].iter().all(|&p| env.frozen[g.step(v, 1, p).unwrap()] == Frozen::Minus);
                hits += ok as usize;
            }
        }
        let p = (1.0 - rp - rm) * rp * rp * rm * rm;
        let freq = hits as f64 / trials as f64;
        // overlapping windows are weakly dependent; allow 4 binomial s.e.
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "freq {freq} vs {p}");
    }

    #[test]
    fn random_field_needs_strong_field() {
        let g = square(8);
        let mut p = params(0.1, 0.0, 0.5, 4);
        p.mode = EnvironmentMode::RandomFieldPreset;
        p.field = Some(4.0);
        assert!(random_field_preset(&g, &p).is_err());
        p.field = None;
        assert!(random_field_preset(&g, &p).is_err());
    }

    #[test]
    fn random_field_matches_disordered_seed_for_seed() {
        let g = square(40);
        for seed in 0..5 {
            let base = params(0.1, 0.02, 0.4, seed);
            let mut rf = base.clone();
            rf.mode = EnvironmentMode::RandomFieldPreset;
            rf.field = Some(4.5);
            let a = sample_disordered(&g, &base).unwrap();
            let b = random_field_preset(&g, &rf).unwrap();
            assert_eq!(a, b);
            assert_eq!(Environment::generate(&g, &rf).unwrap(), b);
        }
    }
}
