//! Zero-temperature majority dynamics with frozen sites.
//!
//! Continuous time is simulated by superposing the per-site rate-1 clocks: the
//! next ring anywhere comes after an `Exp(N)` holding time and lands on a
//! uniformly chosen clock site. Tie coins come from their own stream, one coin
//! per event, so two states built from the same seed see the same clock rings
//! and the same coins even when their configurations differ.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Frozen, Spin};
use crate::error::{config, Error, Result};
use crate::lattice::{LatticeGeometry, NeighborTable, SiteIndex};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ContinuousTime,
    SynchronousDiscrete,
}

/// Which sites carry clocks. `All` rings frozen sites too (a ring there does
/// nothing); it keeps clocks shared between runs whose frozen sets differ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSites {
    #[default]
    Unfrozen,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    /// Probability that a tie sets the spin to `+1`.
    pub tie_plus_prob: f64,
    pub scheme: Scheme,
    #[serde(default)]
    pub clocks: ClockSites,
}

impl Default for UpdateRule {
    fn default() -> Self {
        Self {
            tie_plus_prob: 0.5,
            scheme: Scheme::ContinuousTime,
            clocks: ClockSites::Unfrozen,
        }
    }
}

impl UpdateRule {
    pub fn validate(&self) -> Result<()> {
        if self.tie_plus_prob > 0.0 && self.tie_plus_prob <= 1.0 {
            Ok(())
        } else {
            config(format!(
                "tie_plus_prob = {} must lie in (0, 1]",
                self.tie_plus_prob
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub site: SiteIndex,
    pub time: f64,
    pub delta_h: i32,
    pub flipped: bool,
    pub spin: Spin,
}

impl Event {
    pub fn is_tie(&self) -> bool {
        self.delta_h == 0
    }
}

/// Hooks called by [`DynamicsState::run`].
pub trait Observer {
    /// Called after every sign change.
    fn on_flip(&mut self, _state: &DynamicsState, _event: &Event) -> Result<()> {
        Ok(())
    }

    /// Called with the configuration as it stands at snapshot time `time`.
    fn on_snapshot(&mut self, _state: &DynamicsState, _time: f64) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    /// Stop as soon as every spin is `+1`.
    pub stop_at_consensus: bool,
    pub max_events: Option<u64>,
}

impl RunOptions {
    pub fn until(horizon: f64) -> Self {
        Self {
            horizon,
            snapshot_times: Vec::new(),
            stop_at_consensus: false,
            max_events: None,
        }
    }
}

/// Result of a run: final spins plus the per-site flip record.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub geom: LatticeGeometry,
    pub table: Arc<NeighborTable>,
    pub frozen: Arc<[Frozen]>,
    pub spins: Vec<Spin>,
    pub last_flip: Vec<Option<f64>>,
    pub flip_count: Vec<u32>,
    pub events: u64,
    pub time: f64,
    pub horizon: f64,
    pub consensus_time: Option<f64>,
    /// No unfrozen sites were left to update.
    pub terminal: bool,
}

impl Trajectory {
    pub fn minus_count(&self) -> usize {
        self.spins.iter().filter(|&&s| s < 0).count()
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsState {
    geom: LatticeGeometry,
    table: Arc<NeighborTable>,
    frozen: Arc<[Frozen]>,
    spins: Vec<Spin>,
    clock_sites: Vec<u32>,
    rule: UpdateRule,
    time: f64,
    events: u64,
    last_flip: Vec<f64>,
    flip_count: Vec<u32>,
    rings: Vec<u32>,
    minus: usize,
    clock_rng: ChaCha8Rng,
    coin_rng: ChaCha8Rng,
}

impl DynamicsState {
    pub fn new(env: &Environment, rule: UpdateRule, seed: u64) -> Result<Self> {
        Self::with_table(env, Arc::new(env.geom.neighbor_table()), rule, seed)
    }

    /// Reuse a neighbor table built for `env.geom`.
    pub fn with_table(
        env: &Environment,
        table: Arc<NeighborTable>,
        rule: UpdateRule,
        seed: u64,
    ) -> Result<Self> {
        rule.validate()?;
        let n = env.geom.len();
        if env.frozen.len() != n || env.initial_spins.len() != n {
            return config("environment does not match its geometry");
        }
        let mut spins = env.initial_spins.clone();
        for (s, f) in spins.iter_mut().zip(&env.frozen) {
            if let Some(v) = f.value() {
                *s = v;
            }
        }
        let clock_sites = (0..n as u32)
            .filter(|&i| rule.clocks == ClockSites::All || !env.frozen[i as usize].is_frozen())
            .collect();
        let minus = spins.iter().filter(|&&s| s < 0).count();
        Ok(Self {
            geom: env.geom.clone(),
            table,
            frozen: env.frozen.clone().into(),
            spins,
            clock_sites,
            rule,
            time: 0.0,
            events: 0,
            last_flip: vec![f64::NEG_INFINITY; n],
            flip_count: vec![0; n],
            rings: vec![0; n],
            minus,
            clock_rng: stream(seed, Stream::Clock),
            coin_rng: stream(seed, Stream::Coin),
        })
    }

    pub fn geom(&self) -> &LatticeGeometry {
        &self.geom
    }

    pub fn table(&self) -> &Arc<NeighborTable> {
        &self.table
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn frozen(&self) -> &[Frozen] {
        &self.frozen
    }

    pub fn rule(&self) -> &UpdateRule {
        &self.rule
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn flip_count(&self) -> &[u32] {
        &self.flip_count
    }

    /// Clock rings per site so far.
    pub fn rings(&self) -> &[u32] {
        &self.rings
    }

    pub fn last_flip(&self, site: SiteIndex) -> Option<f64> {
        let t = self.last_flip[site];
        t.is_finite().then_some(t)
    }

    pub fn clock_count(&self) -> usize {
        self.clock_sites.len()
    }

    /// Every spin is `+1`. With no frozen minus site left this state is absorbing.
    pub fn is_consensus(&self) -> bool {
        self.minus == 0
    }

    #[inline]
    fn local_field(&self, site: SiteIndex) -> i32 {
        self.table
            .of(site)
            .iter()
            .map(|&n| self.spins[n as usize] as i32)
            .sum()
    }

    /// Energy change `2 s_x sum_y s_y` of flipping `site`.
    pub fn delta_h(&self, site: SiteIndex) -> Result<i32> {
        self.geom.check(site)?;
        Ok(2 * self.spins[site] as i32 * self.local_field(site))
    }

    /// Update `site` by the majority rule; `heads` decides a tie in favor of `+1`.
    /// Returns whether the spin changed sign.
    pub fn apply_update(&mut self, site: SiteIndex, heads: bool) -> bool {
        self.update_at(site, heads, self.time).flipped
    }

    fn update_at(&mut self, site: SiteIndex, heads: bool, time: f64) -> Event {
        let old = self.spins[site];
        let dh = 2 * old as i32 * self.local_field(site);
        let new = if self.frozen[site].is_frozen() || dh > 0 {
            old
        } else if dh < 0 {
            -old
        } else if heads {
            1
        } else {
            -1
        };
        let flipped = new != old;
        if flipped {
            self.set_spin(site, new, time);
        }
        Event {
            site,
            time,
            delta_h: dh,
            flipped,
            spin: new,
        }
    }

    fn set_spin(&mut self, site: SiteIndex, new: Spin, time: f64) {
        debug_assert!(!self.frozen[site].is_frozen());
        self.spins[site] = new;
        if new < 0 {
            self.minus += 1;
        } else {
            self.minus -= 1;
        }
        self.last_flip[site] = time;
        self.flip_count[site] += 1;
    }

    /// Draw the next clock ring: `(time, site, coin)`.
    fn next_ring(&mut self) -> Option<(f64, SiteIndex, bool)> {
        let n = self.clock_sites.len();
        if n == 0 {
            return None;
        }
        let dt = Exp::new(n as f64).expect("positive rate").sample(&mut self.clock_rng);
        let site = self.clock_sites[self.clock_rng.random_range(0..n)] as usize;
        let heads = self.coin_rng.random::<f64>() < self.rule.tie_plus_prob;
        Some((self.time + dt, site, heads))
    }

    fn commit(&mut self, time: f64, site: SiteIndex, heads: bool) -> Event {
        self.time = time;
        self.events += 1;
        self.rings[site] += 1;
        self.update_at(site, heads, time)
    }

    /// One clock ring. `None` when no site carries a clock.
    pub fn step_continuous(&mut self) -> Option<Event> {
        let (t, site, heads) = self.next_ring()?;
        Some(self.commit(t, site, heads))
    }

    /// One synchronous sweep against the current configuration; returns the
    /// sites that changed sign. Every unfrozen site gets a coin, tie or not.
    pub fn step_synchronous(&mut self) -> Vec<SiteIndex> {
        let t = self.time + 1.0;
        let mut changes = Vec::new();
        for i in 0..self.clock_sites.len() {
            let site = self.clock_sites[i] as usize;
            let heads = self.coin_rng.random::<f64>() < self.rule.tie_plus_prob;
            if self.frozen[site].is_frozen() {
                continue;
            }
            let old = self.spins[site];
            let field = self.local_field(site);
            let new = match field.signum() {
                1 => 1,
                -1 => -1,
                _ if heads => 1,
                _ => -1,
            };
            self.rings[site] += 1;
            if new != old {
                changes.push((site, new));
            }
        }
        for &(site, new) in &changes {
            self.set_spin(site, new, t);
        }
        self.time = t;
        self.events += 1;
        changes.into_iter().map(|(s, _)| s).collect()
    }

    /// Advance until `horizon`, consensus (if requested) or a terminal state.
    pub fn run(&mut self, opts: &RunOptions, observers: &mut [&mut dyn Observer]) -> Result<Trajectory> {
        if !(opts.horizon >= 0.0) {
            return config(format!("horizon {} must be nonnegative", opts.horizon));
        }
        let mut snaps: Vec<f64> = opts
            .snapshot_times
            .iter()
            .copied()
            .filter(|&s| s >= self.time && s <= opts.horizon)
            .collect();
        snaps.sort_by(f64::total_cmp);
        snaps.dedup();
        let mut pending = snaps.into_iter().peekable();
        let mut consensus_time = self.is_consensus().then_some(self.time);
        let mut terminal = false;
        let start_events = self.events;

        let wrap = |time: f64, e: Error| Error::Runtime(format!("observer failed at t = {time}: {e}"));

        loop {
            if consensus_time.is_some() && opts.stop_at_consensus {
                break;
            }
            if let Some(max) = opts.max_events {
                if self.events - start_events >= max {
                    break;
                }
            }
            match self.rule.scheme {
                Scheme::ContinuousTime => {
                    let Some((t, site, heads)) = self.next_ring() else {
                        terminal = true;
                        break;
                    };
                    let stop_at = t.min(opts.horizon);
                    while let Some(&s) = pending.peek() {
                        if s < stop_at || (t > opts.horizon && s <= opts.horizon) {
                            for o in observers.iter_mut() {
                                o.on_snapshot(self, s).map_err(|e| wrap(s, e))?;
                            }
                            pending.next();
                        } else {
                            break;
                        }
                    }
                    if t > opts.horizon {
                        self.time = opts.horizon;
                        break;
                    }
                    let ev = self.commit(t, site, heads);
                    if ev.flipped {
                        for o in observers.iter_mut() {
                            o.on_flip(self, &ev).map_err(|e| wrap(t, e))?;
                        }
                        if consensus_time.is_none() && self.is_consensus() {
                            consensus_time = Some(t);
                        }
                    }
                }
                Scheme::SynchronousDiscrete => {
                    while let Some(&s) = pending.peek() {
                        if s <= self.time {
                            for o in observers.iter_mut() {
                                o.on_snapshot(self, s).map_err(|e| wrap(s, e))?;
                            }
                            pending.next();
                        } else {
                            break;
                        }
                    }
                    if self.time + 1.0 > opts.horizon {
                        break;
                    }
                    if self.clock_sites.is_empty() {
                        terminal = true;
                        break;
                    }
                    let changed = self.step_synchronous();
                    let t = self.time;
                    for &site in &changed {
                        let ev = Event {
                            site,
                            time: t,
                            delta_h: 0,
                            flipped: true,
                            spin: self.spins[site],
                        };
                        for o in observers.iter_mut() {
                            o.on_flip(self, &ev).map_err(|e| wrap(t, e))?;
                        }
                    }
                    if consensus_time.is_none() && self.is_consensus() {
                        consensus_time = Some(t);
                    }
                }
            }
        }
        for s in pending {
            if s <= self.time {
                for o in observers.iter_mut() {
                    o.on_snapshot(self, s).map_err(|e| wrap(s, e))?;
                }
            }
        }
        Ok(self.trajectory(opts.horizon, consensus_time, terminal))
    }

    pub fn trajectory(&self, horizon: f64, consensus_time: Option<f64>, terminal: bool) -> Trajectory {
        Trajectory {
            geom: self.geom.clone(),
            table: self.table.clone(),
            frozen: self.frozen.clone(),
            spins: self.spins.clone(),
            last_flip: (0..self.spins.len()).map(|i| self.last_flip(i)).collect(),
            flip_count: self.flip_count.clone(),
            events: self.events,
            time: self.time,
            horizon,
            consensus_time,
            terminal,
        }
    }

    /// Frozen sites still carry their frozen values.
    pub fn frozen_intact(&self) -> bool {
        self.frozen
            .iter()
            .zip(&self.spins)
            .all(|(f, &s)| f.value().is_none_or(|v| v == s))
    }
}

/// Greatest set `S` of `+1` sites in which every unfrozen member has a strict
/// majority of its neighbors inside `S` (frozen-plus members unconditionally).
/// For a site of full degree `2d` this is "at least `d + 1` neighbors in `S`".
/// No member of `S` can ever flip, whatever happens outside `S`.
pub fn plus_core(table: &NeighborTable, spins: &[Spin], frozen: &[Frozen]) -> Vec<bool> {
    let n = spins.len();
    let mut member: Vec<bool> = spins.iter().map(|&s| s > 0).collect();
    let mut inside = vec![0u32; n];
    for (site, slot) in inside.iter_mut().enumerate() {
        if member[site] {
            *slot = table.of(site).iter().filter(|&&y| member[y as usize]).count() as u32;
        }
    }
    let weak = |site: usize, inside: &[u32]| {
        frozen[site] != Frozen::Plus && 2 * inside[site] as usize <= table.degree(site)
    };
    let mut queue: Vec<usize> = (0..n).filter(|&s| member[s] && weak(s, &inside)).collect();
    while let Some(site) = queue.pop() {
        if !member[site] {
            continue;
        }
        member[site] = false;
        for &y in table.of(site) {
            let y = y as usize;
            if member[y] {
                inside[y] -= 1;
                if weak(y, &inside) {
                    queue.push(y);
                }
            }
        }
    }
    member
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::flipper_gadget;
    use crate::lattice::{Boundary, LatticeBox};

    fn env_from(geom: LatticeGeometry, frozen: Vec<Frozen>, spins: Vec<Spin>) -> Environment {
        Environment::from_parts(geom, frozen, spins).unwrap()
    }

    fn plain(geom: &LatticeGeometry, spins: Vec<Spin>) -> Environment {
        env_from(geom.clone(), vec![Frozen::No; geom.len()], spins)
    }

    #[test]
    fn delta_h_values() {
        let g = LatticeGeometry::new(vec![3, 3], Boundary::Free).unwrap();
        let c = g.index(&[1, 1]).unwrap();
        let mut spins = vec![1; 9];
        spins[c] = -1;
        let st = DynamicsState::new(&plain(&g, spins.clone()), UpdateRule::default(), 0).unwrap();
        assert_eq!(st.delta_h(c).unwrap(), -8);

        spins = vec![-1; 9];
        spins[g.index(&[0, 1]).unwrap()] = 1;
        spins[g.index(&[2, 1]).unwrap()] = 1;
        let st = DynamicsState::new(&plain(&g, spins), UpdateRule::default(), 0).unwrap();
        assert_eq!(st.delta_h(c).unwrap(), 0);
        assert!(st.delta_h(9).is_err());

        // d = 3, spin +1 with four plus and two minus neighbors: 2 * 1 * (4 - 2)
        let g3 = LatticeGeometry::new(vec![3, 3, 3], Boundary::Free).unwrap();
        let c3 = g3.index(&[1, 1, 1]).unwrap();
        let mut s3 = vec![1; 27];
        s3[g3.index(&[1, 1, 0]).unwrap()] = -1;
        s3[g3.index(&[1, 1, 2]).unwrap()] = -1;
        let st = DynamicsState::new(&plain(&g3, s3), UpdateRule::default(), 0).unwrap();
        assert_eq!(st.delta_h(c3).unwrap(), 2 * (4 - 2));
    }

    #[test]
    fn apply_update_rules() {
        let g = LatticeGeometry::new(vec![3, 3], Boundary::Free).unwrap();
        let c = g.index(&[1, 1]).unwrap();
        // frozen plus site surrounded by minus never changes
        let mut frozen = vec![Frozen::No; 9];
        frozen[c] = Frozen::Plus;
        let mut st = DynamicsState::new(&env_from(g.clone(), frozen, vec![-1; 9]), UpdateRule::default(), 0).unwrap();
        assert!(!st.apply_update(c, false));
        assert_eq!(st.spins()[c], 1);

        // strict majority flips regardless of the coin
        let mut spins = vec![1; 9];
        spins[c] = -1;
        let mut st = DynamicsState::new(&plain(&g, spins), UpdateRule::default(), 0).unwrap();
        assert!(st.apply_update(c, false));
        assert_eq!(st.spins()[c], 1);
        assert_eq!(st.flip_count()[c], 1);

        // tie: heads sets +1, tails sets -1; no flip recorded without a sign change
        let mut spins = vec![-1; 9];
        spins[g.index(&[0, 1]).unwrap()] = 1;
        spins[g.index(&[2, 1]).unwrap()] = 1;
        let mut st = DynamicsState::new(&plain(&g, spins), UpdateRule::default(), 0).unwrap();
        assert!(!st.apply_update(c, false));
        assert_eq!(st.flip_count()[c], 0);
        assert!(st.apply_update(c, true));
        assert_eq!(st.spins()[c], 1);
        assert!(!st.apply_update(c, true));
        assert!(st.apply_update(c, false));
        assert_eq!(st.spins()[c], -1);
        assert_eq!(st.flip_count()[c], 2);
    }

    #[test]
    fn update_rule_validation() {
        let mut r = UpdateRule::default();
        r.tie_plus_prob = 0.0;
        assert!(r.validate().is_err());
        r.tie_plus_prob = 1.0;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn single_clock_holding_times_are_exp1() {
        // one unfrozen site: inter-event times Exp(1); mean within 3 s.e. of 1
        let g = LatticeGeometry::new(vec![3], Boundary::Free).unwrap();
        let frozen = vec![Frozen::Plus, Frozen::No, Frozen::Plus];
        let mut st = DynamicsState::new(&env_from(g, frozen, vec![1; 3]), UpdateRule::default(), 17).unwrap();
        let n = 10_000;
        let mut prev = 0.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let ev = st.step_continuous().unwrap();
            sum += ev.time - prev;
            prev = ev.time;
        }
        let mean = sum / n as f64;
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn no_clocks_is_terminal() {
        let g = LatticeGeometry::new(vec![2, 2], Boundary::Free).unwrap();
        let env = env_from(g, vec![Frozen::Plus; 4], vec![1; 4]);
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 0).unwrap();
        assert!(st.step_continuous().is_none());
        let tr = st.run(&RunOptions::until(5.0), &mut []).unwrap();
        assert!(tr.terminal);
    }

    #[test]
    fn all_plus_is_absorbing() {
        let g = LatticeGeometry::new(vec![16, 16], Boundary::Periodic).unwrap();
        let mut st = DynamicsState::new(&plain(&g, vec![1; g.len()]), UpdateRule::default(), 3).unwrap();
        for _ in 0..1000 {
            assert!(!st.step_continuous().unwrap().flipped);
        }
        assert!(st.flip_count().iter().all(|&c| c == 0));
    }

    #[test]
    fn flipper_flips_often() {
        let g = LatticeGeometry::new(vec![5, 5], Boundary::Periodic).unwrap();
        let env = flipper_gadget(&g).unwrap();
        let v = crate::environment::gadget_center(&g);
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 1).unwrap();
        let mut ties_at_v = 0;
        let mut rings_at_v = 0;
        let tr = st
            .run(&RunOptions::until(1000.0), &mut [])
            .unwrap();
        assert!(tr.flip_count[v] >= 100, "{}", tr.flip_count[v]);
        // replay the same clocks and check every ring at v is a tie
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 1).unwrap();
        while let Some(ev) = st.step_continuous() {
            if ev.time > 50.0 {
                break;
            }
            if ev.site == v {
                rings_at_v += 1;
                ties_at_v += ev.is_tie() as usize;
            }
        }
        assert!(rings_at_v > 0);
        assert_eq!(ties_at_v, rings_at_v);
    }

    #[test]
    fn synchronous_examples() {
        let g = LatticeGeometry::new(vec![5, 5], Boundary::Free).unwrap();
        let sync = UpdateRule {
            scheme: Scheme::SynchronousDiscrete,
            ..Default::default()
        };
        let mut st = DynamicsState::new(&plain(&g, vec![1; 25]), sync, 0).unwrap();
        assert!(st.step_synchronous().is_empty());
        assert_eq!(st.time(), 1.0);

        let c = g.index(&[2, 2]).unwrap();
        let mut spins = vec![1; 25];
        spins[c] = -1;
        let mut st = DynamicsState::new(&plain(&g, spins), sync, 0).unwrap();
        assert_eq!(st.step_synchronous(), vec![c]);
        assert!(st.spins().iter().all(|&s| s == 1));
    }

    #[test]
    fn synchronous_block_ties_follow_coins() {
        // 2x2 minus block in a plus sea (7x7 free): each block site sees two plus
        // neighbors outside and two minus inside, a tie; outside sites adjacent to
        // the block see 3 plus / 1 minus and stay. So after one sweep each block
        // site is +1 exactly when its coin came up heads.
        let g = LatticeGeometry::new(vec![7, 7], Boundary::Free).unwrap();
        let block: Vec<usize> = [[3, 3], [4, 3], [3, 4], [4, 4]]
            .iter()
            .map(|c| g.index(c).unwrap())
            .collect();
        let mut spins = vec![1; g.len()];
        for &b in &block {
            spins[b] = -1;
        }
        let sync = UpdateRule {
            scheme: Scheme::SynchronousDiscrete,
            ..Default::default()
        };
        let mut flipped_total = 0usize;
        let trials = 2000;
        for seed in 0..trials {
            let mut st = DynamicsState::new(&plain(&g, spins.clone()), sync, seed).unwrap();
            // coins are drawn in site order over all unfrozen sites
            let mut coins = stream(seed, Stream::Coin);
            let heads: Vec<bool> = (0..g.len()).map(|_| coins.random::<f64>() < 0.5).collect();
            let changed = st.step_synchronous();
            for &b in &block {
                assert_eq!(st.spins()[b] == 1, heads[b]);
            }
            assert!(changed.iter().all(|s| block.contains(s)));
            flipped_total += changed.len();
        }
        // each of 4 sites flips with probability 1/2
        let mean = flipped_total as f64 / trials as f64;
        let se = (4.0 * 0.25 / trials as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn horizon_zero_returns_initial() {
        let g = LatticeGeometry::new(vec![8, 8], Boundary::Periodic).unwrap();
        let env = crate::environment::sample_disordered(
            &g,
            &crate::environment::EnvironmentParams {
                rho_plus: 0.1,
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 0).unwrap();
        let tr = st.run(&RunOptions::until(0.0), &mut []).unwrap();
        assert_eq!(tr.spins, env.initial_spins);
        assert_eq!(tr.events, 0);
        assert!(st.run(&RunOptions::until(-1.0), &mut []).is_err());
    }

    struct Snaps(Vec<(f64, f64, u64)>);
    impl Observer for Snaps {
        fn on_snapshot(&mut self, state: &DynamicsState, time: f64) -> Result<()> {
            self.0.push((time, state.time(), state.events()));
            Ok(())
        }
    }

    #[test]
    fn snapshots_fire_in_order_before_later_events() {
        let g = LatticeGeometry::new(vec![8, 8], Boundary::Periodic).unwrap();
        let env = plain(&g, vec![-1; 64]);
        let mut st = DynamicsState::new(&env, UpdateRule::default(), 0).unwrap();
        let mut obs = Snaps(Vec::new());
        let opts = RunOptions {
            horizon: 3.0,
            snapshot_times: vec![2.0, 0.0, 1.0, 3.0],
            stop_at_consensus: false,
            max_events: None,
        };
        st.run(&opts, &mut [&mut obs]).unwrap();
        let times: Vec<f64> = obs.0.iter().map(|s| s.0).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0, 3.0]);
        for &(snap, now, _) in &obs.0 {
            assert!(now <= snap);
        }
    }

    struct Failing;
    impl Observer for Failing {
        fn on_snapshot(&mut self, _: &DynamicsState, _: f64) -> Result<()> {
            Err(Error::Io(std::io::Error::other("disk full")))
        }
    }

    #[test]
    fn observer_errors_carry_run_context() {
        let g = LatticeGeometry::new(vec![4, 4], Boundary::Periodic).unwrap();
        let mut st = DynamicsState::new(&plain(&g, vec![-1; 16]), UpdateRule::default(), 0).unwrap();
        let opts = RunOptions {
            snapshot_times: vec![0.5],
            ..RunOptions::until(1.0)
        };
        let err = st.run(&opts, &mut [&mut Failing]).unwrap_err().to_string();
        assert!(err.contains("t = 0.5") && err.contains("disk full"), "{err}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let g = LatticeGeometry::new(vec![16, 16], Boundary::Periodic).unwrap();
        let env = crate::environment::sample_disordered(
            &g,
            &crate::environment::EnvironmentParams {
                rho_plus: 0.1,
                rho_minus: 0.02,
                seed: 9,
                ..Default::default()
            },
        )
        .unwrap();
        let run = || {
            let mut st = DynamicsState::new(&env, UpdateRule::default(), 4).unwrap();
            st.run(&RunOptions::until(20.0), &mut []).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.spins, b.spins);
        assert_eq!(a.last_flip, b.last_flip);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn plus_core_captured_box() {
        // all-plus box with frozen corners: the whole box is in the core
        for dims in [vec![9, 9], vec![7, 7, 7]] {
            let d = dims.len();
            let g = LatticeGeometry::new(dims.clone(), Boundary::Periodic).unwrap();
            let b = LatticeBox::new(&g, vec![1; d], 2).unwrap();
            let mut frozen = vec![Frozen::No; g.len()];
            for c in b.corners(&g) {
                frozen[c] = Frozen::Plus;
            }
            let mut spins = vec![-1; g.len()];
            for s in b.sites(&g) {
                spins[s] = 1;
            }
            let core = plus_core(&g.neighbor_table(), &spins, &frozen);
            for s in 0..g.len() {
                assert_eq!(core[s], b.sites(&g).contains(&s), "site {s}");
            }
        }
    }

    #[test]
    fn plus_core_isolated_site_empty() {
        let g = LatticeGeometry::new(vec![5, 5], Boundary::Periodic).unwrap();
        let mut spins = vec![-1; 25];
        spins[12] = 1;
        let core = plus_core(&g.neighbor_table(), &spins, &vec![Frozen::No; 25]);
        assert!(core.iter().all(|&c| !c));
    }
}
