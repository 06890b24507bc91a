//! Finite windows of `Z^d` and slabs `Z^{d-1} x {0..K}`.
//!
//! Sites are addressed by a linear [`SiteIndex`] with axis 0 varying fastest.
//! Neighbor lists are always produced in axis order, minus direction before
//! plus direction, so that every consumer iterates them in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

pub type SiteIndex = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Free,
    Periodic,
    /// Last axis is the slab height `{0..K}` with free ends; layer 0 is the
    /// layer that gets frozen. Lateral axes wrap when `periodic_lateral`.
    Slab { periodic_lateral: bool },
}

/// Nearest-neighbor (`l1` distance 1) or `l_inf` distance 1 adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    Nn,
    Linf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeGeometry {
    extents: Vec<usize>,
    strides: Vec<usize>,
    boundary: Boundary,
    len: usize,
}

impl LatticeGeometry {
    pub fn new(extents: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if extents.is_empty() {
            return config("lattice dimension must be at least 1");
        }
        if let Some(axis) = extents.iter().position(|&e| e == 0) {
            return config(format!("extent of axis {axis} must be positive"));
        }
        if matches!(boundary, Boundary::Slab { .. }) && extents.len() < 2 {
            return config("slab geometry needs dimension at least 2");
        }
        let mut strides = Vec::with_capacity(extents.len());
        let mut len = 1usize;
        for &e in &extents {
            strides.push(len);
            len = len
                .checked_mul(e)
                .filter(|&n| n <= u32::MAX as usize)
                .ok_or_else(|| crate::Error::Config("window too large".into()))?;
        }
        Ok(Self {
            extents,
            strides,
            boundary,
            len,
        })
    }

    /// `base` lateral extents times `{0..=height}`.
    pub fn slab(base: &[usize], height: usize, periodic_lateral: bool) -> Result<Self> {
        if height == 0 {
            return config("slab height K must be at least 1");
        }
        let mut extents = base.to_vec();
        extents.push(height + 1);
        Self::new(extents, Boundary::Slab { periodic_lateral })
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Slab height `K` (the last axis holds `K + 1` layers).
    pub fn slab_height(&self) -> Option<usize> {
        match self.boundary {
            Boundary::Slab { .. } => Some(self.extents[self.dim() - 1] - 1),
            _ => None,
        }
    }

    pub fn wraps(&self, axis: usize) -> bool {
        match self.boundary {
            Boundary::Free => false,
            Boundary::Periodic => true,
            Boundary::Slab { periodic_lateral } => periodic_lateral && axis + 1 < self.dim(),
        }
    }

    pub fn check(&self, site: SiteIndex) -> Result<()> {
        if site < self.len {
            Ok(())
        } else {
            domain(format!("site {site} outside window of {} sites", self.len))
        }
    }

    pub fn coords(&self, site: SiteIndex) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        self.coords_into(site, &mut out);
        out
    }

    pub fn coords_into(&self, mut site: SiteIndex, out: &mut [usize]) {
        for (c, &e) in out.iter_mut().zip(&self.extents) {
            *c = site % e;
            site /= e;
        }
    }

    pub fn index(&self, coords: &[usize]) -> Option<SiteIndex> {
        if coords.len() != self.dim() {
            return None;
        }
        let mut idx = 0;
        for ((&c, &e), &s) in coords.iter().zip(&self.extents).zip(&self.strides) {
            if c >= e {
                return None;
            }
            idx += c * s;
        }
        Some(idx)
    }

    /// Coordinate `c + step` along `axis` under the boundary rule.
    fn shift(&self, axis: usize, c: usize, step: isize) -> Option<usize> {
        let e = self.extents[axis] as isize;
        let n = c as isize + step;
        if (0..e).contains(&n) {
            Some(n as usize)
        } else if self.wraps(axis) {
            Some(n.rem_euclid(e) as usize)
        } else {
            None
        }
    }

    /// The site displaced by one unit along `axis` (`plus` selects direction).
    pub fn step(&self, site: SiteIndex, axis: usize, plus: bool) -> Option<SiteIndex> {
        let e = self.extents[axis];
        let stride = self.strides[axis];
        let c = (site / stride) % e;
        let n = self.shift(axis, c, if plus { 1 } else { -1 })?;
        let out = site - c * stride + n * stride;
        (out != site).then_some(out)
    }

    /// The site at `site + disp` under the boundary rule, if it exists.
    pub fn offset(&self, site: SiteIndex, disp: &[isize]) -> Option<SiteIndex> {
        let mut out = site;
        for (axis, &d) in disp.iter().enumerate() {
            if d == 0 {
                continue;
            }
            let stride = self.strides[axis];
            let c = (out / stride) % self.extents[axis];
            let n = self.shift(axis, c, d)?;
            out = out - c * stride + n * stride;
        }
        Some(out)
    }

    pub fn neighbors(&self, site: SiteIndex) -> Result<Vec<SiteIndex>> {
        self.check(site)?;
        Ok(self.neighbors_of(site))
    }

    pub(crate) fn neighbors_of(&self, site: SiteIndex) -> Vec<SiteIndex> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for axis in 0..self.dim() {
            for plus in [false, true] {
                if let Some(n) = self.step(site, axis, plus) {
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
            }
        }
        out
    }

    pub fn linf_neighbors(&self, site: SiteIndex) -> Result<Vec<SiteIndex>> {
        self.check(site)?;
        Ok(self.linf_neighbors_of(site))
    }

    pub(crate) fn linf_neighbors_of(&self, site: SiteIndex) -> Vec<SiteIndex> {
        let mut out = Vec::new();
        for disp in unit_displacements(self.dim(), Adjacency::Linf) {
            if let Some(n) = self.offset(site, &disp) {
                if n != site && !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Compressed neighbor table for the hot simulation loop.
    pub fn neighbor_table(&self) -> NeighborTable {
        let mut offsets = Vec::with_capacity(self.len + 1);
        let mut targets = Vec::with_capacity(self.len * 2 * self.dim());
        offsets.push(0u32);
        for site in 0..self.len {
            targets.extend(self.neighbors_of(site).into_iter().map(|n| n as u32));
            offsets.push(targets.len() as u32);
        }
        NeighborTable { offsets, targets }
    }

    /// Partition the window into boxes of side `2L + 1`.
    pub fn tile_boxes(&self, half_width: usize) -> Result<Tiling> {
        let side = 2 * half_width + 1;
        for (axis, &e) in self.extents.iter().enumerate() {
            if e % side != 0 {
                return config(format!(
                    "axis {axis} extent {e} is not divisible by box side {side} (L = {half_width})"
                ));
            }
        }
        let grid_extents: Vec<usize> = self.extents.iter().map(|&e| e / side).collect();
        let grid_boundary = match self.boundary {
            Boundary::Periodic => Boundary::Periodic,
            _ => Boundary::Free,
        };
        let grid = LatticeGeometry::new(grid_extents, grid_boundary)?;
        let boxes = (0..grid.len())
            .map(|y| {
                let label = grid.coords(y);
                let anchor = label.iter().map(|&c| c * side).collect();
                LatticeBox {
                    anchor,
                    half_width,
                    label,
                }
            })
            .collect();
        Ok(Tiling {
            grid,
            boxes,
            half_width,
        })
    }
}

/// Displacements of `l1` length one (`Nn`) or of `l_inf` length one (`Linf`),
/// axis 0 varying fastest, minus before plus.
pub fn unit_displacements(dim: usize, adjacency: Adjacency) -> Vec<Vec<isize>> {
    match adjacency {
        Adjacency::Nn => {
            let mut out = Vec::with_capacity(2 * dim);
            for axis in 0..dim {
                for s in [-1, 1] {
                    let mut d = vec![0; dim];
                    d[axis] = s;
                    out.push(d);
                }
            }
            out
        }
        Adjacency::Linf => {
            let total = 3usize.pow(dim as u32);
            let mut out = Vec::with_capacity(total - 1);
            for k in 0..total {
                let mut r = k;
                let d: Vec<isize> = (0..dim)
                    .map(|_| {
                        let v = (r % 3) as isize - 1;
                        r /= 3;
                        v
                    })
                    .collect();
                if d.iter().any(|&v| v != 0) {
                    out.push(d);
                }
            }
            out
        }
    }
}

#[derive(Clone, Debug)]
pub struct NeighborTable {
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl NeighborTable {
    #[inline]
    pub fn of(&self, site: SiteIndex) -> &[u32] {
        &self.targets[self.offsets[site] as usize..self.offsets[site + 1] as usize]
    }

    pub fn degree(&self, site: SiteIndex) -> usize {
        (self.offsets[site + 1] - self.offsets[site]) as usize
    }
}

/// Hypercube `anchor + [0, 2L]^d` inside a window, i.e. `B_L(anchor + L)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LatticeBox {
    pub anchor: Vec<usize>,
    pub half_width: usize,
    /// Renormalized coordinate `y` when the box comes from a tiling.
    pub label: Vec<usize>,
}

impl LatticeBox {
    pub fn new(geom: &LatticeGeometry, anchor: Vec<usize>, half_width: usize) -> Result<Self> {
        let side = 2 * half_width + 1;
        if anchor.len() != geom.dim() {
            return config("box anchor has wrong dimension");
        }
        for (axis, (&a, &e)) in anchor.iter().zip(geom.extents()).enumerate() {
            if a + side > e {
                return config(format!("box leaves the window along axis {axis}"));
            }
        }
        let label = vec![0; anchor.len()];
        Ok(Self {
            anchor,
            half_width,
            label,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn volume(&self) -> usize {
        self.side().pow(self.dim() as u32)
    }

    pub fn center(&self) -> Vec<usize> {
        self.anchor.iter().map(|a| a + self.half_width).collect()
    }

    /// Window index of the box-local coordinate `local`.
    pub fn site_at(&self, geom: &LatticeGeometry, local: &[usize]) -> SiteIndex {
        let c: Vec<usize> = self.anchor.iter().zip(local).map(|(a, l)| a + l).collect();
        geom.index(&c).expect("box lies inside its window")
    }

    /// All box sites, box-local axis 0 fastest.
    pub fn sites(&self, geom: &LatticeGeometry) -> Vec<SiteIndex> {
        let side = self.side();
        let mut local = vec![0usize; self.dim()];
        let mut out = Vec::with_capacity(self.volume());
        for k in 0..self.volume() {
            let mut r = k;
            for l in local.iter_mut() {
                *l = r % side;
                r /= side;
            }
            out.push(self.site_at(geom, &local));
        }
        out
    }

    /// Local coordinates of corner `i`; bit `j` of `i` selects the high end of axis `j`.
    pub fn corner_local(&self, i: usize) -> Vec<usize> {
        let top = self.side() - 1;
        (0..self.dim())
            .map(|j| if i >> j & 1 == 1 { top } else { 0 })
            .collect()
    }

    pub fn corners(&self, geom: &LatticeGeometry) -> Vec<SiteIndex> {
        (0..1usize << self.dim())
            .map(|i| self.site_at(geom, &self.corner_local(i)))
            .collect()
    }

    /// Local-coordinate test for membership in the corner cube `C^i(M)`:
    /// the `M^d` cube holding corner `i` and extending into the box.
    pub fn in_corner_cube(&self, local: &[usize], corner: usize, m: usize) -> bool {
        let side = self.side();
        local.iter().enumerate().all(|(j, &c)| {
            if corner >> j & 1 == 1 {
                c + m >= side
            } else {
                c < m
            }
        })
    }

    /// `B[M]`: the box minus its `2^d` corner cubes of `M^d` sites.
    /// `M = 0` gives the full box; otherwise `M < L` is required.
    pub fn trimming(&self, geom: &LatticeGeometry, m: usize) -> Result<Vec<SiteIndex>> {
        if m > 0 && m >= self.half_width {
            return domain(format!(
                "trimming needs M < L (got M = {m}, L = {})",
                self.half_width
            ));
        }
        let side = self.side();
        let mut local = vec![0usize; self.dim()];
        let mut out = Vec::with_capacity(self.volume());
        for k in 0..self.volume() {
            let mut r = k;
            for l in local.iter_mut() {
                *l = r % side;
                r /= side;
            }
            let cut = m > 0 && (0..1usize << self.dim()).any(|i| self.in_corner_cube(&local, i, m));
            if !cut {
                out.push(self.site_at(geom, &local));
            }
        }
        Ok(out)
    }
}

/// Boxes `C_L(y)` covering a window, indexed by the renormalized lattice `grid`.
#[derive(Clone, Debug)]
pub struct Tiling {
    pub grid: LatticeGeometry,
    pub boxes: Vec<LatticeBox>,
    pub half_width: usize,
}

impl Tiling {
    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Renormalized index of the box holding `site`.
    pub fn box_of(&self, geom: &LatticeGeometry, site: SiteIndex) -> usize {
        let side = self.side();
        let y: Vec<usize> = geom.coords(site).iter().map(|c| c / side).collect();
        self.grid.index(&y).expect("tiling covers its window")
    }
}
