//! Liouville first-passage percolation over a lattice field: edge weights,
//! exact shortest paths (free and region-induced), LQG measure and diameter.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{LqlError, Result};
use crate::field::LatticeField;
use crate::grid::{GridSpec, Point, Site};

/// LQG coupling parameters.
///
/// `d_gamma` has no closed form for general `gamma`; it is a configured
/// input. The shipped default preset `gamma = sqrt(8/3)`, `d_gamma = 4` is
/// external knowledge about the pure-gravity point, not derived here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqgParams {
    gamma: f64,
    d_gamma: f64,
    xi: f64,
    q: f64,
}

impl LqgParams {
    pub fn new(gamma: f64, d_gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 2.0) {
            return Err(LqlError::Config(format!(
                "gamma must lie in (0, 2), got {gamma}"
            )));
        }
        if !(d_gamma > 2.0) {
            return Err(LqlError::Config(format!(
                "d_gamma must exceed 2, got {d_gamma}"
            )));
        }
        let q = gamma / 2.0 + 2.0 / gamma;
        if !(q > 2.0) {
            return Err(LqlError::Config(format!("Q = {q} must exceed 2")));
        }
        Ok(LqgParams {
            gamma,
            d_gamma,
            xi: gamma / d_gamma,
            q,
        })
    }

    /// The pure-gravity preset.
    pub fn sqrt_8_3() -> Self {
        LqgParams::new((8.0f64 / 3.0).sqrt(), 4.0).unwrap()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn d_gamma(&self) -> f64 {
        self.d_gamma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Rebuilds parameters from stored fields, checking internal consistency
    /// to 1e-14.
    pub fn from_parts(gamma: f64, d_gamma: f64, xi: f64, q: f64) -> Result<Self> {
        let p = LqgParams::new(gamma, d_gamma)?;
        if (p.xi - xi).abs() > 1e-14 || (p.q - q).abs() > 1e-14 {
            return Err(LqlError::Config(
                "stored xi/Q inconsistent with gamma and d_gamma".into(),
            ));
        }
        Ok(p)
    }
}

impl<'de> Deserialize<'de> for LqgParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            gamma: f64,
            d_gamma: f64,
            xi: f64,
            q: f64,
        }
        let raw = Raw::deserialize(d)?;
        LqgParams::from_parts(raw.gamma, raw.d_gamma, raw.xi, raw.q)
            .map_err(serde::de::Error::custom)
    }
}

/// A subset of grid sites, used for induced metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    n_sites: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn full(grid: GridSpec) -> Self {
        RegionMask {
            n_sites: grid.n_sites(),
            mask: vec![true; grid.len()],
        }
    }

    pub fn from_predicate(grid: GridSpec, pred: impl Fn(Site, Point) -> bool) -> Self {
        let mask = grid.sites().map(|s| pred(s, grid.point(s))).collect();
        RegionMask {
            n_sites: grid.n_sites(),
            mask,
        }
    }

    /// Open disk `{|z - center| < radius}`.
    pub fn disk(grid: GridSpec, center: Point, radius: f64) -> Self {
        Self::from_predicate(grid, |_, p| p.dist(center) < radius)
    }

    /// Open annulus `{r_in < |z - center| < r_out}`.
    pub fn annulus(grid: GridSpec, center: Point, r_in: f64, r_out: f64) -> Self {
        Self::from_predicate(grid, |_, p| {
            let d = p.dist(center);
            d > r_in && d < r_out
        })
    }

    /// A copy of the region with the given sites removed.
    pub fn without(&self, grid: GridSpec, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut out = self.clone();
        for s in sites {
            out.mask[grid.flat(s)] = false;
        }
        out
    }

    pub fn contains(&self, grid: GridSpec, site: Site) -> bool {
        self.mask[grid.flat(site)]
    }

    pub fn sites<'a>(&'a self, grid: GridSpec) -> impl Iterator<Item = Site> + 'a {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| grid.site(i))
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn check_len(&self, grid: GridSpec) -> Result<()> {
        if self.n_sites != grid.n_sites() {
            return Err(LqlError::Domain("region built for a different grid".into()));
        }
        Ok(())
    }
}

/// A lattice path with per-step cumulative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticePath {
    sites: Vec<Site>,
    cumulative: Vec<f64>,
}

impl LatticePath {
    fn new(sites: Vec<Site>, cumulative: Vec<f64>) -> Self {
        debug_assert_eq!(sites.len(), cumulative.len());
        debug_assert!(cumulative.windows(2).all(|w| w[1] >= w[0]));
        LatticePath { sites, cumulative }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Cumulative chemical length at each vertex; starts at 0.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn start(&self) -> Site {
        self.sites[0]
    }

    pub fn end(&self) -> Site {
        *self.sites.last().unwrap()
    }

    /// Index of the vertex whose cumulative length is nearest to `length`.
    pub fn vertex_nearest_length(&self, length: f64) -> usize {
        let idx = self
            .cumulative
            .partition_point(|&c| c < length)
            .min(self.cumulative.len() - 1);
        if idx > 0
            && (self.cumulative[idx - 1] - length).abs() <= (self.cumulative[idx] - length).abs()
        {
            idx - 1
        } else {
            idx
        }
    }

    /// The vertex nearest by length together with its snapping error.
    pub fn site_at_length(&self, length: f64) -> (Site, f64) {
        let idx = self.vertex_nearest_length(length);
        (self.sites[idx], (self.cumulative[idx] - length).abs())
    }

    /// Concatenates `self` with `other`, which must start at `self.end()`.
    pub fn join(&self, other: &LatticePath) -> Result<LatticePath> {
        if other.start() != self.end() {
            return Err(LqlError::Internal(format!(
                "cannot join paths: {} != {}",
                other.start(),
                self.end()
            )));
        }
        let base = self.total_length();
        let mut sites = self.sites.clone();
        let mut cumulative = self.cumulative.clone();
        sites.extend_from_slice(&other.sites[1..]);
        cumulative.extend(other.cumulative[1..].iter().map(|c| base + c));
        Ok(LatticePath::new(sites, cumulative))
    }
}

/// Single-source shortest path tree on the weighted lattice.
pub struct SearchTree {
    grid: GridSpec,
    src: Site,
    dist: Vec<f64>,
    parent: Vec<u32>,
    settled: Vec<bool>,
}

impl SearchTree {
    pub fn source(&self) -> Site {
        self.src
    }

    /// Distance to `site`; None when the site was not settled (unreachable
    /// inside the search region, or beyond an early-terminated search).
    pub fn distance(&self, site: Site) -> Option<f64> {
        let flat = self.grid.flat(site);
        self.settled[flat].then_some(self.dist[flat])
    }

    fn flat_chain(&self, dst: usize) -> Option<Vec<usize>> {
        if !self.settled[dst] {
            return None;
        }
        let mut chain = vec![dst];
        let mut cur = dst;
        while self.parent[cur] != NO_PARENT {
            cur = self.parent[cur] as usize;
            chain.push(cur);
        }
        chain.reverse();
        Some(chain)
    }
}

const NO_PARENT: u32 = u32::MAX;

/// The LFPP metric: per-site weight factors over a field.
///
/// Edge weights are `w(u, v) = (spacing/2) (e^{xi h(u)} + e^{xi h(v)})`,
/// strictly positive and symmetric. The struct is immutable after build;
/// queries are independent and hold no shared scratch state.
pub struct MetricField {
    field: LatticeField,
    params: LqgParams,
    vertex_factor: Vec<f64>,
}

const EXP_GUARD: f64 = 700.0;

/// Builds the LFPP weights over a field.
pub fn build_metric(field: LatticeField, params: LqgParams) -> Result<MetricField> {
    let grid = field.grid();
    let half_spacing = grid.spacing() / 2.0;
    let mut vertex_factor = Vec::with_capacity(grid.len());
    for s in grid.sites() {
        let arg = params.xi() * field.value(s);
        if arg.abs() > EXP_GUARD {
            return Err(LqlError::Numerical(format!(
                "exponent overflow at site {s}: |xi * h| = {} > {EXP_GUARD}",
                arg.abs()
            )));
        }
        vertex_factor.push(half_spacing * arg.exp());
    }
    Ok(MetricField {
        field,
        params,
        vertex_factor,
    })
}

impl MetricField {
    pub fn field(&self) -> &LatticeField {
        &self.field
    }

    pub fn grid(&self) -> GridSpec {
        self.field.grid()
    }

    pub fn params(&self) -> LqgParams {
        self.params
    }

    pub fn edge_weight(&self, u: Site, v: Site) -> f64 {
        let grid = self.grid();
        debug_assert_eq!(
            u.ix.abs_diff(v.ix) + u.iy.abs_diff(v.iy),
            1,
            "{u} and {v} are not lattice neighbors"
        );
        self.vertex_factor[grid.flat(u)] + self.vertex_factor[grid.flat(v)]
    }

    /// Dijkstra from `src`, restricted to `region` when given. Parent choices
    /// on exact distance ties keep the lexicographically smallest site
    /// sequence, so extracted paths are canonical.
    pub fn single_source(&self, src: Site, region: Option<&RegionMask>) -> Result<SearchTree> {
        self.search(src, region, None)
    }

    /// Dijkstra from `src` that stops once every target is settled. Only
    /// settled sites carry valid distances and paths.
    pub fn single_source_until(
        &self,
        src: Site,
        region: Option<&RegionMask>,
        targets: &[Site],
    ) -> Result<SearchTree> {
        self.search(src, region, Some(targets))
    }

    fn search(
        &self,
        src: Site,
        region: Option<&RegionMask>,
        targets: Option<&[Site]>,
    ) -> Result<SearchTree> {
        let grid = self.grid();
        if let Some(r) = region {
            r.check_len(grid)?;
            if !r.contains(grid, src) {
                return Err(LqlError::Domain(format!("source {src} outside region")));
            }
        }
        let n = grid.n_sites();
        let len = grid.len();
        let mut dist = vec![f64::INFINITY; len];
        let mut parent = vec![NO_PARENT; len];
        let mut settled = vec![false; len];
        let mut pending: Vec<usize> = targets
            .map(|ts| ts.iter().map(|&t| grid.flat(t)).collect())
            .unwrap_or_default();
        let src_flat = grid.flat(src);
        dist[src_flat] = 0.0;
        let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, usize, usize)>> = BinaryHeap::new();
        heap.push(Reverse((OrderedFloat(0.0), src.ix, src.iy)));
        let in_region = |flat: usize| region.map_or(true, |r| r.mask[flat]);
        while let Some(Reverse((d, ix, iy))) = heap.pop() {
            let flat = iy * n + ix;
            if settled[flat] || d.0 > dist[flat] {
                continue;
            }
            settled[flat] = true;
            if targets.is_some() {
                pending.retain(|&t| t != flat);
                if pending.is_empty() {
                    break;
                }
            }
            let here = dist[flat];
            let neighbors = [
                (ix > 0).then(|| flat - 1),
                (ix + 1 < n).then(|| flat + 1),
                (iy > 0).then(|| flat - n),
                (iy + 1 < n).then(|| flat + n),
            ];
            for nb in neighbors.into_iter().flatten() {
                if settled[nb] || !in_region(nb) {
                    continue;
                }
                let nd = here + self.vertex_factor[flat] + self.vertex_factor[nb];
                if nd < dist[nb] {
                    dist[nb] = nd;
                    parent[nb] = flat as u32;
                    heap.push(Reverse((OrderedFloat(nd), nb % n, nb / n)));
                } else if nd == dist[nb] && parent[nb] != NO_PARENT {
                    // Exact tie: keep the lexicographically smaller path.
                    if chain_lex_less(&parent, n, flat, parent[nb] as usize) {
                        parent[nb] = flat as u32;
                    }
                }
            }
        }
        Ok(SearchTree {
            grid,
            src,
            dist,
            parent,
            settled,
        })
    }

    /// Extracts the canonical shortest path from a search tree.
    pub fn path_from_tree(&self, tree: &SearchTree, dst: Site) -> Option<(f64, LatticePath)> {
        let grid = self.grid();
        let chain = tree.flat_chain(grid.flat(dst))?;
        let mut cumulative = Vec::with_capacity(chain.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in chain.windows(2) {
            acc += self.vertex_factor[w[0]] + self.vertex_factor[w[1]];
            cumulative.push(acc);
        }
        let sites = chain.into_iter().map(|f| grid.site(f)).collect();
        Some((
            tree.dist[grid.flat(dst)],
            LatticePath::new(sites, cumulative),
        ))
    }

    /// Exact minimum-weight lattice path between `u` and `v` inside `region`
    /// (whole grid when None), with lexicographic tie-breaking.
    pub fn shortest_path(
        &self,
        u: Site,
        v: Site,
        region: Option<&RegionMask>,
    ) -> Result<(f64, LatticePath)> {
        let grid = self.grid();
        if !grid.contains(u) || !grid.contains(v) {
            return Err(LqlError::Domain(format!("{u} or {v} outside grid")));
        }
        if let Some(r) = region {
            r.check_len(grid)?;
            if !r.contains(grid, u) || !r.contains(grid, v) {
                return Err(LqlError::Domain(format!("{u} or {v} outside region")));
            }
        }
        if u == v {
            return Ok((0.0, LatticePath::new(vec![u], vec![0.0])));
        }
        let tree = self.single_source(u, region)?;
        self.path_from_tree(&tree, v)
            .ok_or_else(|| LqlError::NoPath(u.to_string(), v.to_string()))
    }

    /// Rebuilds a path from a stored site sequence, recomputing cumulative
    /// weights; consecutive sites must be lattice neighbors.
    pub fn path_from_sites(&self, sites: Vec<Site>) -> Result<LatticePath> {
        let grid = self.grid();
        if sites.is_empty() {
            return Err(LqlError::Domain("empty site sequence".into()));
        }
        for s in &sites {
            if !grid.contains(*s) {
                return Err(LqlError::Domain(format!("site {s} outside grid")));
            }
        }
        let mut cumulative = Vec::with_capacity(sites.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for w in sites.windows(2) {
            if w[0].ix.abs_diff(w[1].ix) + w[0].iy.abs_diff(w[1].iy) != 1 {
                return Err(LqlError::Domain(format!(
                    "{} and {} are not lattice neighbors",
                    w[0], w[1]
                )));
            }
            acc += self.edge_weight(w[0], w[1]);
            cumulative.push(acc);
        }
        Ok(LatticePath::new(sites, cumulative))
    }

    /// Induced distance in `region` next to the free distance.
    ///
    /// The induced distance dominates the free one, with equality exactly
    /// when some free geodesic lies inside the region.
    pub fn induced_vs_free(&self, u: Site, v: Site, region: &RegionMask) -> Result<(f64, f64)> {
        let (induced, _) = self.shortest_path(u, v, Some(region))?;
        let (free, _) = self.shortest_path(u, v, None)?;
        Ok((induced, free))
    }

    /// LQG measure of a region: `sum spacing^2 spacing^{gamma^2/2} e^{gamma h}`,
    /// the lattice regularization with the mollification scale set to one
    /// spacing.
    pub fn lqg_measure(&self, region: &RegionMask) -> Result<f64> {
        let grid = self.grid();
        region.check_len(grid)?;
        let gamma = self.params.gamma();
        let spacing = grid.spacing();
        let cell = spacing * spacing * spacing.powf(gamma * gamma / 2.0);
        let mut total = 0.0;
        for s in region.sites(grid) {
            let arg = gamma * self.field.value(s);
            if arg.abs() > EXP_GUARD {
                return Err(LqlError::Numerical(format!(
                    "exponent overflow at site {s}: |gamma * h| = {}",
                    arg.abs()
                )));
            }
            total += cell * arg.exp();
        }
        Ok(total)
    }

    /// Maximum induced distance over site pairs of a connected region.
    pub fn lqg_diameter(&self, region: &RegionMask) -> Result<f64> {
        let grid = self.grid();
        region.check_len(grid)?;
        let sites: Vec<Site> = region.sites(grid).collect();
        if sites.is_empty() {
            return Err(LqlError::Domain("empty region has no diameter".into()));
        }
        let mut best = 0.0f64;
        for &s in &sites {
            let tree = self.single_source(s, Some(region))?;
            for &t in &sites {
                match tree.distance(t) {
                    Some(d) => best = best.max(d),
                    None => {
                        return Err(LqlError::NoPath(s.to_string(), t.to_string()));
                    }
                }
            }
        }
        Ok(best)
    }
}

/// Compares the site sequences of two parent chains (each extended by the
/// common relaxed site, which cancels) in lexicographic site order.
fn chain_lex_less(parent: &[u32], n: usize, a_end: usize, b_end: usize) -> bool {
    let materialize = |end: usize| {
        let mut chain = vec![end];
        let mut cur = end;
        while parent[cur] != NO_PARENT {
            cur = parent[cur] as usize;
            chain.push(cur);
        }
        chain.reverse();
        chain
    };
    let to_site = |flat: usize| (flat % n, flat / n);
    let a = materialize(a_end);
    let b = materialize(b_end);
    let a_sites: Vec<(usize, usize)> = a.into_iter().map(to_site).collect();
    let b_sites: Vec<(usize, usize)> = b.into_iter().map(to_site).collect();
    a_sites < b_sites
}
