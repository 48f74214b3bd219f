use serde::{Deserialize, Serialize};

use crate::error::{LqlError, Result};

/// A lattice site, addressed by its integer grid indices.
///
/// The derived ordering (by `ix`, then `iy`) is the canonical site order used
/// for all lexicographic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub ix: usize,
    pub iy: usize,
}

impl Site {
    pub fn new(ix: usize, iy: usize) -> Self {
        Site { ix, iy }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.ix, self.iy)
    }
}

/// A point of the complex plane, kept as a real pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Geometry of a centered square lattice covering a patch of the plane.
///
/// The grid has `n_sites` sites per side (odd, so the origin is a site) at
/// `spacing` plane units apart. Site `(ix, iy)` sits at
/// `((ix - c) * spacing, (iy - c) * spacing)` with `c = (n_sites - 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_sites: usize,
    spacing: f64,
}

impl GridSpec {
    /// Validates the grid invariants: odd side, positive spacing, and the
    /// unit circle resolved by at least 8 sites within `spacing / 2`.
    pub fn new(n_sites: usize, spacing: f64) -> Result<Self> {
        if n_sites % 2 == 0 || n_sites == 0 {
            return Err(LqlError::Config(format!(
                "n_sites must be odd and positive, got {n_sites}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(LqlError::Config(format!(
                "spacing must be a positive real, got {spacing}"
            )));
        }
        let grid = GridSpec { n_sites, spacing };
        let on_unit_ring = grid
            .sites()
            .filter(|&s| (grid.point(s).norm() - 1.0).abs() <= spacing / 2.0)
            .count();
        if on_unit_ring < 8 {
            return Err(LqlError::Config(format!(
                "unit circle under-resolved: {on_unit_ring} sites within spacing/2 of it (need >= 8)"
            )));
        }
        Ok(grid)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Index of the center (origin) site along one axis.
    pub fn origin_index(&self) -> usize {
        (self.n_sites - 1) / 2
    }

    pub fn origin(&self) -> Site {
        let c = self.origin_index();
        Site::new(c, c)
    }

    /// Half-width of the covered square, in plane units.
    pub fn half_extent(&self) -> f64 {
        self.spacing * self.origin_index() as f64
    }

    pub fn len(&self) -> usize {
        self.n_sites * self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, site: Site) -> bool {
        site.ix < self.n_sites && site.iy < self.n_sites
    }

    pub fn flat(&self, site: Site) -> usize {
        debug_assert!(self.contains(site));
        site.iy * self.n_sites + site.ix
    }

    pub fn site(&self, flat: usize) -> Site {
        Site::new(flat % self.n_sites, flat / self.n_sites)
    }

    /// Plane coordinates of a site.
    pub fn point(&self, site: Site) -> Point {
        let c = self.origin_index() as f64;
        Point::new(
            (site.ix as f64 - c) * self.spacing,
            (site.iy as f64 - c) * self.spacing,
        )
    }

    /// The site nearest to a plane point, or None if the point is off-grid.
    pub fn nearest_site(&self, p: Point) -> Option<Site> {
        let c = self.origin_index() as f64;
        let fx = p.x / self.spacing + c;
        let fy = p.y / self.spacing + c;
        let ix = fx.round();
        let iy = fy.round();
        if ix < 0.0 || iy < 0.0 || ix >= self.n_sites as f64 || iy >= self.n_sites as f64 {
            return None;
        }
        Some(Site::new(ix as usize, iy as usize))
    }

    /// Whether a site lies on the outermost ring of the grid.
    pub fn on_boundary(&self, site: Site) -> bool {
        site.ix == 0 || site.iy == 0 || site.ix == self.n_sites - 1 || site.iy == self.n_sites - 1
    }

    /// The four lattice neighbors inside the grid.
    pub fn neighbors(&self, site: Site) -> impl Iterator<Item = Site> + '_ {
        let n = self.n_sites;
        let Site { ix, iy } = site;
        [
            (ix > 0).then(|| Site::new(ix - 1, iy)),
            (ix + 1 < n).then(|| Site::new(ix + 1, iy)),
            (iy > 0).then(|| Site::new(ix, iy - 1)),
            (iy + 1 < n).then(|| Site::new(ix, iy + 1)),
        ]
        .into_iter()
        .flatten()
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        let n = self.n_sites;
        (0..n * n).map(move |f| Site::new(f % n, f / n))
    }

    /// All sites whose distance to `center` lies in `[radius - spacing/2, radius + spacing/2]`.
    ///
    /// Errors if fewer than 4 such sites exist or the ring band pokes out of
    /// the covered square.
    pub fn ring_sites(&self, center: Point, radius: f64) -> Result<Vec<Site>> {
        if !(radius > 0.0) {
            return Err(LqlError::Domain(format!(
                "ring radius must be positive, got {radius}"
            )));
        }
        let outer = radius + self.spacing / 2.0;
        let ext = self.half_extent();
        if center.x.abs() + outer > ext + self.spacing / 2.0
            || center.y.abs() + outer > ext + self.spacing / 2.0
        {
            return Err(LqlError::Domain(format!(
                "ring of radius {radius} at ({}, {}) leaves the grid (half extent {ext})",
                center.x, center.y
            )));
        }
        let mut sites = Vec::new();
        let c = self.origin_index() as f64;
        let lo_x = (((center.x - outer) / self.spacing + c).floor().max(0.0)) as usize;
        let hi_x = (((center.x + outer) / self.spacing + c).ceil()) as usize;
        let lo_y = (((center.y - outer) / self.spacing + c).floor().max(0.0)) as usize;
        let hi_y = (((center.y + outer) / self.spacing + c).ceil()) as usize;
        for iy in lo_y..=hi_y.min(self.n_sites - 1) {
            for ix in lo_x..=hi_x.min(self.n_sites - 1) {
                let s = Site::new(ix, iy);
                if (self.point(s).dist(center) - radius).abs() <= self.spacing / 2.0 {
                    sites.push(s);
                }
            }
        }
        if sites.len() < 4 {
            return Err(LqlError::Domain(format!(
                "ring of radius {radius} holds only {} sites (need >= 4)",
                sites.len()
            )));
        }
        Ok(sites)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_grid() {
        assert!(matches!(GridSpec::new(4, 0.5), Err(LqlError::Config(_))));
    }

    #[test]
    fn rejects_nonpositive_spacing() {
        assert!(GridSpec::new(33, 0.0).is_err());
        assert!(GridSpec::new(33, -1.0).is_err());
    }

    #[test]
    fn rejects_coarse_unit_circle() {
        // A 3x3 grid at unit spacing cannot resolve the unit circle.
        assert!(GridSpec::new(3, 2.0).is_err());
    }

    #[test]
    fn origin_is_a_site_at_zero() {
        let g = GridSpec::new(17, 0.25).unwrap();
        let o = g.point(g.origin());
        assert_eq!(o.x, 0.0);
        assert_eq!(o.y, 0.0);
    }

    #[test]
    fn flat_roundtrip() {
        let g = GridSpec::new(9, 0.3).unwrap();
        for s in g.sites() {
            assert_eq!(g.site(g.flat(s)), s);
        }
    }

    #[test]
    fn ring_respects_band() {
        let g = GridSpec::new(33, 0.25).unwrap();
        let ring = g.ring_sites(Point::new(0.0, 0.0), 1.0).unwrap();
        assert!(ring.len() >= 8);
        for s in &ring {
            assert!((g.point(*s).norm() - 1.0).abs() <= 0.125 + 1e-12);
        }
    }

    #[test]
    fn ring_leaving_grid_errors() {
        let g = GridSpec::new(17, 0.25).unwrap();
        assert!(g.ring_sites(Point::new(0.0, 0.0), 10.0).is_err());
    }
}
