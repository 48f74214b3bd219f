//! Coalescence detection across exponentially growing annuli and the renewal
//! decomposition of the geodesic from the origin.
//!
//! At each scale `i` with radius `s_i = k^i`, probe geodesics crossing the
//! annulus `(k^{1/8} s_i, k s_i)` are tested for a common pinch point with a
//! length-clearance condition. Detected points cut the origin geodesic into
//! segments whose rescaled lengths `Y_i`, log-length increments `G_i` and
//! radial Brownian increments `D_i` carry the renewal structure.

use serde::{Deserialize, Serialize};

use crate::error::{LqlError, Result};
use crate::field::circle_average;
use crate::grid::{GridSpec, Point, Site};
use crate::metric::{LatticePath, MetricField, RegionMask};

/// Exponential radius schedule `s_i = k^i` for `i` in `[i_min, i_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSchedule {
    k: f64,
    i_min: i32,
    i_max: i32,
}

impl AnnulusSchedule {
    pub fn new(k: f64, i_min: i32, i_max: i32) -> Result<Self> {
        if !(k > 1.0) || !k.is_finite() {
            return Err(LqlError::Config(format!("k must exceed 1, got {k}")));
        }
        if i_min > i_max {
            return Err(LqlError::Config(format!(
                "empty schedule: i_min {i_min} > i_max {i_max}"
            )));
        }
        Ok(AnnulusSchedule { k, i_min, i_max })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn i_min(&self) -> i32 {
        self.i_min
    }

    pub fn i_max(&self) -> i32 {
        self.i_max
    }

    pub fn radius(&self, i: i32) -> f64 {
        self.k.powi(i)
    }

    pub fn scales(&self) -> impl Iterator<Item = i32> {
        self.i_min..=self.i_max
    }

    pub fn n_scales(&self) -> usize {
        (self.i_max - self.i_min + 1) as usize
    }

    /// Checks that every detection annulus, and the ring at `k s_{i_max}`
    /// needed for the outermost Brownian increment, fits inside the grid.
    pub fn validate_for_grid(&self, grid: GridSpec) -> Result<()> {
        let outer = self.k * self.radius(self.i_max);
        if outer + grid.spacing() / 2.0 > grid.half_extent() {
            return Err(LqlError::Config(format!(
                "outermost annulus radius {outer} exceeds grid half extent {}",
                grid.half_extent()
            )));
        }
        Ok(())
    }

    fn idx(&self, i: i32) -> Result<usize> {
        if i < self.i_min || i > self.i_max {
            return Err(LqlError::Domain(format!(
                "scale {i} outside schedule [{}, {}]",
                self.i_min, self.i_max
            )));
        }
        Ok((i - self.i_min) as usize)
    }
}

/// Outcome of the coalescence test at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceRecord {
    pub scale: i32,
    pub occurred: bool,
    pub point: Option<Site>,
    pub rho: f64,
    pub normalized_clearance: Option<f64>,
}

/// The region site nearest to a target point, searched in a small box around
/// the nominal nearest site.
fn nearest_region_site(grid: GridSpec, region: &RegionMask, target: Point) -> Option<Site> {
    let nominal = grid.nearest_site(target)?;
    let n = grid.n_sites();
    let mut best: Option<(f64, Site)> = None;
    for dy in -3i64..=3 {
        for dx in -3i64..=3 {
            let ix = nominal.ix as i64 + dx;
            let iy = nominal.iy as i64 + dy;
            if ix < 0 || iy < 0 || ix >= n as i64 || iy >= n as i64 {
                continue;
            }
            let s = Site::new(ix as usize, iy as usize);
            if !region.contains(grid, s) {
                continue;
            }
            let d = grid.point(s).dist(target);
            if best.map_or(true, |(bd, bs)| d < bd || (d == bd && s < bs)) {
                best = Some((d, s));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Tests for a coalescence event at scale `i`.
///
/// Probe sites sit at `n_probe` equispaced angles on the rings of radii
/// `k^{1/4} s_i` and `k^{1/2} s_i`. The event requires (a) every probe-pair
/// geodesic to stay strictly inside the annulus `(k^{1/8} s_i, k s_i)`, so
/// the free and annulus-induced geodesics agree, (b) a common site within
/// the band `[k^{1/4} s_i, k^{1/2} s_i]`, lexicographically smallest on
/// ties, and (c) the rescaled clearance
/// `s_i^{-xi Q} e^{-xi Av(h, T_{s_i})} D(point, outer probes) >= rho`.
///
/// Finitely many probes under-detect coalescence: the detector is
/// conservative and false negatives only lower occurrence estimates.
pub fn detect_coalescence(
    m: &MetricField,
    schedule: &AnnulusSchedule,
    i: i32,
    n_probe: usize,
    rho: f64,
) -> Result<CoalescenceRecord> {
    schedule.idx(i)?;
    if n_probe == 0 {
        return Err(LqlError::Config("n_probe must be at least 1".into()));
    }
    if !(rho > 0.0) {
        return Err(LqlError::Config(format!("rho must be positive, got {rho}")));
    }
    let grid = m.grid();
    let k = schedule.k();
    let s = schedule.radius(i);
    let r_inner = k.powf(0.125) * s;
    let r_outer = k * s;
    let r_probe_in = k.powf(0.25) * s;
    let r_probe_out = k.powf(0.5) * s;
    if r_outer + grid.spacing() / 2.0 > grid.half_extent() {
        return Err(LqlError::Domain(format!(
            "annulus ({r_inner}, {r_outer}) at scale {i} leaves the grid"
        )));
    }
    let origin = Point::new(0.0, 0.0);
    let region = RegionMask::annulus(grid, origin, r_inner, r_outer);

    let probes_at = |radius: f64| -> Vec<Site> {
        let mut sites = Vec::new();
        for j in 0..n_probe {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_probe as f64;
            let target = Point::new(radius * theta.cos(), radius * theta.sin());
            if let Some(site) = nearest_region_site(grid, &region, target) {
                if !sites.contains(&site) {
                    sites.push(site);
                }
            }
        }
        sites
    };
    let inner_probes = probes_at(r_probe_in);
    let outer_probes = probes_at(r_probe_out);

    let absent = CoalescenceRecord {
        scale: i,
        occurred: false,
        point: None,
        rho,
        normalized_clearance: None,
    };
    if inner_probes.is_empty() || outer_probes.is_empty() {
        return Ok(absent);
    }

    let strictly_interior = |site: Site| {
        let r = grid.point(site).norm();
        r > r_inner && r < r_outer
    };
    // Geodesics between all probe pairs, induced in the annulus; the first
    // tree also serves the clearance computation.
    let mut paths: Vec<LatticePath> = Vec::with_capacity(inner_probes.len() * outer_probes.len());
    let mut first_tree = None;
    for &u in &inner_probes {
        let tree = m.single_source(u, Some(&region))?;
        for &v in &outer_probes {
            match m.path_from_tree(&tree, v) {
                Some((_, path)) => paths.push(path),
                None => return Ok(absent),
            }
        }
        if first_tree.is_none() {
            first_tree = Some(tree);
        }
    }
    let first_tree = first_tree.expect("at least one inner probe");
    if paths
        .iter()
        .any(|p| !p.sites().iter().all(|&s| strictly_interior(s)))
    {
        return Ok(absent);
    }

    // Common site, restricted to the probe band.
    let in_band = |site: Site| {
        let r = grid.point(site).norm();
        (r_probe_in..=r_probe_out).contains(&r)
    };
    let point = if paths.len() == 1 {
        // Single geodesic: its band site nearest to half the total length.
        let path = &paths[0];
        let half = path.total_length() / 2.0;
        path.sites()
            .iter()
            .zip(path.cumulative())
            .filter(|(&s, _)| in_band(s))
            .min_by(|(_, &ca), (_, &cb)| (ca - half).abs().partial_cmp(&(cb - half).abs()).unwrap())
            .map(|(&s, _)| s)
    } else {
        let mut common: Vec<Site> = paths[0]
            .sites()
            .iter()
            .copied()
            .filter(|&s| in_band(s))
            .collect();
        common.sort();
        for path in &paths[1..] {
            let mut set: Vec<Site> = path.sites().to_vec();
            set.sort();
            common.retain(|s| set.binary_search(s).is_ok());
            if common.is_empty() {
                break;
            }
        }
        common.first().copied()
    };
    let Some(point) = point else {
        return Ok(absent);
    };

    // Clearance: distance from the common point to the outer probe ring,
    // rescaled by the scale prefactor and the centered exponential. The
    // point lies on every geodesic from the first inner probe, so
    // D(point, v) = D(u0, v) - D(u0, point) exactly.
    let to_point = first_tree
        .distance(point)
        .expect("common point lies on the first tree");
    let mut clearance = f64::INFINITY;
    for &v in &outer_probes {
        match first_tree.distance(v) {
            Some(d) => clearance = clearance.min(d - to_point),
            None => return Ok(absent),
        }
    }
    let params = m.params();
    let avg = circle_average(m.field(), origin, s)?;
    let normalized = s.powf(-params.xi() * params.q()) * (-params.xi() * avg).exp() * clearance;
    if normalized < rho {
        return Ok(absent);
    }
    Ok(CoalescenceRecord {
        scale: i,
        occurred: true,
        point: Some(point),
        rho,
        normalized_clearance: Some(normalized),
    })
}

/// Runs the detector at every scale of the schedule.
pub fn detect_all(
    m: &MetricField,
    schedule: &AnnulusSchedule,
    n_probe: usize,
    rho: f64,
) -> Result<Vec<CoalescenceRecord>> {
    schedule
        .scales()
        .map(|i| detect_coalescence(m, schedule, i, n_probe, rho))
        .collect()
}

const TRACE_TOL: f64 = 1e-9;

/// Traces the geodesic from the origin through every detected coalescence
/// point, in radial order, out to the outermost one.
///
/// The path is assembled from per-segment shortest paths and validated as
/// globally geodesic: the cumulative length at each point must match an
/// independent single-source distance from the origin.
pub fn trace_geodesic(m: &MetricField, records: &[CoalescenceRecord]) -> Result<LatticePath> {
    let grid = m.grid();
    let points: Vec<Site> = records
        .iter()
        .filter(|r| r.occurred)
        .map(|r| r.point.expect("occurred record carries a point"))
        .collect();
    if points.is_empty() {
        return Err(LqlError::EmptyRenewal(
            "no coalescence point detected; enlarge the grid or lower rho".into(),
        ));
    }
    let origin = grid.origin();
    let (_, mut path) = m.shortest_path(origin, points[0], None)?;
    for pair in points.windows(2) {
        let (_, seg) = m.shortest_path(pair[0], pair[1], None)?;
        path = path.join(&seg)?;
    }
    // Independent recomputation of every prefix length.
    let tree = m.single_source(origin, None)?;
    for &p in &points {
        let vertex = path
            .sites()
            .iter()
            .position(|&s| s == p)
            .ok_or_else(|| LqlError::Internal(format!("point {p} missing from traced path")))?;
        let along = path.cumulative()[vertex];
        let direct = tree
            .distance(p)
            .ok_or_else(|| LqlError::NoPath(origin.to_string(), p.to_string()))?;
        if (along - direct).abs() > TRACE_TOL * direct.max(1.0) {
            return Err(LqlError::Internal(format!(
                "concatenated length {along} at {p} differs from direct distance {direct}"
            )));
        }
    }
    Ok(path)
}

/// Per-scale renewal data extracted from a traced geodesic.
#[derive(Debug, Clone)]
pub struct SegmentDecomposition {
    schedule: AnnulusSchedule,
    records: Vec<CoalescenceRecord>,
    geodesic: LatticePath,
    points: Vec<Site>,
    point_scales: Vec<i32>,
    point_vertices: Vec<usize>,
    lengths: Vec<f64>,
    /// Circle averages `B_i = Av(h, T_{s_i})` for `i_min ..= i_max + 1`.
    circle_avgs: Vec<f64>,
    /// `D_i = xi (B_i - B_{i+1}) - xi Q log k` for `i_min ..= i_max`.
    d_incr: Vec<f64>,
    /// Rescaled segment lengths; None at the outermost detected scale whose
    /// outgoing segment is unobserved, zero off detected scales.
    y: Vec<Option<f64>>,
    /// Log-length increments, same conventions as `y`.
    g: Vec<Option<f64>>,
    /// Rescaled origin-to-first-point length, standing in for the truncated
    /// infinite past, attributed to the innermost detected scale.
    y_pre: f64,
}

/// Builds the segment decomposition from detection records and the traced
/// geodesic.
pub fn decompose_segments(
    m: &MetricField,
    schedule: &AnnulusSchedule,
    records: &[CoalescenceRecord],
    geodesic: &LatticePath,
) -> Result<SegmentDecomposition> {
    let grid = m.grid();
    let params = m.params();
    if records.len() != schedule.n_scales() {
        return Err(LqlError::Internal(format!(
            "{} records for {} scales",
            records.len(),
            schedule.n_scales()
        )));
    }
    let mut points = Vec::new();
    let mut point_scales = Vec::new();
    for r in records {
        if r.occurred {
            points.push(r.point.expect("occurred record carries a point"));
            point_scales.push(r.scale);
        }
    }
    if points.is_empty() {
        return Err(LqlError::EmptyRenewal("decomposition needs a point".into()));
    }
    let mut point_vertices = Vec::with_capacity(points.len());
    let mut lengths = Vec::with_capacity(points.len());
    for &p in &points {
        let vertex = geodesic
            .sites()
            .iter()
            .position(|&s| s == p)
            .ok_or_else(|| LqlError::Internal(format!("point {p} not on the geodesic")))?;
        point_vertices.push(vertex);
        lengths.push(geodesic.cumulative()[vertex]);
    }
    if lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LqlError::Internal(
            "chemical lengths at coalescence points must increase strictly".into(),
        ));
    }
    // A globally geodesic path with positive weights is simple; this is what
    // makes consecutive segments meet only at their shared endpoint.
    let site_set: std::collections::HashSet<Site> = geodesic.sites().iter().copied().collect();
    if site_set.len() != geodesic.sites().len() {
        return Err(LqlError::Internal("traced geodesic revisits a site".into()));
    }
    // Segment containment in the annulus between its defining radii.
    let k = schedule.k();
    for j in 0..points.len() - 1 {
        let lo = k.powf(0.25) * schedule.radius(point_scales[j]);
        let hi = k.powf(0.5) * schedule.radius(point_scales[j + 1]);
        let slack = grid.spacing() / 2.0;
        for v in point_vertices[j]..=point_vertices[j + 1] {
            let r = grid.point(geodesic.sites()[v]).norm();
            if r < lo - slack || r > hi + slack {
                return Err(LqlError::Internal(format!(
                    "segment {j} leaves its annulus: site radius {r} outside [{lo}, {hi}]"
                )));
            }
        }
    }

    let origin = Point::new(0.0, 0.0);
    let mut circle_avgs = Vec::with_capacity(schedule.n_scales() + 1);
    for i in schedule.i_min()..=schedule.i_max() + 1 {
        circle_avgs.push(circle_average(m.field(), origin, schedule.radius(i))?);
    }
    let xi = params.xi();
    let xiq = params.xi() * params.q();
    let log_k = k.ln();
    let d_incr: Vec<f64> = (0..schedule.n_scales())
        .map(|idx| xi * (circle_avgs[idx] - circle_avgs[idx + 1]) - xiq * log_k)
        .collect();

    let mut y = vec![Some(0.0); schedule.n_scales()];
    let mut g = vec![Some(0.0); schedule.n_scales()];
    for (j, &scale) in point_scales.iter().enumerate() {
        let idx = schedule.idx(scale)?;
        if j + 1 < points.len() {
            let seg_len = lengths[j + 1] - lengths[j];
            let s = schedule.radius(scale);
            let b = circle_avgs[idx];
            y[idx] = Some(s.powf(-xiq) * (-xi * b).exp() * seg_len);
            g[idx] = Some(lengths[j + 1].ln() - lengths[j].ln());
        } else {
            // The outgoing segment of the outermost point is unobserved.
            y[idx] = None;
            g[idx] = None;
        }
    }
    let first_scale = point_scales[0];
    let first_idx = schedule.idx(first_scale)?;
    let s_first = schedule.radius(first_scale);
    let y_pre = s_first.powf(-xiq) * (-xi * circle_avgs[first_idx]).exp() * lengths[0];

    Ok(SegmentDecomposition {
        schedule: *schedule,
        records: records.to_vec(),
        geodesic: geodesic.clone(),
        points,
        point_scales,
        point_vertices,
        lengths,
        circle_avgs,
        d_incr,
        y,
        g,
        y_pre,
    })
}

impl SegmentDecomposition {
    pub fn schedule(&self) -> &AnnulusSchedule {
        &self.schedule
    }

    pub fn records(&self) -> &[CoalescenceRecord] {
        &self.records
    }

    pub fn geodesic(&self) -> &LatticePath {
        &self.geodesic
    }

    pub fn points(&self) -> &[Site] {
        &self.points
    }

    pub fn point_scales(&self) -> &[i32] {
        &self.point_scales
    }

    /// Vertex index of each coalescence point on the traced geodesic.
    pub fn point_vertices(&self) -> &[usize] {
        &self.point_vertices
    }

    /// Chemical lengths `L_j` from the origin to each coalescence point.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn y_pre(&self) -> f64 {
        self.y_pre
    }

    /// Index of the last coalescence point at scale <= i (the eta map).
    pub fn eta(&self, i: i32) -> Option<usize> {
        self.point_scales.iter().rposition(|&sc| sc <= i)
    }

    /// Scale of the j-th coalescence point (the inverse eta map).
    pub fn eta_inv(&self, j: usize) -> Option<i32> {
        self.point_scales.get(j).copied()
    }

    /// First detected scale >= i (the iota map).
    pub fn iota(&self, i: i32) -> Option<i32> {
        self.point_scales.iter().copied().find(|&sc| sc >= i)
    }

    /// Rescaled segment length at a scale; zero off detected scales, None at
    /// the outermost detected scale.
    pub fn y_at(&self, i: i32) -> Result<Option<f64>> {
        Ok(self.y[self.schedule.idx(i)?])
    }

    /// Log-length increment at a scale.
    pub fn g_at(&self, i: i32) -> Result<Option<f64>> {
        Ok(self.g[self.schedule.idx(i)?])
    }

    /// Brownian increment with drift between scales i and i+1.
    pub fn d_at(&self, i: i32) -> Result<f64> {
        Ok(self.d_incr[self.schedule.idx(i)?])
    }

    /// Circle average at radius `s_i` (also defined at `i_max + 1`).
    pub fn circle_avg_at(&self, i: i32) -> Result<f64> {
        if i == self.schedule.i_max() + 1 {
            return Ok(*self.circle_avgs.last().unwrap());
        }
        Ok(self.circle_avgs[self.schedule.idx(i)?])
    }

    /// Scales whose outgoing segment is observed (all but the outermost
    /// detected scale).
    pub fn complete_scales(&self) -> impl Iterator<Item = i32> + '_ {
        self.schedule
            .scales()
            .filter(|&i| self.g[(i - self.schedule.i_min()) as usize].is_some())
    }

    /// Detected scales with observed segments, yielding (scale, Y, G).
    pub fn detected_complete(&self) -> impl Iterator<Item = (i32, f64, f64)> + '_ {
        self.point_scales.iter().copied().filter_map(move |i| {
            let idx = (i - self.schedule.i_min()) as usize;
            match (self.y[idx], self.g[idx]) {
                (Some(y), Some(g)) if y > 0.0 => Some((i, y, g)),
                _ => None,
            }
        })
    }

    /// Exponential transport factor `e^{sum_{k=j}^{i-1} D_k}`.
    fn transport(&self, j: i32, i: i32) -> f64 {
        let lo = (j - self.schedule.i_min()) as usize;
        let hi = (i - self.schedule.i_min()) as usize;
        let sum: f64 = self.d_incr[lo..hi].iter().sum();
        sum.exp()
    }

    /// Transported past mass for target scale `i`, restricted to source
    /// scales in `[lo, hi]`. The origin term is attributed to the innermost
    /// detected scale; a full-past window (`hi == i - 1`) also picks it up
    /// when `i` is itself the innermost detected scale, where the origin
    /// segment is the only available past.
    fn transported_past(&self, i: i32, lo: i32, hi: i32) -> f64 {
        let first = self.point_scales[0];
        let mut sum = 0.0;
        if i >= first {
            let pre_in_window = lo <= first && first <= hi;
            let degenerate_full = i == first && hi == i - 1 && lo <= first;
            if pre_in_window || degenerate_full {
                sum += self.y_pre * self.transport(first, i);
            }
        }
        for &scale in &self.point_scales {
            if scale < i && scale >= lo && scale <= hi {
                if let Some(y) = self.y[(scale - self.schedule.i_min()) as usize] {
                    sum += y * self.transport(scale, i);
                }
            }
        }
        sum
    }

    /// Log-length increment recomputed from rescaled segment lengths and
    /// Brownian increments: `log(1 + Y_i / sum_{j<i} Y_j e^{sum_k D_k})`,
    /// with the past truncated at the innermost detected scale and the origin
    /// segment carried as a past term there. This makes the identity with
    /// `g_at` exact rather than approximate.
    pub fn formula_g(&self, i: i32) -> Result<Option<f64>> {
        let Some(y_i) = self.y_at(i)? else {
            return Ok(None);
        };
        if y_i == 0.0 {
            return Ok(Some(0.0));
        }
        let past = self.transported_past(i, self.schedule.i_min(), i - 1);
        if past <= 0.0 {
            return Err(LqlError::Internal(format!(
                "no past length available at scale {i}"
            )));
        }
        Ok(Some((1.0 + y_i / past).ln()))
    }

    /// Finitary log-length increment using only the `m + 1` scales before
    /// `i`: zero when no past mass falls in the window, else the truncated
    /// formula.
    pub fn finitary_g(&self, m: usize, i: i32) -> Result<f64> {
        let Some(y_i) = self.y_at(i)? else {
            return Err(LqlError::Domain(format!(
                "scale {i} has no observed outgoing segment"
            )));
        };
        if y_i == 0.0 {
            return Ok(0.0);
        }
        let window = self.transported_past(i, i - 1 - m as i32, i - 1);
        if window <= 0.0 {
            return Ok(0.0);
        }
        Ok((1.0 + y_i / window).ln())
    }

    /// Ratio of the past mass older than `m` scales to the full past mass at
    /// scale `n`; lies in `[0, 1]` and is nonincreasing in `m`.
    pub fn alpha_ratio(&self, m: usize, n: i32) -> Result<f64> {
        self.schedule.idx(n)?;
        let denom = self.transported_past(n, self.schedule.i_min(), n - 1);
        if denom <= 0.0 {
            return Err(LqlError::UndefinedRatio(format!(
                "no positive past length before scale {n}"
            )));
        }
        let cutoff = n - 1 - m as i32;
        let numer = if cutoff < self.schedule.i_min() {
            0.0
        } else {
            self.transported_past(n, self.schedule.i_min(), cutoff)
        };
        Ok((numer / denom).clamp(0.0, 1.0))
    }

    /// Largest detected scale whose point sits at log chemical length <= t;
    /// binary search over the point lengths.
    pub fn scale_at_log_length(&self, t: f64) -> Option<i32> {
        let target = t.exp();
        let idx = self.lengths.partition_point(|&l| l <= target);
        if idx == 0 {
            None
        } else {
            Some(self.point_scales[idx - 1])
        }
    }

    /// Sum of the observed log-length increments; telescopes to
    /// `log L_last - log L_first`.
    pub fn total_g(&self) -> f64 {
        self.g.iter().flatten().sum()
    }
}
