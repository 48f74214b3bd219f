//! Rooted, rescaled environments along the geodesic: the empirical field and
//! metric on the unit disk, the size-biased sampler, and the renewal
//! averages `Z_i`.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LqlError, Result};
use crate::field::{circle_average, LatticeField};
use crate::grid::Point;
use crate::metric::{LatticePath, MetricField, RegionMask};
use crate::renewal::SegmentDecomposition;

/// Fixed evaluation mesh on the open unit disk: a regular sub-lattice
/// clipped to `|z| < 1`, shared by rooted fields, rooted metrics and test
/// functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDisk {
    resolution: usize,
    delta: f64,
    probes: Vec<Point>,
}

impl ProbeDisk {
    pub fn new(resolution: usize, delta: f64) -> Result<Self> {
        if resolution < 3 {
            return Err(LqlError::Config(format!(
                "probe resolution must be >= 3, got {resolution}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LqlError::Config(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        let step = 2.0 / (resolution - 1) as f64;
        let mut probes = Vec::new();
        for iy in 0..resolution {
            for ix in 0..resolution {
                let p = Point::new(-1.0 + ix as f64 * step, -1.0 + iy as f64 * step);
                if p.norm() < 1.0 {
                    probes.push(p);
                }
            }
        }
        Ok(ProbeDisk {
            resolution,
            delta,
            probes,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn probes(&self) -> &[Point] {
        &self.probes
    }

    /// Quadrature cell area per probe.
    pub fn cell_weight(&self) -> f64 {
        let step = 2.0 / (self.resolution - 1) as f64;
        step * step
    }
}

/// The field around a root, dilated to the unit disk and recentered by the
/// circle average on the disk boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootedField {
    pub probe_values: Vec<f64>,
    pub root: Point,
    /// Log chemical length at the root (0 when rooted off-geodesic).
    pub t: f64,
    pub resolution: usize,
    pub delta: f64,
}

/// Pairwise rescaled distances over the probe mesh (probes snapped to
/// lattice sites).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootedMetric {
    /// Row-major full matrix over probes.
    pub distances: Vec<f64>,
    pub n_probes: usize,
    pub root: Point,
    pub t: f64,
    pub resolution: usize,
    pub delta: f64,
}

impl RootedMetric {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n_probes + j]
    }
}

/// Evaluates the field in the disk of radius `delta |x|` around `x`, dilated
/// to the unit disk: probe value at `z` is the bilinear interpolation at
/// `x + delta |x| z` minus the circle average at radius `delta |x|`.
pub fn rooted_field(field: &LatticeField, x: Point, disk: &ProbeDisk) -> Result<RootedField> {
    if x.norm() <= 0.0 {
        return Err(LqlError::Domain("root must be away from the origin".into()));
    }
    let radius = disk.delta * x.norm();
    let c_x = circle_average(field, x, radius)?;
    let mut probe_values = Vec::with_capacity(disk.probes.len());
    for z in &disk.probes {
        let p = Point::new(x.x + radius * z.x, x.y + radius * z.y);
        probe_values.push(field.value_at(p)? - c_x);
    }
    Ok(RootedField {
        probe_values,
        root: x,
        t: 0.0,
        resolution: disk.resolution,
        delta: disk.delta,
    })
}

/// The typical environment: the field on the unit disk around the origin,
/// recentered by its unit-circle average.
pub fn unit_rooted_field(field: &LatticeField, disk: &ProbeDisk) -> Result<RootedField> {
    let c = circle_average(field, Point::new(0.0, 0.0), 1.0)?;
    let mut probe_values = Vec::with_capacity(disk.probes.len());
    for z in &disk.probes {
        probe_values.push(field.value_at(*z)? - c);
    }
    Ok(RootedField {
        probe_values,
        root: Point::new(0.0, 0.0),
        t: 0.0,
        resolution: disk.resolution,
        delta: disk.delta,
    })
}

/// Nearest region site to a target, searched over a small box; probes near
/// the disk edge would otherwise snap just outside the open region.
fn snap_into_region(
    grid: crate::grid::GridSpec,
    region: &RegionMask,
    target: Point,
) -> Option<crate::grid::Site> {
    let nominal = grid.nearest_site(target)?;
    let n = grid.n_sites();
    let mut best: Option<(f64, crate::grid::Site)> = None;
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let ix = nominal.ix as i64 + dx;
            let iy = nominal.iy as i64 + dy;
            if ix < 0 || iy < 0 || ix >= n as i64 || iy >= n as i64 {
                continue;
            }
            let s = crate::grid::Site::new(ix as usize, iy as usize);
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

/// Rescaled induced distances between probe points around `x`:
/// `(delta |x|)^{-xi Q} e^{-xi c_x} D(x + delta|x| u, x + delta|x| v; disk)`.
///
/// Probes snap to their nearest lattice sites inside the disk; distances
/// between off-lattice points are not defined in first-passage percolation.
pub fn rooted_metric(m: &MetricField, x: Point, disk: &ProbeDisk) -> Result<RootedMetric> {
    if x.norm() <= 0.0 {
        return Err(LqlError::Domain("root must be away from the origin".into()));
    }
    let grid = m.grid();
    let radius = disk.delta * x.norm();
    let c_x = circle_average(m.field(), x, radius)?;
    let params = m.params();
    let prefactor = radius.powf(-params.xi() * params.q()) * (-params.xi() * c_x).exp();
    let region = RegionMask::disk(grid, x, radius);
    let mut sites = Vec::with_capacity(disk.probes.len());
    for z in &disk.probes {
        let p = Point::new(x.x + radius * z.x, x.y + radius * z.y);
        let site = snap_into_region(grid, &region, p).ok_or_else(|| {
            LqlError::Resolution(format!(
                "probe disk of radius {radius} under-resolved near ({}, {})",
                p.x, p.y
            ))
        })?;
        sites.push(site);
    }
    // One search per distinct snapped site.
    let mut unique = sites.clone();
    unique.sort();
    unique.dedup();
    let n = disk.probes.len();
    let mut distances = vec![0.0; n * n];
    for &src in &unique {
        let tree = m.single_source(src, Some(&region))?;
        for (i, &si) in sites.iter().enumerate() {
            if si != src {
                continue;
            }
            for (j, &sj) in sites.iter().enumerate() {
                let d = tree.distance(sj).ok_or_else(|| {
                    LqlError::NoPath(si.to_string(), sj.to_string())
                })?;
                distances[i * n + j] = prefactor * d;
            }
        }
    }
    Ok(RootedMetric {
        distances,
        n_probes: n,
        root: x,
        t: 0.0,
        resolution: disk.resolution,
        delta: disk.delta,
    })
}

/// The typical-metric counterpart of `unit_rooted_field`: induced distances
/// in the unit disk around the origin, rescaled by the unit-circle average.
pub fn unit_rooted_metric(m: &MetricField, disk: &ProbeDisk) -> Result<RootedMetric> {
    let grid = m.grid();
    let c = circle_average(m.field(), Point::new(0.0, 0.0), 1.0)?;
    let params = m.params();
    let prefactor = (-params.xi() * c).exp();
    let region = RegionMask::disk(grid, Point::new(0.0, 0.0), 1.0);
    let mut sites = Vec::with_capacity(disk.probes.len());
    for z in &disk.probes {
        let site = snap_into_region(grid, &region, *z).ok_or_else(|| {
            LqlError::Resolution("unit disk under-resolved for the probe mesh".into())
        })?;
        sites.push(site);
    }
    let mut unique = sites.clone();
    unique.sort();
    unique.dedup();
    let n = disk.probes.len();
    let mut distances = vec![0.0; n * n];
    for &src in &unique {
        let tree = m.single_source(src, Some(&region))?;
        for (i, &si) in sites.iter().enumerate() {
            if si != src {
                continue;
            }
            for (j, &sj) in sites.iter().enumerate() {
                let d = tree
                    .distance(sj)
                    .ok_or_else(|| LqlError::NoPath(si.to_string(), sj.to_string()))?;
                distances[i * n + j] = prefactor * d;
            }
        }
    }
    Ok(RootedMetric {
        distances,
        n_probes: n,
        root: Point::new(0.0, 0.0),
        t: 0.0,
        resolution: disk.resolution,
        delta: disk.delta,
    })
}

/// A rooted environment drawn at a log-uniform position along the geodesic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalSample {
    pub field: RootedField,
    pub metric: RootedMetric,
    pub t: f64,
    pub frak_t: f64,
    pub seed: u64,
    /// Chemical-length snapping error at the chosen geodesic vertex.
    pub snap_error: f64,
}

/// Draws `frak_t ~ Unif(0, t)`, roots at the geodesic vertex nearest
/// chemical length `e^{frak_t}`, and assembles the rooted field and metric.
pub fn sample_empirical(
    m: &MetricField,
    geodesic: &LatticePath,
    disk: &ProbeDisk,
    t: f64,
    seed: u64,
) -> Result<EmpiricalSample> {
    let total = geodesic.total_length();
    let max_t = total.ln();
    if !(t > 0.0) || t > max_t {
        return Err(LqlError::Domain(format!(
            "t = {t} outside (0, {max_t}], the admissible log-length range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frak_t = rng.random_range(0.0..t);
    build_sample(m, geodesic, disk, t, frak_t, seed)
}

fn build_sample(
    m: &MetricField,
    geodesic: &LatticePath,
    disk: &ProbeDisk,
    t: f64,
    frak_t: f64,
    seed: u64,
) -> Result<EmpiricalSample> {
    let (site, snap_error) = geodesic.site_at_length(frak_t.exp());
    let x = m.grid().point(site);
    let mut field = rooted_field(m.field(), x, disk)?;
    let mut metric = rooted_metric(m, x, disk)?;
    field.t = frak_t;
    metric.t = frak_t;
    Ok(EmpiricalSample {
        field,
        metric,
        t,
        frak_t,
        seed,
        snap_error,
    })
}

/// One replicate available to the size-biased sampler.
pub struct EnsembleMember<'a> {
    pub decomposition: &'a SegmentDecomposition,
    pub metric: &'a MetricField,
}

/// The size-bias weight of a member: the log-length increment of the first
/// coalescence segment past unit radius, zero when that segment is not
/// observed.
pub fn size_bias_weight(d: &SegmentDecomposition) -> f64 {
    d.point_scales()
        .first()
        .and_then(|&scale| d.g_at(scale).ok().flatten())
        .unwrap_or(0.0)
}

/// Selects a member with probability proportional to its first-segment
/// log-length, draws `frak_t` uniformly on that segment's log-length range
/// and roots there. Members with zero weight are never selected.
pub fn size_biased_sample(
    members: &[EnsembleMember<'_>],
    disk: &ProbeDisk,
    seed: u64,
) -> Result<EmpiricalSample> {
    if members.is_empty() {
        return Err(LqlError::EmptyRenewal("empty ensemble".into()));
    }
    let weights: Vec<f64> = members
        .iter()
        .map(|m| size_bias_weight(m.decomposition))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(LqlError::EmptyRenewal(
            "no ensemble member has a positive first-segment weight".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = rng.random_range(0.0..total);
    let mut acc = 0.0;
    let mut chosen = members.len() - 1;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            chosen = idx;
            break;
        }
    }
    let member = &members[chosen];
    let d = member.decomposition;
    let lo = d.lengths()[0].ln();
    let hi = d.lengths()[1].ln();
    let frak_t = rng.random_range(lo..hi);
    build_sample(member.metric, d.geodesic(), disk, hi, frak_t, seed)
}

/// A smooth test function sampled on the probe mesh with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctional {
    pub label: String,
    values: Vec<f64>,
    weights: Vec<f64>,
    resolution: usize,
}

impl TestFunctional {
    /// Smooth bump supported in the disk of `radius` around `center`; the
    /// support must stay strictly inside the unit disk.
    pub fn bump(disk: &ProbeDisk, center: Point, radius: f64, label: &str) -> Result<Self> {
        if center.norm() + radius >= 1.0 {
            return Err(LqlError::SupportViolation(format!(
                "bump at ({}, {}) with radius {radius} touches the disk boundary",
                center.x, center.y
            )));
        }
        Self::from_fn(disk, label, |z| {
            let r2 = z.dist(center) / radius;
            if r2 < 1.0 {
                (1.0 - 1.0 / (1.0 - r2 * r2)).exp()
            } else {
                0.0
            }
        })
    }

    /// Constant one, truncated to zero within `margin` of the disk boundary.
    pub fn constant_truncated(disk: &ProbeDisk, margin: f64, label: &str) -> Result<Self> {
        Self::from_fn(disk, label, |z| if z.norm() < 1.0 - margin { 1.0 } else { 0.0 })
    }

    /// Smooth angular-symmetric bump supported in the annulus
    /// `(r_in, r_out)`; used for probes restricted away from the origin.
    pub fn ring_bump(disk: &ProbeDisk, r_in: f64, r_out: f64, label: &str) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out && r_out <= 1.0) {
            return Err(LqlError::SupportViolation(format!(
                "invalid annulus ({r_in}, {r_out})"
            )));
        }
        let mid = (r_in + r_out) / 2.0;
        let half = (r_out - r_in) / 2.0;
        Self::from_fn(disk, label, |z| {
            let s = (z.norm() - mid) / half;
            if s.abs() < 1.0 {
                (1.0 - 1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        })
    }

    pub fn from_fn(disk: &ProbeDisk, label: &str, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values: Vec<f64> = disk.probes.iter().map(|&z| f(z)).collect();
        let w = disk.cell_weight();
        let weights = vec![w; values.len()];
        Ok(TestFunctional {
            label: label.to_string(),
            values,
            weights,
            resolution: disk.resolution,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when the sampled values vanish at every probe with `|z| <= r`.
    pub fn vanishes_inside(&self, disk: &ProbeDisk, r: f64) -> bool {
        disk.probes
            .iter()
            .zip(&self.values)
            .all(|(z, &v)| z.norm() > r || v == 0.0)
    }
}

/// Mesh quadrature of the pairing `(h, phi)`: the weighted sum of probe
/// values against the test function.
pub fn pair_functional(rf: &RootedField, phi: &TestFunctional) -> Result<f64> {
    if rf.resolution != phi.resolution || rf.probe_values.len() != phi.values.len() {
        return Err(LqlError::MeshMismatch(format!(
            "field mesh {} vs functional mesh {}",
            rf.resolution, phi.resolution
        )));
    }
    Ok(rf
        .probe_values
        .iter()
        .zip(&phi.values)
        .zip(&phi.weights)
        .map(|((v, p), w)| v * p * w)
        .sum())
}

/// Quadrature roots along one renewal segment, equispaced in log-length.
pub struct SegmentQuadrature {
    pub scale: i32,
    pub step: f64,
    pub rooted: Vec<RootedField>,
}

/// Builds the quadrature grids for every detected scale with an observed
/// segment: `n_q` midpoint nodes in `[log L_{eta(i)}, log L_{eta(i)+1}]`,
/// each rooted on the geodesic.
pub fn segment_quadrature(
    m: &MetricField,
    d: &SegmentDecomposition,
    disk: &ProbeDisk,
    n_q: usize,
) -> Result<Vec<SegmentQuadrature>> {
    if n_q == 0 {
        return Err(LqlError::Config("quadrature needs at least one node".into()));
    }
    let grid = m.grid();
    let mut out = Vec::new();
    for (j, &scale) in d.point_scales().iter().enumerate() {
        if j + 1 >= d.points().len() {
            break;
        }
        let lo = d.lengths()[j].ln();
        let hi = d.lengths()[j + 1].ln();
        let step = (hi - lo) / n_q as f64;
        let mut rooted = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let s = lo + (q as f64 + 0.5) * step;
            let (site, _) = d.geodesic().site_at_length(s.exp());
            let x = grid.point(site);
            let mut rf = rooted_field(m.field(), x, disk)?;
            rf.t = s;
            rooted.push(rf);
        }
        out.push(SegmentQuadrature {
            scale,
            step,
            rooted,
        });
    }
    Ok(out)
}

/// The per-scale renewal averages
/// `Z_i = P_i int exp(i sum_j lambda_j (h_rooted, phi_j)) ds` over the
/// segment's log-length range, by midpoint quadrature. Entries are zero at
/// non-detected scales and None at the outermost detected scale. The modulus
/// of each entry is bounded by `G_i`.
pub fn z_statistic(
    d: &SegmentDecomposition,
    quads: &[SegmentQuadrature],
    lambdas: &[f64],
    phis: &[TestFunctional],
) -> Result<Vec<Option<Complex64>>> {
    if lambdas.len() != phis.len() {
        return Err(LqlError::Config(format!(
            "{} lambdas for {} test functions",
            lambdas.len(),
            phis.len()
        )));
    }
    let schedule = d.schedule();
    let mut out: Vec<Option<Complex64>> = Vec::with_capacity(schedule.n_scales());
    for i in schedule.scales() {
        match d.g_at(i)? {
            None => out.push(None),
            Some(_) => out.push(Some(Complex64::new(0.0, 0.0))),
        }
    }
    for quad in quads {
        if quad.rooted.is_empty() {
            return Err(LqlError::Config(format!(
                "empty quadrature at detected scale {}",
                quad.scale
            )));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for rf in &quad.rooted {
            let mut phase = 0.0;
            for (lambda, phi) in lambdas.iter().zip(phis) {
                phase += lambda * pair_functional(rf, phi)?;
            }
            acc += quad.step * Complex64::new(phase.cos(), phase.sin());
        }
        let idx = (quad.scale - schedule.i_min()) as usize;
        out[idx] = Some(acc);
    }
    Ok(out)
}
