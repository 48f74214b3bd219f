//! Statistical diagnostics: two-sample comparisons, correlation decay, tail
//! estimation, Hölder events, shortcut/singularity events, multi-scale
//! counting and the annulus absolute-continuity probe.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::empirical::{pair_functional, ProbeDisk, RootedField, RootedMetric, TestFunctional};
use crate::error::{LqlError, Result};
use crate::grid::{Point, Site};
use crate::metric::{LqgParams, MetricField, RegionMask};

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn stationarity_ks(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(LqlError::InsufficientData(
            "KS needs nonempty samples on both sides".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut stat = 0.0f64;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let v = x.min(y);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        stat = stat.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    stat = stat.max((1.0 - j as f64 / m as f64).min(1.0));
    if stat == 0.0 {
        return Ok((0.0, 1.0));
    }
    let nu = (n as f64 * m as f64) / (n + m) as f64;
    let lambda = (nu.sqrt() + 0.12 + 0.11 / nu.sqrt()) * stat;
    Ok((stat, ks_survival(lambda)))
}

/// Asymptotic Kolmogorov distribution tail `Q(lambda)`.
fn ks_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Sample autocorrelations and a fitted exponential decay rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutocorrReport {
    /// `rho(0..=max_lag)`, with `rho(0) = 1`.
    pub correlations: Vec<f64>,
    /// Least-squares slope of `log |rho|` over lags where `|rho| > 2/sqrt(n)`;
    /// None when fewer than two lags qualify.
    pub fitted_rate: Option<f64>,
    pub n: usize,
}

pub fn autocorrelation_decay(seq: &[f64], max_lag: usize) -> Result<AutocorrReport> {
    let n = seq.len();
    if n <= 4 * max_lag {
        return Err(LqlError::InsufficientData(format!(
            "sequence of length {n} too short for max lag {max_lag}"
        )));
    }
    let mean = seq.iter().sum::<f64>() / n as f64;
    let var: f64 = seq.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var == 0.0 {
        return Err(LqlError::UndefinedCorrelation(
            "constant sequence has no autocorrelation".into(),
        ));
    }
    let mut correlations = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let cov: f64 = (0..n - lag)
            .map(|t| (seq[t] - mean) * (seq[t + lag] - mean))
            .sum();
        correlations.push(cov / var);
    }
    let threshold = 2.0 / (n as f64).sqrt();
    let pts: Vec<(f64, f64)> = correlations
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &r)| r.abs() > threshold)
        .map(|(l, &r)| (l as f64, r.abs().ln()))
        .collect();
    let fitted_rate = if pts.len() >= 2 {
        let nx = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = nx * sxx - sx * sx;
        (denom != 0.0).then(|| -(nx * sxy - sx * sy) / denom)
    } else {
        None
    };
    Ok(AutocorrReport {
        correlations,
        fitted_rate,
        n,
    })
}

/// Hill tail-exponent estimate with a seeded percentile-bootstrap CI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub theta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub k: usize,
    pub n: usize,
}

pub fn tail_exponent(samples: &[f64], k: usize, n_boot: usize, seed: u64) -> Result<TailReport> {
    let n = samples.len();
    if n < 50 {
        return Err(LqlError::InsufficientData(format!(
            "tail estimation needs >= 50 samples, got {n}"
        )));
    }
    if k == 0 || k >= n / 2 {
        return Err(LqlError::Config(format!(
            "order count k = {k} must lie in [1, n/2)"
        )));
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(LqlError::Degenerate("tail samples must be positive".into()));
    }
    let hill = |xs: &mut Vec<f64>| -> Result<f64> {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut = xs[xs.len() - 1 - k];
        let mean_log: f64 = xs[xs.len() - k..]
            .iter()
            .map(|&x| (x / cut).ln())
            .sum::<f64>()
            / k as f64;
        if mean_log <= 0.0 {
            return Err(LqlError::Degenerate(
                "top order statistics are all equal; tail exponent undefined".into(),
            ));
        }
        Ok(1.0 / mean_log)
    };
    let mut base = samples.to_vec();
    let theta = hill(&mut base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boots = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut resample: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
        if let Ok(t) = hill(&mut resample) {
            boots.push(t);
        }
    }
    if boots.len() < n_boot / 2 {
        return Err(LqlError::Degenerate(
            "bootstrap failed on most resamples".into(),
        ));
    }
    boots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = boots[(boots.len() as f64 * 0.025) as usize];
    let hi = boots[((boots.len() as f64 * 0.975) as usize).min(boots.len() - 1)];
    Ok(TailReport {
        theta,
        ci_lo: lo,
        ci_hi: hi,
        k,
        n,
    })
}

/// Hölder exponent window for the rooted-metric regularity event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderConfig {
    pub chi: f64,
    pub chi_prime: f64,
    pub frak_d: f64,
}

impl HolderConfig {
    pub fn new(chi: f64, chi_prime: f64, frak_d: f64, params: LqgParams) -> Result<Self> {
        let pivot = params.xi() * (params.q() - 2.0);
        if !(0.0 < chi && chi < pivot) {
            return Err(LqlError::Config(format!(
                "chi = {chi} must lie in (0, {pivot})"
            )));
        }
        if !(chi_prime > pivot) {
            return Err(LqlError::Config(format!(
                "chi_prime = {chi_prime} must exceed {pivot}"
            )));
        }
        if !(0.0 < frak_d && frak_d < 1.0) {
            return Err(LqlError::Config(format!(
                "frak_d = {frak_d} must lie in (0, 1)"
            )));
        }
        Ok(HolderConfig {
            chi,
            chi_prime,
            frak_d,
        })
    }
}

/// True iff every probe pair at Euclidean distance `<= frak_d` satisfies
/// `|u - v|^{chi'} <= d(u, v) <= |u - v|^{chi}`.
pub fn holder_check(rm: &RootedMetric, disk: &ProbeDisk, cfg: &HolderConfig) -> Result<bool> {
    if rm.n_probes != disk.probes().len() || rm.resolution != disk.resolution() {
        return Err(LqlError::MeshMismatch(
            "rooted metric computed on a different probe mesh".into(),
        ));
    }
    let probes = disk.probes();
    for i in 0..probes.len() {
        for j in i + 1..probes.len() {
            let gap = probes[i].dist(probes[j]);
            if gap > cfg.frak_d {
                continue;
            }
            let d = rm.distance(i, j);
            if d < gap.powf(cfg.chi_prime) || d > gap.powf(cfg.chi) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Minimal-weight closed lattice loop inside the annulus
/// `(3 eps, 4 eps) * radius` around `center` that winds once around it,
/// computed by the cut-and-duplicate construction: the annulus graph is
/// doubled into two sheets glued across the cut ray, and the loop is the
/// shortest two-sheet path from a cut site to its copy.
fn min_winding_loop(
    m: &MetricField,
    region: &RegionMask,
    center: Point,
    r_in: f64,
    r_out: f64,
) -> Result<f64> {
    let grid = m.grid();
    let n = grid.n_sites();
    let in_annulus = |s: Site| {
        let d = grid.point(s).dist(center);
        d > r_in && d < r_out && region.contains(grid, s)
    };
    // Cut: vertical edges crossing the dual ray y = center.y + spacing/2,
    // x > center.x. Crossing one flips the sheet.
    let cut_row = ((center.y / grid.spacing()) + grid.origin_index() as f64).floor() as i64;
    if cut_row < 0 || cut_row as usize + 1 >= n {
        return Err(LqlError::Domain("cut ray leaves the grid".into()));
    }
    let cut_row = cut_row as usize;
    let min_x = center.x;
    let crosses_cut = |a: Site, b: Site| {
        if a.ix != b.ix {
            return false;
        }
        let (lo, hi) = if a.iy < b.iy { (a, b) } else { (b, a) };
        lo.iy == cut_row && hi.iy == cut_row + 1 && grid.point(lo).x > min_x
    };
    // Any odd-winding loop passes through a lower endpoint of a cut edge.
    let cut_sites: Vec<Site> = (0..n)
        .map(|ix| Site::new(ix, cut_row))
        .filter(|&s| {
            in_annulus(s)
                && s.iy + 1 < n
                && in_annulus(Site::new(s.ix, s.iy + 1))
                && grid.point(s).x > min_x
        })
        .collect();
    if cut_sites.is_empty() {
        return Err(LqlError::Resolution(format!(
            "annulus ({r_in}, {r_out}) holds no cut sites; mesh too coarse"
        )));
    }
    let mut best = f64::INFINITY;
    for &start in &cut_sites {
        // Two-sheet Dijkstra from (start, sheet 0) to (start, sheet 1).
        let len = grid.len();
        let mut dist = vec![f64::INFINITY; 2 * len];
        let mut settled = vec![false; 2 * len];
        let s0 = grid.flat(start);
        dist[s0] = 0.0;
        let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, usize)>> = BinaryHeap::new();
        heap.push(Reverse((OrderedFloat(0.0), s0)));
        let target = len + s0;
        while let Some(Reverse((d, node))) = heap.pop() {
            if settled[node] || d.0 > dist[node] {
                continue;
            }
            settled[node] = true;
            if node == target {
                break;
            }
            let flat = node % len;
            let sheet = node / len;
            let site = grid.site(flat);
            if d.0 >= best {
                break;
            }
            for nb in grid.neighbors(site) {
                if !in_annulus(nb) {
                    continue;
                }
                let nb_flat = grid.flat(nb);
                let nb_sheet = if crosses_cut(site, nb) { 1 - sheet } else { sheet };
                let node2 = nb_sheet * len + nb_flat;
                if settled[node2] {
                    continue;
                }
                let nd = d.0 + m.edge_weight(site, nb);
                if nd < dist[node2] {
                    dist[node2] = nd;
                    heap.push(Reverse((OrderedFloat(nd), node2)));
                }
            }
        }
        best = best.min(dist[target]);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(LqlError::Resolution(format!(
            "no winding loop exists in the annulus ({r_in}, {r_out})"
        )))
    }
}

/// Induced distance between two site rings inside a region, by multi-source
/// search from the first ring.
fn ring_to_ring_distance(
    m: &MetricField,
    region: &RegionMask,
    from: &[Site],
    to: &[Site],
) -> Result<f64> {
    let grid = m.grid();
    let len = grid.len();
    let mut dist = vec![f64::INFINITY; len];
    let mut settled = vec![false; len];
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, usize)>> = BinaryHeap::new();
    for &s in from {
        if region.contains(grid, s) {
            let f = grid.flat(s);
            dist[f] = 0.0;
            heap.push(Reverse((OrderedFloat(0.0), f)));
        }
    }
    if heap.is_empty() {
        return Err(LqlError::Resolution("source ring has no region sites".into()));
    }
    let mut targets: Vec<usize> = to
        .iter()
        .filter(|&&s| region.contains(grid, s))
        .map(|&s| grid.flat(s))
        .collect();
    if targets.is_empty() {
        return Err(LqlError::Resolution("target ring has no region sites".into()));
    }
    let mut best = f64::INFINITY;
    while let Some(Reverse((d, flat))) = heap.pop() {
        if settled[flat] || d.0 > dist[flat] {
            continue;
        }
        settled[flat] = true;
        targets.retain(|&t| t != flat);
        if dist[flat] < best && to.iter().any(|&s| grid.flat(s) == flat) {
            best = dist[flat];
            break;
        }
        let site = grid.site(flat);
        for nb in grid.neighbors(site) {
            let nf = grid.flat(nb);
            if settled[nf] || !region.contains(grid, nb) {
                continue;
            }
            let nd = d.0 + m.edge_weight(site, nb);
            if nd < dist[nf] {
                dist[nf] = nd;
                heap.push(Reverse((OrderedFloat(nd), nf)));
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(LqlError::NoPath("inner ring".into(), "outer ring".into()))
    }
}

/// The two quantities behind the shortcut event: the minimal winding-loop
/// weight in the annulus `(3 eps, 4 eps)` (disk units) and the crossing
/// distance from the `2 eps` ring to the `3 eps` ring.
pub fn shortcut_margin(
    m: &MetricField,
    center: Point,
    radius: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon <= 0.2) {
        return Err(LqlError::Domain(format!(
            "epsilon = {epsilon} must lie in (0, 1/5]"
        )));
    }
    let grid = m.grid();
    let spacing = grid.spacing();
    if epsilon * radius < 2.0 * spacing {
        return Err(LqlError::Resolution(format!(
            "annulus width {} below two lattice spacings",
            epsilon * radius
        )));
    }
    let disk = RegionMask::disk(grid, center, radius);
    let ring = |r: f64| -> Vec<Site> {
        grid.sites()
            .filter(|&s| (grid.point(s).dist(center) - r).abs() <= spacing / 2.0)
            .collect()
    };
    let crossing = ring_to_ring_distance(
        m,
        &disk,
        &ring(2.0 * epsilon * radius),
        &ring(3.0 * epsilon * radius),
    )?;
    let loop_len = min_winding_loop(
        m,
        &disk,
        center,
        3.0 * epsilon * radius,
        4.0 * epsilon * radius,
    )?;
    Ok((loop_len, crossing))
}

/// The shortcut event on a disk of `radius` around `center`: true iff the
/// minimal winding loop in the annulus `(3 eps, 4 eps)` (disk units) is
/// strictly cheaper than crossing from the `2 eps` ring to the `3 eps` ring.
/// Around a point the ambient geodesic passes through, the crossing bound
/// forces this to be false.
pub fn shortcut_event(m: &MetricField, center: Point, radius: f64, epsilon: f64) -> Result<bool> {
    let (loop_len, crossing) = shortcut_margin(m, center, radius, epsilon)?;
    Ok(loop_len < crossing)
}

/// Cumulative occurrence counts `N(I)` for a sequence of per-scale flags.
pub fn multiscale_event_count(flags: &[bool]) -> Vec<usize> {
    let mut out = Vec::with_capacity(flags.len());
    let mut acc = 0;
    for &f in flags {
        acc += f as usize;
        out.push(acc);
    }
    out
}

/// Comparison of pairing distributions between geodesic-rooted and typical
/// environments, restricted to a test function supported away from the
/// origin. Reported descriptively: absolute continuity is weaker than
/// equality in law, so no pass threshold is attached to the statistic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcProbeReport {
    pub ks_stat: f64,
    pub ks_p: f64,
    pub n_rooted: usize,
    pub n_typical: usize,
    /// Each ensemble's minimum lies inside the other's range.
    pub full_support_overlap: bool,
}

pub fn annulus_ac_probe(
    rooted: &[RootedField],
    typical: &[RootedField],
    disk: &ProbeDisk,
    phi: &TestFunctional,
    delta_prime: f64,
) -> Result<AcProbeReport> {
    if rooted.is_empty() || typical.is_empty() {
        return Err(LqlError::InsufficientData(
            "both ensembles must be nonempty".into(),
        ));
    }
    if !(0.0 < delta_prime && delta_prime < 1.0) {
        return Err(LqlError::Config(format!(
            "delta_prime = {delta_prime} outside (0, 1)"
        )));
    }
    if !phi.vanishes_inside(disk, delta_prime) {
        return Err(LqlError::SupportViolation(format!(
            "test function not supported in the annulus ({delta_prime}, 1)"
        )));
    }
    let pair_all = |fields: &[RootedField]| -> Result<Vec<f64>> {
        fields.iter().map(|rf| pair_functional(rf, phi)).collect()
    };
    let a = pair_all(rooted)?;
    let b = pair_all(typical)?;
    let (ks_stat, ks_p) = stationarity_ks(&a, &b)?;
    let range = |xs: &[f64]| {
        (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (a_min, a_max) = range(&a);
    let (b_min, b_max) = range(&b);
    let full_support_overlap = a_min <= b_max && b_min <= a_max;
    Ok(AcProbeReport {
        ks_stat,
        ks_p,
        n_rooted: a.len(),
        n_typical: b.len(),
        full_support_overlap,
    })
}

/// Correlation of a bounded functional across rescaled-field scales, as a
/// function of the scale gap. Input is one vector of functional values per
/// scale, aligned across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecorrelationCurve {
    /// (gap, pooled correlation, standard error)
    pub points: Vec<(usize, f64, f64)>,
    pub n_replicates: usize,
}

pub fn decorrelation_probe(values_per_scale: &[Vec<f64>]) -> Result<DecorrelationCurve> {
    let n_scales = values_per_scale.len();
    if n_scales < 2 {
        return Err(LqlError::InsufficientData("need at least two scales".into()));
    }
    let n_reps = values_per_scale[0].len();
    if n_reps < 30 {
        return Err(LqlError::InsufficientData(format!(
            "need >= 30 replicates, got {n_reps}"
        )));
    }
    if values_per_scale.iter().any(|v| v.len() != n_reps) {
        return Err(LqlError::Config("ragged scale ensembles".into()));
    }
    // Standardize per scale (population variance, so gap zero is exactly 1).
    let mut z = Vec::with_capacity(n_scales);
    for vals in values_per_scale {
        let mean = vals.iter().sum::<f64>() / n_reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_reps as f64;
        if var == 0.0 {
            return Err(LqlError::UndefinedCorrelation(
                "constant functional across replicates".into(),
            ));
        }
        let sd = var.sqrt();
        z.push(vals.iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
    }
    let mut points = Vec::new();
    for gap in 0..n_scales {
        let mut prods = Vec::new();
        for i in 0..n_scales - gap {
            for r in 0..n_reps {
                prods.push(z[i][r] * z[i + gap][r]);
            }
        }
        let nn = prods.len() as f64;
        let mean = prods.iter().sum::<f64>() / nn;
        let var = prods.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (nn - 1.0);
        let se = (var / nn).sqrt();
        points.push((gap, mean, se));
    }
    Ok(DecorrelationCurve {
        points,
        n_replicates: n_reps,
    })
}

/// One named diagnostic outcome; the pass flag is always recomputable from
/// the value and its tolerance band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticEntry {
    pub name: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub n: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub entries: Vec<DiagnosticEntry>,
}

impl DiagnosticReport {
    pub fn push(&mut self, entry: DiagnosticEntry) {
        self.entries.push(entry);
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LatticeField;
    use crate::grid::GridSpec;
    use crate::metric::build_metric;
    use rand_distr::Distribution;

    #[test]
    fn ks_identical_samples() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![4.0, 3.0, 2.0, 1.0];
        let (stat, p) = stationarity_ks(&a, &b).unwrap();
        assert_eq!(stat, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn ks_disjoint_supports() {
        let a = vec![0.0; 100];
        let b = vec![1.0; 100];
        let (stat, p) = stationarity_ks(&a, &b).unwrap();
        assert_eq!(stat, 1.0);
        assert!(p < 1e-6);
    }

    /// Brute-force CDF gap over the pooled values.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let mut gap = 0.0f64;
        for &v in a.iter().chain(b.iter()) {
            let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
            gap = gap.max((fa - fb).abs());
        }
        gap
    }

    #[test]
    fn ks_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.random_range(5..40);
            let m = rng.random_range(5..40);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..3.0)).collect();
            let (stat, _) = stationarity_ks(&a, &b).unwrap();
            let brute = ks_brute(&a, &b);
            assert!(
                (stat - brute).abs() < 1e-12,
                "stat {stat} vs brute {brute}"
            );
        }
    }

    #[test]
    fn autocorr_of_iid_noise_is_small() {
        let mut passes = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..10_000)
                .map(|_| rand_distr::StandardNormal.sample(&mut rng))
                .collect();
            let rep = autocorrelation_decay(&xs, 10).unwrap();
            assert_eq!(rep.correlations[0], 1.0);
            let bound = 3.0 / (xs.len() as f64).sqrt();
            if rep.correlations[1..].iter().all(|r| r.abs() < bound) {
                passes += 1;
            }
        }
        assert!(passes >= 95, "only {passes}/100 runs inside the null band");
    }

    #[test]
    fn autocorr_of_ar1_recovers_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut xs = vec![0.0f64];
        for _ in 1..100_000 {
            let e: f64 = rand_distr::StandardNormal.sample(&mut rng);
            let prev = *xs.last().unwrap();
            xs.push(0.5 * prev + e);
        }
        let rep = autocorrelation_decay(&xs, 10).unwrap();
        let rate = rep.fitted_rate.expect("AR(1) has measurable decay");
        let expected = 2.0f64.ln();
        assert!(
            (rate - expected).abs() < 0.2 * expected,
            "fitted {rate} vs log 2"
        );
    }

    #[test]
    fn autocorr_rejects_constants() {
        let xs = vec![3.0; 1000];
        assert!(matches!(
            autocorrelation_decay(&xs, 5),
            Err(LqlError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn hill_recovers_pareto_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = 2.0;
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random_range(0.0f64..1.0);
                (1.0 - u).powf(-1.0 / alpha)
            })
            .collect();
        let rep = tail_exponent(&xs, 500, 200, 17).unwrap();
        assert!(
            rep.theta > 1.6 && rep.theta < 2.4,
            "Hill estimate {} for Pareto(2)",
            rep.theta
        );
        assert!(rep.ci_lo > 0.0);
    }

    #[test]
    fn hill_rejects_degenerate_samples() {
        let xs = vec![1.0; 100];
        assert!(tail_exponent(&xs, 10, 50, 0).is_err());
    }

    #[test]
    fn hill_drifts_up_for_exponential_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random_range(1e-12f64..1.0);
                -u.ln()
            })
            .collect();
        let t500 = tail_exponent(&xs, 500, 50, 1).unwrap().theta;
        let t250 = tail_exponent(&xs, 250, 50, 1).unwrap().theta;
        let t125 = tail_exponent(&xs, 125, 50, 1).unwrap().theta;
        assert!(t500 < t250 && t250 < t125, "{t500} {t250} {t125}");
    }

    #[test]
    fn holder_check_examples() {
        let params = LqgParams::sqrt_8_3();
        let disk = ProbeDisk::new(9, 0.5).unwrap();
        let n = disk.probes().len();
        // Euclidean distances as the metric.
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                distances[i * n + j] = disk.probes()[i].dist(disk.probes()[j]);
            }
        }
        let rm = RootedMetric {
            distances,
            n_probes: n,
            root: Point::new(1.0, 0.0),
            t: 0.0,
            resolution: disk.resolution(),
            delta: disk.delta(),
        };
        let pivot = params.xi() * (params.q() - 2.0);
        // chi' = 2, chi = pivot/2: s^2 <= s <= s^{chi} holds for s <= 1/2.
        let cfg = HolderConfig::new(pivot / 2.0, 2.0, 0.5, params).unwrap();
        assert!(holder_check(&rm, &disk, &cfg).unwrap());
        // Vacuous when frak_d is below the probe gap.
        let tiny = HolderConfig::new(pivot / 2.0, 2.0, 1e-6, params).unwrap();
        assert!(holder_check(&rm, &disk, &tiny).unwrap());
        // Monotone: passing at frak_d implies passing below.
        let below = HolderConfig::new(pivot / 2.0, 2.0, 0.3, params).unwrap();
        assert!(holder_check(&rm, &disk, &below).unwrap());
    }

    #[test]
    fn holder_config_validation() {
        let params = LqgParams::sqrt_8_3();
        let pivot = params.xi() * (params.q() - 2.0);
        assert!(HolderConfig::new(pivot * 1.1, 2.0, 0.5, params).is_err());
        assert!(HolderConfig::new(pivot / 2.0, pivot / 2.0, 0.5, params).is_err());
    }

    #[test]
    fn shortcut_false_on_taxicab() {
        // Zero field: the winding loop around the annulus is about
        // 8 * (3 eps) R while the crossing is about eps * R.
        let g = GridSpec::new(41, 0.05).unwrap();
        let m = build_metric(LatticeField::constant(g, 0.0).unwrap(), LqgParams::sqrt_8_3())
            .unwrap();
        let got = shortcut_event(&m, Point::new(0.0, 0.0), 1.0, 0.2).unwrap();
        assert!(!got);
    }

    #[test]
    fn shortcut_quantities_match_taxicab_enumeration() {
        let g = GridSpec::new(41, 0.05).unwrap();
        let m = build_metric(LatticeField::constant(g, 0.0).unwrap(), LqgParams::sqrt_8_3())
            .unwrap();
        let center = Point::new(0.0, 0.0);
        let disk = RegionMask::disk(g, center, 1.0);
        let eps = 0.2;
        let ring = |r: f64| -> Vec<Site> {
            g.sites()
                .filter(|&s| (g.point(s).dist(center) - r).abs() <= g.spacing() / 2.0)
                .collect()
        };
        let crossing =
            ring_to_ring_distance(&m, &disk, &ring(2.0 * eps), &ring(3.0 * eps)).unwrap();
        // Taxicab distance between rings at 0.4 and 0.6 is about 0.2 plus
        // ring-band quantization of one spacing on each side.
        assert!(
            crossing >= eps - 2.0 * g.spacing() && crossing <= eps + 2.0 * g.spacing(),
            "crossing {crossing}"
        );
        let loop_len = min_winding_loop(&m, &disk, center, 3.0 * eps, 4.0 * eps).unwrap();
        // Minimal taxicab diamond winding the inner ring has perimeter near
        // 8 * (3 eps); lattice quantization widens the band.
        assert!(
            loop_len >= 8.0 * 3.0 * eps - 8.0 * g.spacing(),
            "loop {loop_len}"
        );
        assert!(loop_len <= 8.0 * 4.0 * eps + 8.0 * g.spacing(), "loop {loop_len}");
        assert!(loop_len > crossing);
    }

    #[test]
    fn shortcut_fires_on_planted_cheap_ring() {
        // A deep cheap ring in the (3e, 4e) annulus with an expensive barrier
        // between 2e and 3e forces the shortcut.
        let g = GridSpec::new(81, 0.025).unwrap();
        let eps = 0.2;
        let f = LatticeField::from_fn(g, |p| {
            let r = p.norm();
            if r > 3.2 * eps && r < 3.8 * eps {
                -6.0
            } else if r > 2.2 * eps && r < 2.8 * eps {
                6.0
            } else {
                0.0
            }
        })
        .unwrap();
        let m = build_metric(f, LqgParams::sqrt_8_3()).unwrap();
        assert!(shortcut_event(&m, Point::new(0.0, 0.0), 1.0, eps).unwrap());
    }

    #[test]
    fn shortcut_resolution_guard() {
        let g = GridSpec::new(17, 0.25).unwrap();
        let m = build_metric(LatticeField::constant(g, 0.0).unwrap(), LqgParams::sqrt_8_3())
            .unwrap();
        assert!(matches!(
            shortcut_event(&m, Point::new(0.0, 0.0), 1.0, 0.04),
            Err(LqlError::Resolution(_))
        ));
    }

    #[test]
    fn multiscale_count_examples() {
        assert_eq!(multiscale_event_count(&[true, true, true]), vec![1, 2, 3]);
        assert_eq!(
            multiscale_event_count(&[true, false, true, false]),
            vec![1, 1, 2, 2]
        );
        let counts = multiscale_event_count(&[false, true, true, false, true]);
        assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        assert!(counts.iter().enumerate().all(|(i, &c)| c <= i + 1));
    }

    #[test]
    fn ac_probe_support_validation() {
        let disk = ProbeDisk::new(9, 0.5).unwrap();
        let inner =
            TestFunctional::bump(&disk, Point::new(0.0, 0.0), 0.3, "inner").unwrap();
        let rf = RootedField {
            probe_values: vec![0.0; disk.probes().len()],
            root: Point::new(1.0, 0.0),
            t: 0.0,
            resolution: disk.resolution(),
            delta: disk.delta(),
        };
        let res = annulus_ac_probe(&[rf.clone()], &[rf.clone()], &disk, &inner, 0.5);
        assert!(matches!(res, Err(LqlError::SupportViolation(_))));
        let ring = TestFunctional::ring_bump(&disk, 0.55, 0.95, "ring").unwrap();
        let rep = annulus_ac_probe(&[rf.clone()], &[rf], &disk, &ring, 0.5).unwrap();
        assert_eq!(rep.ks_stat, 0.0);
    }

    #[test]
    fn decorrelation_probe_contract() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let curve = decorrelation_probe(&[a.clone(), b]).unwrap();
        assert!((curve.points[0].1 - 1.0).abs() < 1e-9);
        let constant = vec![vec![1.0; n], vec![2.0; n]];
        assert!(decorrelation_probe(&constant).is_err());
        assert!(decorrelation_probe(&[a[..10].to_vec()]).is_err());
    }

    #[test]
    fn report_pass_flags() {
        let mut rep = DiagnosticReport::default();
        rep.push(DiagnosticEntry {
            name: "x".into(),
            value: 0.5,
            ci_lo: None,
            ci_hi: None,
            tolerance: Some(1.0),
            pass: true,
            n: 10,
            seeds: vec![0],
        });
        assert!(rep.all_pass());
        let js = serde_json::to_string(&rep).unwrap();
        let back: DiagnosticReport = serde_json::from_str(&js).unwrap();
        assert_eq!(back.entries.len(), 1);
    }
}
