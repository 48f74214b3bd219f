//! Shared oracles and fixtures for the integration suite. Everything here is
//! deliberately independent of the library's own computational paths: linear
//! solves instead of spectral sampling, exhaustive enumeration instead of
//! heap searches.

#![allow(dead_code)]

use lqlab::field::{
    add_fields, recenter_on_unit_circle, ring_gate_bias, sample_gff, LatticeField, Normalization,
};
use lqlab::grid::{GridSpec, Point, Site};
use lqlab::metric::{build_metric, LqgParams, MetricField, RegionMask};
use lqlab::renewal::{
    decompose_segments, detect_all, trace_geodesic, AnnulusSchedule, SegmentDecomposition,
};

/// Conjugate-gradient solve of `(-Delta) x = b` on the interior sites of a
/// grid with zero boundary. Returns the full-grid vector with zeros on the
/// boundary.
pub fn laplace_solve_cg(grid: GridSpec, b: &[f64]) -> Vec<f64> {
    let n = grid.n_sites();
    let interior: Vec<usize> = grid
        .sites()
        .filter(|&s| !grid.on_boundary(s))
        .map(|s| grid.flat(s))
        .collect();
    let mut pos = vec![usize::MAX; n * n];
    for (k, &idx) in interior.iter().enumerate() {
        pos[idx] = k;
    }
    let m = interior.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, &idx) in interior.iter().enumerate() {
            let mut acc = 4.0 * x[k];
            for nb in [idx - 1, idx + 1, idx - n, idx + n] {
                if pos[nb] != usize::MAX {
                    acc -= x[pos[nb]];
                }
            }
            out[k] = acc;
        }
    };
    let rhs: Vec<f64> = interior.iter().map(|&idx| b[idx]).collect();
    let mut x = vec![0.0; m];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; m];
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _ in 0..20 * (m as f64).sqrt() as usize + 4000 {
        if rs.sqrt() <= 1e-13 * b_norm {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rs / pap;
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for k in 0..m {
            p[k] = r[k] + beta * p[k];
        }
    }
    let mut full = vec![0.0; n * n];
    for (k, &idx) in interior.iter().enumerate() {
        full[idx] = x[k];
    }
    full
}

/// Dense Gaussian-elimination solve of the same system, for cross-checking
/// the CG oracle on small grids.
pub fn laplace_solve_dense(grid: GridSpec, b: &[f64]) -> Vec<f64> {
    let n = grid.n_sites();
    let interior: Vec<usize> = grid
        .sites()
        .filter(|&s| !grid.on_boundary(s))
        .map(|s| grid.flat(s))
        .collect();
    let mut pos = vec![usize::MAX; n * n];
    for (k, &idx) in interior.iter().enumerate() {
        pos[idx] = k;
    }
    let m = interior.len();
    let mut a = vec![0.0f64; m * m];
    let mut rhs: Vec<f64> = interior.iter().map(|&idx| b[idx]).collect();
    for (k, &idx) in interior.iter().enumerate() {
        a[k * m + k] = 4.0;
        for nb in [idx - 1, idx + 1, idx - n, idx + n] {
            if pos[nb] != usize::MAX {
                a[k * m + pos[nb]] = -1.0;
            }
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| {
                a[i * m + col]
                    .abs()
                    .partial_cmp(&a[j * m + col].abs())
                    .unwrap()
            })
            .unwrap();
        if piv != col {
            for j in 0..m {
                a.swap(col * m + j, piv * m + j);
            }
            rhs.swap(col, piv);
        }
        let d = a[col * m + col];
        for row in col + 1..m {
            let f = a[row * m + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..m {
                a[row * m + j] -= f * a[col * m + j];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let mut acc = rhs[row];
        for j in row + 1..m {
            acc -= a[row * m + j] * x[j];
        }
        x[row] = acc / a[row * m + row];
    }
    let mut full = vec![0.0; n * n];
    for (k, &idx) in interior.iter().enumerate() {
        full[idx] = x[k];
    }
    full
}

/// Variance of the linear functional `sum w_i h_i` under the sampled field
/// law, from the Green's-function identity `Var = 2 pi w^T (-Delta)^{-1} w`.
pub fn functional_variance_oracle(grid: GridSpec, w: &[f64]) -> f64 {
    let x = laplace_solve_cg(grid, w);
    2.0 * std::f64::consts::PI * w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
}

/// Exhaustive minimum over all simple paths between two sites in a region.
pub fn enumerate_min_dist(
    m: &MetricField,
    u: Site,
    v: Site,
    region: Option<&RegionMask>,
) -> f64 {
    let grid = m.grid();
    let mut best = f64::INFINITY;
    let mut visited = vec![false; grid.len()];
    fn dfs(
        m: &MetricField,
        grid: GridSpec,
        cur: Site,
        v: Site,
        cost: f64,
        visited: &mut [bool],
        region: Option<&RegionMask>,
        best: &mut f64,
    ) {
        if cost >= *best {
            return;
        }
        if cur == v {
            *best = cost;
            return;
        }
        visited[grid.flat(cur)] = true;
        for nb in grid.neighbors(cur) {
            if visited[grid.flat(nb)] {
                continue;
            }
            if let Some(r) = region {
                if !r.contains(grid, nb) {
                    continue;
                }
            }
            dfs(m, grid, nb, v, cost + m.edge_weight(cur, nb), visited, region, best);
        }
        visited[grid.flat(cur)] = false;
    }
    dfs(m, grid, u, v, 0.0, &mut visited, region, &mut best);
    best
}

/// Deterministic seed expansion for replicate streams.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Parameters of the coalescence-bearing ensemble: GFF plus the log-periodic
/// ring-gate bias, the documented field class on which the renewal pipeline
/// produces observable coalescence at desk scale.
#[derive(Clone, Copy)]
pub struct EnsembleConfig {
    pub n_sites: usize,
    pub spacing: f64,
    pub k: f64,
    pub i_min: i32,
    pub i_max: i32,
    pub n_probe: usize,
    pub rho: f64,
    pub gate_depth: f64,
    pub barrier: f64,
    pub gate_halfwidth: f64,
}

pub const PRODUCTION: EnsembleConfig = EnsembleConfig {
    n_sites: 1335,
    spacing: 0.06,
    k: 2.0,
    i_min: 0,
    i_max: 4,
    n_probe: 8,
    rho: 0.01,
    gate_depth: 2.0,
    barrier: 16.0,
    gate_halfwidth: 0.1,
};

pub fn grid_of(cfg: &EnsembleConfig) -> GridSpec {
    GridSpec::new(cfg.n_sites, cfg.spacing).unwrap()
}

pub fn schedule_of(cfg: &EnsembleConfig) -> AnnulusSchedule {
    AnnulusSchedule::new(cfg.k, cfg.i_min, cfg.i_max).unwrap()
}

/// Samples one tilted replicate: GFF + ring-gate bias, recentered on the
/// unit circle.
pub fn tilted_field(cfg: &EnsembleConfig, bias: &LatticeField, seed: u64) -> LatticeField {
    let g = grid_of(cfg);
    let noise = sample_gff(g, seed, Normalization::Raw).unwrap();
    recenter_on_unit_circle(&add_fields(&noise, bias).unwrap()).unwrap()
}

pub fn bias_of(cfg: &EnsembleConfig) -> LatticeField {
    ring_gate_bias(
        grid_of(cfg),
        cfg.k,
        cfg.gate_depth,
        cfg.barrier,
        cfg.gate_halfwidth,
    )
    .unwrap()
}

/// Runs the full renewal pipeline on one replicate; None when no coalescence
/// point was detected or validation failed.
pub fn run_replicate(
    cfg: &EnsembleConfig,
    bias: &LatticeField,
    seed: u64,
) -> (MetricField, Option<SegmentDecomposition>) {
    let field = tilted_field(cfg, bias, seed);
    let m = build_metric(field, LqgParams::sqrt_8_3()).unwrap();
    let schedule = schedule_of(cfg);
    let records = match detect_all(&m, &schedule, cfg.n_probe, cfg.rho) {
        Ok(r) => r,
        Err(_) => return (m, None),
    };
    if !records.iter().any(|r| r.occurred) {
        return (m, None);
    }
    let decomposition = trace_geodesic(&m, &records)
        .ok()
        .and_then(|geo| decompose_segments(&m, &schedule, &records, &geo).ok());
    (m, decomposition)
}

/// Clopper-Pearson style check that a binomial 95% confidence interval
/// excludes zero: true exactly when at least one success was observed.
pub fn ci_excludes_zero(successes: usize) -> bool {
    successes > 0
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Taxicab distance in plane units between two points, the zero-field
/// closed form.
pub fn taxicab(a: Point, b: Point) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}
