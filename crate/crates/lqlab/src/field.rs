//! Discrete Gaussian free fields on a centered square lattice.
//!
//! The zero-boundary field is sampled in the sine eigenbasis of the discrete
//! Dirichlet Laplacian, with variances chosen so that the field's Dirichlet
//! energy uses the `1/2pi` normalization. Concretely, the covariance of the
//! sampled field is `2 pi (-Delta)^{-1}`, the Green's function of the lattice
//! Laplacian in that normalization, which makes the Cameron-Martin density
//! below hold verbatim and the circle-average process a standard Brownian
//! motion in log-radius.
//!
//! A whole-plane field is approximated by sampling a zero-boundary field on a
//! grid several times larger than the region of interest and recentering on
//! the unit circle. The fidelity of this boxed approximation near the grid
//! boundary is untested; keep observables well inside the box.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dst::dst1_2d;
use crate::error::{LqlError, Result};
use crate::grid::{GridSpec, Point, Site};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// How a field has been centered after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Plain zero-boundary sample.
    Raw,
    /// The unit-circle average has been subtracted from all values.
    ZeroUnitCircle,
}

/// A real-valued field on a centered square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    grid: GridSpec,
    values: Vec<f64>,
    normalization: Normalization,
}

impl LatticeField {
    /// Wraps raw values, checking finiteness and, for zero-unit-circle
    /// normalization, that the unit-circle average actually vanishes.
    pub fn from_values(
        grid: GridSpec,
        values: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LqlError::Config(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(LqlError::Config("field contains non-finite values".into()));
        }
        let field = LatticeField {
            grid,
            values,
            normalization,
        };
        if normalization == Normalization::ZeroUnitCircle {
            let avg = circle_average(&field, Point::new(0.0, 0.0), 1.0)?;
            if avg.abs() > 1e-12 {
                return Err(LqlError::Config(format!(
                    "zero-unit-circle field has unit-circle average {avg:e}"
                )));
            }
        }
        Ok(field)
    }

    /// Builds a raw field from a function of the plane coordinates.
    pub fn from_fn(grid: GridSpec, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.sites().map(|s| f(grid.point(s))).collect();
        Self::from_values(grid, values, Normalization::Raw)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        Self::from_values(grid, vec![c; grid.len()], Normalization::Raw)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn value(&self, site: Site) -> f64 {
        self.values[self.grid.flat(site)]
    }

    /// A new field with `c` added to every value. The result is tagged raw.
    pub fn add_constant(&self, c: f64) -> Self {
        LatticeField {
            grid: self.grid,
            values: self.values.iter().map(|v| v + c).collect(),
            normalization: Normalization::Raw,
        }
    }

    /// Bilinear interpolation at an arbitrary plane point.
    ///
    /// At lattice-aligned points this reduces to an exact lookup.
    pub fn value_at(&self, p: Point) -> Result<f64> {
        let n = self.grid.n_sites();
        let c = self.grid.origin_index() as f64;
        let fx = p.x / self.grid.spacing() + c;
        let fy = p.y / self.grid.spacing() + c;
        if fx < 0.0 || fy < 0.0 || fx > (n - 1) as f64 || fy > (n - 1) as f64 {
            return Err(LqlError::Domain(format!(
                "interpolation point ({}, {}) outside grid",
                p.x, p.y
            )));
        }
        let ix = (fx.floor() as usize).min(n - 2);
        let iy = (fy.floor() as usize).min(n - 2);
        let dx = fx - ix as f64;
        let dy = fy - iy as f64;
        let v00 = self.values[iy * n + ix];
        let v10 = self.values[iy * n + ix + 1];
        let v01 = self.values[(iy + 1) * n + ix];
        let v11 = self.values[(iy + 1) * n + ix + 1];
        Ok(v00 * (1.0 - dx) * (1.0 - dy)
            + v10 * dx * (1.0 - dy)
            + v01 * (1.0 - dx) * dy
            + v11 * dx * dy)
    }
}

/// Samples the discrete zero-boundary GFF.
///
/// The sample is deterministic in `(grid, seed, normalization)`. The interior
/// of the grid carries the field; the outermost ring of sites is the zero
/// boundary.
pub fn sample_gff(grid: GridSpec, seed: u64, normalization: Normalization) -> Result<LatticeField> {
    let n = grid.n_sites();
    if n < 3 {
        return Err(LqlError::Config(format!(
            "grid side {n} leaves no interior sites"
        )));
    }
    let m = n - 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![0.0f64; m * m];
    // Eigenvalues of the Dirichlet Laplacian on the interior:
    // lambda_{jk} = 4 - 2cos(pi j/(m+1)) - 2cos(pi k/(m+1)).
    let denom = (m + 1) as f64;
    for j in 1..=m {
        let cj = (std::f64::consts::PI * j as f64 / denom).cos();
        for k in 1..=m {
            let ck = (std::f64::consts::PI * k as f64 / denom).cos();
            let lambda = 4.0 - 2.0 * cj - 2.0 * ck;
            let z: f64 = StandardNormal.sample(&mut rng);
            coeffs[(j - 1) * m + (k - 1)] = z * (TAU / lambda).sqrt();
        }
    }
    dst1_2d(&mut coeffs, m);
    let scale = 2.0 / denom;
    let mut values = vec![0.0f64; n * n];
    for j in 0..m {
        for k in 0..m {
            values[(j + 1) * n + (k + 1)] = scale * coeffs[j * m + k];
        }
    }
    let mut field = LatticeField::from_values(grid, values, Normalization::Raw)?;
    if normalization == Normalization::ZeroUnitCircle {
        let avg = circle_average(&field, Point::new(0.0, 0.0), 1.0)?;
        for v in &mut field.values {
            *v -= avg;
        }
        field.normalization = Normalization::ZeroUnitCircle;
    }
    Ok(field)
}

/// Arithmetic mean of the field over the lattice ring at `radius` around
/// `center` (band of width one spacing). Linear in the field.
pub fn circle_average(field: &LatticeField, center: Point, radius: f64) -> Result<f64> {
    let ring = field.grid.ring_sites(center, radius)?;
    let sum: f64 = ring.iter().map(|&s| field.value(s)).sum();
    Ok(sum / ring.len() as f64)
}

/// Circle averages of one field at several radii; the radial process
/// `B(t) = Av(h, T_{e^t})` evaluated on a grid of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleAverageTrace {
    radii: Vec<f64>,
    averages: Vec<f64>,
}

impl CircleAverageTrace {
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn averages(&self) -> &[f64] {
        &self.averages
    }
}

pub fn circle_average_trace(
    field: &LatticeField,
    center: Point,
    radii: &[f64],
) -> Result<CircleAverageTrace> {
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LqlError::Domain("radii must be strictly increasing".into()));
    }
    let averages = radii
        .iter()
        .map(|&r| circle_average(field, center, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(CircleAverageTrace {
        radii: radii.to_vec(),
        averages,
    })
}

/// Restricts the field to `{|z| > r}`, rescales it by the dilation `z -> rz`
/// (bilinear interpolation onto a shrunken copy of the grid) and recenters.
///
/// The recentering constant is the circle average of the rescaled field on
/// the output grid's own unit ring, so the output is exactly zero-unit-circle
/// normalized. For a field whose values come from `Av(h, T_r)`-consistent
/// sampling this is the discrete transcription of subtracting
/// `circle_average(field, 0, r)`.
pub fn rescale_recenter(field: &LatticeField, r: f64) -> Result<LatticeField> {
    if !(r >= 1.0) {
        return Err(LqlError::Domain(format!("scale r must be >= 1, got {r}")));
    }
    let n_in = field.grid.n_sites();
    let half_in = (n_in - 1) / 2;
    let half_out = (half_in as f64 / r).floor() as usize;
    let n_out = 2 * half_out + 1;
    let out_grid = GridSpec::new(n_out, field.grid.spacing()).map_err(|_| {
        LqlError::Domain(format!(
            "scale r = {r} too large: output grid of side {n_out} cannot resolve the unit circle"
        ))
    })?;
    let mut values = Vec::with_capacity(out_grid.len());
    for s in out_grid.sites() {
        let z = out_grid.point(s);
        values.push(field.value_at(Point::new(r * z.x, r * z.y))?);
    }
    let mut out = LatticeField {
        grid: out_grid,
        values,
        normalization: Normalization::Raw,
    };
    let avg = circle_average(&out, Point::new(0.0, 0.0), 1.0)?;
    for v in &mut out.values {
        *v -= avg;
    }
    out.normalization = Normalization::ZeroUnitCircle;
    Ok(out)
}

/// A deterministic continuous bias field: log-periodic ring barriers with a
/// single cheap gate sector.
///
/// At radii `k^{3/8} k^j` the field carries a ring of height `barrier`
/// broken by a gate of depth `-gate_depth` in the sector
/// `|theta| < gate_halfwidth`. The pattern repeats with log-period `k`, so
/// adding it to a sampled field produces an ensemble that is stationary
/// modulo rescaling across the scales `k^j`. Geodesics crossing a ring are
/// funneled through its gate, which makes coalescence events observable at
/// lattice-accessible sizes; samples of `GFF + bias` stay within the class
/// of fields the LQG metric is defined for, and the Cameron-Martin density
/// of the bias connects their law back to the plain GFF.
///
/// The bias tapers to zero at the outer grid boundary and inside radius 0.8
/// so the innermost structure stays clear of the origin.
pub fn ring_gate_bias(
    grid: GridSpec,
    k: f64,
    gate_depth: f64,
    barrier: f64,
    gate_halfwidth: f64,
) -> Result<LatticeField> {
    if !(k > 1.0) {
        return Err(LqlError::Config(format!("log-period k must exceed 1, got {k}")));
    }
    if !(gate_halfwidth > 0.0) || !(barrier >= 0.0) || !(gate_depth >= 0.0) {
        return Err(LqlError::Config("bias amplitudes must be nonnegative".into()));
    }
    let waist_log = 0.375; // rings at k^{3/8} k^j, centered in the probe band
    let ext = grid.half_extent();
    let spacing = grid.spacing();
    let values = grid
        .sites()
        .map(|s| {
            let p = grid.point(s);
            let r = p.norm();
            if r < 1e-9 {
                return 0.0;
            }
            let theta = p.y.atan2(p.x);
            let phi = (r.ln() / k.ln() - waist_log).rem_euclid(1.0);
            let d = phi.min(1.0 - phi);
            // Boxy ring profile: full strength up to log-distance 0.10,
            // fading out at 0.16, so the barrier has no radial leaks.
            let ring = (1.0 - (d - 0.10) / 0.06).clamp(0.0, 1.0);
            let tn = theta / gate_halfwidth;
            let gate = (-tn * tn).exp();
            let taper_out = ((ext - r) / (2.0 * spacing)).clamp(0.0, 1.0);
            let taper_in = ((r - 0.8) / 0.4).clamp(0.0, 1.0);
            ring * (barrier - (barrier + gate_depth) * gate) * taper_out * taper_in
        })
        .collect();
    LatticeField::from_values(grid, values, Normalization::Raw)
}

/// Pointwise sum of two fields on the same grid; the result is tagged raw.
pub fn add_fields(a: &LatticeField, b: &LatticeField) -> Result<LatticeField> {
    if a.grid != b.grid {
        return Err(LqlError::Domain("fields on different grids".into()));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x + y)
        .collect();
    LatticeField::from_values(a.grid, values, Normalization::Raw)
}

/// Subtracts the unit-circle average from all values, returning a
/// zero-unit-circle normalized field.
pub fn recenter_on_unit_circle(field: &LatticeField) -> Result<LatticeField> {
    let avg = circle_average(field, Point::new(0.0, 0.0), 1.0)?;
    let values = field.values.iter().map(|v| v - avg).collect();
    LatticeField::from_values(field.grid, values, Normalization::ZeroUnitCircle)
}

/// A zero-boundary test vector, the discrete stand-in for a finite Dirichlet
/// energy function.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletVector {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DirichletVector {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LqlError::Config(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(LqlError::Config("vector contains non-finite values".into()));
        }
        for s in grid.sites() {
            if grid.on_boundary(s) && values[grid.flat(s)] != 0.0 {
                return Err(LqlError::Config(format!(
                    "Dirichlet vector nonzero at boundary site {s}"
                )));
            }
        }
        Ok(DirichletVector { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        DirichletVector {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Builds a vector from a function of the plane point, forcing zeros at
    /// the grid boundary.
    pub fn from_fn(grid: GridSpec, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid
            .sites()
            .map(|s| {
                if grid.on_boundary(s) {
                    0.0
                } else {
                    f(grid.point(s))
                }
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, a: f64) -> Self {
        DirichletVector {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }
}

fn edge_sum(grid: GridSpec, f: &[f64], g: &[f64]) -> f64 {
    let n = grid.n_sites();
    let mut sum = 0.0;
    for iy in 0..n {
        for ix in 0..n - 1 {
            let a = iy * n + ix;
            let b = a + 1;
            sum += (f[a] - f[b]) * (g[a] - g[b]);
        }
    }
    for iy in 0..n - 1 {
        for ix in 0..n {
            let a = iy * n + ix;
            let b = a + n;
            sum += (f[a] - f[b]) * (g[a] - g[b]);
        }
    }
    sum
}

/// The Dirichlet inner product `(1/2pi) sum_edges (df)(dg)`.
pub fn dirichlet_inner(f: &DirichletVector, g: &DirichletVector) -> Result<f64> {
    if f.grid != g.grid {
        return Err(LqlError::Domain("Dirichlet vectors on different grids".into()));
    }
    Ok(edge_sum(f.grid, &f.values, &g.values) / TAU)
}

/// Radon-Nikodym density of `GFF + f` against `GFF` evaluated at `sample`:
/// `exp((sample, f)_grad - ||f||^2_grad / 2)`.
pub fn cameron_martin_rn(sample: &LatticeField, f: &DirichletVector) -> Result<f64> {
    if sample.grid != f.grid {
        return Err(LqlError::Domain("sample and shift on different grids".into()));
    }
    if sample.normalization != Normalization::Raw {
        return Err(LqlError::Domain(
            "Cameron-Martin density requires a raw zero-boundary sample".into(),
        ));
    }
    let cross = edge_sum(sample.grid, &sample.values, &f.values) / TAU;
    let energy = edge_sum(f.grid, &f.values, &f.values) / TAU;
    Ok((cross - 0.5 * energy).exp())
}

/// Discrete harmonic extension of a unit-ring boundary condition into the
/// exterior region, with zero values at the outer grid boundary standing in
/// for decay at infinity.
#[derive(Debug, Clone)]
pub struct HarmonicProfile {
    grid: GridSpec,
    epsilon: f64,
    /// Extension values: boundary data on the unit ring, solved values on the
    /// exterior, zero elsewhere.
    values: Vec<f64>,
    solved: Vec<bool>,
}

impl HarmonicProfile {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, site: Site) -> f64 {
        self.values[self.grid.flat(site)]
    }

    /// Sup of |extension| over the lattice ring at `radius`.
    pub fn ring_sup(&self, radius: f64) -> Result<f64> {
        let ring = self.grid.ring_sites(Point::new(0.0, 0.0), radius)?;
        Ok(ring
            .iter()
            .map(|&s| self.value(s).abs())
            .fold(0.0, f64::max))
    }

    /// Max mean-value defect over solved sites; used to confirm the solve.
    pub fn harmonicity_residual(&self) -> f64 {
        let n = self.grid.n_sites();
        let mut worst: f64 = 0.0;
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let idx = iy * n + ix;
                if !self.solved[idx] {
                    continue;
                }
                let nb = self.values[idx - 1]
                    + self.values[idx + 1]
                    + self.values[idx - n]
                    + self.values[idx + n];
                worst = worst.max((self.values[idx] - nb / 4.0).abs());
            }
        }
        worst
    }
}

const HARMONIC_RESIDUAL_TOL: f64 = 1e-9;

/// Solves the harmonic extension of the field's unit-ring values into
/// `{|z| > 1}` and measures the roughness of the boundary condition: the sup
/// of the extension over the ring at radius `1 + epsilon`.
pub fn harmonic_roughness(field: &LatticeField, epsilon: f64) -> Result<(HarmonicProfile, f64)> {
    if field.normalization != Normalization::ZeroUnitCircle {
        return Err(LqlError::Domain(
            "roughness is defined for zero-unit-circle normalized fields".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(LqlError::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let grid = field.grid;
    let spacing = grid.spacing();
    if grid.half_extent() < 1.0 + 4.0 * epsilon + 2.0 * spacing {
        return Err(LqlError::Domain(format!(
            "grid half extent {} too small for epsilon = {epsilon}",
            grid.half_extent()
        )));
    }
    let n = grid.n_sites();
    let ring = grid.ring_sites(Point::new(0.0, 0.0), 1.0)?;
    let mut values = vec![0.0f64; n * n];
    let mut is_data = vec![false; n * n];
    for &s in &ring {
        let idx = grid.flat(s);
        values[idx] = field.values[idx];
        is_data[idx] = true;
    }
    // Unknowns: sites strictly outside the unit ring band, off the grid
    // boundary. Their neighbors are unknowns, ring data, or the zero boundary.
    let mut unknown_idx = vec![usize::MAX; n * n];
    let mut unknowns = Vec::new();
    for s in grid.sites() {
        let idx = grid.flat(s);
        if grid.on_boundary(s) || is_data[idx] {
            continue;
        }
        if grid.point(s).norm() > 1.0 + spacing / 2.0 {
            unknown_idx[idx] = unknowns.len();
            unknowns.push(idx);
        }
    }
    let solution = solve_laplace(grid, &values, &unknown_idx, &unknowns)?;
    for (k, &idx) in unknowns.iter().enumerate() {
        values[idx] = solution[k];
    }
    let mut solved = vec![false; n * n];
    for &idx in &unknowns {
        solved[idx] = true;
    }
    let profile = HarmonicProfile {
        grid,
        epsilon,
        values,
        solved,
    };
    let residual = profile.harmonicity_residual();
    if residual > HARMONIC_RESIDUAL_TOL {
        return Err(LqlError::Numerical(format!(
            "harmonic solve residual {residual:e} above {HARMONIC_RESIDUAL_TOL:e}"
        )));
    }
    let roughness = profile.ring_sup(1.0 + epsilon)?;
    Ok((profile, roughness))
}

/// Conjugate gradient for the Dirichlet Laplacian with fixed data sites.
fn solve_laplace(
    grid: GridSpec,
    data: &[f64],
    unknown_idx: &[usize],
    unknowns: &[usize],
) -> Result<Vec<f64>> {
    let n = grid.n_sites();
    let m = unknowns.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let neighbors = |idx: usize| {
        let (ix, iy) = (idx % n, idx / n);
        [
            (ix > 0).then(|| idx - 1),
            (ix + 1 < n).then(|| idx + 1),
            (iy > 0).then(|| idx - n),
            (iy + 1 < n).then(|| idx + n),
        ]
    };
    // b_u = sum of fixed-data neighbor values; A x = (4x - sum of unknown
    // neighbor values).
    let mut b = vec![0.0f64; m];
    for (k, &idx) in unknowns.iter().enumerate() {
        for nb in neighbors(idx).into_iter().flatten() {
            if unknown_idx[nb] == usize::MAX {
                b[k] += data[nb];
            }
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, &idx) in unknowns.iter().enumerate() {
            let mut acc = 4.0 * x[k];
            for nb in neighbors(idx).into_iter().flatten() {
                let j = unknown_idx[nb];
                if j != usize::MAX {
                    acc -= x[j];
                }
            }
            out[k] = acc;
        }
    };
    let mut x = vec![0.0f64; m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0f64; m];
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let b_inf = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * b_inf.max(1.0);
    let max_iter = 40 * (m as f64).sqrt() as usize + 2000;
    for _ in 0..max_iter {
        let r_inf = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if r_inf <= tol {
            return Ok(x);
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
    let r_inf = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r_inf <= tol {
        Ok(x)
    } else {
        Err(LqlError::Numerical(format!(
            "conjugate gradient stalled at residual {r_inf:e}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_grid() -> GridSpec {
        GridSpec::new(17, 0.25).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = small_grid();
        let a = sample_gff(g, 7, Normalization::Raw).unwrap();
        let b = sample_gff(g, 7, Normalization::Raw).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample_gff(g, 8, Normalization::Raw).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_unit_circle_normalization_holds() {
        let g = small_grid();
        for seed in 0..20 {
            let f = sample_gff(g, seed, Normalization::ZeroUnitCircle).unwrap();
            let avg = circle_average(&f, Point::new(0.0, 0.0), 1.0).unwrap();
            assert!(avg.abs() <= 1e-12, "avg = {avg:e}");
        }
    }

    #[test]
    fn single_interior_site_variance_matches_green_oracle() {
        // n = 3 at unit spacing: one interior site. The exact variance is
        // 2 pi / 4 = pi / 2 from inverting the one-site Laplacian directly.
        let g = GridSpec::new(3, 1.0).unwrap();
        let oracle = TAU / 4.0;
        let n_samples = 100_000;
        let mut sum_sq = 0.0;
        for seed in 0..n_samples {
            let f = sample_gff(g, seed, Normalization::Raw).unwrap();
            let v = f.value(g.origin());
            sum_sq += v * v;
        }
        let est = sum_sq / n_samples as f64;
        // SE of the sample variance of a Gaussian.
        let se = oracle * (2.0 / n_samples as f64).sqrt();
        assert!(
            (est - oracle).abs() <= 5.0 * se,
            "estimated {est}, oracle {oracle}, se {se}"
        );
    }

    #[test]
    fn circle_average_of_constant_is_constant() {
        let g = small_grid();
        let f = LatticeField::constant(g, 3.25).unwrap();
        let avg = circle_average(&f, Point::new(0.0, 0.0), 1.0).unwrap();
        assert_abs_diff_eq!(avg, 3.25, epsilon = 1e-14);
    }

    #[test]
    fn circle_average_of_odd_field_vanishes() {
        let g = small_grid();
        let f = LatticeField::from_fn(g, |p| p.x).unwrap();
        let avg = circle_average(&f, Point::new(0.0, 0.0), 1.0).unwrap();
        assert!(avg.abs() < 1e-12);
    }

    #[test]
    fn circle_average_is_linear() {
        let g = small_grid();
        let f = sample_gff(g, 1, Normalization::Raw).unwrap();
        let h = sample_gff(g, 2, Normalization::Raw).unwrap();
        let combo_values: Vec<f64> = f
            .values()
            .iter()
            .zip(h.values())
            .map(|(a, b)| 2.5 * a - 0.75 * b)
            .collect();
        let combo = LatticeField::from_values(g, combo_values, Normalization::Raw).unwrap();
        let center = Point::new(0.25, -0.5);
        let lhs = circle_average(&combo, center, 0.8).unwrap();
        let rhs = 2.5 * circle_average(&f, center, 0.8).unwrap()
            - 0.75 * circle_average(&h, center, 0.8).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn trace_requires_increasing_radii() {
        let g = small_grid();
        let f = sample_gff(g, 3, Normalization::Raw).unwrap();
        assert!(circle_average_trace(&f, Point::new(0.0, 0.0), &[1.0, 0.5]).is_err());
        let t = circle_average_trace(&f, Point::new(0.0, 0.0), &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(t.radii().len(), t.averages().len());
    }

    #[test]
    fn rescale_identity_at_unit_scale() {
        let g = small_grid();
        let f = sample_gff(g, 11, Normalization::ZeroUnitCircle).unwrap();
        let out = rescale_recenter(&f, 1.0).unwrap();
        assert_eq!(out.grid().n_sites(), g.n_sites());
        for s in g.sites() {
            assert!(
                (out.value(s) - f.value(s)).abs() < 1e-10,
                "site {s} changed"
            );
        }
    }

    #[test]
    fn rescale_kills_constants() {
        let g = GridSpec::new(33, 0.25).unwrap();
        let f = LatticeField::constant(g, 4.2).unwrap();
        let out = rescale_recenter(&f, 1.7).unwrap();
        for v in out.values() {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn rescale_output_is_recentered() {
        let g = GridSpec::new(65, 0.25).unwrap();
        for seed in 0..50 {
            let f = sample_gff(g, seed, Normalization::ZeroUnitCircle).unwrap();
            let r = 1.0 + (seed as f64) * 0.05;
            let out = rescale_recenter(&f, r).unwrap();
            let avg = circle_average(&out, Point::new(0.0, 0.0), 1.0).unwrap();
            assert!(avg.abs() < 1e-10, "seed {seed}, r {r}: avg {avg:e}");
        }
    }

    #[test]
    fn rescale_too_large_errors() {
        let g = small_grid();
        let f = sample_gff(g, 0, Normalization::Raw).unwrap();
        assert!(rescale_recenter(&f, 100.0).is_err());
    }

    #[test]
    fn dirichlet_inner_zero() {
        let g = small_grid();
        let z = DirichletVector::zeros(g);
        assert_eq!(dirichlet_inner(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn dirichlet_energy_of_indicator() {
        // Indicator of one interior site: four unit edges, energy 4/2pi = 2/pi.
        let g = small_grid();
        let mut values = vec![0.0; g.len()];
        values[g.flat(g.origin())] = 1.0;
        let f = DirichletVector::new(g, values).unwrap();
        let energy = dirichlet_inner(&f, &f).unwrap();
        assert_abs_diff_eq!(energy, 2.0 / std::f64::consts::PI, epsilon = 1e-14);
    }

    #[test]
    fn dirichlet_inner_is_bilinear() {
        let g = small_grid();
        let f1 = DirichletVector::from_fn(g, |p| (p.x * 3.0).sin()).unwrap();
        let f2 = DirichletVector::from_fn(g, |p| p.x * p.y).unwrap();
        let gv = DirichletVector::from_fn(g, |p| (p.y * 2.0).cos()).unwrap();
        let (a, b) = (1.3, -0.4);
        let combo_values: Vec<f64> = f1
            .values()
            .iter()
            .zip(f2.values())
            .map(|(u, v)| a * u + b * v)
            .collect();
        let combo = DirichletVector::new(g, combo_values).unwrap();
        let lhs = dirichlet_inner(&combo, &gv).unwrap();
        let rhs = a * dirichlet_inner(&f1, &gv).unwrap() + b * dirichlet_inner(&f2, &gv).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn dirichlet_inner_grid_mismatch_errors() {
        let a = DirichletVector::zeros(small_grid());
        let b = DirichletVector::zeros(GridSpec::new(33, 0.25).unwrap());
        assert!(dirichlet_inner(&a, &b).is_err());
    }

    #[test]
    fn cameron_martin_at_zero_shift_is_one() {
        let g = small_grid();
        let sample = sample_gff(g, 5, Normalization::Raw).unwrap();
        let f = DirichletVector::zeros(g);
        assert_eq!(cameron_martin_rn(&sample, &f).unwrap(), 1.0);
    }

    #[test]
    fn cameron_martin_rejects_normalized_sample() {
        let g = small_grid();
        let sample = sample_gff(g, 5, Normalization::ZeroUnitCircle).unwrap();
        let f = DirichletVector::zeros(g);
        assert!(cameron_martin_rn(&sample, &f).is_err());
    }

    /// Smooth bump scaled to the requested Dirichlet energy.
    fn bump_with_energy(g: GridSpec, target: f64) -> DirichletVector {
        let ext = g.half_extent();
        let raw = DirichletVector::from_fn(g, |p| {
            let r = p.norm() / (0.8 * ext);
            if r < 1.0 {
                (1.0 - 1.0 / (1.0 - r * r)).exp()
            } else {
                0.0
            }
        })
        .unwrap();
        let energy = dirichlet_inner(&raw, &raw).unwrap();
        raw.scaled((target / energy).sqrt())
    }

    #[test]
    fn cameron_martin_monte_carlo_identities() {
        let g = small_grid();
        let f = bump_with_energy(g, 0.3);
        let energy = dirichlet_inner(&f, &f).unwrap();
        assert!(energy <= 0.5);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let sample = sample_gff(g, seed, Normalization::Raw).unwrap();
            let rn = cameron_martin_rn(&sample, &f).unwrap();
            sum += rn;
            sum_sq += rn * rn;
        }
        let mean = sum / n as f64;
        let second = sum_sq / n as f64;
        // E[rn] = 1 with Var = e^{sigma^2} - 1.
        let var = energy.exp() - 1.0;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
        let expected_second = energy.exp();
        assert!(
            (second - expected_second).abs() <= 0.05 * expected_second,
            "second moment {second} vs {expected_second}"
        );
    }

    #[test]
    fn zero_ring_has_zero_roughness() {
        let g = GridSpec::new(65, 0.2).unwrap();
        // Zero field is trivially zero-unit-circle normalized.
        let f =
            LatticeField::from_values(g, vec![0.0; g.len()], Normalization::ZeroUnitCircle)
                .unwrap();
        let (_, rough) = harmonic_roughness(&f, 0.4).unwrap();
        assert_eq!(rough, 0.0);
    }

    /// Dense Gaussian elimination oracle for the harmonic extension.
    fn dense_harmonic_oracle(field: &LatticeField) -> Vec<f64> {
        let g = field.grid();
        let n = g.n_sites();
        let ring = g.ring_sites(Point::new(0.0, 0.0), 1.0).unwrap();
        let mut fixed = vec![false; n * n];
        let mut vals = vec![0.0f64; n * n];
        for &s in &ring {
            fixed[g.flat(s)] = true;
            vals[g.flat(s)] = field.value(s);
        }
        let mut unknowns = Vec::new();
        let mut pos = vec![usize::MAX; n * n];
        for s in g.sites() {
            let idx = g.flat(s);
            if !g.on_boundary(s) && !fixed[idx] && g.point(s).norm() > 1.0 + g.spacing() / 2.0 {
                pos[idx] = unknowns.len();
                unknowns.push(idx);
            }
        }
        let m = unknowns.len();
        let mut a = vec![0.0f64; m * m];
        let mut b = vec![0.0f64; m];
        for (k, &idx) in unknowns.iter().enumerate() {
            a[k * m + k] = 4.0;
            let (ix, iy) = (idx % n, idx / n);
            let nbs = [
                (ix > 0).then(|| idx - 1),
                (ix + 1 < n).then(|| idx + 1),
                (iy > 0).then(|| idx - n),
                (iy + 1 < n).then(|| idx + n),
            ];
            for nb in nbs.into_iter().flatten() {
                if pos[nb] != usize::MAX {
                    a[k * m + pos[nb]] = -1.0;
                } else if fixed[nb] {
                    b[k] += vals[nb];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
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
                b.swap(col, piv);
            }
            let d = a[col * m + col];
            for row in col + 1..m {
                let factor = a[row * m + col] / d;
                if factor == 0.0 {
                    continue;
                }
                for j in col..m {
                    a[row * m + j] -= factor * a[col * m + j];
                }
                b[row] -= factor * b[col];
            }
        }
        let mut x = vec![0.0f64; m];
        for row in (0..m).rev() {
            let mut acc = b[row];
            for j in row + 1..m {
                acc -= a[row * m + j] * x[j];
            }
            x[row] = acc / a[row * m + row];
        }
        for (k, &idx) in unknowns.iter().enumerate() {
            vals[idx] = x[k];
        }
        vals
    }

    #[test]
    fn spike_roughness_matches_dense_oracle() {
        let g = GridSpec::new(33, 0.25).unwrap();
        let ring = g.ring_sites(Point::new(0.0, 0.0), 1.0).unwrap();
        let spike_site = ring[0];
        let mut values = vec![0.0; g.len()];
        values[g.flat(spike_site)] = 1.0;
        let raw = LatticeField::from_values(g, values, Normalization::Raw).unwrap();
        let avg = circle_average(&raw, Point::new(0.0, 0.0), 1.0).unwrap();
        let field = LatticeField::from_values(
            g,
            raw.values().iter().map(|v| v - avg).collect(),
            Normalization::ZeroUnitCircle,
        )
        .unwrap();
        let eps = 0.5;
        let (profile, rough) = harmonic_roughness(&field, eps).unwrap();
        let oracle = dense_harmonic_oracle(&field);
        for s in g.sites() {
            let idx = g.flat(s);
            assert!(
                (profile.values()[idx] - oracle[idx]).abs() < 1e-8,
                "site {s}: {} vs {}",
                profile.values()[idx],
                oracle[idx]
            );
        }
        // The roughness is attained at the measurement-ring site nearest the
        // spike direction.
        let meas_ring = g.ring_sites(Point::new(0.0, 0.0), 1.0 + eps).unwrap();
        let spike_pt = g.point(spike_site);
        let spike_dir = Point::new(spike_pt.x / spike_pt.norm(), spike_pt.y / spike_pt.norm());
        let target = Point::new(spike_dir.x * (1.0 + eps), spike_dir.y * (1.0 + eps));
        let nearest = meas_ring
            .iter()
            .copied()
            .min_by(|a, b| {
                g.point(*a)
                    .dist(target)
                    .partial_cmp(&g.point(*b).dist(target))
                    .unwrap()
            })
            .unwrap();
        assert_abs_diff_eq!(rough, profile.value(nearest).abs(), epsilon = 1e-9);
    }

    #[test]
    fn harmonic_extension_decays_outward() {
        let g = GridSpec::new(65, 0.15).unwrap();
        for seed in 0..100 {
            let f = sample_gff(g, seed, Normalization::ZeroUnitCircle).unwrap();
            let (profile, _) = harmonic_roughness(&f, 0.3).unwrap();
            let s1 = profile.ring_sup(1.0).unwrap();
            let s2 = profile.ring_sup(2.0).unwrap();
            let s4 = profile.ring_sup(4.0).unwrap();
            assert!(s2 <= s1 + 1e-12, "seed {seed}: {s2} > {s1}");
            assert!(s4 <= s2 + 1e-12, "seed {seed}: {s4} > {s2}");
        }
    }

    #[test]
    fn harmonicity_residual_is_tiny() {
        let g = GridSpec::new(65, 0.2).unwrap();
        let f = sample_gff(g, 42, Normalization::ZeroUnitCircle).unwrap();
        let (profile, _) = harmonic_roughness(&f, 0.4).unwrap();
        assert!(profile.harmonicity_residual() < 1e-9);
    }
}
