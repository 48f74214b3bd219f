//! Flat key-value experiment configuration.
//!
//! The file format is `key = value` lines with `#` comments; every key has a
//! default, unknown keys are rejected. Values echo into output sidecars so
//! runs stay diffable.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gamma: f64,
    pub d_gamma: f64,
    pub k: f64,
    pub i_min: i32,
    pub i_max: i32,
    pub delta: f64,
    pub delta_prime: f64,
    pub rho: f64,
    pub grid_n: usize,
    pub spacing: f64,
    pub n_probe: usize,
    pub n_replicates: usize,
    pub base_seed: u64,
    /// Log-length targets for empirical sampling; empty means the largest
    /// admissible t per replicate.
    pub t_values: Vec<f64>,
    pub mesh_resolution: usize,
    pub n_quad: usize,
    pub n_empirical: usize,
    /// Ring-gate bias amplitudes; zero disables the tilt and samples the
    /// plain GFF.
    pub tilt_gate_depth: f64,
    pub tilt_barrier: f64,
    pub tilt_gate_halfwidth: f64,
    /// Named statistical thresholds (artifact conventions, not paper values).
    pub ks_p_threshold: f64,
    pub se_multiplier: f64,
    pub hill_k_fraction: f64,
    pub identity_tolerance: f64,
    pub z_bound_tolerance: f64,
    pub slln_drift_threshold: f64,
    pub size_biased_ks_threshold: f64,
    pub shortcut_epsilons: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gamma: (8.0f64 / 3.0).sqrt(),
            d_gamma: 4.0,
            k: 2.0,
            i_min: 0,
            i_max: 2,
            delta: 0.5,
            delta_prime: 0.5,
            rho: 0.01,
            grid_n: 513,
            spacing: 0.06,
            n_probe: 8,
            n_replicates: 4,
            base_seed: 1,
            t_values: Vec::new(),
            mesh_resolution: 9,
            n_quad: 32,
            n_empirical: 8,
            tilt_gate_depth: 2.0,
            tilt_barrier: 16.0,
            tilt_gate_halfwidth: 0.1,
            ks_p_threshold: 0.01,
            se_multiplier: 2.0,
            hill_k_fraction: 0.05,
            identity_tolerance: 1e-9,
            z_bound_tolerance: 1e-6,
            slln_drift_threshold: 0.10,
            size_biased_ks_threshold: 0.15,
            shortcut_epsilons: vec![0.2, 0.04],
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &map {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                CliError::Config(format!("key {key}: cannot parse value `{value}`"))
            })
        }
        fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
            if value == "max" || value.is_empty() {
                return Ok(Vec::new());
            }
            value
                .split(',')
                .map(|v| {
                    v.trim().parse().map_err(|_| {
                        CliError::Config(format!("key {key}: bad list element `{v}`"))
                    })
                })
                .collect()
        }
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "d_gamma" => self.d_gamma = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "i_min" => self.i_min = parse(key, value)?,
            "i_max" => self.i_max = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "delta_prime" => self.delta_prime = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "grid_n" => self.grid_n = parse(key, value)?,
            "spacing" => self.spacing = parse(key, value)?,
            "n_probe" => self.n_probe = parse(key, value)?,
            "n_replicates" => self.n_replicates = parse(key, value)?,
            "base_seed" => self.base_seed = parse(key, value)?,
            "t_values" => self.t_values = parse_list(key, value)?,
            "mesh_resolution" => self.mesh_resolution = parse(key, value)?,
            "n_quad" => self.n_quad = parse(key, value)?,
            "n_empirical" => self.n_empirical = parse(key, value)?,
            "tilt_gate_depth" => self.tilt_gate_depth = parse(key, value)?,
            "tilt_barrier" => self.tilt_barrier = parse(key, value)?,
            "tilt_gate_halfwidth" => self.tilt_gate_halfwidth = parse(key, value)?,
            "ks_p_threshold" => self.ks_p_threshold = parse(key, value)?,
            "se_multiplier" => self.se_multiplier = parse(key, value)?,
            "hill_k_fraction" => self.hill_k_fraction = parse(key, value)?,
            "identity_tolerance" => self.identity_tolerance = parse(key, value)?,
            "z_bound_tolerance" => self.z_bound_tolerance = parse(key, value)?,
            "slln_drift_threshold" => self.slln_drift_threshold = parse(key, value)?,
            "size_biased_ks_threshold" => self.size_biased_ks_threshold = parse(key, value)?,
            "shortcut_epsilons" => self.shortcut_epsilons = parse_list(key, value)?,
            other => {
                return Err(CliError::Config(format!("unknown configuration key `{other}`")));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(CliError::Config("n_replicates must be >= 1".into()));
        }
        // Range checks owned by the library types run at use; fail fast on
        // the cheap ones here.
        lqlab::metric::LqgParams::new(self.gamma, self.d_gamma)
            .map_err(|e| CliError::Config(e.to_string()))?;
        lqlab::grid::GridSpec::new(self.grid_n, self.spacing)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let schedule = lqlab::renewal::AnnulusSchedule::new(self.k, self.i_min, self.i_max)
            .map_err(|e| CliError::Config(e.to_string()))?;
        schedule
            .validate_for_grid(lqlab::grid::GridSpec::new(self.grid_n, self.spacing).unwrap())
            .map_err(|e| CliError::Config(e.to_string()))?;
        lqlab::empirical::ProbeDisk::new(self.mesh_resolution, self.delta)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.rho > 0.0) {
            return Err(CliError::Config(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if self.n_probe == 0 {
            return Err(CliError::Config("n_probe must be at least 1".into()));
        }
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            return Err(CliError::Config(format!(
                "delta_prime must lie in (0, 1), got {}",
                self.delta_prime
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> lqlab::metric::LqgParams {
        lqlab::metric::LqgParams::new(self.gamma, self.d_gamma).expect("validated")
    }

    pub fn grid(&self) -> lqlab::grid::GridSpec {
        lqlab::grid::GridSpec::new(self.grid_n, self.spacing).expect("validated")
    }

    pub fn schedule(&self) -> lqlab::renewal::AnnulusSchedule {
        lqlab::renewal::AnnulusSchedule::new(self.k, self.i_min, self.i_max).expect("validated")
    }

    /// Seed for one replicate stream: a splitmix expansion of
    /// `base_seed + index`.
    pub fn replicate_seed(&self, index: usize) -> u64 {
        splitmix64(self.base_seed.wrapping_add(index as u64))
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
