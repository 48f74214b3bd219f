//! Pipeline stages: replicate sampling, geodesic extraction, segment
//! decomposition, empirical sampling and diagnostics. Each stage reads the
//! files of the previous one, so reruns are reproducible from disk.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lqlab::empirical::{
    pair_functional, rooted_field, sample_empirical, segment_quadrature, size_bias_weight,
    z_statistic, EnsembleMember, ProbeDisk, TestFunctional,
};
use lqlab::field::{
    add_fields, recenter_on_unit_circle, ring_gate_bias, sample_gff, LatticeField, Normalization,
};
use lqlab::grid::{Point, Site};
use lqlab::io::{
    path_json_line, read_field, write_decomposition_csv, write_distance_csv, write_field,
    EmpiricalSampleJson, ScheduleSidecar,
};
use lqlab::metric::{build_metric, MetricField};
use lqlab::renewal::{
    decompose_segments, detect_all, trace_geodesic, CoalescenceRecord, SegmentDecomposition,
};
use lqlab::stats::{shortcut_event, stationarity_ks, tail_exponent, DiagnosticEntry, DiagnosticReport};
use lqlab::LqlError;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub replicates: Vec<ReplicateStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateStatus {
    pub stage: String,
    pub index: usize,
    pub status: String,
}

impl Manifest {
    fn load(out: &Path) -> Manifest {
        fs::read_to_string(out.join("manifest.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn prune_stage(&mut self, stage: &str) {
        self.entries.retain(|e| e.stage != stage);
        self.replicates.retain(|r| r.stage != stage);
    }

    fn save(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(out.join("manifest.json"), text)?;
        Ok(())
    }
}

fn record_file(manifest: &mut Manifest, stage: &str, out: &Path, name: &str) -> Result<()> {
    let bytes = fs::read(out.join(name))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    manifest.entries.push(ManifestEntry {
        stage: stage.to_string(),
        file: name.to_string(),
        sha256: hex,
    });
    Ok(())
}

fn field_name(r: usize) -> String {
    format!("field_{r:04}.lqgf")
}

fn records_name(r: usize) -> String {
    format!("records_{r:04}.json")
}

fn geodesic_name(r: usize) -> String {
    format!("geodesic_{r:04}.jsonl")
}

fn build_bias(cfg: &ExperimentConfig) -> Result<Option<LatticeField>> {
    if cfg.tilt_barrier == 0.0 && cfg.tilt_gate_depth == 0.0 {
        return Ok(None);
    }
    Ok(Some(ring_gate_bias(
        cfg.grid(),
        cfg.k,
        cfg.tilt_gate_depth,
        cfg.tilt_barrier,
        cfg.tilt_gate_halfwidth,
    )?))
}

fn sample_replicate_field(
    cfg: &ExperimentConfig,
    bias: &Option<LatticeField>,
    index: usize,
) -> Result<LatticeField> {
    let seed = cfg.replicate_seed(index);
    let noise = sample_gff(cfg.grid(), seed, Normalization::Raw)?;
    let field = match bias {
        Some(b) => recenter_on_unit_circle(&add_fields(&noise, b)?)?,
        None => recenter_on_unit_circle(&noise)?,
    };
    Ok(field)
}

/// Stage `sample`: write one field file per replicate.
pub fn stage_sample(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let bias = build_bias(cfg)?;
    let fields: Vec<(usize, LatticeField)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|r| sample_replicate_field(cfg, &bias, r).map(|f| (r, f)))
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::load(out);
    manifest.prune_stage("sample");
    for (r, field) in &fields {
        let name = field_name(*r);
        let mut file = fs::File::create(out.join(&name))?;
        write_field(&mut file, field)?;
        record_file(&mut manifest, "sample", out, &name)?;
        manifest.replicates.push(ReplicateStatus {
            stage: "sample".into(),
            index: *r,
            status: "ok".into(),
        });
    }
    manifest.save(out)?;
    Ok(())
}

fn load_field(cfg: &ExperimentConfig, out: &Path, r: usize) -> Result<LatticeField> {
    let path = out.join(field_name(r));
    if !path.exists() {
        return Err(CliError::MissingStage(format!(
            "sample (no {} in {})",
            field_name(r),
            out.display()
        )));
    }
    let mut file = fs::File::open(path)?;
    let field = read_field(&mut file)?;
    if field.grid() != cfg.grid() {
        return Err(CliError::Config(
            "field file does not match the configured grid".into(),
        ));
    }
    Ok(field)
}

fn load_metric(cfg: &ExperimentConfig, out: &Path, r: usize) -> Result<MetricField> {
    Ok(build_metric(load_field(cfg, out, r)?, cfg.params())?)
}

/// Stage `geodesic`: detect coalescence, trace the origin geodesic, export
/// records, the path and the origin-to-point distance table.
pub fn stage_geodesic(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let results: Vec<(usize, std::result::Result<usize, String>)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|r| -> Result<(usize, std::result::Result<usize, String>)> {
            let m = load_metric(cfg, out, r)?;
            let records = detect_all(&m, &cfg.schedule(), cfg.n_probe, cfg.rho)?;
            let records_json =
                serde_json::to_string_pretty(&records).expect("records serialize");
            fs::write(out.join(records_name(r)), records_json)?;
            match trace_geodesic(&m, &records) {
                Ok(path) => {
                    fs::write(out.join(geodesic_name(r)), path_json_line(&path) + "\n")?;
                    let origin = m.grid().origin();
                    let rows: Vec<(Site, Site, f64)> = records
                        .iter()
                        .filter(|rec| rec.occurred)
                        .map(|rec| {
                            let p = rec.point.expect("occurred record has a point");
                            let vertex = path
                                .sites()
                                .iter()
                                .position(|&s| s == p)
                                .expect("trace passes through detected points");
                            (origin, p, path.cumulative()[vertex])
                        })
                        .collect();
                    let mut csv = fs::File::create(out.join(format!("distances_{r:04}.csv")))?;
                    write_distance_csv(&mut csv, &rows)?;
                    Ok((r, Ok(rows.len())))
                }
                Err(e @ LqlError::EmptyRenewal(_)) | Err(e @ LqlError::Internal(_)) => {
                    Ok((r, Err(e.to_string())))
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::load(out);
    manifest.prune_stage("geodesic");
    let mut any_ok = false;
    for (r, status) in &results {
        record_file(&mut manifest, "geodesic", out, &records_name(*r))?;
        let status_text = match status {
            Ok(n) => {
                any_ok = true;
                record_file(&mut manifest, "geodesic", out, &geodesic_name(*r))?;
                record_file(&mut manifest, "geodesic", out, &format!("distances_{r:04}.csv"))?;
                format!("ok ({n} points)")
            }
            Err(msg) => msg.clone(),
        };
        manifest.replicates.push(ReplicateStatus {
            stage: "geodesic".into(),
            index: *r,
            status: status_text,
        });
    }
    manifest.save(out)?;
    if !any_ok {
        return Err(CliError::EmptyRenewal(format!(
            "none of the {} replicates produced a coalescence point",
            cfg.n_replicates
        )));
    }
    Ok(())
}

fn load_records(out: &Path, r: usize) -> Result<Vec<CoalescenceRecord>> {
    let path = out.join(records_name(r));
    if !path.exists() {
        return Err(CliError::MissingStage(format!(
            "geodesic (no {})",
            records_name(r)
        )));
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("bad records file: {e}")))
}

fn load_decomposition(
    cfg: &ExperimentConfig,
    out: &Path,
    r: usize,
) -> Result<Option<(MetricField, SegmentDecomposition)>> {
    let geo_path = out.join(geodesic_name(r));
    if !geo_path.exists() {
        // Replicate failed at the geodesic stage.
        return Ok(None);
    }
    let m = load_metric(cfg, out, r)?;
    let records = load_records(out, r)?;
    let text = fs::read_to_string(geo_path)?;
    let line = text.lines().next().unwrap_or("");
    let pairs: Vec<[usize; 2]> =
        serde_json::from_str(line).map_err(|e| CliError::Other(format!("bad geodesic: {e}")))?;
    let sites: Vec<Site> = pairs.iter().map(|p| Site::new(p[0], p[1])).collect();
    let path = m.path_from_sites(sites)?;
    let d = decompose_segments(&m, &cfg.schedule(), &records, &path)?;
    Ok(Some((m, d)))
}

/// Stage `decompose`: per-scale renewal tables plus the schedule sidecar.
pub fn stage_decompose(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let decomps: Vec<(usize, bool)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|r| -> Result<(usize, bool)> {
            match load_decomposition(cfg, out, r)? {
                None => Ok((r, false)),
                Some((_, d)) => {
                    let mut csv = fs::File::create(out.join(format!("decomposition_{r:04}.csv")))?;
                    write_decomposition_csv(&mut csv, &d)?;
                    let sidecar = ScheduleSidecar::new(
                        &cfg.schedule(),
                        cfg.rho,
                        cfg.n_probe,
                        cfg.replicate_seed(r),
                    );
                    fs::write(
                        out.join(format!("decomposition_{r:04}.json")),
                        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
                    )?;
                    Ok((r, true))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::load(out);
    manifest.prune_stage("decompose");
    for (r, ok) in &decomps {
        if *ok {
            record_file(&mut manifest, "decompose", out, &format!("decomposition_{r:04}.csv"))?;
            record_file(&mut manifest, "decompose", out, &format!("decomposition_{r:04}.json"))?;
        }
        manifest.replicates.push(ReplicateStatus {
            stage: "decompose".into(),
            index: *r,
            status: if *ok { "ok".into() } else { "skipped (no geodesic)".into() },
        });
    }
    manifest.save(out)?;
    Ok(())
}

/// Stage `empirical`: log-uniform rooted samples per replicate plus
/// size-biased draws over the ensemble.
pub fn stage_empirical(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let disk = ProbeDisk::new(cfg.mesh_resolution, cfg.delta)?;
    let loaded: Vec<(usize, Option<(MetricField, SegmentDecomposition)>)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|r| load_decomposition(cfg, out, r).map(|d| (r, d)))
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::load(out);
    manifest.prune_stage("empirical");
    let mut members = Vec::new();
    for (r, item) in &loaded {
        let Some((m, d)) = item else {
            manifest.replicates.push(ReplicateStatus {
                stage: "empirical".into(),
                index: *r,
                status: "skipped (no decomposition)".into(),
            });
            continue;
        };
        let name = format!("empirical_{r:04}.jsonl");
        let mut file = fs::File::create(out.join(&name))?;
        let t_max = d.geodesic().total_length().ln();
        let targets: Vec<f64> = if cfg.t_values.is_empty() {
            vec![t_max]
        } else {
            cfg.t_values.iter().map(|&t| t.min(t_max)).collect()
        };
        let targets: Vec<f64> = targets.into_iter().filter(|&t| t > 0.0).collect();
        let mut n_written = 0usize;
        for (ti, &t) in targets.iter().enumerate() {
            for s in 0..cfg.n_empirical {
                let seed = cfg
                    .replicate_seed(*r)
                    .wrapping_add(0x1000 * (ti as u64 + 1))
                    .wrapping_add(s as u64);
                match sample_empirical(m, d.geodesic(), &disk, t, seed) {
                    Ok(sample) => {
                        let json = EmpiricalSampleJson::from(&sample);
                        writeln!(
                            file,
                            "{}",
                            serde_json::to_string(&json).expect("sample serializes")
                        )?;
                        n_written += 1;
                    }
                    Err(LqlError::Domain(_)) | Err(LqlError::Resolution(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        record_file(&mut manifest, "empirical", out, &name)?;
        manifest.replicates.push(ReplicateStatus {
            stage: "empirical".into(),
            index: *r,
            status: format!("ok ({n_written} samples)"),
        });
        members.push((*r, m, d));
    }
    // Size-biased draws over the whole ensemble.
    let ensemble: Vec<EnsembleMember<'_>> = members
        .iter()
        .map(|(_, m, d)| EnsembleMember {
            decomposition: d,
            metric: m,
        })
        .collect();
    if !ensemble.is_empty() {
        let name = "size_biased.jsonl";
        let mut file = fs::File::create(out.join(name))?;
        let mut n_ok = 0usize;
        for s in 0..cfg.n_empirical {
            let seed = cfg.base_seed.wrapping_add(0x5B00).wrapping_add(s as u64);
            match lqlab::empirical::size_biased_sample(&ensemble, &disk, seed) {
                Ok(sample) => {
                    let json = EmpiricalSampleJson::from(&sample);
                    writeln!(file, "{}", serde_json::to_string(&json).expect("serializes"))?;
                    n_ok += 1;
                }
                Err(LqlError::EmptyRenewal(_)) => break,
                Err(LqlError::Resolution(_)) | Err(LqlError::Domain(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if n_ok > 0 {
            record_file(&mut manifest, "empirical", out, name)?;
        }
    }
    manifest.save(out)?;
    Ok(())
}

/// Fixed functional battery for the diagnostics: two off-center bumps with
/// the documented lambda weights.
fn functional_battery(disk: &ProbeDisk) -> Result<(Vec<f64>, Vec<TestFunctional>)> {
    let phis = vec![
        TestFunctional::bump(disk, Point::new(0.15, -0.2), 0.5, "bump_a")?,
        TestFunctional::bump(disk, Point::new(-0.25, 0.3), 0.4, "bump_b")?,
    ];
    Ok((vec![0.8, 0.5], phis))
}

/// Stage `diagnose`: every statistic the acceptance suite checks, written as
/// one report plus plot-ready curve files.
pub fn stage_diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let disk = ProbeDisk::new(cfg.mesh_resolution, cfg.delta)?;
    let (lambdas, phis) = functional_battery(&disk)?;
    let loaded: Vec<(usize, Option<(MetricField, SegmentDecomposition)>)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|r| load_decomposition(cfg, out, r).map(|d| (r, d)))
        .collect::<Result<_>>()?;
    if loaded.iter().all(|(_, d)| d.is_none()) {
        return Err(CliError::EmptyRenewal(
            "diagnose needs at least one decomposed replicate".into(),
        ));
    }

    let mut report = DiagnosticReport::default();
    let seeds: Vec<u64> = (0..cfg.n_replicates).map(|r| cfg.replicate_seed(r)).collect();
    let schedule = cfg.schedule();

    // Identity and telescoping errors.
    let mut identity_err = 0.0f64;
    let mut telescope_err = 0.0f64;
    let mut n_scales_checked = 0usize;
    // Renewal observables.
    let mut ys: Vec<(i32, f64)> = Vec::new();
    let mut g_sequences: Vec<Vec<f64>> = Vec::new();
    let mut z_g: Vec<(Complex64, f64)> = Vec::new();
    let mut occurrences = vec![0usize; schedule.n_scales()];
    let mut n_valid = 0usize;
    let mut z_excess = f64::NEG_INFINITY;

    for (_, item) in &loaded {
        let Some((m, d)) = item else { continue };
        n_valid += 1;
        for rec in d.records() {
            if rec.occurred {
                occurrences[(rec.scale - schedule.i_min()) as usize] += 1;
            }
        }
        let complete: Vec<i32> = d.complete_scales().collect();
        for &i in &complete {
            let direct = d.g_at(i)?.unwrap();
            let formula = d.formula_g(i)?.unwrap();
            identity_err = identity_err.max((direct - formula).abs());
            n_scales_checked += 1;
        }
        telescope_err = telescope_err.max(
            (d.total_g() - (d.lengths().last().unwrap().ln() - d.lengths()[0].ln())).abs(),
        );
        for (scale, y, _) in d.detected_complete() {
            ys.push((scale, y));
        }
        let gs: Vec<f64> = complete.iter().map(|&i| d.g_at(i).unwrap().unwrap()).collect();
        let quads = segment_quadrature(m, d, &disk, cfg.n_quad)?;
        let zs = z_statistic(d, &quads, &lambdas, &phis)?;
        let mut z_complete = Vec::new();
        for (i, z) in schedule.scales().zip(&zs) {
            if complete.contains(&i) {
                z_complete.push(z.unwrap());
            }
        }
        for (z, g) in z_complete.iter().zip(&gs) {
            z_excess = z_excess.max(z.norm() - g);
            z_g.push((*z, *g));
        }
        g_sequences.push(gs);
    }

    report.push(DiagnosticEntry {
        name: "renewal_identity_max_error".into(),
        value: identity_err,
        ci_lo: None,
        ci_hi: None,
        tolerance: Some(cfg.identity_tolerance),
        pass: identity_err < cfg.identity_tolerance && n_scales_checked > 0,
        n: n_scales_checked,
        seeds: seeds.clone(),
    });
    report.push(DiagnosticEntry {
        name: "telescoping_max_error".into(),
        value: telescope_err,
        ci_lo: None,
        ci_hi: None,
        tolerance: Some(cfg.identity_tolerance),
        pass: telescope_err < cfg.identity_tolerance && n_valid > 0,
        n: n_valid,
        seeds: seeds.clone(),
    });

    // Coalescence fraction pooled over scales, with a normal-approximation CI.
    let total_flags = cfg.n_replicates * schedule.n_scales();
    let total_occ: usize = occurrences.iter().sum();
    let frac = total_occ as f64 / total_flags as f64;
    let se = (frac * (1.0 - frac) / total_flags as f64).sqrt();
    report.push(DiagnosticEntry {
        name: "coalescence_fraction".into(),
        value: frac,
        ci_lo: Some((frac - 1.96 * se).max(0.0)),
        ci_hi: Some((frac + 1.96 * se).min(1.0)),
        tolerance: None,
        pass: total_occ > 0,
        n: total_flags,
        seeds: seeds.clone(),
    });

    // Stationarity between an inner and an outer complete scale; the
    // innermost scale carries documented discretization drift and is
    // skipped when the schedule allows it.
    let low_scale = if schedule.n_scales() > 3 {
        schedule.i_min() + 1
    } else {
        schedule.i_min()
    };
    let high_scale = schedule.i_max() - 1;
    let low: Vec<f64> = ys.iter().filter(|(s, _)| *s == low_scale).map(|(_, y)| *y).collect();
    let high: Vec<f64> = ys.iter().filter(|(s, _)| *s == high_scale).map(|(_, y)| *y).collect();
    if low_scale < high_scale && low.len() >= 5 && high.len() >= 5 {
        let (stat, p) = stationarity_ks(&low, &high)?;
        report.push(DiagnosticEntry {
            name: "y_stationarity_ks_p".into(),
            value: p,
            ci_lo: None,
            ci_hi: None,
            tolerance: Some(cfg.ks_p_threshold),
            pass: p > cfg.ks_p_threshold,
            n: low.len() + high.len(),
            seeds: seeds.clone(),
        });
        let _ = stat;
    }

    // Pooled lag autocorrelation of the G sequences.
    let mut curve_rows = Vec::new();
    let max_len = g_sequences.iter().map(|g| g.len()).max().unwrap_or(0);
    for lag in 0..max_len {
        let mut pairs = Vec::new();
        for gs in &g_sequences {
            for i in 0..gs.len().saturating_sub(lag) {
                pairs.push((gs[i], gs[i + lag]));
            }
        }
        if pairs.len() < 8 {
            continue;
        }
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let vx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let vy: f64 = pairs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
        if vx <= 0.0 || vy <= 0.0 {
            continue;
        }
        let corr = cov / (vx * vy).sqrt();
        let se = 1.0 / (pairs.len() as f64).sqrt();
        curve_rows.push((lag, corr, se, pairs.len()));
        if lag >= 3 {
            report.push(DiagnosticEntry {
                name: format!("g_autocorrelation_lag{lag}"),
                value: corr,
                ci_lo: Some(corr - cfg.se_multiplier * se),
                ci_hi: Some(corr + cfg.se_multiplier * se),
                tolerance: Some(cfg.se_multiplier * se),
                pass: corr.abs() < cfg.se_multiplier * se,
                n: pairs.len(),
                seeds: seeds.clone(),
            });
        }
    }

    // Tail exponent of the positive rescaled lengths.
    let y_pos: Vec<f64> = ys.iter().map(|(_, y)| *y).filter(|&y| y > 0.0).collect();
    if y_pos.len() >= 50 {
        let k = ((y_pos.len() as f64 * cfg.hill_k_fraction) as usize).max(5);
        let tail = tail_exponent(&y_pos, k, 400, cfg.base_seed ^ 0x7A11)?;
        report.push(DiagnosticEntry {
            name: "y_tail_exponent".into(),
            value: tail.theta,
            ci_lo: Some(tail.ci_lo),
            ci_hi: Some(tail.ci_hi),
            tolerance: None,
            pass: tail.theta > 0.0 && tail.ci_lo > 0.0,
            n: y_pos.len(),
            seeds: seeds.clone(),
        });
    }

    // Z-bound and the running SLLN ratio.
    if !z_g.is_empty() {
        report.push(DiagnosticEntry {
            name: "z_bound_max_excess".into(),
            value: z_excess,
            ci_lo: None,
            ci_hi: None,
            tolerance: Some(cfg.z_bound_tolerance),
            pass: z_excess <= cfg.z_bound_tolerance,
            n: z_g.len(),
            seeds: seeds.clone(),
        });
        let mut z_acc = Complex64::new(0.0, 0.0);
        let mut g_acc = 0.0;
        let mut ratios = Vec::new();
        for (z, g) in &z_g {
            z_acc += z;
            g_acc += g;
            if g_acc > 0.0 {
                ratios.push(z_acc / g_acc);
            }
        }
        if ratios.len() >= 4 {
            let last = *ratios.last().unwrap();
            let drift = ratios[ratios.len() / 2..]
                .iter()
                .map(|r| (r - last).norm() / last.norm().max(1e-12))
                .fold(0.0f64, f64::max);
            report.push(DiagnosticEntry {
                name: "slln_ratio_drift".into(),
                value: drift,
                ci_lo: None,
                ci_hi: None,
                tolerance: Some(cfg.slln_drift_threshold),
                pass: drift < cfg.slln_drift_threshold,
                n: ratios.len(),
                seeds: seeds.clone(),
            });
        }
    }

    // Shortcut events at mid-geodesic roots: the crossing bound makes them
    // impossible where the geodesic runs through the disk center.
    let mut shortcut_checked = 0usize;
    let mut shortcut_violations = 0usize;
    for (_, item) in &loaded {
        let Some((m, d)) = item else { continue };
        let grid = m.grid();
        let geo = d.geodesic();
        let half = geo.total_length() / 2.0;
        for &eps in &cfg.shortcut_epsilons {
            let candidate = geo
                .sites()
                .iter()
                .zip(geo.cumulative())
                .filter(|(&s, _)| {
                    let r = grid.point(s).norm();
                    r * cfg.delta * eps >= 2.0 * grid.spacing()
                        && r * (1.0 + cfg.delta) < grid.half_extent()
                })
                .min_by(|(_, &ca), (_, &cb)| {
                    (ca - half).abs().partial_cmp(&(cb - half).abs()).unwrap()
                })
                .map(|(&s, _)| s);
            let Some(site) = candidate else { continue };
            let x = grid.point(site);
            let radius = cfg.delta * x.norm();
            if grid.point(geo.start()).dist(x) <= radius
                || grid.point(geo.end()).dist(x) <= radius
            {
                continue;
            }
            match shortcut_event(m, x, radius, eps) {
                Ok(fired) => {
                    shortcut_checked += 1;
                    shortcut_violations += fired as usize;
                }
                Err(LqlError::Resolution(_)) | Err(LqlError::Domain(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    if shortcut_checked > 0 {
        report.push(DiagnosticEntry {
            name: "geodesic_shortcut_violations".into(),
            value: shortcut_violations as f64,
            ci_lo: None,
            ci_hi: None,
            tolerance: Some(0.0),
            pass: shortcut_violations == 0,
            n: shortcut_checked,
            seeds: seeds.clone(),
        });
    }

    // Size-biased vs largest-t pairing agreement.
    let members: Vec<(&MetricField, &SegmentDecomposition)> = loaded
        .iter()
        .filter_map(|(_, d)| d.as_ref().map(|(m, d)| (m, d)))
        .collect();
    let agreement = size_biased_pairings(cfg, &disk, &phis, &members)?;
    let mut ks_rows = Vec::new();
    if let Some((ks_values, n_sb, n_ft)) = agreement {
        for (idx, ks) in ks_values.iter().enumerate() {
            report.push(DiagnosticEntry {
                name: format!("size_biased_ks_{}", phis[idx].label),
                value: *ks,
                ci_lo: None,
                ci_hi: None,
                tolerance: Some(cfg.size_biased_ks_threshold),
                pass: *ks < cfg.size_biased_ks_threshold,
                n: n_sb + n_ft,
                seeds: seeds.clone(),
            });
            ks_rows.push((phis[idx].label.clone(), *ks));
        }
    }

    // Plot-ready curve files.
    let curves = out.join("curves");
    fs::create_dir_all(&curves)?;
    {
        let mut f = fs::File::create(curves.join("g_autocorrelation.csv"))?;
        writeln!(f, "lag,correlation,se,n_pairs")?;
        for (lag, corr, se, n) in &curve_rows {
            writeln!(f, "{lag},{corr},{se},{n}")?;
        }
    }
    {
        let mut f = fs::File::create(curves.join("coalescence_fractions.csv"))?;
        writeln!(f, "scale,radius,occurrences,n")?;
        for (idx, occ) in occurrences.iter().enumerate() {
            let scale = schedule.i_min() + idx as i32;
            writeln!(
                f,
                "{scale},{},{occ},{}",
                schedule.radius(scale),
                cfg.n_replicates
            )?;
        }
    }
    {
        let mut f = fs::File::create(curves.join("size_biased_ks.csv"))?;
        writeln!(f, "functional,ks")?;
        for (label, ks) in &ks_rows {
            writeln!(f, "{label},{ks}")?;
        }
    }

    let mut manifest = Manifest::load(out);
    manifest.prune_stage("diagnose");
    fs::write(
        out.join("diagnostics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    record_file(&mut manifest, "diagnose", out, "diagnostics.json")?;
    record_file(&mut manifest, "diagnose", out, "curves/g_autocorrelation.csv")?;
    record_file(&mut manifest, "diagnose", out, "curves/coalescence_fractions.csv")?;
    record_file(&mut manifest, "diagnose", out, "curves/size_biased_ks.csv")?;
    manifest.save(out)?;
    Ok(())
}

type Agreement = Option<(Vec<f64>, usize, usize)>;

/// KS distances between size-biased and largest-t pairings for each test
/// functional.
fn size_biased_pairings(
    cfg: &ExperimentConfig,
    disk: &ProbeDisk,
    phis: &[TestFunctional],
    members: &[(&MetricField, &SegmentDecomposition)],
) -> Result<Agreement> {
    if members.is_empty() {
        return Ok(None);
    }
    let n_draws = (cfg.n_empirical * members.len()).clamp(32, 500);
    let weights: Vec<f64> = members.iter().map(|(_, d)| size_bias_weight(d)).collect();
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed ^ 0x51BA);
    let mut sb: Vec<Vec<f64>> = vec![Vec::new(); phis.len()];
    let mut ft: Vec<Vec<f64>> = vec![Vec::new(); phis.len()];
    for _ in 0..n_draws {
        // Size-biased draw.
        let draw = rng.random_range(0.0..total_w);
        let mut acc = 0.0;
        let mut chosen = members.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if draw < acc {
                chosen = i;
                break;
            }
        }
        let (m, d) = members[chosen];
        if weights[chosen] > 0.0 {
            let lo = d.lengths()[0].ln();
            let hi = d.lengths()[1].ln();
            let frak_t = rng.random_range(lo..hi);
            let (site, _) = d.geodesic().site_at_length(frak_t.exp());
            if let Ok(rf) = rooted_field(m.field(), m.grid().point(site), disk) {
                for (idx, phi) in phis.iter().enumerate() {
                    sb[idx].push(pair_functional(&rf, phi)?);
                }
            }
        }
        // Largest-t draw from a uniformly chosen member.
        let (m, d) = members[rng.random_range(0..members.len())];
        let t_max = d.geodesic().total_length().ln();
        if t_max <= 0.0 {
            continue;
        }
        let frak_t = rng.random_range(0.0..t_max);
        let (site, _) = d.geodesic().site_at_length(frak_t.exp());
        if let Ok(rf) = rooted_field(m.field(), m.grid().point(site), disk) {
            for (idx, phi) in phis.iter().enumerate() {
                ft[idx].push(pair_functional(&rf, phi)?);
            }
        }
    }
    if sb[0].len() < 8 || ft[0].len() < 8 {
        return Ok(None);
    }
    let mut ks_values = Vec::new();
    for idx in 0..phis.len() {
        let (stat, _) = stationarity_ks(&sb[idx], &ft[idx])?;
        ks_values.push(stat);
    }
    let lens = (sb[0].len(), ft[0].len());
    Ok(Some((ks_values, lens.0, lens.1)))
}
