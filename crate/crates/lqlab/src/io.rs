//! File formats: binary field persistence, CSV/JSON exports for distance
//! tables, paths, decompositions and empirical samples.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::empirical::EmpiricalSample;
use crate::error::{LqlError, Result};
use crate::field::{LatticeField, Normalization};
use crate::grid::{GridSpec, Site};
use crate::metric::LatticePath;
use crate::renewal::{AnnulusSchedule, SegmentDecomposition};

const FIELD_MAGIC: &[u8; 4] = b"LQGF";
const FIELD_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> LqlError {
    LqlError::Domain(format!("io failure: {e}"))
}

/// Writes a field in the binary layout: magic "LQGF", u32 version, u32
/// n_sites, f64 spacing, u8 normalization, then n_sites^2 f64 values
/// row-major from the minimum-coordinate corner. Little-endian throughout.
pub fn write_field(w: &mut impl Write, field: &LatticeField) -> Result<()> {
    let grid = field.grid();
    w.write_all(FIELD_MAGIC).map_err(io_err)?;
    w.write_all(&FIELD_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(grid.n_sites() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&grid.spacing().to_le_bytes()).map_err(io_err)?;
    let norm_byte: u8 = match field.normalization() {
        Normalization::Raw => 0,
        Normalization::ZeroUnitCircle => 1,
    };
    w.write_all(&[norm_byte]).map_err(io_err)?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<LatticeField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != FIELD_MAGIC {
        return Err(LqlError::Domain("bad field magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let version = u32::from_le_bytes(b4);
    if version != FIELD_VERSION {
        return Err(LqlError::Domain(format!("unsupported field version {version}")));
    }
    r.read_exact(&mut b4).map_err(io_err)?;
    let n_sites = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io_err)?;
    let spacing = f64::from_le_bytes(b8);
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1).map_err(io_err)?;
    let normalization = match b1[0] {
        0 => Normalization::Raw,
        1 => Normalization::ZeroUnitCircle,
        other => {
            return Err(LqlError::Domain(format!("unknown normalization byte {other}")));
        }
    };
    let grid = GridSpec::new(n_sites, spacing)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8).map_err(io_err)?;
        values.push(f64::from_le_bytes(b8));
    }
    LatticeField::from_values(grid, values, normalization)
}

/// Distance-table CSV row contract: "u_x,u_y,v_x,v_y,distance".
pub fn write_distance_csv(
    w: &mut impl Write,
    rows: &[(Site, Site, f64)],
) -> Result<()> {
    writeln!(w, "u_x,u_y,v_x,v_y,distance").map_err(io_err)?;
    for (u, v, d) in rows {
        writeln!(w, "{},{},{},{},{}", u.ix, u.iy, v.ix, v.iy, d).map_err(io_err)?;
    }
    Ok(())
}

/// One path per line, as a JSON array of [x, y] site-index pairs.
pub fn path_json_line(path: &LatticePath) -> String {
    let pairs: Vec<[usize; 2]> = path.sites().iter().map(|s| [s.ix, s.iy]).collect();
    serde_json::to_string(&pairs).expect("path serialization is infallible")
}

/// Decomposition CSV: "i,P_i,p_x,p_y,Y_i,L_eta_i,G_i,D_i", empty cells where
/// a quantity is undefined.
pub fn write_decomposition_csv(w: &mut impl Write, d: &SegmentDecomposition) -> Result<()> {
    writeln!(w, "i,P_i,p_x,p_y,Y_i,L_eta_i,G_i,D_i").map_err(io_err)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in d.schedule().scales() {
        let record = &d.records()[(i - d.schedule().i_min()) as usize];
        let (px, py, l_eta) = if record.occurred {
            let j = d.eta(i).expect("detected scale has a point index");
            let p = d.points()[j];
            (
                p.ix.to_string(),
                p.iy.to_string(),
                d.lengths()[j].to_string(),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            i,
            record.occurred as u8,
            px,
            py,
            fmt(d.y_at(i)?),
            l_eta,
            fmt(d.g_at(i)?),
            d.d_at(i)?,
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Echo of the detection parameters next to a decomposition export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSidecar {
    pub k: f64,
    pub i_min: i32,
    pub i_max: i32,
    pub rho: f64,
    pub n_probe: usize,
    pub seed: u64,
}

impl ScheduleSidecar {
    pub fn new(schedule: &AnnulusSchedule, rho: f64, n_probe: usize, seed: u64) -> Self {
        ScheduleSidecar {
            k: schedule.k(),
            i_min: schedule.i_min(),
            i_max: schedule.i_max(),
            rho,
            n_probe,
            seed,
        }
    }
}

/// Empirical-sample JSON object: {t, frak_t, root, field, metric, seed}
/// with the metric stored as its upper triangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalSampleJson {
    pub t: f64,
    pub frak_t: f64,
    pub root: [f64; 2],
    pub field: Vec<f64>,
    pub metric: Vec<f64>,
    pub seed: u64,
    pub snap_error: f64,
}

impl From<&EmpiricalSample> for EmpiricalSampleJson {
    fn from(s: &EmpiricalSample) -> Self {
        let n = s.metric.n_probes;
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(s.metric.distance(i, j));
            }
        }
        EmpiricalSampleJson {
            t: s.t,
            frak_t: s.frak_t,
            root: [s.field.root.x, s.field.root.y],
            field: s.field.probe_values.clone(),
            metric: upper,
            seed: s.seed,
            snap_error: s.snap_error,
        }
    }
}
