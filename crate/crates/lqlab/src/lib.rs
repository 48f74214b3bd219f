//! A desk-scale numerical laboratory for Liouville-quantum-gravity geodesics.
//!
//! The crate samples discrete Gaussian free fields, builds Liouville
//! first-passage percolation metrics over them, decomposes the geodesic from
//! the origin into renewal segments via coalescence events, produces rooted
//! rescaled environments along the geodesic, and ships the statistical
//! diagnostics that turn the limit constructions into testable properties.

pub mod dst;
pub mod empirical;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod metric;
pub mod renewal;
pub mod stats;

pub use error::{LqlError, Result};
pub use field::{
    add_fields, cameron_martin_rn, circle_average, circle_average_trace, dirichlet_inner,
    harmonic_roughness, recenter_on_unit_circle, rescale_recenter, ring_gate_bias, sample_gff,
    CircleAverageTrace, DirichletVector, HarmonicProfile, LatticeField, Normalization,
};
pub use grid::{GridSpec, Point, Site};
