//! Time-stretching calculus of variations on jump configurations.
//!
//! Variations act on the *jump times* of a point configuration: a stretch
//! `h` (bounded, compactly supported) generates the flow `z' = Jh(z)` with
//! `Jh(x) = ∫_0^x h`, whose time-1 map `T_h` deforms moments of jumps.  The
//! module provides:
//!
//! * [`stretch`] — stretch shapes, the maps `T_{t·h}`, the rate
//!   `r_h(t) = d/dt T_h t`, configuration transforms, admissibility
//!   densities `p_h^Γ`, and finite-difference directional derivatives;
//! * [`grid`] — differential grids: dyadic-in-mass annuli `I_n` with
//!   `K_n`-fold sub-splitting on an auxiliary uniform coordinate, the cell
//!   structure behind Malliavin-type covariance matrices.

pub mod grid;
pub mod stretch;

pub use grid::{build_grid, AnnulusInfo, CellId, DifferentialGrid, GridParams};
pub use stretch::{
    admissibility_density, finite_diff_derivative, stretch_rate, time_stretch_map,
    transform_configuration, FdMode, FdReport, StretchShape, TimeStretch,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VariationError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("finite differences failed to converge: {0}")]
    NonConvergent(String),
    #[error(transparent)]
    Measure(#[from] crate::levy_measure::MeasureError),
}
