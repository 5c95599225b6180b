//! Error type shared by every module in the crate.

use crate::lattice::Coord;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A site (or one of its neighbors) fell outside the grid's bounding box.
    #[error("site {site:?} outside box of half-width {half_width}")]
    OutOfBounds { site: Coord, half_width: i64 },

    /// A grid or run would exceed the configured memory / work budget.
    #[error("capacity exceeded: {what} needs {needed} but the cap is {cap}")]
    CapacityExceeded {
        what: &'static str,
        needed: u64,
        cap: u64,
    },

    /// Two fields that must share a lattice geometry do not.
    #[error("box mismatch: {0}")]
    BoxMismatch(String),

    /// A candidate odometer fails to stabilize the configuration.
    #[error("candidate odometer is not stabilizing (first violation at {site:?})")]
    NotStabilizing { site: Coord },

    /// The continuum fundamental solution was evaluated at the origin.
    #[error("fundamental solution is singular at the origin")]
    SingularPoint,

    /// A Dirichlet boundary site coincides with the source singularity.
    #[error("boundary site coincides with the singular source point")]
    SingularBoundary,

    /// The iterative solver hit its iteration cap before reaching tolerance.
    #[error("solver failed to converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A test function's support is not contained in the field's box.
    #[error("test function support escapes the field's box")]
    SupportEscape,

    /// A render crop rectangle leaves the grid's bounding box.
    #[error("crop rectangle leaves the grid's bounding box")]
    CropOutOfBounds,

    /// Malformed input: bad field dump, bad flag syntax, bad value range.
    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
