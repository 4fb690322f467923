use thiserror::Error;

/// Crate-wide error type. Variants that mirror a mathematical precondition
/// carry the offending data in their message so CLI users can see what was
/// violated without a debugger.
#[derive(Debug, Clone, Error)]
pub enum KummerError {
    /// Malformed system data: wrong dimensions, singular resonance matrix,
    /// resonance rows that do not reproduce the delta constraint, etc.
    #[error("invalid system: {0}")]
    InvalidSpec(String),

    /// A point left the open cone on which the action map is a valid chart.
    #[error("outside cone: {0}")]
    OutsideCone(String),

    /// An amplitude vector touched a coordinate axis, where the phases are
    /// undefined.
    #[error("outside Omega: {0}")]
    OutsideOmega(String),

    /// Sector constants admit no occupation at all.
    #[error("empty reduced space: {0}")]
    EmptyReducedSpace(String),

    /// A matrix realization was requested for an infinite sector that was
    /// built without a truncation size.
    #[error("truncate first: {0}")]
    TruncateFirst(String),

    /// An operation that needs `G_0 > 0` was asked for on or past the shape
    /// boundary.
    #[error("on or outside the shape boundary: {0}")]
    OnBoundary(String),

    /// An energy level set `R(I_0) >= 0` is empty for the requested energy.
    #[error("empty level set: {0}")]
    EmptyLevelSet(String),

    /// The occupation vector does not annihilate the lowering operator, so it
    /// cannot seed a sector.
    #[error("not a vacuum: {0}")]
    NotAVacuum(String),

    /// Turning-point analysis found a degenerate (double) root; the orbit is
    /// an equilibrium and the period integral is undefined.
    #[error("degenerate turning point: {0}")]
    DegenerateTurningPoint(String),

    /// The requested coherent state parameter lies outside the convergence
    /// disc of the defining series.
    #[error("outside convergence disc: {0}")]
    OutsideDisc(String),

    /// A truncated computation did not settle; re-run with a larger basis.
    #[error("increase truncation: {0}")]
    IncreaseTruncation(String),

    /// An iterative scheme (eigensolver, refinement loop, adaptive
    /// quadrature) stopped before reaching its target accuracy.
    #[error("{what} did not converge (achieved {achieved:.3e}, wanted {wanted:.3e})")]
    NoConvergence {
        what: String,
        achieved: f64,
        wanted: f64,
    },

    /// Scalar argument outside its admissible range (e.g. `p` outside
    /// `(0, 1)`, `q` outside `(0, 1)`, non-positive `hbar`).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, KummerError>;
