use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A specific identification assumption that failed validation.
///
/// Estimation refuses to run when any of these hold; they are errors, not
/// warnings, because every downstream guarantee depends on them.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssumptionViolation {
    #[error(
        "edge rule for pair (a={a}, r={r}) depends on assignments other than unit {r}'s own; \
         instrumented estimation requires each edge to respond only to its own randomization unit"
    )]
    NotRDriven { a: usize, r: usize },

    #[error("anchor pair (a={a}, r={r}) is not present under every assignment")]
    AnchorNotInvariant { a: usize, r: usize },

    #[error("anchor pair (a={a}, r={r}) has no edge rule at all")]
    AnchorNotInGraph { a: usize, r: usize },

    #[error("instrument weight on (a={a}, r={r}) lies outside the anchor subgraph")]
    InstrumentOffAnchor { a: usize, r: usize },

    #[error("analysis unit {unit} has no instrument support")]
    EmptyInstrument { unit: usize },

    #[error("exposure weight is zero on anchor pair (a={a}, r={r})")]
    ZeroAnchorWeight { a: usize, r: usize },

    #[error(
        "self pair of unit {unit} must carry zero exposure and instrument weight \
         when analysis and randomization units coincide"
    )]
    NonzeroDiagonal { unit: usize },

    #[error("negative instrument weight on (a={a}, r={r}) where nonnegativity was required")]
    NegativeInstrument { a: usize, r: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("enumeration over {n_r} randomization units exceeds the cap of {cap}")]
    EnumerationCap { n_r: usize, cap: usize },

    #[error("assumption violated: {0}")]
    Assumption(#[from] AssumptionViolation),

    #[error("instrument is irrelevant for analysis unit {unit}: its covariance with the exposure is zero")]
    ZeroCovariance { unit: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of statistical validation (as opposed to I/O or schema problems).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Schema(_) | Error::Io(_))
    }
}
