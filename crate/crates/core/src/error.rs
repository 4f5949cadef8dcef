use thiserror::Error;

/// Errors raised by the numerical engines.
///
/// Variants that concern a particular point of the driving orbit carry the
/// site index `n` (the orbit position relative to the origin ω).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("structural hypothesis violated: {0}")]
    Validation(String),

    #[error("mass underflow in cocycle push at site {site}, step {step}")]
    MassUnderflow { site: i64, step: usize },

    #[error("{what} did not converge (last sup-distance {distance:e})")]
    NonConvergence { what: String, distance: f64 },

    #[error("empty survivor set at site {site}, depth {depth}")]
    EmptySurvivor { site: i64, depth: usize },

    #[error("site {site} not in Omega_+ at eps = {eps:e} (zero hole measure)")]
    NotInOmegaPlus { site: i64, eps: f64 },

    #[error("orbit window too short: need sites [{need_lo}, {need_hi}], have [{have_lo}, {have_hi}]")]
    OrbitTooShort {
        need_lo: i64,
        need_hi: i64,
        have_lo: i64,
        have_hi: i64,
    },

    #[error("dimension bracket violated: EP(0) = {ep0}, EP(1) = {ep1}")]
    BracketViolated { ep0: f64, ep1: f64 },

    #[error("schedule violates small-hole regime: {0}")]
    SmallHoleViolated(String),

    #[error("estimators disagree: {what}: {a} vs {b} (tolerance {tol:e})")]
    EstimatorDisagreement {
        what: String,
        a: f64,
        b: f64,
        tol: f64,
    },

    #[error("decay faster than resolvable: all correlation gaps below {floor:e}")]
    DecayUnresolvable { floor: f64 },

    #[error("non-monotone level-set mass for observation centered at {center}")]
    NonMonotoneLevelSet { center: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of iterative numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MassUnderflow { .. }
                | Error::NonConvergence { .. }
                | Error::EstimatorDisagreement { .. }
                | Error::DecayUnresolvable { .. }
        )
    }
}
