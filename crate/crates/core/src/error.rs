use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("window has 2^{size_log2} sums, above the enumeration cap {cap}; use sampled mode")]
    CapExceeded { size_log2: usize, cap: u64 },
    #[error("omega is only defined for increasing Folner schedules")]
    UnsupportedSchedule,
    #[error("could not certify a period of n_j mod {modulus} from {terms} terms")]
    PeriodNotFound { modulus: u64, terms: usize },
    #[error("no hit for j = {j} within search bound {bound}")]
    SearchBoundExceeded { j: usize, bound: u64 },
    #[error("angle is not irrational at its precision: close to {num}/{den}")]
    NotIrrational { num: String, den: String },
    #[error("spectrum obstruction: {0}")]
    SpectrumObstruction(String),
    #[error("degenerate weight: denominator {0}")]
    DegenerateWeight(f64),
    #[error("unsupported system or observable: {0}")]
    UnsupportedSystem(String),
    #[error("window too small: shift {shift} leaves fewer than {window} positions in [0, {len})")]
    WindowTooSmall { shift: u64, window: usize, len: usize },
    #[error("generator index {index} out of range (sequence has {len} terms)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
