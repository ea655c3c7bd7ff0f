use thiserror::Error;

/// Error taxonomy shared by all modules. The CLI maps each variant class to
/// a distinct process exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: config keys, parameter ranges, incompatible grids.
    #[error("validation: {0}")]
    Validation(String),

    /// A mathematical hypothesis failed to certify (simplicity,
    /// non-criticality, non-trapping). Dependent stages must not run.
    #[error("certification: {0}")]
    Certification(String),

    /// A numerical guard tripped: unconverged solve, ill-conditioned fit,
    /// under-resolved discretization.
    #[error("numerical guard: {0}")]
    Guard(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Certification(_) => 3,
            Error::Guard(_) => 4,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
