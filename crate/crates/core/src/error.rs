use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate Jacobian{}: |det| below threshold", sample_suffix(.sample))]
    DegenerateJacobian { sample: Option<usize> },

    #[error("non-finite value in {context}{}", sample_suffix(.sample))]
    NonFinite {
        context: &'static str,
        sample: Option<usize>,
    },

    #[error("Jacobian determinant changed sign at sample {sample} (step {step})")]
    DetSignFlip { sample: usize, step: usize },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn sample_suffix(sample: &Option<usize>) -> String {
    match sample {
        Some(i) => format!(" at sample {i}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
