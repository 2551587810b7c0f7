use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("unknown suite `{0}` (expected one of duality, lp, sobolev, hls, transfer, local, flow, all)")]
    UnknownSuite(String),

    #[error("invalid argument: {0}")]
    BadArgument(String),

    #[error(transparent)]
    Core(#[from] ineqlab_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
