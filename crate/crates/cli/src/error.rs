use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cbi::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use cbi::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Output(_) => 3,
            CliError::Core(e) => match e {
                E::NonFinite { .. }
                | E::NonFiniteState { .. }
                | E::EigenSolver
                | E::OdeLeftOrthant { .. }
                | E::Singular(_)
                | E::NotPositiveSemidefinite(_) => 3,
                _ => 2,
            },
        }
    }
}
