use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Precondition(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

impl From<serial_consensus::Error> for CliError {
    fn from(e: serial_consensus::Error) -> Self {
        use serial_consensus::Error as E;
        match e {
            E::Precondition(_) | E::LemmaPrecondition { .. } | E::Unstable { .. } => Self::Precondition(e.to_string()),
            E::EigenNonConvergence { .. } | E::IllPosedLoop(_) => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Config(format!("io: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serial_consensus::Error as E;

    #[test]
    fn library_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(E::Precondition("asymmetric".into())).exit_code(), 3);
        assert_eq!(CliError::from(E::Unstable { abscissa: 0.1 }).exit_code(), 3);
        assert_eq!(CliError::from(E::EigenNonConvergence { dim: 4 }).exit_code(), 4);
        assert_eq!(CliError::from(E::IllPosedLoop("I + D")).exit_code(), 4);
        assert_eq!(CliError::from(E::UnknownFamily("ring".into())).exit_code(), 2);
        assert_eq!(CliError::from(E::OrderOutOfRange(9)).exit_code(), 2);
    }
}
