use serde::Serialize;

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Divergence(String),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Divergence(_) => "divergence",
        }
    }

    /// One JSON object for standard error.
    pub fn json_line(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.class(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error line serializes")
    }
}

impl From<cgpo_core::Error> for CliError {
    fn from(e: cgpo_core::Error) -> Self {
        use cgpo_core::Error as E;
        let msg = e.to_string();
        match e {
            E::DivergenceDetected { .. } => CliError::Divergence(msg),
            E::Io { .. } | E::MalformedRecord { .. } | E::CorruptCheckpoint(_) | E::Json(_) => CliError::Io(msg),
            E::UnknownCharacter { .. }
            | E::ContextOverflow { .. }
            | E::EmptySegment
            | E::EmptyCalibrationSet
            | E::FingerprintMismatch { .. }
            | E::InvalidConfig(_) => CliError::Config(msg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::from(cgpo_core::Error::InvalidConfig("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(cgpo_core::Error::CorruptCheckpoint("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(cgpo_core::Error::DivergenceDetected { step: 3 }).exit_code(), 4);
        let line: serde_json::Value = serde_json::from_str(&CliError::Io("gone".into()).json_line()).unwrap();
        assert_eq!(line["exit_code"], 3);
        assert_eq!(line["message"], "gone");
    }
}
