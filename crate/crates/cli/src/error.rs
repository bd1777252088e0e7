use std::fmt;

/// Exit status 1: the inputs were unusable. Exit status 2: something broke
/// that no input should be able to break.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::Internal(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            Self::Input(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(m) | Self::Internal(m) => f.write_str(m),
        }
    }
}

impl From<groundseg::Error> for CliError {
    fn from(e: groundseg::Error) -> Self {
        use groundseg::Error as E;
        match e {
            E::Shape(_) | E::State(_) => Self::Internal(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}
