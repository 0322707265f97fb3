//! Command failures and their exit codes.

use std::fmt;

use homc_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validation,
    Runtime,
    Io,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Io,
            message: message.into(),
        }
    }

    /// Prefix the message with where the failure happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 2,
            Kind::Runtime => 3,
            Kind::Io => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Validation => "invalid input",
            Kind::Runtime => "runtime failure",
            Kind::Io => "I/O failure",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Io(_) | Error::Json(_) => Kind::Io,
            Error::Consistency(_) | Error::UndefinedBayesFactor => Kind::Runtime,
            _ => Kind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let f = Failure::from(Error::InsufficientData { len: 3, order: 5 });
        assert_eq!(f.code(), 2);
        assert_eq!(Failure::from(Error::Consistency("x".into())).code(), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(Failure::from(Error::Io(io)).code(), 4);
    }
}
