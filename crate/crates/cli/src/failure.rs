//! Error classes and their process exit codes.

use std::fmt;

use stainsep_core::Error as CoreError;
use stainsep_model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numerical => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // sources already quoted by their parent message are not repeated
        let mut shown = String::new();
        for cause in self.error.chain() {
            let msg = cause.to_string();
            if shown.contains(&msg) {
                continue;
            }
            if !shown.is_empty() {
                shown.push_str(": ");
            }
            shown.push_str(&msg);
        }
        f.write_str(&shown)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn usage(msg: impl fmt::Display) -> Failure {
    Failure {
        kind: Kind::Usage,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn data(msg: impl fmt::Display) -> Failure {
    Failure {
        kind: Kind::Data,
        error: anyhow::anyhow!("{msg}"),
    }
}

fn core_kind(e: &CoreError) -> Kind {
    match e {
        CoreError::Config { .. } | CoreError::Parameter { .. } => Kind::Usage,
        CoreError::Singular { .. } | CoreError::Degenerate(_) => Kind::Numerical,
        _ => Kind::Data,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure {
            kind: core_kind(&e),
            error: e.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Core(c) => core_kind(c),
            ModelError::ConfigMismatch(_) => Kind::Usage,
            ModelError::NonFinite { .. } | ModelError::Tensor(_) => Kind::Numerical,
            _ => Kind::Data,
        };
        Failure { kind, error: e.into() }
    }
}

/// Attaches context to a failure without changing its class.
pub trait Context<T> {
    fn context(self, msg: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for std::result::Result<T, E> {
    fn context(self, msg: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure {
                kind: f.kind,
                error: f.error.context(msg.to_string()),
            }
        })
    }
}

/// I/O on output files is a data failure.
pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| data(format!("{}: {e}", path.display()))
}
