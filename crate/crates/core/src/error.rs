use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::NodeKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("no records in {0}")]
    NoRecords(PathBuf),

    #[error("{path}:{line}: unparsable date {value:?}")]
    BadDate {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("{path}:{line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("code {code:?} is not in the {kind} vocabulary")]
    UnknownCode { kind: NodeKind, code: String },

    #[error("id {id} is outside the {kind} vocabulary of size {size}")]
    UnknownId { kind: NodeKind, id: usize, size: usize },

    #[error("malformed ATC code {0:?}")]
    MalformedAtc(String),

    #[error("malformed ICD-10 code {0:?}")]
    MalformedIcd(String),

    #[error("{kind} encoder has no value {value:?} at level {level}")]
    UnseenLevel {
        kind: NodeKind,
        level: usize,
        value: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate label pair ({drug}, {disease})")]
    DuplicatePair { drug: String, disease: String },

    #[error("pair ({drug}, {disease}) is outside the labeled domain")]
    OutsideLabeledDomain { drug: usize, disease: usize },

    #[error("need {needed} negatives but only {available} unlabeled pairs exist")]
    InsufficientComplement { needed: usize, available: usize },

    #[error("need at least 3 disease classes to split, found {0}")]
    TooFewClasses(usize),

    #[error("metric needs both classes present")]
    SingleClass,

    #[error("metric needs at least one positive")]
    NoPositives,

    #[error("non-finite training loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("infeasible synthetic config: {0}")]
    Infeasible(String),

    #[error("bad file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing upstream artifact {path} (run `{stage}` first)")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("artifact {path} does not match the manifest written by `{stage}`")]
    StaleArtifact { path: PathBuf, stage: String },

    #[error("no completed runs under {0}")]
    NoRuns(PathBuf),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad configuration or missing prerequisites
    /// rather than failures while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::MissingArtifact { .. }
                | Error::StaleArtifact { .. }
                | Error::Infeasible(_)
        )
    }
}
