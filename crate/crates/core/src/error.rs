use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("no sites given")]
    NoSites,
    #[error("duplicate sites: towers {0} and {1} share a location")]
    DuplicateSites(String, String),
    #[error("site of tower {0} lies outside the bounds")]
    SiteOutsideBounds(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("network has zero total weight")]
    EmptyNetwork,
    #[error("partition does not match network: {0}")]
    PartitionMismatch(String),
    #[error("partitions share no nodes")]
    EmptyIntersection,
    #[error("community {0} is empty")]
    EmptyCommunity(usize),
    #[error("unknown community {0}")]
    UnknownCommunity(usize),
    #[error("user {0} has no community label")]
    Unlabeled(String),
    #[error("unknown tower {0}")]
    UnknownTower(String),
    #[error("infeasible synthetic geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("missing or wrong header, expected `{expected}`")]
    MissingHeader { expected: String },
    #[error("{0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Stage { source, .. } => source.kind(),
            Error::EmptyNetwork
            | Error::PartitionMismatch(_)
            | Error::Unlabeled(_)
            | Error::UnknownCommunity(_) => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
