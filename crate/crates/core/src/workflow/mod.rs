//! Orchestration of the end-to-end EHR sharing flow and the benchmark
//! harness, plus the command-line front end.

pub mod bench;
pub mod cli;
pub mod output;
pub mod scenario;
pub mod workspace;

use thiserror::Error;

use crate::abms::AbmsError;
use crate::edge_store::EdgeError;
use crate::ledger::LedgerError;
use crate::maabe::AbeError;

pub use workspace::{ClockMode, RngMode, Workspace, WorkspaceConfig, WorkspaceOptions};

/// Process exit codes. Every failure path maps to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitKind {
    Ok = 0,
    Unexpected = 1,
    Usage = 2,
    Workspace = 3,
    InvalidInput = 4,
    Duplicate = 5,
    NotFound = 6,
    PermissionDenied = 7,
    AuthRejected = 8,
    Gone = 9,
    DecryptDenied = 10,
    Integrity = 11,
    LedgerBroken = 12,
}

impl ExitKind {
    pub const ALL: [ExitKind; 13] = [
        ExitKind::Ok,
        ExitKind::Unexpected,
        ExitKind::Usage,
        ExitKind::Workspace,
        ExitKind::InvalidInput,
        ExitKind::Duplicate,
        ExitKind::NotFound,
        ExitKind::PermissionDenied,
        ExitKind::AuthRejected,
        ExitKind::Gone,
        ExitKind::DecryptDenied,
        ExitKind::Integrity,
        ExitKind::LedgerBroken,
    ];

    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitKind::Ok => "ok",
            ExitKind::Unexpected => "unexpected",
            ExitKind::Usage => "usage",
            ExitKind::Workspace => "workspace",
            ExitKind::InvalidInput => "invalid_input",
            ExitKind::Duplicate => "duplicate",
            ExitKind::NotFound => "not_found",
            ExitKind::PermissionDenied => "permission_denied",
            ExitKind::AuthRejected => "auth_rejected",
            ExitKind::Gone => "gone",
            ExitKind::DecryptDenied => "decrypt_denied",
            ExitKind::Integrity => "integrity",
            ExitKind::LedgerBroken => "ledger_broken",
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Abms(#[from] AbmsError),
    #[error(transparent)]
    Abe(#[from] AbeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("workspace: {0}")]
    Workspace(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("already exists: {0}")]
    Duplicate(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("one-time URL is gone")]
    Gone,
    #[error("ledger verification failed at seq {seq}: {reason}")]
    ChainBroken { seq: u64, reason: String },
    #[error("step {step} failed: {source}")]
    Step { step: String, source: Box<WorkflowError> },
    #[error("{0}")]
    Unexpected(String),
}

impl WorkflowError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| WorkflowError::Io { context, source }
    }

    pub(crate) fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Self {
        let context = context.into();
        move |source| WorkflowError::Json { context, source }
    }

    pub fn at_step(self, step: impl Into<String>) -> Self {
        WorkflowError::Step { step: step.into(), source: Box::new(self) }
    }

    pub fn exit_kind(&self) -> ExitKind {
        match self {
            WorkflowError::Abms(e) => match e {
                AbmsError::DuplicateAttribute(_) => ExitKind::Duplicate,
                AbmsError::UnknownGid(_) => ExitKind::NotFound,
                AbmsError::ForeignAttribute { .. } => ExitKind::PermissionDenied,
                _ => ExitKind::InvalidInput,
            },
            WorkflowError::Abe(e) => match e {
                AbeError::AccessDenied | AbeError::MixedGids => ExitKind::DecryptDenied,
                AbeError::Integrity => ExitKind::Integrity,
                AbeError::DuplicateAttribute(_) => ExitKind::Duplicate,
                AbeError::UnknownGid(_) | AbeError::MissingPublicKey(_) => ExitKind::NotFound,
                AbeError::ForeignAttribute { .. } => ExitKind::PermissionDenied,
                AbeError::Pairing(_) | AbeError::EmptyPlaintext | AbeError::Malformed(_) => ExitKind::InvalidInput,
            },
            WorkflowError::Ledger(e) => match e {
                LedgerError::DuplicateGid(_) | LedgerError::DuplicateKey(_) => ExitKind::Duplicate,
                LedgerError::UnknownParticipant(_) | LedgerError::NoProfile(_) | LedgerError::NoEhrObject => {
                    ExitKind::NotFound
                }
                LedgerError::NotOwner
                | LedgerError::AccessDenied
                | LedgerError::WrongRole { .. }
                | LedgerError::InvalidGrantee(_)
                | LedgerError::ForeignAttribute { .. } => ExitKind::PermissionDenied,
                LedgerError::AuthRejected { .. } | LedgerError::Threshold(_) => ExitKind::AuthRejected,
                LedgerError::EmptyGid | LedgerError::InvalidSignature(_) | LedgerError::UnpublishedKey(_) => {
                    ExitKind::InvalidInput
                }
                LedgerError::Edge(e) => edge_kind(e),
                LedgerError::Broken { .. } => ExitKind::LedgerBroken,
                LedgerError::Io(_) | LedgerError::Json(_) => ExitKind::Workspace,
            },
            WorkflowError::Edge(e) => edge_kind(e),
            WorkflowError::Io { .. } | WorkflowError::Json { .. } | WorkflowError::Workspace(_) => ExitKind::Workspace,
            WorkflowError::Invalid(_) => ExitKind::InvalidInput,
            WorkflowError::Duplicate(_) => ExitKind::Duplicate,
            WorkflowError::NotFound(_) => ExitKind::NotFound,
            WorkflowError::Gone => ExitKind::Gone,
            WorkflowError::ChainBroken { .. } => ExitKind::LedgerBroken,
            WorkflowError::Step { source, .. } => source.exit_kind(),
            WorkflowError::Unexpected(_) => ExitKind::Unexpected,
        }
    }

    pub fn step(&self) -> Option<&str> {
        match self {
            WorkflowError::Step { step, .. } => Some(step),
            _ => None,
        }
    }
}

fn edge_kind(e: &EdgeError) -> ExitKind {
    match e {
        EdgeError::Malformed(_) | EdgeError::InvalidTtl => ExitKind::InvalidInput,
        EdgeError::UnknownObject(_) => ExitKind::NotFound,
        EdgeError::Io(_) | EdgeError::Journal { .. } => ExitKind::Workspace,
    }
}

impl From<crate::attribute::AttributeError> for WorkflowError {
    fn from(e: crate::attribute::AttributeError) -> Self {
        WorkflowError::Invalid(e.to_string())
    }
}

impl From<crate::pairing::PairingError> for WorkflowError {
    fn from(e: crate::pairing::PairingError) -> Self {
        WorkflowError::Invalid(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exit_codes_are_distinct_and_dense() {
        let codes: HashSet<i32> = ExitKind::ALL.iter().map(|k| k.code()).collect();
        assert_eq!(codes.len(), ExitKind::ALL.len());
        assert_eq!(codes, (0..13).collect());
        let labels: HashSet<&str> = ExitKind::ALL.iter().map(|k| k.label()).collect();
        assert_eq!(labels.len(), ExitKind::ALL.len());
    }

    #[test]
    fn step_wrapping_keeps_the_inner_code() {
        let e = WorkflowError::Gone.at_step("redeem-lab");
        assert_eq!(e.exit_kind(), ExitKind::Gone);
        assert_eq!(e.step(), Some("redeem-lab"));
        assert_eq!(WorkflowError::Abe(AbeError::Integrity).exit_kind(), ExitKind::Integrity);
    }
}
