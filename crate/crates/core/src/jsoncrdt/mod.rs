//! Operation-based JSON CRDT used to merge conflicting write-set values.
//!
//! A document is merged by walking it key by key and emitting one insert
//! operation per text leaf. Each operation carries a Lamport-clock
//! identifier, the identifiers it depends on, and a cursor describing the
//! path from the head of the tree to the node it mutates. Operations whose
//! dependencies are not yet applied wait in a pending queue.
//!
//! The tree keeps every inserted value: list elements are never replaced,
//! and concurrent text values under the same map key are all retained, with
//! the greatest operation identifier winning when the tree is converted back
//! to a plain document.

mod crdt;
mod value;

pub use crdt::{
    ApplyStatus, Cursor, CursorElement, JsonCrdt, LamportClock, MergeOptions, Mutation, OpId,
    Operation,
};
pub use value::JsonValue;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("CRDT key must not be empty")]
    EmptyKey,
    #[error("unsupported JSON type {found} at {path}")]
    UnsupportedType { path: String, found: &'static str },
    #[error("cannot merge a top-level {0}; expected a map or a string")]
    UnsupportedTopLevel(&'static str),
    #[error("value is not valid JSON: {0}")]
    Decode(String),
    #[error("operation {0} was already applied or queued")]
    DuplicateOperation(OpId),
    #[error("operation {op} depends on {dep}, which is not older")]
    InvalidDependency { op: OpId, dep: OpId },
    #[error("structural conflict at {path}: expected {expected} node, found {found}")]
    StructuralConflict {
        path: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{pending} operations are still waiting for dependencies")]
    Incomplete { pending: usize },
}
