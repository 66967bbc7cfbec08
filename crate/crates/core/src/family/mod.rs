//! Family patterns: canonical rule shapes, pattern annotation and the
//! matching query rewritings.

mod annotate;
mod canonical;
mod pattern;

pub use annotate::{
    annotate, rewrite_query_annotated, to_parenthood_query, verify_respects, AnnotationMap, Annotated,
    RespectViolation,
};
pub use canonical::{canonicalize_rules, rewrite_query_canonical, Canonical, Partition};
pub use pattern::{FamilyOrdering, FamilyPattern, PatternError};

use crate::analysis::JoinViolation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FamilyError {
    #[error("program is not joinless ({} violation(s), first in rule {})", .0.len(), .0[0].rule + 1)]
    NotJoinless(Vec<JoinViolation>),
    #[error("rule {} mentions a constant; specialize constants first", .0 + 1)]
    Constants(usize),
    #[error("predicate name `{0}` uses a reserved character (`#` or `$`)")]
    ReservedName(String),
    #[error("rule {} is not canonical: {reason}", .rule + 1)]
    NonCanonical { rule: usize, reason: String },
    #[error("annotated arity {found} exceeds the limit {limit}")]
    ArityLimit { limit: usize, found: usize },
    #[error("query rewriting exceeded the budget of {0} disjuncts")]
    Budget(usize),
    #[error("projection predicate `{0}` has no companion parenthood predicate")]
    MissingCompanion(String),
}
