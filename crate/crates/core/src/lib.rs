//! Reasoning toolkit for joinless existential rules.

pub mod analysis;
pub mod chase;
pub mod driver;
pub mod facts;
pub mod family;
pub mod query;
pub mod quotient;
pub mod syntax;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] syntax::ParseError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Family(#[from] family::FamilyError),
    #[error(transparent)]
    Chase(#[from] chase::ChaseError),
    #[error(transparent)]
    Model(#[from] quotient::ModelError),
    #[error(transparent)]
    Query(#[from] query::QueryError),
}
