use thiserror::Error;

use crate::ratings::Facet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scale: max_score ({max}) must exceed min_score ({min})")]
    InvalidScale { min: i32, max: i32 },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("malformed header: expected `person_id,item_id,rater_id,score`, found `{found}`")]
    MalformedHeader { found: String },

    #[error("score out of range at line {line}: {score} not in {min}..={max}")]
    ScoreOutOfRange {
        line: u64,
        score: i32,
        min: i32,
        max: i32,
    },

    #[error("duplicate observation for ({person}, {item}, {rater}) at line {line}")]
    DuplicateObservation {
        line: u64,
        person: String,
        item: String,
        rater: String,
    },

    #[error("empty input: no observations")]
    EmptyInput,

    #[error("empty facet: {0} set is empty")]
    EmptyFacet(Facet),

    #[error("unknown {facet} identifier `{id}`")]
    UnknownId { facet: Facet, id: String },

    #[error("duplicate {facet} identifier `{id}`")]
    DuplicateId { facet: Facet, id: String },

    #[error("invalid tensor document: {0}")]
    InvalidDocument(String),

    #[error("fewer than 2 paired observations ({0})")]
    TooFewPairs(usize),

    #[error("degenerate marginals: expected disagreement is zero")]
    DegenerateMarginals,

    #[error("alpha needs at least 2 items, got {0}")]
    TooFewItems(usize),

    #[error("alpha needs at least 2 complete persons, got {0}")]
    TooFewPersons(usize),

    #[error("no person variance: total-score variance is zero")]
    NoPersonVariance,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("disconnected design: facet elements do not form a single linked network")]
    Disconnected,

    #[error("{facet} `{id}` has no observed scores")]
    EmptyElement { facet: Facet, id: String },

    #[error("fewer than 2 score categories observed")]
    TooFewCategories,

    #[error("no estimable {0} elements after removing extreme scores")]
    NotEstimable(Facet),

    #[error("rater `{0}` already exists")]
    RaterExists(String),

    #[error("ensemble `{0}` has rounding `none`; integer scores are required to store it")]
    UnroundedEnsemble(String),

    #[error("invalid identifier list `{0}`")]
    InvalidIdList(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
