//! Vendor and product naming inconsistencies: normalization, similarity,
//! detection heuristics, clustering and the canonical dictionary.

mod cluster;
mod dictionary;
mod heuristics;
mod similarity;

use thiserror::Error;

pub use cluster::{
    apply_review, choose_canonical, cluster_inconsistencies, read_review, write_report, GroupStatus,
    InconsistencyGroup, PairEvidence, ReviewDecision,
};
pub use dictionary::{build_canonical_dictionary, CanonicalDictionary};
pub use heuristics::{
    detect_acronym, detect_format_variation, detect_product_as_vendor, detect_product_format_variation,
    detect_shared_product_names, detect_spelling_error, detect_substring_match, shared_product_ratio, Catalog,
    Heuristic, HeuristicConfig, SprVariant,
};
pub use similarity::{damerau_levenshtein, normalize, normalize_str, sim_edit, sim_edit_str, NormalizedName};

#[derive(Debug, Error)]
pub enum InconsistencyError {
    #[error("unknown vendor `{0}`")]
    UnknownVendor(String),
    #[error("`{0}` compared with itself")]
    SameName(String),
    #[error("invalid heuristic configuration: {0}")]
    InvalidConfig(String),
    #[error("`{name}` confirmed under canonical `{first}` and `{second}`")]
    ConflictingGroups { name: String, first: String, second: String },
    #[error("review file line {line}: {message}")]
    Review { line: usize, message: String },
    #[error("review names unknown group `{0}`")]
    UnknownGroup(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl InconsistencyError {
    pub fn code(&self) -> &'static str {
        match self {
            InconsistencyError::UnknownVendor(_) => "UnknownVendor",
            InconsistencyError::SameName(_) => "PreconditionViolated",
            InconsistencyError::InvalidConfig(_) => "InvalidConfig",
            InconsistencyError::ConflictingGroups { .. } => "ConflictingGroups",
            InconsistencyError::Review { .. } | InconsistencyError::UnknownGroup(_) => "InvalidReview",
            InconsistencyError::Io(_) | InconsistencyError::Csv(_) => "StorageIo",
        }
    }
}
