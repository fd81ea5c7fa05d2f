//! Configuration-aware vulnerability normalization and retrieval.
//!
//! The pipeline ingests NVD feeds and the CPE dictionary ([`feed`]), resolves
//! vendor and product naming inconsistencies into a canonical dictionary
//! ([`inconsistency`]), extracts product/version mentions from descriptions
//! ([`extraction`], [`postprocess`]), models configurations as AND/OR graphs of
//! uCPE entries ([`graph`]) and filters vulnerabilities that do not apply to a
//! system ([`filter`]). [`eval`] scores retrieval strategies.

pub mod cpe;
pub mod feed;
pub mod extraction;
pub mod inconsistency;
pub mod postprocess;
pub mod graph;
pub mod filter;
pub mod eval;
