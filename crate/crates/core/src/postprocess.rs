//! Standardization of extracted and CPE-match entries into uCPE entries.
//!
//! Names are resolved against a [`CanonicalDictionary`], textual version
//! descriptors ("before 8.0.552.344", "1.4 and earlier") become
//! [`VersionConstraint`]s, and constraints expand to concrete releases.

use std::collections::{BTreeSet, HashMap};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpe::{Part, UcpeEntry, VersionBound, VersionConstraint};
use crate::extraction::{
    extract_sentence, is_version_token, split_sentences, EntityExtractor, RelationClassifier, SentenceExtraction,
};
use crate::inconsistency::{normalize_str, sim_edit_str, CanonicalDictionary};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PostprocessError {
    #[error("unrecognized version descriptor `{0}`")]
    UnrecognizedDescriptor(String),
    #[error("no canonical name for vendor `{vendor}` product `{product}`")]
    UnresolvableName { vendor: String, product: String },
}

impl PostprocessError {
    pub fn code(&self) -> &'static str {
        match self {
            PostprocessError::UnrecognizedDescriptor(_) => "UnrecognizedDescriptor",
            PostprocessError::UnresolvableName { .. } => "UnresolvableName",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    ExtractedRe,
    CpeMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VersionDescriptor {
    Text(String),
    Constraint(VersionConstraint),
}

impl VersionDescriptor {
    pub fn describe(&self) -> String {
        match self {
            VersionDescriptor::Text(t) => t.clone(),
            VersionDescriptor::Constraint(c) => c.describe(),
        }
    }

    pub fn to_constraint(&self) -> Result<VersionConstraint, PostprocessError> {
        match self {
            VersionDescriptor::Text(t) => parse_descriptor(t),
            VersionDescriptor::Constraint(c) => Ok(c.clone()),
        }
    }
}

/// An entry awaiting standardization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawEntry {
    pub vendor: Option<String>,
    pub product: String,
    pub version_desc: VersionDescriptor,
    pub part: Option<Part>,
    pub source: EntrySource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

// Descriptor shapes: `V` stands for a version token.
const SHAPES: &[(&str, Op)] = &[
    ("before V", Op::Lt),
    ("prior to V", Op::Lt),
    ("earlier than V", Op::Lt),
    ("lower than V", Op::Lt),
    ("below V", Op::Lt),
    ("fixed in V", Op::Lt),
    ("< V", Op::Lt),
    ("V and earlier", Op::Le),
    ("V or earlier", Op::Le),
    ("V and prior", Op::Le),
    ("V and before", Op::Le),
    ("V and below", Op::Le),
    ("up to V", Op::Le),
    ("up to and including V", Op::Le),
    ("through V", Op::Le),
    ("thru V", Op::Le),
    ("<= V", Op::Le),
    ("not affected before V", Op::Gt),
    ("after V", Op::Gt),
    ("later than V", Op::Gt),
    ("> V", Op::Gt),
    ("V and later", Op::Ge),
    ("V or later", Op::Ge),
    ("V and above", Op::Ge),
    ("V and newer", Op::Ge),
    ("V or newer", Op::Ge),
    ("since V", Op::Ge),
    ("from V", Op::Ge),
    ("starting with V", Op::Ge),
    (">= V", Op::Ge),
];

const CLOSED_RANGES: &[&str] = &[
    "V through V",
    "V thru V",
    "V to V",
    "V - V",
    "between V and V",
    "from V through V",
    "from V to V",
];

/// Parses a textual version descriptor. The words `version`, `versions` and
/// `ver` are ignored, as are service-pack tokens after a version.
pub fn parse_descriptor(desc: &str) -> Result<VersionConstraint, PostprocessError> {
    let unrecognized = || PostprocessError::UnrecognizedDescriptor(desc.to_string());
    let mut shape = Vec::new();
    let mut versions = Vec::new();
    let mut previous_was_version = false;
    for raw in desc.split_whitespace() {
        let lower = raw.to_lowercase();
        if matches!(lower.as_str(), "version" | "versions" | "ver") {
            continue;
        }
        if is_version_token(&lower) {
            let token = match lower.strip_prefix('v') {
                Some(rest) if rest.starts_with(|c: char| c.is_ascii_digit()) => rest.to_string(),
                _ => lower,
            };
            versions.push(token);
            shape.push("V".to_string());
            previous_was_version = true;
            continue;
        }
        if previous_was_version && is_service_pack(&lower) {
            continue;
        }
        previous_was_version = false;
        shape.push(lower);
    }
    let shape = shape.join(" ");
    match versions.len() {
        1 if shape == "V" => Ok(VersionConstraint::exact(versions.remove(0))),
        1 => {
            let op = SHAPES
                .iter()
                .find(|(s, _)| *s == shape)
                .map(|(_, op)| *op)
                .ok_or_else(unrecognized)?;
            let v = versions.remove(0);
            Ok(match op {
                Op::Lt => VersionConstraint::range(None, Some(VersionBound::exclusive(v))),
                Op::Le => VersionConstraint::range(None, Some(VersionBound::inclusive(v))),
                Op::Gt => VersionConstraint::range(Some(VersionBound::exclusive(v)), None),
                Op::Ge => VersionConstraint::range(Some(VersionBound::inclusive(v)), None),
            })
        }
        2 if CLOSED_RANGES.contains(&shape.as_str()) => {
            let upper = versions.pop().map(VersionBound::inclusive);
            let lower = versions.pop().map(VersionBound::inclusive);
            Ok(VersionConstraint::range(lower, upper))
        }
        _ => Err(unrecognized()),
    }
}

fn is_service_pack(token: &str) -> bool {
    let digits = token
        .strip_prefix("sp")
        .or_else(|| token.strip_prefix("update"))
        .or_else(|| token.strip_prefix("rc"));
    digits.is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
}

/// Result of expanding a descriptor over a release list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversion {
    pub versions: Vec<String>,
    /// Set when an exact version is absent from the release list and kept anyway.
    pub unlisted: bool,
}

/// Expands a descriptor to the releases it covers. `releases` must be sorted
/// under [`crate::cpe::compare_versions`]; the result keeps that order.
pub fn convert_version(desc: &VersionDescriptor, releases: &[String]) -> Result<Conversion, PostprocessError> {
    let constraint = desc.to_constraint()?;
    Ok(convert_constraint(&constraint, releases))
}

pub fn convert_constraint(constraint: &VersionConstraint, releases: &[String]) -> Conversion {
    match constraint {
        VersionConstraint::Exact { version } if !releases.contains(version) => Conversion {
            versions: vec![version.clone()],
            unlisted: true,
        },
        VersionConstraint::List { versions } => {
            let unlisted = versions.iter().any(|v| !releases.contains(v));
            Conversion {
                versions: versions.clone(),
                unlisted,
            }
        }
        c => Conversion {
            versions: releases.iter().filter(|v| c.admits(v)).cloned().collect(),
            unlisted: false,
        },
    }
}

/// Resolves an entry's vendor and product to canonical names.
///
/// With a vendor, the vendor is standardized first and the product matched
/// among its products. Without one, a leading vendor name inside the product
/// text is split off; failing that every vendor's products are searched and
/// ties go to the vendor with more CVEs, then the smaller name.
pub fn separate_vendor_product(
    entry: &RawEntry,
    dict: &CanonicalDictionary,
    tau: f64,
) -> Result<(String, String), PostprocessError> {
    let unresolvable = || PostprocessError::UnresolvableName {
        vendor: entry.vendor.clone().unwrap_or_default(),
        product: entry.product.clone(),
    };
    if let Some(vendor) = entry.vendor.as_deref().filter(|v| !normalize_str(v).is_empty()) {
        let cv = dict.standardize_vendor(vendor, tau).ok_or_else(unresolvable)?;
        if let Some(cp) = dict.standardize_product(&cv, &entry.product, tau) {
            return Ok((cv, cp));
        }
        // The product text may repeat the vendor name.
        let norm = normalize_str(&entry.product);
        if let Some(rest) = norm.strip_prefix(&format!("{cv} ")) {
            if let Some(cp) = dict.standardize_product(&cv, rest, tau) {
                return Ok((cv, cp));
            }
        }
        return Err(unresolvable());
    }

    let norm = normalize_str(&entry.product);
    let tokens: Vec<&str> = norm.split(' ').collect();
    for k in (1..tokens.len()).rev() {
        let prefix = tokens[..k].join(" ");
        let vendor = if dict.vendors.contains(&prefix) {
            Some(prefix)
        } else {
            dict.vendor_aliases.get(&prefix).cloned()
        };
        if let Some(cv) = vendor {
            if let Some(cp) = dict.standardize_product(&cv, &tokens[k..].join(" "), tau) {
                return Ok((cv, cp));
            }
        }
    }
    let candidates = dict.standardize_product_any_vendor(&entry.product, tau);
    candidates
        .into_iter()
        .min_by(|(va, pa), (vb, pb)| {
            let ca = dict.cve_counts.get(va).copied().unwrap_or(0);
            let cb = dict.cve_counts.get(vb).copied().unwrap_or(0);
            cb.cmp(&ca).then_with(|| va.cmp(vb)).then_with(|| pa.cmp(pb))
        })
        .ok_or_else(unresolvable)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedEntry {
    pub vendor: String,
    pub product: String,
    pub part: Part,
    /// One entry per covered version; a single `*` entry when the constraint
    /// covers every version or no known release.
    pub ucpe: Vec<UcpeEntry>,
    pub constraint: VersionConstraint,
    pub unlisted: bool,
    pub source: EntrySource,
    pub descriptor: String,
}

impl ResolvedEntry {
    fn version_set(&self) -> BTreeSet<&str> {
        self.ucpe.iter().map(|u| u.version.as_str()).collect()
    }
}

/// An entry that could not be standardized, with its reason code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedEntry {
    pub entry: RawEntry,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOutput {
    pub resolved: Vec<ResolvedEntry>,
    pub unresolved: Vec<UnresolvedEntry>,
}

type MemoKey = (Option<String>, String, String, Option<Part>, EntrySource);

/// Resolves entries against one dictionary, caching results per
/// (vendor, product, descriptor).
pub struct Resolver<'a> {
    dict: &'a CanonicalDictionary,
    tau: f64,
    memoize: bool,
    memo: RwLock<HashMap<MemoKey, Result<ResolvedEntry, PostprocessError>>>,
}

impl<'a> Resolver<'a> {
    pub fn new(dict: &'a CanonicalDictionary, tau: f64) -> Self {
        Resolver {
            dict,
            tau,
            memoize: true,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn without_memo(mut self) -> Self {
        self.memoize = false;
        self
    }

    pub fn cached(&self) -> usize {
        self.memo.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn resolve(&self, entry: &RawEntry) -> Result<ResolvedEntry, PostprocessError> {
        if !self.memoize {
            return self.resolve_uncached(entry);
        }
        let key: MemoKey = (
            entry.vendor.clone(),
            entry.product.clone(),
            serde_json::to_string(&entry.version_desc).unwrap_or_default(),
            entry.part,
            entry.source,
        );
        if let Some(hit) = self.memo.read().ok().and_then(|m| m.get(&key).cloned()) {
            return hit;
        }
        let result = self.resolve_uncached(entry);
        // Values are deterministic, so a concurrent duplicate insert is harmless.
        if let Ok(mut m) = self.memo.write() {
            m.insert(key, result.clone());
        }
        result
    }

    fn resolve_uncached(&self, entry: &RawEntry) -> Result<ResolvedEntry, PostprocessError> {
        let (vendor, product) = separate_vendor_product(entry, self.dict, self.tau)?;
        let constraint = entry.version_desc.to_constraint()?;
        let part = entry
            .part
            .or_else(|| self.dict.part_of(&vendor, &product))
            .unwrap_or(Part::Application);
        let (versions, unlisted) = match &constraint {
            VersionConstraint::Any => (vec!["*".to_string()], false),
            VersionConstraint::Exact { version } if version == "-" || version == "*" => {
                (vec![version.clone()], false)
            }
            c => {
                let conversion = convert_constraint(c, self.dict.versions_of(&vendor, &product));
                if conversion.versions.is_empty() {
                    (vec!["*".to_string()], false)
                } else {
                    (conversion.versions, conversion.unlisted)
                }
            }
        };
        let ucpe = versions
            .iter()
            .map(|v| UcpeEntry::new(part, &vendor, &product, v))
            .collect();
        Ok(ResolvedEntry {
            vendor,
            product,
            part,
            ucpe,
            constraint,
            unlisted,
            source: entry.source,
            descriptor: entry.version_desc.describe(),
        })
    }

    /// Resolves both lists and drops extracted entries that align with a CPE
    /// entry. Unresolvable entries are reported, never dropped.
    #[allow(clippy::result_large_err)]
    pub fn merge_entries(&self, re_entries: &[RawEntry], cpe_entries: &[RawEntry]) -> MergeOutput {
        let resolve_all = |entries: &[RawEntry]| -> Vec<Result<ResolvedEntry, UnresolvedEntry>> {
            entries
                .par_iter()
                .map(|e| {
                    self.resolve(e).map_err(|err| UnresolvedEntry {
                        entry: e.clone(),
                        code: err.code().to_string(),
                        message: err.to_string(),
                    })
                })
                .collect()
        };
        let mut out = MergeOutput::default();
        let mut re = Vec::new();
        let mut cpe = Vec::new();
        for (results, sink) in [(resolve_all(re_entries), &mut re), (resolve_all(cpe_entries), &mut cpe)] {
            for r in results {
                match r {
                    Ok(entry) => sink.push(entry),
                    Err(u) => out.unresolved.push(u),
                }
            }
        }
        out.resolved = align(re, cpe, self.tau);
        out
    }
}

/// Keeps every CPE-sourced entry and each extracted entry that no CPE entry
/// covers. An extracted entry is covered when vendor and product similarity
/// both reach `tau` and the two version lists intersect.
pub fn align(re: Vec<ResolvedEntry>, cpe: Vec<ResolvedEntry>, tau: f64) -> Vec<ResolvedEntry> {
    let kept: Vec<ResolvedEntry> = re
        .into_iter()
        .filter(|r| {
            let versions = r.version_set();
            !cpe.iter().any(|c| {
                sim_edit_str(&r.vendor, &c.vendor) >= tau
                    && sim_edit_str(&r.product, &c.product) >= tau
                    && !versions.is_disjoint(&c.version_set())
            })
        })
        .collect();
    let mut out = cpe;
    out.extend(kept);
    out
}

/// Raw entries for the valid product/version pairs of one extraction.
pub fn raw_entries_from_extraction(extraction: &SentenceExtraction) -> Vec<RawEntry> {
    let mut out: Vec<RawEntry> = Vec::new();
    for pair in extraction.pairs.iter().filter(|p| p.valid) {
        let entry = RawEntry {
            vendor: None,
            product: pair.product.text.clone(),
            version_desc: VersionDescriptor::Text(pair.mod_v.descriptor.clone()),
            part: pair.product.part,
            source: EntrySource::ExtractedRe,
        };
        if !out.contains(&entry) {
            out.push(entry);
        }
    }
    out
}

/// Extracts raw entries from every sentence of a description.
pub fn extract_raw_entries(
    description: &str,
    extractor: &dyn EntityExtractor,
    classifier: &dyn RelationClassifier,
) -> Vec<RawEntry> {
    let mut out: Vec<RawEntry> = Vec::new();
    for sentence in split_sentences(description) {
        for entry in raw_entries_from_extraction(&extract_sentence(&sentence, extractor, classifier)) {
            if !out.contains(&entry) {
                out.push(entry);
            }
        }
    }
    out
}
