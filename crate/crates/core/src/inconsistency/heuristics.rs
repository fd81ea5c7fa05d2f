//! Pairwise name-inconsistency heuristics over a vendor/product catalog.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::similarity::{normalize_str, sim_edit_str};
use super::InconsistencyError;
use crate::cpe::compare_versions;
use crate::cpe::Part;
use crate::feed::{CatalogEntry, CatalogSource, CveCounts};

/// Thresholds shared by all heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Minimum edit similarity for a spelling variant.
    pub tau_spelling: f64,
    /// Minimum normalized length for the spelling heuristic.
    pub min_len_m: usize,
    /// Shared-product ratio gate for vendor heuristics.
    pub theta_p: f64,
    /// Min-denominator overlap needed for shared product names.
    pub theta_high: f64,
    /// Ratio compared against `theta_p`.
    pub spr_gate: SprVariant,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            tau_spelling: 0.8,
            min_len_m: 5,
            theta_p: 0.5,
            theta_high: 0.8,
            spr_gate: SprVariant::Jaccard,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), InconsistencyError> {
        for (name, value) in [
            ("tau_spelling", self.tau_spelling),
            ("theta_p", self.theta_p),
            ("theta_high", self.theta_high),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(InconsistencyError::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {value}"
                )));
            }
        }
        if self.min_len_m == 0 {
            return Err(InconsistencyError::InvalidConfig("min_len_m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    FormatVariation,
    SpellingError,
    Acronym,
    SubstringMatch,
    ProductAsVendor,
    SharedProductNames,
}

impl Heuristic {
    pub const ALL: [Heuristic; 6] = [
        Heuristic::FormatVariation,
        Heuristic::SpellingError,
        Heuristic::Acronym,
        Heuristic::SubstringMatch,
        Heuristic::ProductAsVendor,
        Heuristic::SharedProductNames,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Heuristic::FormatVariation => "format",
            Heuristic::SpellingError => "spelling",
            Heuristic::Acronym => "acronym",
            Heuristic::SubstringMatch => "substring",
            Heuristic::ProductAsVendor => "product_as_vendor",
            Heuristic::SharedProductNames => "shared_products",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SprVariant {
    /// `|P1 ∩ P2| / |P1 ∪ P2|`
    Jaccard,
    /// `|P1 ∩ P2| / min(|P1|, |P2|)`
    MinDenominator,
}

#[derive(Debug, Clone, Default)]
struct VendorInfo {
    norm: String,
    products: BTreeSet<String>,
    raw_products: BTreeSet<String>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ProductInfo {
    pub versions: BTreeSet<String>,
    pub part: Option<Part>,
}

/// Vendors and products gathered from every catalog source, keyed by raw name.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    vendors: BTreeMap<String, VendorInfo>,
    products: BTreeMap<(String, String), ProductInfo>,
    cve_counts: CveCounts,
}

impl Catalog {
    pub fn new<'a>(entries: impl IntoIterator<Item = &'a CatalogEntry>) -> Self {
        let mut catalog = Catalog::default();
        for entry in entries {
            catalog.add(entry);
        }
        catalog
    }

    pub fn add(&mut self, entry: &CatalogEntry) {
        let vendor = self.vendors.entry(entry.vendor.clone()).or_insert_with(|| VendorInfo {
            norm: normalize_str(&entry.vendor),
            ..VendorInfo::default()
        });
        let product_norm = normalize_str(&entry.product);
        if !product_norm.is_empty() {
            vendor.products.insert(product_norm);
        }
        vendor.raw_products.insert(entry.product.clone());
        let product = self
            .products
            .entry((entry.vendor.clone(), entry.product.clone()))
            .or_default();
        product.versions.extend(entry.versions.iter().cloned());
        if product.part.is_none() || entry.source == CatalogSource::CpeDictionary {
            product.part = entry.part.or(product.part);
        }
    }

    /// Attaches the CVE counts used to pick canonical names.
    pub fn with_cve_counts(mut self, counts: CveCounts) -> Self {
        self.cve_counts = counts;
        self
    }

    /// CVEs referencing a raw vendor name.
    pub fn cve_count(&self, vendor: &str) -> u64 {
        self.cve_counts.vendors.get(vendor).copied().unwrap_or(0)
    }

    pub fn cve_counts(&self) -> &CveCounts {
        &self.cve_counts
    }

    pub fn product_cve_count(&self, vendor: &str, product: &str) -> u64 {
        self.cve_counts
            .products
            .get(&(vendor.to_string(), product.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn vendors(&self) -> impl Iterator<Item = &str> {
        self.vendors.keys().map(String::as_str)
    }

    pub fn contains_vendor(&self, raw: &str) -> bool {
        self.vendors.contains_key(raw)
    }

    pub fn vendor_norm(&self, raw: &str) -> Result<&str, InconsistencyError> {
        self.info(raw).map(|v| v.norm.as_str())
    }

    /// Normalized product names offered by `vendor`.
    pub fn normalized_products(&self, vendor: &str) -> Result<&BTreeSet<String>, InconsistencyError> {
        self.info(vendor).map(|v| &v.products)
    }

    pub fn raw_products(&self, vendor: &str) -> Result<&BTreeSet<String>, InconsistencyError> {
        self.info(vendor).map(|v| &v.raw_products)
    }

    /// Versions of a raw (vendor, product), sorted under [`compare_versions`].
    pub fn versions(&self, vendor: &str, product: &str) -> Vec<String> {
        let mut v: Vec<String> = self
            .products
            .get(&(vendor.to_string(), product.to_string()))
            .map(|p| p.versions.iter().cloned().collect())
            .unwrap_or_default();
        v.sort_by(|a, b| compare_versions(a, b));
        v
    }

    pub(crate) fn product_entries(&self) -> impl Iterator<Item = (&(String, String), &ProductInfo)> {
        self.products.iter()
    }

    fn info(&self, raw: &str) -> Result<&VendorInfo, InconsistencyError> {
        self.vendors
            .get(raw)
            .ok_or_else(|| InconsistencyError::UnknownVendor(raw.to_string()))
    }
}

/// Overlap of two vendors' normalized product sets. Zero when neither has products.
pub fn shared_product_ratio(
    v1: &str,
    v2: &str,
    catalog: &Catalog,
    variant: SprVariant,
) -> Result<f64, InconsistencyError> {
    let p1 = catalog.normalized_products(v1)?;
    let p2 = catalog.normalized_products(v2)?;
    let shared = p1.intersection(p2).count();
    let denominator = match variant {
        SprVariant::Jaccard => p1.len() + p2.len() - shared,
        SprVariant::MinDenominator => p1.len().min(p2.len()),
    };
    Ok(if denominator == 0 {
        0.0
    } else {
        shared as f64 / denominator as f64
    })
}

fn distinct(v1: &str, v2: &str) -> Result<(), InconsistencyError> {
    if v1 == v2 {
        Err(InconsistencyError::SameName(v1.to_string()))
    } else {
        Ok(())
    }
}

fn spr_gate_passes(v1: &str, v2: &str, catalog: &Catalog, cfg: &HeuristicConfig) -> Result<bool, InconsistencyError> {
    Ok(shared_product_ratio(v1, v2, catalog, cfg.spr_gate)? >= cfg.theta_p)
}

/// Vendor names equal after normalization and sharing enough products.
pub fn detect_format_variation(
    v1: &str,
    v2: &str,
    catalog: &Catalog,
    cfg: &HeuristicConfig,
) -> Result<bool, InconsistencyError> {
    distinct(v1, v2)?;
    let same = catalog.vendor_norm(v1)? == catalog.vendor_norm(v2)?;
    Ok(same && spr_gate_passes(v1, v2, catalog, cfg)?)
}

/// Product-name form of [`detect_format_variation`]: the product-overlap gate
/// is replaced by the two products belonging to the same (normalized) vendor.
pub fn detect_product_format_variation(
    (vendor1, product1): (&str, &str),
    (vendor2, product2): (&str, &str),
) -> Result<bool, InconsistencyError> {
    if vendor1 == vendor2 && product1 == product2 {
        return Err(InconsistencyError::SameName(product1.to_string()));
    }
    Ok(normalize_str(vendor1) == normalize_str(vendor2) && normalize_str(product1) == normalize_str(product2))
}

pub(crate) fn spelling_predicate(n1: &str, n2: &str, cfg: &HeuristicConfig) -> bool {
    let (l1, l2) = (n1.chars().count(), n2.chars().count());
    if l1 < cfg.min_len_m || l2 < cfg.min_len_m || n1.chars().next() != n2.chars().next() {
        return false;
    }
    // The edit distance is at least the length difference.
    let longest = l1.max(l2) as f64;
    if 1.0 - l1.abs_diff(l2) as f64 / longest < cfg.tau_spelling {
        return false;
    }
    sim_edit_str(n1, n2) >= cfg.tau_spelling
}

pub fn detect_spelling_error(
    v1: &str,
    v2: &str,
    catalog: &Catalog,
    cfg: &HeuristicConfig,
) -> Result<bool, InconsistencyError> {
    let (n1, n2) = (catalog.vendor_norm(v1)?, catalog.vendor_norm(v2)?);
    let hit = n1 != n2 && spelling_predicate(n1, n2, cfg);
    Ok(hit && spr_gate_passes(v1, v2, catalog, cfg)?)
}

/// One normalized name is a strict substring of the other.
pub fn detect_substring_match(
    v1: &str,
    v2: &str,
    catalog: &Catalog,
    cfg: &HeuristicConfig,
) -> Result<bool, InconsistencyError> {
    let (n1, n2) = (catalog.vendor_norm(v1)?, catalog.vendor_norm(v2)?);
    let strict = !n1.is_empty() && !n2.is_empty() && n1 != n2 && (n1.contains(n2) || n2.contains(n1));
    Ok(strict && spr_gate_passes(v1, v2, catalog, cfg)?)
}

pub(crate) fn acronym_predicate(n1: &str, n2: &str) -> bool {
    fn initials_match(short: &str, long: &str) -> bool {
        let tokens: Vec<&str> = long.split(' ').collect();
        if tokens.len() < 2 || short.contains(' ') {
            return false;
        }
        let initials: String = tokens.iter().filter_map(|t| t.chars().next()).collect();
        initials == short
    }
    initials_match(n1, n2) || initials_match(n2, n1)
}

/// One name is the initial letters of the other's words, e.g. `ibm` and
/// `international business machines`.
pub fn detect_acronym(v1: &str, v2: &str, catalog: &Catalog, cfg: &HeuristicConfig) -> Result<bool, InconsistencyError> {
    let hit = acronym_predicate(catalog.vendor_norm(v1)?, catalog.vendor_norm(v2)?);
    Ok(hit && spr_gate_passes(v1, v2, catalog, cfg)?)
}

/// Every `(vendor, product)` (both normalized) where another vendor offers a
/// product whose name equals `vendor` after normalization.
pub fn detect_product_as_vendor(vendor: &str, catalog: &Catalog) -> BTreeSet<(String, String)> {
    let norm = normalize_str(vendor);
    if norm.is_empty() {
        return BTreeSet::new();
    }
    catalog
        .vendors
        .values()
        .filter(|info| info.norm != norm && info.products.contains(&norm))
        .map(|info| (info.norm.clone(), norm.clone()))
        .collect()
}

pub fn detect_shared_product_names(
    v1: &str,
    v2: &str,
    catalog: &Catalog,
    cfg: &HeuristicConfig,
) -> Result<bool, InconsistencyError> {
    distinct(v1, v2)?;
    Ok(shared_product_ratio(v1, v2, catalog, SprVariant::MinDenominator)? >= cfg.theta_high)
}
