//! The canonical vendor/product/version dictionary and name standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::{choose_canonical, GroupStatus, InconsistencyGroup};
use super::heuristics::Catalog;
use super::similarity::{normalize_str, sim_edit_str};
use super::InconsistencyError;
use crate::cpe::{compare_versions, Part};

/// Standardized names plus the alias tables that lead to them.
///
/// Canonical names are normalized strings. Alias keys are raw names and
/// normalized forms that differ from their canonical target.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalDictionary {
    pub vendors: BTreeSet<String>,
    pub products: BTreeMap<String, BTreeSet<String>>,
    /// vendor -> product -> versions sorted under [`compare_versions`].
    pub versions: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub parts: BTreeMap<String, BTreeMap<String, Part>>,
    pub vendor_aliases: BTreeMap<String, String>,
    /// canonical vendor -> alias -> canonical product.
    pub product_aliases: BTreeMap<String, BTreeMap<String, String>>,
    /// CVEs per canonical vendor.
    #[serde(default)]
    pub cve_counts: BTreeMap<String, u64>,
}

/// Builds the dictionary from a catalog and reviewed groups. Only groups with
/// [`GroupStatus::Confirmed`] merge names.
pub fn build_canonical_dictionary(
    catalog: &Catalog,
    groups: &[InconsistencyGroup],
) -> Result<CanonicalDictionary, InconsistencyError> {
    let confirmed = groups.iter().filter(|g| g.status == GroupStatus::Confirmed);

    let mut vendor_map: BTreeMap<String, String> = BTreeMap::new();
    let mut product_groups = Vec::new();
    for group in confirmed {
        if group.vendor_scope.is_some() {
            product_groups.push(group);
            continue;
        }
        let canonical = normalize_str(&choose_canonical(&group.members, |m| catalog.cve_count(m)));
        assign(&mut vendor_map, &group.members, &canonical)?;
    }

    let canonical_vendor = |norm: &str| vendor_map.get(norm).cloned().unwrap_or_else(|| norm.to_string());

    let mut product_map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for group in product_groups {
        let scope = canonical_vendor(group.vendor_scope.as_deref().unwrap_or_default());
        let canonical = normalize_str(&group.canonical);
        assign(product_map.entry(scope).or_default(), &group.members, &canonical)?;
    }

    let mut dict = CanonicalDictionary::default();
    let mut versions: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for ((raw_vendor, raw_product), info) in catalog.product_entries() {
        let vn = normalize_str(raw_vendor);
        let pn = normalize_str(raw_product);
        if vn.is_empty() || pn.is_empty() {
            continue;
        }
        let cv = canonical_vendor(&vn);
        let cp = product_map
            .get(&cv)
            .and_then(|m| m.get(&pn))
            .cloned()
            .unwrap_or_else(|| pn.clone());

        dict.vendors.insert(cv.clone());
        dict.products.entry(cv.clone()).or_default().insert(cp.clone());
        versions
            .entry((cv.clone(), cp.clone()))
            .or_default()
            .extend(info.versions.iter().cloned());
        if let Some(part) = info.part {
            dict.parts.entry(cv.clone()).or_default().entry(cp.clone()).or_insert(part);
        }
        for alias in [raw_vendor.as_str(), vn.as_str()] {
            if alias != cv {
                dict.vendor_aliases.insert(alias.to_string(), cv.clone());
            }
        }
        for alias in [raw_product.as_str(), pn.as_str()] {
            if alias != cp {
                dict.product_aliases
                    .entry(cv.clone())
                    .or_default()
                    .insert(alias.to_string(), cp.clone());
            }
        }
    }
    for ((vendor, product), set) in versions {
        let mut list: Vec<String> = set.into_iter().collect();
        list.sort_by(|a, b| compare_versions(a, b));
        dict.versions.entry(vendor).or_default().insert(product, list);
    }
    for (raw, count) in &catalog.cve_counts().vendors {
        let norm = normalize_str(raw);
        let cv = canonical_vendor(&norm);
        if dict.vendors.contains(&cv) {
            *dict.cve_counts.entry(cv).or_default() += count;
        }
    }
    Ok(dict)
}

fn assign(map: &mut BTreeMap<String, String>, members: &BTreeSet<String>, canonical: &str) -> Result<(), InconsistencyError> {
    for member in members {
        let norm = normalize_str(member);
        if norm.is_empty() {
            continue;
        }
        match map.get(&norm) {
            Some(existing) if existing != canonical => {
                return Err(InconsistencyError::ConflictingGroups {
                    name: member.clone(),
                    first: existing.clone(),
                    second: canonical.to_string(),
                });
            }
            _ => {
                map.insert(norm, canonical.to_string());
            }
        }
    }
    Ok(())
}

fn best_match<'a>(norm: &str, candidates: impl Iterator<Item = &'a String>, tau: f64) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    // Candidates arrive in lexicographic order, so strict improvement keeps the
    // smallest name among ties.
    for c in candidates {
        let s = sim_edit_str(norm, c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.filter(|(_, s)| *s >= tau).map(|(c, _)| c.clone())
}

impl CanonicalDictionary {
    /// Maps a vendor name to its canonical form: alias tables first, then the
    /// most similar canonical vendor if its similarity reaches `tau`.
    pub fn standardize_vendor(&self, name: &str, tau: f64) -> Option<String> {
        if let Some(c) = self.vendor_aliases.get(name) {
            return Some(c.clone());
        }
        let norm = normalize_str(name);
        if self.vendors.contains(&norm) {
            return Some(norm);
        }
        if let Some(c) = self.vendor_aliases.get(&norm) {
            return Some(c.clone());
        }
        if norm.is_empty() {
            return None;
        }
        best_match(&norm, self.vendors.iter(), tau)
    }

    /// Like [`Self::standardize_vendor`] but among the products of a canonical vendor.
    pub fn standardize_product(&self, vendor: &str, name: &str, tau: f64) -> Option<String> {
        let products = self.products.get(vendor)?;
        let aliases = self.product_aliases.get(vendor);
        if let Some(c) = aliases.and_then(|a| a.get(name)) {
            return Some(c.clone());
        }
        let norm = normalize_str(name);
        if products.contains(&norm) {
            return Some(norm);
        }
        if let Some(c) = aliases.and_then(|a| a.get(&norm)) {
            return Some(c.clone());
        }
        if norm.is_empty() {
            return None;
        }
        best_match(&norm, products.iter(), tau)
    }

    /// Resolves a product name without a known vendor. Returns every
    /// canonical (vendor, product) whose product standardizes from `name`.
    pub fn standardize_product_any_vendor(&self, name: &str, tau: f64) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .vendors
            .iter()
            .filter_map(|v| {
                let aliases = self.product_aliases.get(v);
                let norm = normalize_str(name);
                let products = self.products.get(v)?;
                let hit = aliases
                    .and_then(|a| a.get(name).or_else(|| a.get(&norm)))
                    .cloned()
                    .or_else(|| products.contains(&norm).then_some(norm));
                hit.map(|p| (v.clone(), p))
            })
            .collect();
        if out.is_empty() {
            let norm = normalize_str(name);
            let mut best: Option<f64> = None;
            for v in &self.vendors {
                for p in self.products.get(v).into_iter().flatten() {
                    let s = sim_edit_str(&norm, p);
                    if s < tau {
                        continue;
                    }
                    match best {
                        Some(b) if s < b => {}
                        Some(b) if s == b => out.push((v.clone(), p.clone())),
                        _ => {
                            best = Some(s);
                            out = vec![(v.clone(), p.clone())];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn versions_of(&self, vendor: &str, product: &str) -> &[String] {
        self.versions
            .get(vendor)
            .and_then(|m| m.get(product))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn part_of(&self, vendor: &str, product: &str) -> Option<Part> {
        self.parts.get(vendor).and_then(|m| m.get(product)).copied()
    }

    /// Adds versions to a canonical (vendor, product), keeping the list sorted.
    pub fn merge_versions(&mut self, vendor: &str, product: &str, extra: impl IntoIterator<Item = String>) {
        self.vendors.insert(vendor.to_string());
        self.products
            .entry(vendor.to_string())
            .or_default()
            .insert(product.to_string());
        let list = self
            .versions
            .entry(vendor.to_string())
            .or_default()
            .entry(product.to_string())
            .or_default();
        list.extend(extra);
        list.sort_by(|a, b| compare_versions(a, b));
        list.dedup();
    }

    /// Every alias invariant: targets exist, canonical names are normalized
    /// fixed points and no alias shadows a canonical name.
    pub fn check_invariants(&self) -> Result<(), String> {
        for v in &self.vendors {
            if normalize_str(v) != *v {
                return Err(format!("vendor `{v}` is not normalized"));
            }
        }
        for (alias, target) in &self.vendor_aliases {
            if !self.vendors.contains(target) {
                return Err(format!("vendor alias `{alias}` targets unknown `{target}`"));
            }
            if self.vendors.contains(alias) {
                return Err(format!("vendor alias `{alias}` shadows a canonical vendor"));
            }
        }
        for (vendor, products) in &self.products {
            for p in products {
                if normalize_str(p) != *p {
                    return Err(format!("product `{p}` of `{vendor}` is not normalized"));
                }
            }
        }
        for (vendor, aliases) in &self.product_aliases {
            let products = self.products.get(vendor);
            for (alias, target) in aliases {
                if !products.is_some_and(|p| p.contains(target)) {
                    return Err(format!("product alias `{alias}` targets unknown `{vendor}/{target}`"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), InconsistencyError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| InconsistencyError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, InconsistencyError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| InconsistencyError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| InconsistencyError::Io(format!("{}: {e}", path.display())))
    }
}
