//! Grouping of heuristic hits into reviewable inconsistency groups.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::heuristics::{
    acronym_predicate, shared_product_ratio, spelling_predicate, Catalog, Heuristic, HeuristicConfig, SprVariant,
};
use super::similarity::{normalize_str, sim_edit_str};
use super::InconsistencyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupStatus {
    Possible,
    Confirmed,
    RejectedByReview,
}

/// Scores recorded for one flagged pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvidence {
    pub a: String,
    pub b: String,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spr_jaccard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spr_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyGroup {
    pub id: String,
    pub heuristic: Heuristic,
    /// Normalized vendor owning the product names; `None` for vendor groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_scope: Option<String>,
    pub members: BTreeSet<String>,
    pub canonical: String,
    pub status: GroupStatus,
    pub evidence: Vec<PairEvidence>,
}

impl InconsistencyGroup {
    fn new(
        heuristic: Heuristic,
        vendor_scope: Option<String>,
        members: BTreeSet<String>,
        evidence: Vec<PairEvidence>,
        count: impl Fn(&str) -> u64,
    ) -> Self {
        let canonical = choose_canonical(&members, count);
        let mut hasher = Sha256::new();
        hasher.update(heuristic.code().as_bytes());
        hasher.update([0x1f]);
        hasher.update(vendor_scope.as_deref().unwrap_or("").as_bytes());
        for m in &members {
            hasher.update([0x1f]);
            hasher.update(m.as_bytes());
        }
        let id = format!("{}-{}", heuristic.code(), hex::encode(&hasher.finalize()[..6]));
        InconsistencyGroup {
            id,
            heuristic,
            vendor_scope,
            members,
            canonical,
            status: GroupStatus::Possible,
            evidence,
        }
    }
}

/// Highest CVE count wins; ties go to the smallest normalized form, then the
/// smallest raw name.
pub fn choose_canonical(members: &BTreeSet<String>, count: impl Fn(&str) -> u64) -> String {
    members
        .iter()
        .map(|m| (std::cmp::Reverse(count(m)), normalize_str(m), m))
        .min()
        .map(|(_, _, m)| m.clone())
        .unwrap_or_default()
}

struct Hit {
    heuristic: Heuristic,
    a: usize,
    b: usize,
    evidence: PairEvidence,
}

/// Runs every heuristic over the catalog and returns one group per connected
/// component of hits, per heuristic. Vendor names are compared across the
/// whole catalog; product names only within one normalized vendor.
pub fn cluster_inconsistencies(
    catalog: &Catalog,
    cfg: &HeuristicConfig,
) -> Result<Vec<InconsistencyGroup>, InconsistencyError> {
    cfg.validate()?;
    let mut groups = vendor_groups(catalog, cfg)?;
    groups.extend(product_groups(catalog, cfg));
    groups.sort_by(|x, y| {
        (&x.canonical, x.heuristic, &x.vendor_scope, &x.id).cmp(&(&y.canonical, y.heuristic, &y.vendor_scope, &y.id))
    });
    Ok(groups)
}

fn vendor_groups(catalog: &Catalog, cfg: &HeuristicConfig) -> Result<Vec<InconsistencyGroup>, InconsistencyError> {
    let names: Vec<&str> = catalog.vendors().collect();
    let norms: Vec<&str> = names
        .iter()
        .map(|n| catalog.vendor_norm(n))
        .collect::<Result<_, _>>()?;

    // Every gated heuristic needs at least one shared product, so candidate
    // pairs come from a product -> vendors index.
    let mut by_product: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        for p in catalog.normalized_products(name)? {
            by_product.entry(p.as_str()).or_default().push(i);
        }
    }
    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for vendors in by_product.values() {
        for (k, &a) in vendors.iter().enumerate() {
            for &b in &vendors[k + 1..] {
                candidates.insert((a.min(b), a.max(b)));
            }
        }
    }

    let candidates: Vec<(usize, usize)> = candidates.into_iter().collect();
    let mut hits: Vec<Hit> = candidates
        .par_iter()
        .map(|&(a, b)| evaluate_vendor_pair(catalog, cfg, &names, &norms, a, b))
        .collect::<Result<Vec<Vec<Hit>>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut by_norm: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in norms.iter().enumerate() {
        by_norm.entry(n).or_default().push(i);
    }
    for (i, name) in names.iter().enumerate() {
        for (owner, _) in super::heuristics::detect_product_as_vendor(name, catalog) {
            for &j in by_norm.get(owner.as_str()).into_iter().flatten() {
                hits.push(Hit {
                    heuristic: Heuristic::ProductAsVendor,
                    a: i,
                    b: j,
                    evidence: PairEvidence {
                        a: name.to_string(),
                        b: names[j].to_string(),
                        similarity: sim_edit_str(norms[i], norms[j]),
                        spr_jaccard: None,
                        spr_min: None,
                    },
                });
            }
        }
    }

    let labels: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    Ok(components(&labels, hits, None, |m| catalog.cve_count(m)))
}

fn evaluate_vendor_pair(
    catalog: &Catalog,
    cfg: &HeuristicConfig,
    names: &[&str],
    norms: &[&str],
    a: usize,
    b: usize,
) -> Result<Vec<Hit>, InconsistencyError> {
    let (n1, n2) = (norms[a], norms[b]);
    let jaccard = shared_product_ratio(names[a], names[b], catalog, SprVariant::Jaccard)?;
    let min_den = shared_product_ratio(names[a], names[b], catalog, SprVariant::MinDenominator)?;
    let gate = match cfg.spr_gate {
        SprVariant::Jaccard => jaccard,
        SprVariant::MinDenominator => min_den,
    };
    let similarity = sim_edit_str(n1, n2);
    let mut found = Vec::new();
    if n1 == n2 {
        if gate >= cfg.theta_p {
            found.push(Heuristic::FormatVariation);
        }
    } else {
        if gate >= cfg.theta_p {
            if spelling_predicate(n1, n2, cfg) {
                found.push(Heuristic::SpellingError);
            }
            if acronym_predicate(n1, n2) {
                found.push(Heuristic::Acronym);
            }
            if !n1.is_empty() && !n2.is_empty() && (n1.contains(n2) || n2.contains(n1)) {
                found.push(Heuristic::SubstringMatch);
            }
        }
        if min_den >= cfg.theta_high {
            found.push(Heuristic::SharedProductNames);
        }
    }
    Ok(found
        .into_iter()
        .map(|heuristic| Hit {
            heuristic,
            a,
            b,
            evidence: PairEvidence {
                a: names[a].to_string(),
                b: names[b].to_string(),
                similarity,
                spr_jaccard: Some(jaccard),
                spr_min: Some(min_den),
            },
        })
        .collect())
}

fn product_groups(catalog: &Catalog, cfg: &HeuristicConfig) -> Vec<InconsistencyGroup> {
    let mut scopes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for ((vendor, product), _) in catalog.product_entries() {
        let scope = normalize_str(vendor);
        if scope.is_empty() {
            continue;
        }
        *counts.entry((scope.clone(), product.clone())).or_default() += catalog.product_cve_count(vendor, product);
        scopes.entry(scope).or_default().insert(product.clone());
    }

    let scoped: Vec<(String, Vec<String>)> = scopes
        .into_iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(s, p)| (s, p.into_iter().collect()))
        .collect();

    scoped
        .par_iter()
        .flat_map_iter(|(scope, products)| {
            let norms: Vec<String> = products.iter().map(|p| normalize_str(p)).collect();
            let mut hits = Vec::new();
            for a in 0..products.len() {
                for b in a + 1..products.len() {
                    let (n1, n2) = (&norms[a], &norms[b]);
                    if n1.is_empty() || n2.is_empty() {
                        continue;
                    }
                    let heuristic = if n1 == n2 {
                        Heuristic::FormatVariation
                    } else if spelling_predicate(n1, n2, cfg) {
                        Heuristic::SpellingError
                    } else {
                        continue;
                    };
                    hits.push(Hit {
                        heuristic,
                        a,
                        b,
                        evidence: PairEvidence {
                            a: products[a].clone(),
                            b: products[b].clone(),
                            similarity: sim_edit_str(n1, n2),
                            spr_jaccard: None,
                            spr_min: None,
                        },
                    });
                }
            }
            components(products, hits, Some(scope.clone()), |m| {
                counts.get(&(scope.clone(), m.to_string())).copied().unwrap_or(0)
            })
        })
        .collect()
}

fn components(
    labels: &[String],
    hits: Vec<Hit>,
    scope: Option<String>,
    count: impl Fn(&str) -> u64,
) -> Vec<InconsistencyGroup> {
    let mut per_heuristic: BTreeMap<Heuristic, Vec<Hit>> = BTreeMap::new();
    for hit in hits {
        per_heuristic.entry(hit.heuristic).or_default().push(hit);
    }
    let mut out = Vec::new();
    for (heuristic, hits) in per_heuristic {
        let mut uf = UnionFind::<usize>::new(labels.len());
        for h in &hits {
            uf.union(h.a, h.b);
        }
        let mut members: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        let mut evidence: BTreeMap<usize, Vec<PairEvidence>> = BTreeMap::new();
        for h in hits {
            let root = uf.find(h.a);
            let set = members.entry(root).or_default();
            set.insert(labels[h.a].clone());
            set.insert(labels[h.b].clone());
            evidence.entry(root).or_default().push(h.evidence);
        }
        for (root, members) in members {
            let mut ev = evidence.remove(&root).unwrap_or_default();
            ev.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
            ev.dedup_by(|x, y| x.a == y.a && x.b == y.b);
            out.push(InconsistencyGroup::new(heuristic, scope.clone(), members, ev, &count));
        }
    }
    out
}

/// One line of an operator review file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub group_id: String,
    pub status: GroupStatus,
}

/// Parses a JSON-lines review file.
pub fn read_review(reader: impl BufRead) -> Result<Vec<ReviewDecision>, InconsistencyError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| InconsistencyError::Review {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| InconsistencyError::Review {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Sets group statuses from review decisions. Later decisions for the same
/// group override earlier ones.
pub fn apply_review(groups: &mut [InconsistencyGroup], decisions: &[ReviewDecision]) -> Result<(), InconsistencyError> {
    let index: BTreeMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
    let mut updates = Vec::with_capacity(decisions.len());
    for d in decisions {
        let i = *index
            .get(d.group_id.as_str())
            .ok_or_else(|| InconsistencyError::UnknownGroup(d.group_id.clone()))?;
        updates.push((i, d.status));
    }
    for (i, status) in updates {
        groups[i].status = status;
    }
    Ok(())
}

/// Writes the CSV report: one row per group.
pub fn write_report(groups: &[InconsistencyGroup], writer: impl Write) -> Result<(), InconsistencyError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["group_id", "heuristic", "vendor_scope", "members", "canonical", "scores", "status"])?;
    for g in groups {
        let members: Vec<&str> = g.members.iter().map(String::as_str).collect();
        let scores: Vec<String> = g
            .evidence
            .iter()
            .map(|e| {
                let mut s = format!("{}~{} sim={:.3}", e.a, e.b, e.similarity);
                if let Some(j) = e.spr_jaccard {
                    s.push_str(&format!(" spr={j:.3}"));
                }
                if let Some(m) = e.spr_min {
                    s.push_str(&format!(" spr_min={m:.3}"));
                }
                s
            })
            .collect();
        csv.write_record([
            g.id.as_str(),
            g.heuristic.code(),
            g.vendor_scope.as_deref().unwrap_or(""),
            &members.join(";"),
            g.canonical.as_str(),
            &scores.join(";"),
            match g.status {
                GroupStatus::Possible => "Possible",
                GroupStatus::Confirmed => "Confirmed",
                GroupStatus::RejectedByReview => "RejectedByReview",
            },
        ])?;
    }
    csv.flush().map_err(|e| InconsistencyError::Io(e.to_string()))?;
    Ok(())
}
