//! Applicability filtering: decides which vulnerabilities apply to which
//! assets by evaluating configuration graphs against installed uCPEs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feed::Operator;
use crate::graph::{Asset, ConfigGraph, ConfigNode, SysGraph, VulGraph};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("stale filter state: {0}")]
    StaleState(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl FilterError {
    pub fn code(&self) -> &'static str {
        match self {
            FilterError::StaleState(_) => "StaleState",
            FilterError::Io { .. } => "StorageIo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Applicable {
    pub cve_id: String,
    pub asset_id: String,
    pub config_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    /// The vulnerability has no configuration to evaluate.
    NoConfiguration,
    /// No vulnerable leaf matches any installed component.
    NoComponentMatch,
    /// Some vulnerable product is installed but a configuration condition fails.
    ConditionsUnmet,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilteredOut {
    pub cve_id: String,
    pub asset_id: String,
    pub reason: FilterReason,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceStep {
    /// Child indices from the root, e.g. `0.1`; the root is empty.
    pub path: String,
    pub node: String,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigTrace {
    pub cve_id: String,
    pub asset_id: String,
    pub config_id: String,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicabilityResult {
    pub applicable: BTreeSet<Applicable>,
    pub filtered_out: BTreeSet<FilteredOut>,
    pub traces: BTreeSet<ConfigTrace>,
}

impl ApplicabilityResult {
    fn merge(mut self, other: ApplicabilityResult) -> Self {
        self.applicable.extend(other.applicable);
        self.filtered_out.extend(other.filtered_out);
        self.traces.extend(other.traces);
        self
    }

    /// CVE ids applicable to at least one asset.
    pub fn applicable_cves(&self) -> BTreeSet<&str> {
        self.applicable.iter().map(|a| a.cve_id.as_str()).collect()
    }

    /// CVE ids applicable to `asset_id`.
    pub fn applicable_for(&self, asset_id: &str) -> BTreeSet<&str> {
        self.applicable
            .iter()
            .filter(|a| a.asset_id == asset_id)
            .map(|a| a.cve_id.as_str())
            .collect()
    }

    /// A fixed-width text table of the applicable triples and filtered pairs.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:<20} {}\n", "CVE", "ASSET", "RESULT");
        for a in &self.applicable {
            out.push_str(&format!("{:<18} {:<20} applicable ({})\n", a.cve_id, a.asset_id, a.config_id));
        }
        for f in &self.filtered_out {
            let reason = serde_json::to_value(f.reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            out.push_str(&format!("{:<18} {:<20} filtered: {reason}\n", f.cve_id, f.asset_id));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub traces: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { traces: true }
    }
}

/// Subset test for operator-free configurations: every leaf must be
/// satisfied by some installed component.
pub fn match_simple(config: &ConfigGraph, asset: &Asset) -> bool {
    config.leaves().iter().all(|l| asset.satisfies(l))
}

/// Recursive AND/OR evaluation.
pub fn match_logical(config: &ConfigGraph, asset: &Asset) -> bool {
    eval_node(&config.root, asset)
}

fn eval_node(node: &ConfigNode, asset: &Asset) -> bool {
    match node {
        ConfigNode::Leaf(l) => asset.satisfies(l),
        ConfigNode::Group { operator: Operator::And, children } => children.iter().all(|c| eval_node(c, asset)),
        ConfigNode::Group { operator: Operator::Or, children } => children.iter().any(|c| eval_node(c, asset)),
    }
}

/// Routes operator-free configurations to [`match_simple`] and the rest to
/// [`match_logical`].
pub fn applies(config: &ConfigGraph, asset: &Asset) -> bool {
    if config.is_simple() {
        match_simple(config, asset)
    } else {
        match_logical(config, asset)
    }
}

fn trace_node(node: &ConfigNode, asset: &Asset, path: String, steps: &mut Vec<TraceStep>) -> bool {
    let (label, matched) = match node {
        ConfigNode::Leaf(l) => (
            format!(
                "{}{}/{} {}",
                if l.vulnerable { "" } else { "context " },
                l.vendor,
                l.product,
                l.constraint.describe()
            ),
            asset.satisfies(l),
        ),
        ConfigNode::Group { operator, children } => {
            let results: Vec<bool> = children
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let child_path = if path.is_empty() { i.to_string() } else { format!("{path}.{i}") };
                    trace_node(c, asset, child_path, steps)
                })
                .collect();
            let matched = match operator {
                Operator::And => results.iter().all(|&r| r),
                Operator::Or => results.iter().any(|&r| r),
            };
            (format!("{operator:?}").to_uppercase(), matched)
        }
    };
    steps.push(TraceStep {
        path,
        node: label,
        matched,
    });
    matched
}

fn evaluate_pair(vul: &VulGraph, asset: &Asset, opts: FilterOptions) -> ApplicabilityResult {
    let mut out = ApplicabilityResult::default();
    let mut any_vulnerable_present = false;
    for config in &vul.configs {
        let matched = if opts.traces {
            let mut steps = Vec::new();
            let matched = trace_node(&config.root, asset, String::new(), &mut steps);
            out.traces.insert(ConfigTrace {
                cve_id: vul.cve_id.clone(),
                asset_id: asset.asset_id.clone(),
                config_id: config.config_id.clone(),
                steps,
            });
            matched
        } else {
            applies(config, asset)
        };
        if matched {
            out.applicable.insert(Applicable {
                cve_id: vul.cve_id.clone(),
                asset_id: asset.asset_id.clone(),
                config_id: config.config_id.clone(),
            });
        }
        any_vulnerable_present |= config.leaves().iter().any(|l| l.vulnerable && asset.satisfies(l));
    }
    if out.applicable.is_empty() {
        let reason = if vul.configs.is_empty() {
            FilterReason::NoConfiguration
        } else if any_vulnerable_present {
            FilterReason::ConditionsUnmet
        } else {
            FilterReason::NoComponentMatch
        };
        out.filtered_out.insert(FilteredOut {
            cve_id: vul.cve_id.clone(),
            asset_id: asset.asset_id.clone(),
            reason,
        });
    }
    out
}

fn evaluate_pairs(pairs: Vec<(&VulGraph, &Asset)>, opts: FilterOptions) -> ApplicabilityResult {
    pairs
        .into_par_iter()
        .map(|(v, a)| evaluate_pair(v, a, opts))
        .reduce(ApplicabilityResult::default, ApplicabilityResult::merge)
}

/// Evaluates every (vulnerability, asset) pair with match traces.
pub fn filter(sys: &SysGraph, vuls: &[VulGraph]) -> ApplicabilityResult {
    filter_with(sys, vuls, FilterOptions::default())
}

pub fn filter_with(sys: &SysGraph, vuls: &[VulGraph], opts: FilterOptions) -> ApplicabilityResult {
    let pairs = vuls
        .iter()
        .flat_map(|v| sys.assets.iter().map(move |a| (v, a)))
        .collect();
    evaluate_pairs(pairs, opts)
}

/// Persistent state for incremental filtering. The evaluated pairs are
/// exactly the known assets crossed with the known vulnerabilities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterState {
    pub store_generation: u64,
    /// asset id -> content fingerprint.
    pub assets: BTreeMap<String, String>,
    /// CVE id -> content fingerprint.
    pub vulnerabilities: BTreeMap<String, String>,
    pub result: ApplicabilityResult,
    /// Pair evaluations performed over the state's lifetime.
    pub evaluated_pairs: u64,
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    let digest = Sha256::digest(serde_json::to_vec(value).unwrap_or_default());
    hex::encode(&digest[..12])
}

impl FilterState {
    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let io = |message: String| FilterError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), FilterError> {
        let io = |message: String| FilterError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string_pretty(self).map_err(|e| io(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| io(e.to_string()))
    }
}

/// Brings `state` up to date with the current assets and vulnerabilities,
/// evaluating only pairs that involve an asset or vulnerability the state
/// has not seen. Returns the number of pairs evaluated.
///
/// Known assets and vulnerabilities must be unchanged and still present,
/// and the store generation must not move backwards; otherwise the state is
/// stale and must be rebuilt.
pub fn incremental_add(
    state: &mut FilterState,
    store_generation: u64,
    sys: &SysGraph,
    vuls: &[VulGraph],
    opts: FilterOptions,
) -> Result<u64, FilterError> {
    if store_generation < state.store_generation {
        return Err(FilterError::StaleState(format!(
            "state is at store generation {}, store at {store_generation}",
            state.store_generation
        )));
    }
    let asset_prints: BTreeMap<&str, String> = sys.assets.iter().map(|a| (a.asset_id.as_str(), fingerprint(a))).collect();
    let vul_prints: BTreeMap<&str, String> = vuls.iter().map(|v| (v.cve_id.as_str(), fingerprint(v))).collect();
    check_known(&state.assets, &asset_prints, "asset")?;
    check_known(&state.vulnerabilities, &vul_prints, "vulnerability")?;

    let (old_assets, new_assets): (Vec<&Asset>, Vec<&Asset>) =
        sys.assets.iter().partition(|a| state.assets.contains_key(&a.asset_id));
    let new_vuls: Vec<&VulGraph> = vuls
        .iter()
        .filter(|v| !state.vulnerabilities.contains_key(&v.cve_id))
        .collect();

    let mut pairs: Vec<(&VulGraph, &Asset)> = Vec::new();
    for a in &new_assets {
        pairs.extend(vuls.iter().map(|v| (v, *a)));
    }
    for v in &new_vuls {
        pairs.extend(old_assets.iter().map(|a| (*v, *a)));
    }
    let evaluated = pairs.len() as u64;
    let delta = evaluate_pairs(pairs, opts);
    state.result = std::mem::take(&mut state.result).merge(delta);
    state.evaluated_pairs += evaluated;
    state.store_generation = store_generation;
    for a in new_assets {
        state.assets.insert(a.asset_id.clone(), asset_prints[a.asset_id.as_str()].clone());
    }
    for v in new_vuls {
        state.vulnerabilities.insert(v.cve_id.clone(), vul_prints[v.cve_id.as_str()].clone());
    }
    Ok(evaluated)
}

fn check_known(known: &BTreeMap<String, String>, current: &BTreeMap<&str, String>, what: &str) -> Result<(), FilterError> {
    for (id, print) in known {
        match current.get(id.as_str()) {
            None => return Err(FilterError::StaleState(format!("{what} `{id}` is no longer present"))),
            Some(p) if p != print => return Err(FilterError::StaleState(format!("{what} `{id}` changed"))),
            Some(_) => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpe::{Part, UcpeEntry, VersionBound, VersionConstraint};
    use crate::graph::Leaf;
    use proptest::prelude::*;

    fn leaf_for(u: &UcpeEntry, constraint: VersionConstraint, vulnerable: bool) -> ConfigNode {
        ConfigNode::Leaf(Leaf {
            ucpe_ids: vec![u.id.clone()],
            versions: vec![u.version.clone()],
            vendor: u.vendor.clone(),
            product: u.product.clone(),
            part: u.part,
            constraint,
            vulnerable,
        })
    }

    fn chrome_lt() -> ConfigNode {
        let u = UcpeEntry::new(Part::Application, "google", "chrome", "8.0.552.235");
        leaf_for(&u, VersionConstraint::range(None, Some(VersionBound::exclusive("8.0.552.344"))), true)
    }

    fn os(product: &str, vendor: &str) -> ConfigNode {
        leaf_for(&UcpeEntry::new(Part::OperatingSystem, vendor, product, "*"), VersionConstraint::Any, false)
    }

    fn asset(id: &str, comps: &[(&str, &str, &str)]) -> Asset {
        Asset::new(
            id,
            comps.iter().map(|(v, p, ver)| UcpeEntry::new(Part::Application, v, p, ver)).collect(),
        )
    }

    fn vul(cve: &str, root: ConfigNode) -> VulGraph {
        VulGraph {
            cve_id: cve.into(),
            configs: vec![ConfigGraph::new(cve, 0, root)],
        }
    }

    #[test]
    fn simple_configurations() {
        let a = asset("a", &[("google", "chrome", "8.0.552.235")]);
        let present = ConfigGraph::new("CVE-1", 0, chrome_lt());
        assert!(match_simple(&present, &a));
        let absent = ConfigGraph::new("CVE-1", 0, os("windows", "microsoft"));
        assert!(!match_simple(&absent, &a));
    }

    #[test]
    fn os_mismatch_is_filtered() {
        let v = vul(
            "CVE-2011-0001",
            ConfigNode::Group {
                operator: Operator::And,
                children: vec![chrome_lt(), os("windows", "microsoft")],
            },
        );
        let linux = asset("linux", &[("google", "chrome", "8.0.552.235"), ("linux", "linux kernel", "5.4")]);
        let windows = asset("win", &[("google", "chrome", "8.0.552.235"), ("microsoft", "windows", "10")]);
        let sys = SysGraph {
            assets: vec![linux, windows],
            edges: vec![],
        };
        let r = filter(&sys, &[v]);
        assert_eq!(r.applicable_for("win").len(), 1);
        assert!(r.applicable_for("linux").is_empty());
        let f = r.filtered_out.iter().next().unwrap();
        assert_eq!((f.asset_id.as_str(), f.reason), ("linux", FilterReason::ConditionsUnmet));
        assert_eq!(r.traces.len(), 2);
    }

    #[test]
    fn or_configuration_applies_with_one_member() {
        let firefox = UcpeEntry::new(Part::Application, "mozilla", "firefox", "3.6");
        let v = vul(
            "CVE-2011-0002",
            ConfigNode::Group {
                operator: Operator::Or,
                children: vec![
                    chrome_lt(),
                    leaf_for(&firefox, VersionConstraint::range(None, Some(VersionBound::exclusive("4.0"))), true),
                ],
            },
        );
        let sys = SysGraph {
            assets: vec![asset("a", &[("mozilla", "firefox", "3.6")])],
            edges: vec![],
        };
        assert_eq!(filter(&sys, &[v]).applicable.len(), 1);
        assert_eq!(filter(&sys, &[]), ApplicabilityResult::default());
    }

    #[test]
    fn incremental_counts_and_staleness() {
        let vuls: Vec<VulGraph> = (0..4).map(|i| vul(&format!("CVE-2020-000{i}"), chrome_lt())).collect();
        let mut assets: Vec<Asset> = (0..10).map(|i| asset(&format!("a{i}"), &[("google", "chrome", "1.0")])).collect();
        let mut state = FilterState::default();
        let sys = SysGraph {
            assets: assets.clone(),
            edges: vec![],
        };
        assert_eq!(incremental_add(&mut state, 1, &sys, &vuls, FilterOptions::default()).unwrap(), 40);
        let before = state.clone();
        assert_eq!(incremental_add(&mut state, 1, &sys, &vuls, FilterOptions::default()).unwrap(), 0);
        assert_eq!(state.result, before.result);
        assets.push(asset("a10", &[("google", "chrome", "9.0")]));
        let sys = SysGraph { assets, edges: vec![] };
        assert_eq!(incremental_add(&mut state, 1, &sys, &vuls, FilterOptions::default()).unwrap(), 4);
        assert_eq!(state.result, filter(&sys, &vuls));
        let err = incremental_add(&mut state, 0, &sys, &vuls, FilterOptions::default()).unwrap_err();
        assert_eq!(err.code(), "StaleState");
    }

    /// Disjunctive normal form: each conjunct is a set of leaf indices.
    fn dnf(node: &ConfigNode, leaves: &mut Vec<usize>) -> Vec<BTreeSet<usize>> {
        match node {
            ConfigNode::Leaf(_) => {
                let i = leaves.len();
                leaves.push(i);
                vec![BTreeSet::from([i])]
            }
            ConfigNode::Group { operator: Operator::Or, children } => {
                children.iter().flat_map(|c| dnf(c, leaves)).collect()
            }
            ConfigNode::Group { operator: Operator::And, children } => {
                children.iter().fold(vec![BTreeSet::new()], |acc, c| {
                    let terms = dnf(c, leaves);
                    acc.iter()
                        .flat_map(|a| terms.iter().map(move |t| a.union(t).copied().collect()))
                        .collect()
                })
            }
        }
    }

    fn tree(depth: u32) -> BoxedStrategy<ConfigNode> {
        let leaf = (0u8..6).prop_map(|i| {
            let u = UcpeEntry::new(Part::Application, "v", &format!("p{i}"), "1");
            leaf_for(&u, VersionConstraint::Any, true)
        });
        if depth == 0 {
            return leaf.boxed();
        }
        prop_oneof![
            leaf,
            (prop::bool::ANY, prop::collection::vec(tree(depth - 1), 2..4)).prop_map(|(and, children)| {
                ConfigNode::Group {
                    operator: if and { Operator::And } else { Operator::Or },
                    children,
                }
            })
        ]
        .boxed()
    }

    proptest! {
        #[test]
        fn logical_matches_dnf(root in tree(3), present in prop::collection::btree_set(0u8..6, 0..6)) {
            let config = ConfigGraph::new("CVE-1", 0, root);
            let a = Asset::new("a", present.iter().map(|i| UcpeEntry::new(Part::Application, "v", &format!("p{i}"), "1")).collect());
            let names: Vec<String> = config.leaves().iter().map(|l| l.product.clone()).collect();
            let mut order = Vec::new();
            let terms = dnf(&config.root, &mut order);
            let expected = terms.iter().any(|t| t.iter().all(|&i| present.iter().any(|p| names[i] == format!("p{p}"))));
            prop_assert_eq!(applies(&config, &a), expected);
        }

        #[test]
        fn adding_components_is_monotone(root in tree(3), present in prop::collection::btree_set(0u8..6, 0..6), extra in 0u8..6) {
            let config = ConfigGraph::new("CVE-1", 0, root);
            let mk = |s: &BTreeSet<u8>| Asset::new("a", s.iter().map(|i| UcpeEntry::new(Part::Application, "v", &format!("p{i}"), "1")).collect());
            let mut more = present.clone();
            more.insert(extra);
            prop_assert!(!applies(&config, &mk(&present)) || applies(&config, &mk(&more)));
        }
    }
}
