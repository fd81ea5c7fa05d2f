//! Configuration graphs over uCPE entries, the per-CVE vulnerability graph,
//! the system graph built from an inventory, and the persistent store.
//!
//! A configuration is a tree of AND/OR groups whose leaves reference uCPE
//! entries. Raw NVD configuration nodes map one-to-one onto groups: the
//! `cpe_match` entries of a node become leaf children, followed by the
//! node's child groups.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cpe::{Part, UcpeEntry, UcpeId, VersionConstraint};
use crate::feed::{ConfigNodeRaw, CpeMatchRaw, Operator, VulnerabilityRecord};
use crate::inconsistency::normalize_str;
use crate::postprocess::{EntrySource, RawEntry, ResolvedEntry, Resolver, UnresolvedEntry, VersionDescriptor};

pub use store::{Batch, CveLookup, ProductHit, Store, StoredVulnerability};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{cve_id}: {detail}")]
    DanglingUcpe { cve_id: String, detail: String },
    #[error("invalid configuration graph {config_id}: {detail}")]
    InvalidGraph { config_id: String, detail: String },
    #[error("inventory: {0}")]
    InventorySchema(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::DanglingUcpe { .. } => "DanglingUcpe",
            GraphError::InvalidGraph { .. } => "InvalidGraph",
            GraphError::InventorySchema(_) => "InventorySchemaError",
            GraphError::Integrity(_) => "IntegrityViolation",
            GraphError::Io { .. } | GraphError::Corrupt { .. } => "StorageIo",
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        GraphError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A leaf: one resolved product with the uCPE entries its versions cover.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leaf {
    pub ucpe_ids: Vec<UcpeId>,
    /// Version of each entry in `ucpe_ids`, same order.
    pub versions: Vec<String>,
    pub vendor: String,
    pub product: String,
    pub part: Part,
    pub constraint: VersionConstraint,
    pub vulnerable: bool,
}

impl Leaf {
    fn from_resolved(entry: &ResolvedEntry, vulnerable: bool) -> Self {
        Leaf {
            ucpe_ids: entry.ucpe.iter().map(|u| u.id.clone()).collect(),
            versions: entry.ucpe.iter().map(|u| u.version.clone()).collect(),
            vendor: entry.vendor.clone(),
            product: entry.product.clone(),
            part: entry.part,
            constraint: entry.constraint.clone(),
            vulnerable,
        }
    }

    /// Whether an installed component satisfies this leaf. Names must be
    /// equal; the version must be covered by the converted list or the
    /// constraint, or either side must be the `*` wildcard.
    pub fn admits(&self, component: &UcpeEntry) -> bool {
        if component.vendor != self.vendor || component.product != self.product {
            return false;
        }
        let v = component.version.as_str();
        v == "*"
            || self.versions.iter().any(|lv| lv == "*" || lv == v)
            || self.constraint.admits(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ConfigNode {
    Leaf(Leaf),
    Group { operator: Operator, children: Vec<ConfigNode> },
}

impl ConfigNode {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            ConfigNode::Leaf(l) => out.push(l),
            ConfigNode::Group { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    fn collect_profile(&self, out: &mut BTreeMap<(Operator, usize), usize>) {
        if let ConfigNode::Group { operator, children } = self {
            *out.entry((*operator, children.len())).or_default() += 1;
            children.iter().for_each(|c| c.collect_profile(out));
        }
    }

    fn check_shape(&self) -> Result<(), String> {
        match self {
            ConfigNode::Leaf(l) if l.ucpe_ids.is_empty() => {
                Err(format!("leaf {}/{} references no uCPE", l.vendor, l.product))
            }
            ConfigNode::Leaf(l) if l.ucpe_ids.len() != l.versions.len() => {
                Err(format!("leaf {}/{} has mismatched versions", l.vendor, l.product))
            }
            ConfigNode::Leaf(_) => Ok(()),
            ConfigNode::Group { operator, children } => {
                let min = match operator {
                    Operator::And => 2,
                    Operator::Or => 1,
                };
                if children.len() < min {
                    return Err(format!("{operator:?} group with {} children", children.len()));
                }
                children.iter().try_for_each(ConfigNode::check_shape)
            }
        }
    }
}

/// One applicability configuration of a CVE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigGraph {
    pub config_id: String,
    pub cve_id: String,
    pub root: ConfigNode,
}

impl ConfigGraph {
    /// Builds a graph with a content-derived id. `index` distinguishes
    /// identical configurations within one CVE.
    pub fn new(cve_id: &str, index: usize, root: ConfigNode) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(cve_id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(index.to_le_bytes());
        hasher.update(serde_json::to_vec(&root).unwrap_or_default());
        let digest = hasher.finalize();
        ConfigGraph {
            config_id: hex::encode(&digest[..16]),
            cve_id: cve_id.to_string(),
            root,
        }
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        self.root.leaves()
    }

    /// True when the configuration has no groups.
    pub fn is_simple(&self) -> bool {
        matches!(self.root, ConfigNode::Leaf(_))
    }

    /// Multiset of (operator, child count) over all groups.
    pub fn operator_profile(&self) -> BTreeMap<(Operator, usize), usize> {
        let mut out = BTreeMap::new();
        self.root.collect_profile(&mut out);
        out
    }

    pub fn ucpe_ids(&self) -> BTreeSet<&UcpeId> {
        self.leaves().into_iter().flat_map(|l| l.ucpe_ids.iter()).collect()
    }

    /// Checks group arities and leaf references.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.root.check_shape().map_err(|detail| GraphError::InvalidGraph {
            config_id: self.config_id.clone(),
            detail,
        })
    }
}

/// Operator profile of a raw configuration tree, comparable with
/// [`ConfigGraph::operator_profile`].
pub fn raw_operator_profile(node: &ConfigNodeRaw) -> BTreeMap<(Operator, usize), usize> {
    fn walk(node: &ConfigNodeRaw, out: &mut BTreeMap<(Operator, usize), usize>) {
        *out.entry((node.operator, node.matches.len() + node.children.len())).or_default() += 1;
        node.children.iter().for_each(|c| walk(c, out));
    }
    let mut out = BTreeMap::new();
    walk(node, &mut out);
    out
}

/// All configurations of one CVE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulGraph {
    pub cve_id: String,
    pub configs: Vec<ConfigGraph>,
}

impl VulGraph {
    /// Every uCPE entry referenced by the graph, keyed by id.
    pub fn ucpe_ids(&self) -> BTreeSet<&UcpeId> {
        self.configs.iter().flat_map(|c| c.ucpe_ids()).collect()
    }
}

/// Builds the vulnerability graph of `record`. `resolved` holds one entry per
/// `cpe_match` of the record in pre-order (see [`VulnerabilityRecord::all_matches`]).
pub fn build_vul_graph(record: &VulnerabilityRecord, resolved: &[ResolvedEntry]) -> Result<VulGraph, GraphError> {
    let expected = record.all_matches().len();
    if resolved.len() != expected || (expected == 0 && !record.raw_configurations.is_empty()) {
        return Err(GraphError::DanglingUcpe {
            cve_id: record.cve_id.clone(),
            detail: format!("{} resolved entries for {} matches", resolved.len(), expected),
        });
    }
    if let Some(empty) = resolved.iter().find(|r| r.ucpe.is_empty()) {
        return Err(GraphError::DanglingUcpe {
            cve_id: record.cve_id.clone(),
            detail: format!("{}/{} resolved to no uCPE", empty.vendor, empty.product),
        });
    }
    let mut cursor = resolved.iter();
    let mut configs = Vec::with_capacity(record.raw_configurations.len());
    for (i, raw) in record.raw_configurations.iter().enumerate() {
        let root = map_node(raw, &mut cursor);
        let graph = ConfigGraph::new(&record.cve_id, i, root);
        graph.validate()?;
        configs.push(graph);
    }
    Ok(VulGraph {
        cve_id: record.cve_id.clone(),
        configs,
    })
}

fn map_node<'a>(raw: &ConfigNodeRaw, cursor: &mut impl Iterator<Item = &'a ResolvedEntry>) -> ConfigNode {
    let mut children = Vec::with_capacity(raw.matches.len() + raw.children.len());
    for m in &raw.matches {
        // Length was checked by the caller.
        let entry = cursor.next().expect("resolved entry per match");
        children.push(ConfigNode::Leaf(Leaf::from_resolved(entry, m.vulnerable)));
    }
    for child in &raw.children {
        children.push(map_node(child, cursor));
    }
    ConfigNode::Group {
        operator: raw.operator,
        children,
    }
}

/// Appends a Basic configuration (one OR group of vulnerable leaves) built
/// from description-extracted entries.
pub fn add_extracted_config(graph: &mut VulGraph, extracted: &[ResolvedEntry]) {
    let leaves: Vec<ConfigNode> = extracted
        .iter()
        .filter(|e| !e.ucpe.is_empty())
        .map(|e| ConfigNode::Leaf(Leaf::from_resolved(e, true)))
        .collect();
    if leaves.is_empty() {
        return;
    }
    let index = graph.configs.len();
    graph.configs.push(ConfigGraph::new(
        &graph.cve_id,
        index,
        ConfigNode::Group {
            operator: Operator::Or,
            children: leaves,
        },
    ));
}

fn raw_entry_for_match(m: &CpeMatchRaw) -> RawEntry {
    RawEntry {
        vendor: Some(m.cpe.vendor.token().to_string()),
        product: m.cpe.product.token().to_string(),
        version_desc: VersionDescriptor::Constraint(m.constraint.clone()),
        part: Some(m.cpe.part),
        source: EntrySource::CpeMatch,
    }
}

/// Resolves every `cpe_match` of `record` in pre-order. Matches whose names
/// the dictionary does not know keep their normalized CPE names and are
/// also reported as unresolved.
pub fn resolve_record(record: &VulnerabilityRecord, resolver: &Resolver<'_>) -> (Vec<ResolvedEntry>, Vec<UnresolvedEntry>) {
    let mut resolved = Vec::new();
    let mut unresolved = Vec::new();
    for m in record.all_matches() {
        let raw = raw_entry_for_match(m);
        match resolver.resolve(&raw) {
            Ok(r) => resolved.push(r),
            Err(err) => {
                resolved.push(fallback_entry(&raw, m.cpe.part));
                unresolved.push(UnresolvedEntry {
                    entry: raw,
                    code: err.code().to_string(),
                    message: err.to_string(),
                });
            }
        }
    }
    (resolved, unresolved)
}

fn fallback_entry(raw: &RawEntry, part: Part) -> ResolvedEntry {
    let constraint = match &raw.version_desc {
        VersionDescriptor::Constraint(c) => c.clone(),
        VersionDescriptor::Text(_) => VersionConstraint::Any,
    };
    let version = match &constraint {
        VersionConstraint::Exact { version } => version.clone(),
        VersionConstraint::List { versions } if versions.len() == 1 => versions[0].clone(),
        _ => "*".to_string(),
    };
    let vendor = raw.vendor.clone().unwrap_or_default();
    let entry = UcpeEntry::new(part, &vendor, &raw.product, &version);
    ResolvedEntry {
        vendor: entry.vendor.clone(),
        product: entry.product.clone(),
        part,
        ucpe: vec![entry],
        constraint,
        unlisted: true,
        source: raw.source,
        descriptor: raw.version_desc.describe(),
    }
}

/// A record that could not be turned into a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedRecord {
    pub cve_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct DbBuild {
    pub batch: Batch,
    pub unresolved: Vec<UnresolvedEntry>,
    pub failed: Vec<FailedRecord>,
}

/// Resolves and graphs every record into one store batch. Records without
/// any configuration get a Basic configuration from `extract` when given.
pub fn build_batch<F>(records: &[VulnerabilityRecord], resolver: &Resolver<'_>, extract: Option<F>) -> DbBuild
where
    F: Fn(&VulnerabilityRecord) -> Vec<RawEntry> + Sync,
{
    use rayon::prelude::*;

    type One = (Result<(VulGraph, Vec<UcpeEntry>), FailedRecord>, Vec<UnresolvedEntry>);
    let results: Vec<One> = records
        .par_iter()
        .map(|record| {
            let (resolved, mut unresolved) = resolve_record(record, resolver);
            let graph = build_vul_graph(record, &resolved).map(|mut graph| {
                let mut ucpe: Vec<UcpeEntry> = resolved.iter().flat_map(|r| r.ucpe.iter().cloned()).collect();
                if let (Some(f), true) = (&extract, record.raw_configurations.is_empty()) {
                    let merged = resolver.merge_entries(&f(record), &[]);
                    unresolved.extend(merged.unresolved);
                    ucpe.extend(merged.resolved.iter().flat_map(|r| r.ucpe.iter().cloned()));
                    add_extracted_config(&mut graph, &merged.resolved);
                }
                (graph, ucpe)
            });
            let graph = graph.map_err(|e| FailedRecord {
                cve_id: record.cve_id.clone(),
                code: e.code().to_string(),
                message: e.to_string(),
            });
            (graph, unresolved)
        })
        .collect();
    let mut out = DbBuild::default();
    for (record, (graph, unresolved)) in records.iter().zip(results) {
        out.unresolved.extend(unresolved);
        match graph {
            Ok((graph, ucpe)) => out.batch.add_vulnerability(record.clone(), graph, ucpe),
            Err(f) => out.failed.push(f),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryComponent {
    #[serde(default)]
    pub vendor: Option<String>,
    pub product: String,
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub part: Option<Part>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryAsset {
    pub asset_id: String,
    #[serde(default)]
    pub components: Vec<InventoryComponent>,
    /// Index pairs into `components`.
    #[serde(default)]
    pub relations: Vec<(usize, usize)>,
}

/// A system configuration file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    #[serde(default)]
    pub assets: Vec<InventoryAsset>,
    /// Asset id pairs.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

impl Inventory {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let inv: Inventory = serde_json::from_str(text).map_err(|e| GraphError::InventorySchema(e.to_string()))?;
        inv.validate()?;
        Ok(inv)
    }

    pub fn read(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let schema = |m: String| Err(GraphError::InventorySchema(m));
        let mut ids = BTreeSet::new();
        for asset in &self.assets {
            if asset.asset_id.trim().is_empty() {
                return schema("empty asset_id".into());
            }
            if !ids.insert(asset.asset_id.as_str()) {
                return schema(format!("duplicate asset_id `{}`", asset.asset_id));
            }
            if let Some(c) = asset.components.iter().find(|c| c.product.trim().is_empty()) {
                return schema(format!("asset `{}`: component with empty product {c:?}", asset.asset_id));
            }
            let n = asset.components.len();
            if let Some((a, b)) = asset.relations.iter().find(|(a, b)| *a >= n || *b >= n) {
                return schema(format!("asset `{}`: relation ({a}, {b}) out of range", asset.asset_id));
            }
        }
        if let Some((a, b)) = self
            .edges
            .iter()
            .find(|(a, b)| !ids.contains(a.as_str()) || !ids.contains(b.as_str()))
        {
            return schema(format!("edge ({a}, {b}) references an unknown asset"));
        }
        Ok(())
    }
}

/// An asset: a bag of installed uCPE entries that coexist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub asset_id: String,
    pub components: Vec<UcpeEntry>,
    pub relations: Vec<(UcpeId, UcpeId)>,
}

impl Asset {
    pub fn new(asset_id: impl Into<String>, components: Vec<UcpeEntry>) -> Self {
        Asset {
            asset_id: asset_id.into(),
            components,
            relations: Vec::new(),
        }
    }

    pub fn satisfies(&self, leaf: &Leaf) -> bool {
        self.components.iter().any(|c| leaf.admits(c))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SysGraph {
    pub assets: Vec<Asset>,
    pub edges: Vec<(String, String)>,
}

impl SysGraph {
    pub fn leaf_count(&self) -> usize {
        self.assets.iter().map(|a| a.components.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SysBuild {
    pub graph: SysGraph,
    pub unresolved: Vec<UnresolvedEntry>,
}

/// Resolves each inventory component to a uCPE entry. Components the
/// dictionary cannot place keep their normalized names when a vendor is
/// given and are always reported.
pub fn build_sys_graph(inventory: &Inventory, resolver: &Resolver<'_>) -> Result<SysBuild, GraphError> {
    inventory.validate()?;
    let mut out = SysBuild::default();
    for asset in &inventory.assets {
        let mut components: Vec<Option<UcpeEntry>> = Vec::with_capacity(asset.components.len());
        for c in &asset.components {
            let version = c
                .version
                .as_deref()
                .map(str::trim)
                .filter(|v| !v.is_empty() && *v != "*");
            let raw = RawEntry {
                vendor: c.vendor.clone(),
                product: c.product.clone(),
                version_desc: VersionDescriptor::Constraint(match version {
                    Some(v) => VersionConstraint::exact(v.to_ascii_lowercase()),
                    None => VersionConstraint::Any,
                }),
                part: c.part,
                source: EntrySource::CpeMatch,
            };
            match resolver.resolve(&raw) {
                Ok(r) => components.push(r.ucpe.into_iter().next()),
                Err(err) => {
                    components.push(c.vendor.as_ref().map(|v| {
                        UcpeEntry::new(
                            c.part.unwrap_or(Part::Application),
                            &normalize_str(v),
                            &c.product,
                            version.unwrap_or("*"),
                        )
                    }));
                    out.unresolved.push(UnresolvedEntry {
                        entry: raw,
                        code: err.code().to_string(),
                        message: format!("asset {}: {err}", asset.asset_id),
                    });
                }
            }
        }
        let relations = asset
            .relations
            .iter()
            .filter_map(|&(a, b)| match (&components[a], &components[b]) {
                (Some(x), Some(y)) => Some((x.id.clone(), y.id.clone())),
                _ => None,
            })
            .collect();
        out.graph.assets.push(Asset {
            asset_id: asset.asset_id.clone(),
            components: components.into_iter().flatten().collect(),
            relations,
        });
    }
    out.graph.edges = inventory.edges.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpe::{parse_cpe, VersionBound};
    use crate::feed::RecordStatus;
    use crate::inconsistency::CanonicalDictionary;

    pub(crate) fn resolved(part: Part, vendor: &str, product: &str, versions: &[&str], c: VersionConstraint) -> ResolvedEntry {
        ResolvedEntry {
            vendor: vendor.into(),
            product: product.into(),
            part,
            ucpe: versions.iter().map(|v| UcpeEntry::new(part, vendor, product, v)).collect(),
            constraint: c,
            unlisted: false,
            source: EntrySource::CpeMatch,
            descriptor: String::new(),
        }
    }

    fn cpe_match(s: &str, vulnerable: bool) -> CpeMatchRaw {
        CpeMatchRaw {
            cpe: parse_cpe(s).unwrap(),
            constraint: VersionConstraint::Any,
            vulnerable,
        }
    }

    fn record(nodes: Vec<ConfigNodeRaw>) -> VulnerabilityRecord {
        VulnerabilityRecord {
            cve_id: "CVE-2011-0001".into(),
            description: String::new(),
            status: RecordStatus::Active,
            cvss: None,
            raw_configurations: nodes,
            last_modified: chrono::DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn basic_configuration_is_one_or_group() {
        let node = ConfigNodeRaw {
            operator: Operator::Or,
            matches: (1..=3)
                .map(|i| cpe_match(&format!("cpe:2.3:a:acme:tool:{i}:*:*:*:*:*:*:*"), true))
                .collect(),
            children: vec![],
        };
        let rec = record(vec![node.clone()]);
        let res: Vec<_> = (1..=3)
            .map(|i| resolved(Part::Application, "acme", "tool", &[&i.to_string()], VersionConstraint::exact(i.to_string())))
            .collect();
        let g = build_vul_graph(&rec, &res).unwrap();
        assert_eq!(g.configs.len(), 1);
        match &g.configs[0].root {
            ConfigNode::Group { operator, children } => {
                assert_eq!(*operator, Operator::Or);
                assert_eq!(children.len(), 3);
            }
            other => panic!("unexpected root {other:?}"),
        }
        assert_eq!(g.configs[0].operator_profile(), raw_operator_profile(&node));
    }

    #[test]
    fn running_on_becomes_and_of_leaves() {
        let node = ConfigNodeRaw {
            operator: Operator::And,
            matches: vec![
                cpe_match("cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*", true),
                cpe_match("cpe:2.3:o:microsoft:windows:*:*:*:*:*:*:*:*", false),
            ],
            children: vec![],
        };
        let rec = record(vec![node]);
        let res = vec![
            resolved(Part::Application, "google", "chrome", &["8.0.552.235"], VersionConstraint::Any),
            resolved(Part::OperatingSystem, "microsoft", "windows", &["*"], VersionConstraint::Any),
        ];
        let g = build_vul_graph(&rec, &res).unwrap();
        let leaves = g.configs[0].leaves();
        assert_eq!(leaves.len(), 2);
        assert!(leaves[0].vulnerable && !leaves[1].vulnerable);
        assert!(matches!(g.configs[0].root, ConfigNode::Group { operator: Operator::And, .. }));
    }

    #[test]
    fn empty_resolution_is_dangling() {
        let node = ConfigNodeRaw {
            operator: Operator::Or,
            matches: vec![cpe_match("cpe:2.3:a:acme:tool:1:*:*:*:*:*:*:*", true)],
            children: vec![],
        };
        let err = build_vul_graph(&record(vec![node]), &[]).unwrap_err();
        assert_eq!(err.code(), "DanglingUcpe");
    }

    #[test]
    fn single_child_and_is_rejected() {
        let node = ConfigNodeRaw {
            operator: Operator::And,
            matches: vec![cpe_match("cpe:2.3:a:acme:tool:1:*:*:*:*:*:*:*", true)],
            children: vec![],
        };
        let res = vec![resolved(Part::Application, "acme", "tool", &["1"], VersionConstraint::exact("1"))];
        assert_eq!(build_vul_graph(&record(vec![node]), &res).unwrap_err().code(), "InvalidGraph");
    }

    #[test]
    fn leaf_version_semantics() {
        let leaf = Leaf::from_resolved(
            &resolved(
                Part::Application,
                "google",
                "chrome",
                &["8.0.552.235"],
                VersionConstraint::range(None, Some(VersionBound::exclusive("8.0.552.344"))),
            ),
            true,
        );
        let comp = |v: &str| UcpeEntry::new(Part::Application, "google", "chrome", v);
        assert!(leaf.admits(&comp("8.0.552.235")));
        assert!(leaf.admits(&comp("8.0.552.200")));
        assert!(!leaf.admits(&comp("9.0")));
        assert!(leaf.admits(&comp("*")));
        assert!(!leaf.admits(&UcpeEntry::new(Part::Application, "mozilla", "chrome", "1")));
    }

    fn sys_dict() -> CanonicalDictionary {
        let mut d = CanonicalDictionary::default();
        d.merge_versions("canonical", "ubuntu linux", ["20.04", "22.04"].iter().map(|s| s.to_string()));
        d.merge_versions("google", "chrome", ["8.0.552.235"].iter().map(|s| s.to_string()));
        d.merge_versions("mozilla", "firefox", ["3.6"].iter().map(|s| s.to_string()));
        d
    }

    #[test]
    fn sys_graph_from_inventory() {
        let text = r#"{"assets": [
            {"asset_id": "vm1", "components": [
                {"vendor": "canonical", "product": "ubuntu_linux", "version": "22.04", "part": "o"},
                {"vendor": "google", "product": "chrome", "version": "8.0.552.235"},
                {"vendor": "mozilla", "product": "firefox", "version": "3.6"}]},
            {"asset_id": "vm2", "components": [
                {"vendor": "canonical", "product": "ubuntu linux", "version": "20.04", "part": "o"},
                {"product": "chrome", "version": "8.0.552.235"},
                {"vendor": "Mozilla", "product": "Firefox", "version": "3.6"}]}]}"#;
        let inv = Inventory::parse(text).unwrap();
        let dict = sys_dict();
        let build = build_sys_graph(&inv, &Resolver::new(&dict, 0.8)).unwrap();
        assert_eq!(build.graph.assets.len(), 2);
        assert_eq!(build.graph.leaf_count(), 6);
        assert!(build.unresolved.is_empty());
        assert_eq!(build.graph.assets[1].components[1].vendor, "google");
        assert_eq!(build.graph.assets[0].components[0].part, Part::OperatingSystem);
    }

    #[test]
    fn inventory_schema_errors() {
        assert!(Inventory::parse(r#"{"assets": [{"components": []}]}"#).is_err());
        let dup = r#"{"assets": [{"asset_id": "a"}, {"asset_id": "a"}]}"#;
        assert_eq!(Inventory::parse(dup).unwrap_err().code(), "InventorySchemaError");
        let empty = Inventory::parse(r#"{"assets": []}"#).unwrap();
        let dict = sys_dict();
        assert!(build_sys_graph(&empty, &Resolver::new(&dict, 0.8)).unwrap().graph.assets.is_empty());
    }

    #[test]
    fn unresolved_components_are_reported() {
        let inv = Inventory::parse(r#"{"assets": [{"asset_id": "a", "components": [
            {"vendor": "zzz", "product": "qqq", "version": "1"}, {"product": "nothing"}]}]}"#)
        .unwrap();
        let dict = sys_dict();
        let build = build_sys_graph(&inv, &Resolver::new(&dict, 0.8)).unwrap();
        assert_eq!(build.unresolved.len(), 2);
        assert_eq!(build.graph.assets[0].components.len(), 1);
        assert_eq!(build.graph.assets[0].components[0].vendor, "zzz");
    }
}
