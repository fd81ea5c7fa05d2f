//! Ingestion of NVD JSON 1.1 feeds, the official CPE dictionary and external
//! vendor/product catalogs, plus corpus statistics over the result.
//!
//! Feeds may be a full NVD document (`{"CVE_Items": [...]}`) or JSON-lines with
//! one `CVE_Items` element per line. Dictionaries may be the official XML or
//! JSON-lines of `{"cpe23Uri": "..."}`. Any input may be gzip-compressed.
//!
//! Malformed CPE strings never abort ingestion: they are quarantined together
//! with the owning CVE id and the rest of the entry is kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::sync::LazyLock;

use chrono::{DateTime, NaiveDateTime, Utc};
use flate2::read::GzDecoder;
use quick_xml::events::Event;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpe::{compare_versions, format_cpe, parse_cpe, AttrValue, CpeName, Part, VersionConstraint};

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl FeedError {
    pub fn code(&self) -> &'static str {
        match self {
            FeedError::Schema { .. } => "FeedSchemaError",
            FeedError::Io { .. } => "StorageIo",
        }
    }

    fn schema(path: &Path, message: impl Into<String>) -> Self {
        FeedError::Schema {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FeedError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operator {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Active,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cvss {
    pub score: f64,
    pub vector: String,
}

/// One `cpe_match` entry of a configuration node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpeMatchRaw {
    pub cpe: CpeName,
    pub constraint: VersionConstraint,
    /// `false` marks Running-On/With context rather than a vulnerable product.
    pub vulnerable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigNodeRaw {
    pub operator: Operator,
    #[serde(default)]
    pub matches: Vec<CpeMatchRaw>,
    #[serde(default)]
    pub children: Vec<ConfigNodeRaw>,
}

impl ConfigNodeRaw {
    /// Matches of this node and all descendants, in pre-order.
    pub fn all_matches(&self) -> Vec<&CpeMatchRaw> {
        let mut out = Vec::new();
        self.collect_matches(&mut out);
        out
    }

    fn collect_matches<'a>(&'a self, out: &mut Vec<&'a CpeMatchRaw>) {
        out.extend(self.matches.iter());
        for child in &self.children {
            child.collect_matches(out);
        }
    }

    fn has_context(&self) -> bool {
        self.matches.iter().any(|m| !m.vulnerable) || self.children.iter().any(Self::has_context)
    }

    fn has_vulnerable(&self) -> bool {
        self.matches.iter().any(|m| m.vulnerable) || self.children.iter().any(Self::has_vulnerable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRecord {
    pub cve_id: String,
    pub description: String,
    pub status: RecordStatus,
    pub cvss: Option<Cvss>,
    pub raw_configurations: Vec<ConfigNodeRaw>,
    pub last_modified: DateTime<Utc>,
}

impl VulnerabilityRecord {
    pub fn all_matches(&self) -> Vec<&CpeMatchRaw> {
        self.raw_configurations
            .iter()
            .flat_map(ConfigNodeRaw::all_matches)
            .collect()
    }
}

/// An input item that could not be used, with the owning CVE id when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub cve_id: Option<String>,
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FeedIngest {
    pub records: Vec<VulnerabilityRecord>,
    pub quarantined: Vec<Quarantined>,
    pub rejected: usize,
    pub skipped_before_since: usize,
}

static CVE_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").unwrap());

pub fn is_cve_id(s: &str) -> bool {
    CVE_ID.is_match(s)
}

// NVD JSON 1.1 wire structures.

#[derive(Deserialize)]
struct NvdFeed {
    #[serde(rename = "CVE_Items")]
    items: Vec<NvdItem>,
}

#[derive(Deserialize)]
struct NvdItem {
    cve: NvdCve,
    #[serde(default)]
    configurations: Option<NvdConfigurations>,
    #[serde(default)]
    impact: Option<NvdImpact>,
    #[serde(rename = "lastModifiedDate")]
    last_modified: String,
    #[serde(rename = "vulnStatus", default)]
    vuln_status: Option<String>,
}

#[derive(Deserialize)]
struct NvdCve {
    #[serde(rename = "CVE_data_meta")]
    meta: NvdMeta,
    #[serde(default)]
    description: Option<NvdDescription>,
}

#[derive(Deserialize)]
struct NvdMeta {
    #[serde(rename = "ID")]
    id: String,
}

#[derive(Deserialize)]
struct NvdDescription {
    #[serde(default)]
    description_data: Vec<NvdLangString>,
}

#[derive(Deserialize)]
struct NvdLangString {
    #[serde(default)]
    lang: String,
    value: String,
}

#[derive(Deserialize)]
struct NvdConfigurations {
    #[serde(default)]
    nodes: Vec<NvdNode>,
}

#[derive(Deserialize)]
struct NvdNode {
    operator: String,
    #[serde(default)]
    children: Vec<NvdNode>,
    #[serde(default)]
    cpe_match: Vec<NvdCpeMatch>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NvdCpeMatch {
    vulnerable: bool,
    cpe23_uri: String,
    version_start_including: Option<String>,
    version_start_excluding: Option<String>,
    version_end_including: Option<String>,
    version_end_excluding: Option<String>,
}

#[derive(Deserialize)]
struct NvdImpact {
    #[serde(rename = "baseMetricV3")]
    v3: Option<NvdMetricV3>,
    #[serde(rename = "baseMetricV2")]
    v2: Option<NvdMetricV2>,
}

#[derive(Deserialize)]
struct NvdMetricV3 {
    #[serde(rename = "cvssV3")]
    cvss: NvdCvssData,
}

#[derive(Deserialize)]
struct NvdMetricV2 {
    #[serde(rename = "cvssV2")]
    cvss: NvdCvssData,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NvdCvssData {
    base_score: f64,
    vector_string: String,
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>, FeedError> {
    let file = File::open(path).map_err(|e| FeedError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let gzipped = reader.fill_buf().map_err(|e| FeedError::io(path, e))?.starts_with(&[0x1f, 0x8b]);
    if gzipped {
        Ok(Box::new(BufReader::new(GzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_all(path: &Path) -> Result<String, FeedError> {
    let mut text = String::new();
    open_input(path)?
        .read_to_string(&mut text)
        .map_err(|e| FeedError::io(path, e))?;
    Ok(text)
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%MZ", "%Y-%m-%dT%H:%M:%S%.fZ", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

/// Reads an NVD feed, dropping rejected entries and, when `since` is given,
/// entries last modified before it. Records come back sorted by CVE id; a CVE
/// appearing twice keeps its most recently modified copy.
pub fn ingest_nvd_feed(path: &Path, since: Option<DateTime<Utc>>) -> Result<FeedIngest, FeedError> {
    let text = read_all(path)?;
    let items = parse_feed_items(path, &text)?;

    let converted: Vec<(Option<VulnerabilityRecord>, Vec<Quarantined>)> =
        items.into_par_iter().map(convert_item).collect();

    let mut out = FeedIngest::default();
    let mut by_id: BTreeMap<String, VulnerabilityRecord> = BTreeMap::new();
    for (record, quarantined) in converted {
        out.quarantined.extend(quarantined);
        let Some(record) = record else { continue };
        if record.status == RecordStatus::Rejected {
            out.rejected += 1;
            continue;
        }
        if since.is_some_and(|s| record.last_modified < s) {
            out.skipped_before_since += 1;
            continue;
        }
        match by_id.get(&record.cve_id) {
            Some(existing) if existing.last_modified > record.last_modified => {}
            _ => {
                by_id.insert(record.cve_id.clone(), record);
            }
        }
    }
    out.records = by_id.into_values().collect();
    Ok(out)
}

fn parse_feed_items(path: &Path, text: &str) -> Result<Vec<NvdItem>, FeedError> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    // A whole document carries the CVE_Items array; anything else is JSON-lines.
    if trimmed.starts_with('{') {
        if let Ok(doc) = serde_json::from_str::<NvdFeed>(text) {
            return Ok(doc.items);
        }
    }
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str::<NvdItem>(line)
                .map_err(|e| FeedError::schema(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

fn convert_item(item: NvdItem) -> (Option<VulnerabilityRecord>, Vec<Quarantined>) {
    let cve_id = item.cve.meta.id.trim().to_string();
    let mut quarantined = Vec::new();
    if !is_cve_id(&cve_id) {
        quarantined.push(Quarantined {
            cve_id: None,
            item: cve_id,
            reason: "invalid CVE identifier".into(),
        });
        return (None, quarantined);
    }
    let Some(last_modified) = parse_timestamp(&item.last_modified) else {
        quarantined.push(Quarantined {
            cve_id: Some(cve_id),
            item: item.last_modified,
            reason: "unparseable lastModifiedDate".into(),
        });
        return (None, quarantined);
    };

    let description = item
        .cve
        .description
        .map(|d| {
            d.description_data
                .iter()
                .find(|l| l.lang == "en")
                .or(d.description_data.first())
                .map(|l| l.value.clone())
                .unwrap_or_default()
        })
        .unwrap_or_default();

    let rejected = description.trim_start().starts_with("** REJECT **")
        || item
            .vuln_status
            .as_deref()
            .is_some_and(|s| s.eq_ignore_ascii_case("rejected"));

    let cvss = item.impact.and_then(|i| {
        i.v3.map(|m| m.cvss)
            .or(i.v2.map(|m| m.cvss))
            .map(|c| Cvss {
                score: c.base_score,
                vector: c.vector_string,
            })
    });

    let raw_configurations = item
        .configurations
        .map(|c| {
            c.nodes
                .into_iter()
                .filter_map(|n| convert_node(&cve_id, n, &mut quarantined))
                .collect()
        })
        .unwrap_or_default();

    let record = VulnerabilityRecord {
        cve_id,
        description,
        status: if rejected {
            RecordStatus::Rejected
        } else {
            RecordStatus::Active
        },
        cvss,
        raw_configurations,
        last_modified,
    };
    (Some(record), quarantined)
}

fn convert_node(cve_id: &str, node: NvdNode, quarantined: &mut Vec<Quarantined>) -> Option<ConfigNodeRaw> {
    let operator = match node.operator.to_ascii_uppercase().as_str() {
        "AND" => Operator::And,
        "OR" => Operator::Or,
        other => {
            quarantined.push(Quarantined {
                cve_id: Some(cve_id.to_string()),
                item: other.to_string(),
                reason: "unknown node operator".into(),
            });
            return None;
        }
    };
    let mut matches = Vec::with_capacity(node.cpe_match.len());
    for m in node.cpe_match {
        match parse_cpe(&m.cpe23_uri) {
            Ok(cpe) => {
                let constraint = VersionConstraint::from_match_attributes(
                    &cpe.version,
                    m.version_start_including.as_deref(),
                    m.version_start_excluding.as_deref(),
                    m.version_end_including.as_deref(),
                    m.version_end_excluding.as_deref(),
                );
                matches.push(CpeMatchRaw {
                    cpe,
                    constraint,
                    vulnerable: m.vulnerable,
                });
            }
            Err(e) => quarantined.push(Quarantined {
                cve_id: Some(cve_id.to_string()),
                item: m.cpe23_uri,
                reason: e.to_string(),
            }),
        }
    }
    let children: Vec<ConfigNodeRaw> = node
        .children
        .into_iter()
        .filter_map(|c| convert_node(cve_id, c, quarantined))
        .collect();
    if matches.is_empty() && children.is_empty() {
        return None;
    }
    Some(ConfigNodeRaw {
        operator,
        matches,
        children,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogSource {
    CpeDictionary,
    ExternalCatalog,
}

/// A vendor/product pair with the versions one source knows about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub vendor: String,
    pub product: String,
    /// Duplicate-free, sorted under [`compare_versions`].
    #[serde(default)]
    pub versions: Vec<String>,
    pub source: CatalogSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<Part>,
}

#[derive(Debug, Clone, Default)]
pub struct DictionaryIngest {
    pub entries: Vec<CatalogEntry>,
    /// Every distinct dictionary name in canonical formatted-string form.
    pub names: BTreeSet<String>,
    pub quarantined: Vec<Quarantined>,
}

#[derive(Deserialize)]
struct DictionaryLine {
    #[serde(rename = "cpe23Uri", alias = "cpe23_uri", alias = "name")]
    cpe23_uri: String,
}

/// Reads the official CPE dictionary (XML) or its JSON-lines equivalent and
/// aggregates it into one catalog entry per (vendor, product).
pub fn ingest_cpe_dictionary(path: &Path) -> Result<DictionaryIngest, FeedError> {
    let text = read_all(path)?;
    let raw_names = if text.trim_start().starts_with('<') {
        dictionary_names_from_xml(path, &text)?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str::<DictionaryLine>(l)
                    .map(|d| d.cpe23_uri)
                    .map_err(|e| FeedError::schema(path, format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    let mut out = DictionaryIngest::default();
    let mut grouped: BTreeMap<(String, String), (BTreeSet<String>, BTreeSet<Part>)> = BTreeMap::new();
    for raw in raw_names {
        match parse_cpe(&raw) {
            Ok(cpe) => {
                out.names.insert(format_cpe(&cpe));
                let (Some(vendor), Some(product)) = (cpe.vendor.as_str(), cpe.product.as_str()) else {
                    continue;
                };
                let slot = grouped.entry((vendor.to_string(), product.to_string())).or_default();
                if let AttrValue::Value(v) = &cpe.version {
                    slot.0.insert(v.clone());
                }
                slot.1.insert(cpe.part);
            }
            Err(e) => out.quarantined.push(Quarantined {
                cve_id: None,
                item: raw,
                reason: e.to_string(),
            }),
        }
    }
    out.entries = grouped
        .into_iter()
        .map(|((vendor, product), (versions, parts))| CatalogEntry {
            vendor,
            product,
            versions: sorted_versions(versions),
            source: CatalogSource::CpeDictionary,
            part: parts.into_iter().next(),
        })
        .collect();
    Ok(out)
}

fn dictionary_names_from_xml(path: &Path, text: &str) -> Result<Vec<String>, FeedError> {
    let mut reader = quick_xml::Reader::from_str(text);
    let mut names = Vec::new();
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                if e.local_name().as_ref() == b"cpe23-item" {
                    for attr in e.attributes().flatten() {
                        if attr.key.local_name().as_ref() == b"name" {
                            let value = attr
                                .unescape_value()
                                .map_err(|err| FeedError::schema(path, err.to_string()))?;
                            names.push(value.into_owned());
                        }
                    }
                }
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(FeedError::schema(path, e.to_string())),
        }
    }
    Ok(names)
}

#[derive(Deserialize)]
struct CatalogLine {
    vendor: String,
    product: String,
    #[serde(default)]
    versions: Vec<String>,
}

/// Reads an operator-supplied vendor/product/version catalog (JSON-lines of
/// `{"vendor", "product", "versions"}`), merging repeated pairs.
pub fn ingest_catalog(path: &Path) -> Result<Vec<CatalogEntry>, FeedError> {
    let text = read_all(path)?;
    let mut grouped: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CatalogLine = serde_json::from_str(line)
            .map_err(|e| FeedError::schema(path, format!("line {}: {e}", n + 1)))?;
        grouped
            .entry((entry.vendor, entry.product))
            .or_default()
            .extend(entry.versions.into_iter().filter(|v| !v.is_empty()));
    }
    Ok(grouped
        .into_iter()
        .map(|((vendor, product), versions)| CatalogEntry {
            vendor,
            product,
            versions: sorted_versions(versions),
            source: CatalogSource::ExternalCatalog,
            part: None,
        })
        .collect())
}

fn sorted_versions(versions: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = versions.into_iter().collect();
    v.sort_by(|a, b| compare_versions(a, b));
    v
}

/// Corpus-level statistics over ingested feeds and the dictionary.
///
/// Running-On/With pairs are the Cartesian product of vulnerable and context
/// matches inside each innermost node whose subtree holds both kinds. The
/// firmware and same-vendor fractions are taken over those pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_cves: u64,
    pub cves_with_valid_cpe: u64,
    pub cpe_usage_fraction: f64,
    pub dictionary_names: u64,
    pub unused_dictionary_names: u64,
    pub unused_dictionary_fraction: f64,
    pub config_specific_cves: u64,
    /// Over `cves_with_valid_cpe`.
    pub config_specific_fraction: f64,
    /// Keyed `"<vulnerable part>:<context part>"`, e.g. `"o:h"`.
    pub runningon_pair_counts: BTreeMap<String, u64>,
    pub runningon_pairs_total: u64,
    pub firmware_pairs: u64,
    pub firmware_fraction: f64,
    pub same_vendor_pairs: u64,
    pub same_vendor_config_fraction: f64,
}

impl CorpusStats {
    pub fn pair_key(vulnerable: Part, context: Part) -> String {
        format!("{vulnerable}:{context}")
    }

    pub fn pair_count(&self, vulnerable: Part, context: Part) -> u64 {
        self.runningon_pair_counts
            .get(&Self::pair_key(vulnerable, context))
            .copied()
            .unwrap_or(0)
    }
}

/// Per-record counts; merged by summation, so order of reduction is irrelevant.
#[derive(Debug, Default, Clone)]
struct Tally {
    total: u64,
    with_cpe: u64,
    config_specific: u64,
    pairs: HashMap<(Part, Part), u64>,
    firmware: u64,
    same_vendor: u64,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.total += other.total;
        self.with_cpe += other.with_cpe;
        self.config_specific += other.config_specific;
        for (k, v) in other.pairs {
            *self.pairs.entry(k).or_default() += v;
        }
        self.firmware += other.firmware;
        self.same_vendor += other.same_vendor;
        self
    }

    fn of_record(record: &VulnerabilityRecord) -> Tally {
        let mut t = Tally {
            total: 1,
            ..Tally::default()
        };
        if record.all_matches().is_empty() {
            return t;
        }
        t.with_cpe = 1;
        let specific = record
            .raw_configurations
            .iter()
            .any(|n| !n.children.is_empty() || n.has_context());
        t.config_specific = u64::from(specific);
        for node in &record.raw_configurations {
            t.count_pairs(node);
        }
        t
    }

    fn count_pairs(&mut self, node: &ConfigNodeRaw) {
        let mixed_child = node
            .children
            .iter()
            .any(|c| c.has_context() && c.has_vulnerable());
        if mixed_child {
            for child in &node.children {
                self.count_pairs(child);
            }
            return;
        }
        if !(node.has_context() && node.has_vulnerable()) {
            return;
        }
        let all = node.all_matches();
        let (vulnerable, context): (Vec<_>, Vec<_>) = all.into_iter().partition(|m| m.vulnerable);
        for v in &vulnerable {
            let firmware = v.cpe.product.as_str().is_some_and(|p| p.contains("firmware"));
            for c in &context {
                *self.pairs.entry((v.cpe.part, c.cpe.part)).or_default() += 1;
                self.firmware += u64::from(firmware);
                self.same_vendor += u64::from(v.cpe.vendor == c.cpe.vendor);
            }
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_corpus_stats(records: &[VulnerabilityRecord], dictionary: &DictionaryIngest) -> CorpusStats {
    let tally = records
        .par_iter()
        .filter(|r| r.status == RecordStatus::Active)
        .map(Tally::of_record)
        .reduce(Tally::default, Tally::merge);

    let referenced: BTreeSet<String> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Active)
        .flat_map(|r| r.all_matches().into_iter().map(|m| format_cpe(&m.cpe)))
        .collect();
    let unused = dictionary.names.iter().filter(|n| !referenced.contains(*n)).count() as u64;

    let mut pair_counts = BTreeMap::new();
    for v in Part::ALL {
        for c in Part::ALL {
            pair_counts.insert(
                CorpusStats::pair_key(v, c),
                tally.pairs.get(&(v, c)).copied().unwrap_or(0),
            );
        }
    }
    let pairs_total: u64 = tally.pairs.values().sum();
    let dictionary_names = dictionary.names.len() as u64;

    CorpusStats {
        total_cves: tally.total,
        cves_with_valid_cpe: tally.with_cpe,
        cpe_usage_fraction: ratio(tally.with_cpe, tally.total),
        dictionary_names,
        unused_dictionary_names: unused,
        unused_dictionary_fraction: ratio(unused, dictionary_names),
        config_specific_cves: tally.config_specific,
        config_specific_fraction: ratio(tally.config_specific, tally.with_cpe),
        runningon_pair_counts: pair_counts,
        runningon_pairs_total: pairs_total,
        firmware_pairs: tally.firmware,
        firmware_fraction: ratio(tally.firmware, pairs_total),
        same_vendor_pairs: tally.same_vendor,
        same_vendor_config_fraction: ratio(tally.same_vendor, pairs_total),
    }
}

/// How many CVEs reference each raw vendor and each raw (vendor, product).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CveCounts {
    pub vendors: BTreeMap<String, u64>,
    pub products: BTreeMap<(String, String), u64>,
}

pub fn cve_counts(records: &[VulnerabilityRecord]) -> CveCounts {
    let mut counts = CveCounts::default();
    for record in records {
        let pairs: BTreeSet<(&str, &str)> = record
            .all_matches()
            .into_iter()
            .filter_map(|m| Some((m.cpe.vendor.as_str()?, m.cpe.product.as_str()?)))
            .collect();
        let vendors: BTreeSet<&str> = pairs.iter().map(|(v, _)| *v).collect();
        for v in vendors {
            *counts.vendors.entry(v.to_string()).or_default() += 1;
        }
        for (v, p) in pairs {
            *counts.products.entry((v.to_string(), p.to_string())).or_default() += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn item(id: &str, description: &str, nodes: &str) -> String {
        format!(
            r#"{{"cve":{{"CVE_data_meta":{{"ID":"{id}"}},"description":{{"description_data":[{{"lang":"en","value":"{description}"}}]}}}},"configurations":{{"CVE_data_version":"4.0","nodes":{nodes}}},"lastModifiedDate":"2020-01-01T00:00Z"}}"#
        )
    }

    fn cpe_match(vulnerable: bool, uri: &str) -> String {
        format!(r#"{{"vulnerable":{vulnerable},"cpe23Uri":"{uri}"}}"#)
    }

    #[test]
    fn empty_feed_yields_nothing() {
        let f = write_temp("");
        assert!(ingest_nvd_feed(f.path(), None).unwrap().records.is_empty());
    }

    #[test]
    fn single_or_node_with_three_matches() {
        let nodes = format!(
            r#"[{{"operator":"OR","children":[],"cpe_match":[{},{},{}]}}]"#,
            cpe_match(true, "cpe:2.3:a:google:chrome:1.0:*:*:*:*:*:*:*"),
            cpe_match(true, "cpe:2.3:a:google:chrome:1.1:*:*:*:*:*:*:*"),
            cpe_match(true, "cpe:2.3:a:google:chrome:1.2:*:*:*:*:*:*:*"),
        );
        let f = write_temp(&item("CVE-2020-0001", "x", &nodes));
        let out = ingest_nvd_feed(f.path(), None).unwrap();
        assert_eq!(out.records.len(), 1);
        let configs = &out.records[0].raw_configurations;
        assert_eq!(configs.len(), 1);
        assert_eq!(configs[0].operator, Operator::Or);
        assert_eq!(configs[0].matches.len(), 3);
    }

    #[test]
    fn malformed_cpe_is_quarantined_not_fatal() {
        let nodes = format!(
            r#"[{{"operator":"OR","cpe_match":[{},{}]}}]"#,
            cpe_match(true, "cpe:2.3:x:bad:thing:1:*:*:*:*:*:*:*"),
            cpe_match(true, "cpe:2.3:a:good:thing:1:*:*:*:*:*:*:*"),
        );
        let f = write_temp(&item("CVE-2020-0002", "x", &nodes));
        let out = ingest_nvd_feed(f.path(), None).unwrap();
        assert_eq!(out.records[0].all_matches().len(), 1);
        assert_eq!(out.quarantined.len(), 1);
        assert_eq!(out.quarantined[0].cve_id.as_deref(), Some("CVE-2020-0002"));
    }

    #[test]
    fn rejected_and_old_entries_dropped() {
        let lines = [
            item("CVE-2020-0003", "** REJECT ** duplicate", "[]"),
            item("CVE-2020-0004", "fine", "[]").replace("2020-01-01", "2019-01-01"),
            item("CVE-2020-0005", "fine", "[]"),
        ]
        .join("\n");
        let f = write_temp(&lines);
        let since = parse_timestamp("2019-06-01T00:00Z");
        let out = ingest_nvd_feed(f.path(), since).unwrap();
        assert_eq!(out.rejected, 1);
        assert_eq!(out.skipped_before_since, 1);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].cve_id, "CVE-2020-0005");
    }

    #[test]
    fn unrecognized_shape_is_schema_error() {
        let f = write_temp("{\"hello\": 1}\n");
        let err = ingest_nvd_feed(f.path(), None).unwrap_err();
        assert_eq!(err.code(), "FeedSchemaError");
    }

    #[test]
    fn full_document_form() {
        let doc = format!(
            r#"{{"CVE_data_type":"CVE","CVE_Items":[{}]}}"#,
            item("CVE-2021-1234", "y", "[]")
        );
        let f = write_temp(&doc);
        assert_eq!(ingest_nvd_feed(f.path(), None).unwrap().records.len(), 1);
    }

    #[test]
    fn dictionary_xml() {
        let xml = r#"<?xml version="1.0"?>
<cpe-list xmlns="http://cpe.mitre.org/dictionary/2.0" xmlns:cpe-23="http://scap.nist.gov/schema/cpe-extension/2.3">
  <cpe-item name="cpe:/a:google:chrome:1.0">
    <title>Chrome 1.0</title>
    <cpe-23:cpe23-item name="cpe:2.3:a:google:chrome:1.0:*:*:*:*:*:*:*"/>
  </cpe-item>
  <cpe-item name="cpe:/a:google:chrome:1.1">
    <cpe-23:cpe23-item name="cpe:2.3:a:google:chrome:1.1:*:*:*:*:*:*:*"/>
  </cpe-item>
  <cpe-item name="cpe:/a:google:chrome:1.1">
    <cpe-23:cpe23-item name="cpe:2.3:a:google:chrome:1.1:*:*:*:*:*:*:*"/>
  </cpe-item>
</cpe-list>"#;
        let f = write_temp(xml);
        let out = ingest_cpe_dictionary(f.path()).unwrap();
        assert_eq!(out.names.len(), 2);
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].versions, ["1.0", "1.1"]);
        assert_eq!(out.entries[0].part, Some(Part::Application));
    }

    #[test]
    fn dictionary_jsonl_dedups_versions() {
        let lines = [
            r#"{"cpe23Uri":"cpe:2.3:a:v:p:1.0:*:*:*:*:*:*:*"}"#,
            r#"{"cpe23Uri":"cpe:2.3:a:v:p:1.0:*:*:*:*:*:*:*"}"#,
            r#"{"cpe23Uri":"cpe:2.3:a:v:p:1.10:*:*:*:*:*:*:*"}"#,
            r#"{"cpe23Uri":"cpe:2.3:a:v:p:1.9:*:*:*:*:*:*:*"}"#,
            r#"{"cpe23Uri":"cpe:2.3:a:v:q:-:*:*:*:*:*:*:*"}"#,
            r#"{"cpe23Uri":"not a cpe"}"#,
        ]
        .join("\n");
        let f = write_temp(&lines);
        let out = ingest_cpe_dictionary(f.path()).unwrap();
        assert_eq!(out.entries.len(), 2);
        assert_eq!(out.entries[0].versions, ["1.0", "1.9", "1.10"]);
        assert!(out.entries[1].versions.is_empty());
        assert_eq!(out.quarantined.len(), 1);
        assert_eq!(out.names.len(), 4);
    }

    fn m(vulnerable: bool, uri: &str) -> CpeMatchRaw {
        let cpe = parse_cpe(uri).unwrap();
        CpeMatchRaw {
            constraint: VersionConstraint::exact(cpe.version.token()),
            cpe,
            vulnerable,
        }
    }

    fn record(nodes: Vec<ConfigNodeRaw>) -> VulnerabilityRecord {
        VulnerabilityRecord {
            cve_id: "CVE-2020-0001".into(),
            description: String::new(),
            status: RecordStatus::Active,
            cvss: None,
            raw_configurations: nodes,
            last_modified: Utc::now(),
        }
    }

    #[test]
    fn single_pair_stats() {
        let node = ConfigNodeRaw {
            operator: Operator::And,
            matches: vec![
                m(true, "cpe:2.3:o:vendora:fw_x:1:*:*:*:*:*:*:*"),
                m(false, "cpe:2.3:h:vendora:dev_y:-:*:*:*:*:*:*:*"),
            ],
            children: vec![],
        };
        let stats = compute_corpus_stats(&[record(vec![node])], &DictionaryIngest::default());
        assert_eq!(stats.pair_count(Part::OperatingSystem, Part::Hardware), 1);
        assert_eq!(stats.runningon_pairs_total, 1);
        assert_eq!(stats.same_vendor_config_fraction, 1.0);
        assert_eq!(stats.config_specific_fraction, 1.0);
        assert_eq!(stats.unused_dictionary_fraction, 0.0);
    }

    #[test]
    fn cartesian_two_by_three() {
        let vulnerable = ConfigNodeRaw {
            operator: Operator::Or,
            matches: vec![
                m(true, "cpe:2.3:a:x:app1:1:*:*:*:*:*:*:*"),
                m(true, "cpe:2.3:a:x:app2:1:*:*:*:*:*:*:*"),
            ],
            children: vec![],
        };
        let context = ConfigNodeRaw {
            operator: Operator::Or,
            matches: vec![
                m(false, "cpe:2.3:o:y:os1:-:*:*:*:*:*:*:*"),
                m(false, "cpe:2.3:o:y:os2:-:*:*:*:*:*:*:*"),
                m(false, "cpe:2.3:o:x:os3:-:*:*:*:*:*:*:*"),
            ],
            children: vec![],
        };
        let node = ConfigNodeRaw {
            operator: Operator::And,
            matches: vec![],
            children: vec![vulnerable, context],
        };
        let stats = compute_corpus_stats(&[record(vec![node])], &DictionaryIngest::default());
        assert_eq!(stats.pair_count(Part::Application, Part::OperatingSystem), 6);
        assert_eq!(stats.same_vendor_pairs, 2);
    }

    #[test]
    fn vendor_counts_once_per_cve() {
        let node = ConfigNodeRaw {
            operator: Operator::Or,
            matches: vec![
                m(true, "cpe:2.3:a:google:chrome:1:*:*:*:*:*:*:*"),
                m(true, "cpe:2.3:a:google:chrome:2:*:*:*:*:*:*:*"),
            ],
            children: vec![],
        };
        let counts = cve_counts(&[record(vec![node])]);
        assert_eq!(counts.vendors.get("google"), Some(&1));
        assert_eq!(counts.products.get(&("google".into(), "chrome".into())), Some(&1));
    }
}
