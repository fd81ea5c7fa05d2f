//! Directory-backed store of the uCPE, configuration and vulnerability
//! collections.
//!
//! Layout:
//!
//! ```text
//! <dir>/CURRENT                   name of the live generation directory
//! <dir>/gen-000001/ucpe.jsonl
//! <dir>/gen-000001/configurations.jsonl
//! <dir>/gen-000001/vulnerabilities.jsonl
//! <dir>/gen-000001/dictionary.json   (optional)
//! ```
//!
//! Every successful batch writes a complete new generation into a temporary
//! directory, renames it into place and then swaps `CURRENT`, so readers
//! never see a partial batch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ConfigGraph, GraphError, VulGraph};
use crate::cpe::{UcpeEntry, UcpeId};
use crate::feed::VulnerabilityRecord;
use crate::inconsistency::{normalize_str, CanonicalDictionary};

const CURRENT: &str = "CURRENT";
const UCPE_FILE: &str = "ucpe.jsonl";
const CONFIG_FILE: &str = "configurations.jsonl";
const VULN_FILE: &str = "vulnerabilities.jsonl";
const DICT_FILE: &str = "dictionary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVulnerability {
    pub record: VulnerabilityRecord,
    pub config_ids: Vec<String>,
}

/// One atomic write.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub ucpe: Vec<UcpeEntry>,
    pub configurations: Vec<ConfigGraph>,
    pub vulnerabilities: Vec<StoredVulnerability>,
    pub dictionary: Option<CanonicalDictionary>,
}

impl Batch {
    /// Adds a record with its graph and every uCPE entry the graph needs.
    pub fn add_vulnerability(&mut self, record: VulnerabilityRecord, graph: VulGraph, ucpe: impl IntoIterator<Item = UcpeEntry>) {
        self.ucpe.extend(ucpe);
        self.vulnerabilities.push(StoredVulnerability {
            record,
            config_ids: graph.configs.iter().map(|c| c.config_id.clone()).collect(),
        });
        self.configurations.extend(graph.configs);
    }

    pub fn is_empty(&self) -> bool {
        self.ucpe.is_empty() && self.configurations.is_empty() && self.vulnerabilities.is_empty() && self.dictionary.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CveLookup {
    Found { record: VulnerabilityRecord, graph: VulGraph },
    NotFound { cve_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProductHit {
    pub cve_id: String,
    pub config_id: String,
}

/// The three collections plus an optional canonical dictionary used to
/// standardize query names.
#[derive(Debug, Default)]
pub struct Store {
    dir: Option<PathBuf>,
    generation: u64,
    ucpe: BTreeMap<UcpeId, UcpeEntry>,
    configurations: BTreeMap<String, ConfigGraph>,
    vulnerabilities: BTreeMap<String, StoredVulnerability>,
    dictionary: Option<CanonicalDictionary>,
    /// (vendor, product) -> config ids with a vulnerable leaf on that product.
    product_index: HashMap<(String, String), BTreeSet<String>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens the store at `dir`, creating an empty one if needed, and
    /// rebuilds the in-memory index.
    pub fn open(dir: &Path) -> Result<Self, GraphError> {
        fs::create_dir_all(dir).map_err(|e| GraphError::io(dir, e))?;
        let mut store = Store {
            dir: Some(dir.to_path_buf()),
            ..Store::default()
        };
        let current = dir.join(CURRENT);
        if !current.exists() {
            return Ok(store);
        }
        let name = fs::read_to_string(&current).map_err(|e| GraphError::io(&current, e))?;
        let name = name.trim();
        store.generation = name
            .strip_prefix("gen-")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| GraphError::Corrupt {
                path: current.display().to_string(),
                message: format!("bad generation name `{name}`"),
            })?;
        let gen_dir = dir.join(name);
        for u in read_jsonl::<UcpeEntry>(&gen_dir.join(UCPE_FILE))? {
            store.ucpe.insert(u.id.clone(), u);
        }
        for c in read_jsonl::<ConfigGraph>(&gen_dir.join(CONFIG_FILE))? {
            store.configurations.insert(c.config_id.clone(), c);
        }
        for v in read_jsonl::<StoredVulnerability>(&gen_dir.join(VULN_FILE))? {
            store.vulnerabilities.insert(v.record.cve_id.clone(), v);
        }
        let dict_path = gen_dir.join(DICT_FILE);
        if dict_path.exists() {
            store.dictionary =
                Some(CanonicalDictionary::load(&dict_path).map_err(|e| GraphError::Corrupt {
                    path: dict_path.display().to_string(),
                    message: e.to_string(),
                })?);
        }
        store.check_integrity()?;
        store.rebuild_index();
        Ok(store)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn dictionary(&self) -> Option<&CanonicalDictionary> {
        self.dictionary.as_ref()
    }

    pub fn ucpe_count(&self) -> usize {
        self.ucpe.len()
    }

    pub fn config_count(&self) -> usize {
        self.configurations.len()
    }

    pub fn vulnerability_count(&self) -> usize {
        self.vulnerabilities.len()
    }

    pub fn get_ucpe(&self, id: &UcpeId) -> Option<&UcpeEntry> {
        self.ucpe.get(id)
    }

    pub fn get_config(&self, id: &str) -> Option<&ConfigGraph> {
        self.configurations.get(id)
    }

    pub fn get_vulnerability(&self, cve_id: &str) -> Option<&StoredVulnerability> {
        self.vulnerabilities.get(cve_id)
    }

    pub fn ucpe_entries(&self) -> impl Iterator<Item = &UcpeEntry> {
        self.ucpe.values()
    }

    pub fn configurations(&self) -> impl Iterator<Item = &ConfigGraph> {
        self.configurations.values()
    }

    pub fn vulnerabilities(&self) -> impl Iterator<Item = &StoredVulnerability> {
        self.vulnerabilities.values()
    }

    /// Materializes the graph of a stored vulnerability.
    pub fn vul_graph(&self, stored: &StoredVulnerability) -> VulGraph {
        VulGraph {
            cve_id: stored.record.cve_id.clone(),
            configs: stored
                .config_ids
                .iter()
                .filter_map(|id| self.configurations.get(id).cloned())
                .collect(),
        }
    }

    /// Every stored vulnerability graph, sorted by CVE id.
    pub fn vul_graphs(&self) -> Vec<VulGraph> {
        self.vulnerabilities.values().map(|v| self.vul_graph(v)).collect()
    }

    /// Validates `batch` against the current contents and, if it is
    /// consistent, commits it as a new generation. On error nothing changes.
    pub fn put(&mut self, batch: Batch) -> Result<u64, GraphError> {
        self.validate_batch(&batch)?;
        let mut next = StoreData {
            ucpe: self.ucpe.clone(),
            configurations: self.configurations.clone(),
            vulnerabilities: self.vulnerabilities.clone(),
            dictionary: self.dictionary.clone(),
        };
        for u in batch.ucpe {
            next.ucpe.entry(u.id.clone()).or_insert(u);
        }
        for c in batch.configurations {
            next.configurations.insert(c.config_id.clone(), c);
        }
        for v in batch.vulnerabilities {
            next.vulnerabilities.insert(v.record.cve_id.clone(), v);
        }
        if batch.dictionary.is_some() {
            next.dictionary = batch.dictionary;
        }
        let generation = self.generation + 1;
        if let Some(dir) = &self.dir {
            write_generation(dir, generation, &next)?;
        }
        self.generation = generation;
        self.ucpe = next.ucpe;
        self.configurations = next.configurations;
        self.vulnerabilities = next.vulnerabilities;
        self.dictionary = next.dictionary;
        self.rebuild_index();
        Ok(generation)
    }

    fn validate_batch(&self, batch: &Batch) -> Result<(), GraphError> {
        let violation = |m: String| Err(GraphError::Integrity(m));
        for u in &batch.ucpe {
            if !u.id_is_consistent() {
                return violation(format!("uCPE {} does not match its fields", u.id));
            }
        }
        let new_ucpe: BTreeSet<&UcpeId> = batch.ucpe.iter().map(|u| &u.id).collect();
        let mut new_configs: BTreeMap<&str, &ConfigGraph> = BTreeMap::new();
        for c in &batch.configurations {
            c.validate().map_err(|e| GraphError::Integrity(e.to_string()))?;
            for id in c.ucpe_ids() {
                if !new_ucpe.contains(id) && !self.ucpe.contains_key(id) {
                    return violation(format!("configuration {} references missing uCPE {id}", c.config_id));
                }
            }
            if let Some(old) = self.configurations.get(&c.config_id) {
                if old != c {
                    return violation(format!("configuration {} changes content", c.config_id));
                }
            }
            new_configs.insert(&c.config_id, c);
        }
        for v in &batch.vulnerabilities {
            for id in &v.config_ids {
                let config = new_configs
                    .get(id.as_str())
                    .copied()
                    .or_else(|| self.configurations.get(id));
                match config {
                    None => return violation(format!("{} references missing configuration {id}", v.record.cve_id)),
                    Some(c) if c.cve_id != v.record.cve_id => {
                        return violation(format!("configuration {id} belongs to {}, not {}", c.cve_id, v.record.cve_id))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Verifies referential integrity across all three collections.
    pub fn check_integrity(&self) -> Result<(), GraphError> {
        let violation = |m: String| Err(GraphError::Integrity(m));
        for (id, u) in &self.ucpe {
            if &u.id != id || !u.id_is_consistent() {
                return violation(format!("uCPE {id} does not match its fields"));
            }
        }
        for (id, c) in &self.configurations {
            if &c.config_id != id {
                return violation(format!("configuration key {id} differs from id {}", c.config_id));
            }
            c.validate().map_err(|e| GraphError::Integrity(e.to_string()))?;
            if let Some(missing) = c.ucpe_ids().into_iter().find(|u| !self.ucpe.contains_key(*u)) {
                return violation(format!("configuration {id} references missing uCPE {missing}"));
            }
        }
        for (cve, v) in &self.vulnerabilities {
            if &v.record.cve_id != cve {
                return violation(format!("vulnerability key {cve} differs from record"));
            }
            for id in &v.config_ids {
                match self.configurations.get(id) {
                    None => return violation(format!("{cve} references missing configuration {id}")),
                    Some(c) if &c.cve_id != cve => {
                        return violation(format!("configuration {id} belongs to {}", c.cve_id))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    fn rebuild_index(&mut self) {
        self.product_index.clear();
        for c in self.configurations.values() {
            for leaf in c.leaves().into_iter().filter(|l| l.vulnerable) {
                self.product_index
                    .entry((leaf.vendor.clone(), leaf.product.clone()))
                    .or_default()
                    .insert(c.config_id.clone());
            }
        }
    }

    pub fn query_by_cve(&self, cve_id: &str) -> CveLookup {
        match self.vulnerabilities.get(cve_id.trim()) {
            Some(v) => CveLookup::Found {
                record: v.record.clone(),
                graph: self.vul_graph(v),
            },
            None => CveLookup::NotFound {
                cve_id: cve_id.to_string(),
            },
        }
    }

    /// Maps query names to canonical names with the stored dictionary, or
    /// normalizes them when the store has none.
    pub fn standardize(&self, vendor: &str, product: &str, tau: f64) -> (String, String) {
        match &self.dictionary {
            Some(d) => {
                let v = d.standardize_vendor(vendor, tau).unwrap_or_else(|| normalize_str(vendor));
                let p = d.standardize_product(&v, product, tau).unwrap_or_else(|| normalize_str(product));
                (v, p)
            }
            None => (normalize_str(vendor), normalize_str(product)),
        }
    }

    /// Vulnerabilities with a vulnerable leaf on (vendor, product) whose
    /// versions admit `version`; `None` or `*` admits every version. Sorted
    /// by CVE id, then configuration id.
    pub fn query_by_product(&self, vendor: &str, product: &str, version: Option<&str>, tau: f64) -> Vec<ProductHit> {
        let (vendor, product) = self.standardize(vendor, product, tau);
        let version = version.map(|v| v.trim().to_ascii_lowercase());
        let probe = UcpeEntry::new(
            crate::cpe::Part::Application,
            &vendor,
            &product,
            version.as_deref().unwrap_or("*"),
        );
        let Some(ids) = self.product_index.get(&(vendor, product)) else {
            return Vec::new();
        };
        let mut hits: Vec<ProductHit> = ids
            .iter()
            .filter_map(|id| self.configurations.get(id))
            .filter(|c| c.leaves().iter().any(|l| l.vulnerable && l.admits(&probe)))
            .map(|c| ProductHit {
                cve_id: c.cve_id.clone(),
                config_id: c.config_id.clone(),
            })
            .collect();
        hits.sort();
        hits
    }
}

struct StoreData {
    ucpe: BTreeMap<UcpeId, UcpeEntry>,
    configurations: BTreeMap<String, ConfigGraph>,
    vulnerabilities: BTreeMap<String, StoredVulnerability>,
    dictionary: Option<CanonicalDictionary>,
}

fn gen_name(generation: u64) -> String {
    format!("gen-{generation:06}")
}

fn write_generation(dir: &Path, generation: u64, data: &StoreData) -> Result<(), GraphError> {
    let name = gen_name(generation);
    let tmp = dir.join(format!("{name}.tmp"));
    let target = dir.join(&name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| GraphError::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| GraphError::io(&tmp, e))?;
    write_jsonl(&tmp.join(UCPE_FILE), data.ucpe.values())?;
    write_jsonl(&tmp.join(CONFIG_FILE), data.configurations.values())?;
    write_jsonl(&tmp.join(VULN_FILE), data.vulnerabilities.values())?;
    if let Some(d) = &data.dictionary {
        let path = tmp.join(DICT_FILE);
        fs::write(&path, d.to_json()).map_err(|e| GraphError::io(&path, e))?;
    }
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| GraphError::io(&target, e))?;
    }
    fs::rename(&tmp, &target).map_err(|e| GraphError::io(&target, e))?;

    let current_tmp = dir.join(format!("{CURRENT}.tmp"));
    fs::write(&current_tmp, &name).map_err(|e| GraphError::io(&current_tmp, e))?;
    let current = dir.join(CURRENT);
    fs::rename(&current_tmp, &current).map_err(|e| GraphError::io(&current, e))?;

    if generation > 1 {
        let previous = dir.join(gen_name(generation - 1));
        if previous.exists() {
            fs::remove_dir_all(&previous).map_err(|e| GraphError::io(&previous, e))?;
        }
    }
    Ok(())
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<(), GraphError> {
    let file = fs::File::create(path).map_err(|e| GraphError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| GraphError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| GraphError::io(path, e))?;
    }
    let file = w.into_inner().map_err(|e| GraphError::io(path, e.into_error()))?;
    file.sync_all().map_err(|e| GraphError::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, GraphError> {
    let file = fs::File::open(path).map_err(|e| GraphError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GraphError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GraphError::Corrupt {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
