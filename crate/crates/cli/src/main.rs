//! `cpegraph`: pipeline commands over NVD feeds, the CPE dictionary and a
//! system inventory.

mod config;
mod error;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cpegraph::eval::{self, GroundTruth, Strategy};
use cpegraph::extraction::{
    evaluate_extraction, extract_sentence, read_bio, read_pairs, split_sentences, tokenize, Gazetteer,
    NearestProductClassifier, RuleExtractor,
};
use cpegraph::feed::{self, CatalogEntry, VulnerabilityRecord};
use cpegraph::filter::{self, FilterOptions, FilterState};
use cpegraph::graph::{self, Inventory, Store};
use cpegraph::inconsistency::{
    apply_review, build_canonical_dictionary, cluster_inconsistencies, read_review, write_report, CanonicalDictionary,
    Catalog, GroupStatus, HeuristicConfig, InconsistencyGroup, SprVariant,
};
use cpegraph::postprocess::{extract_raw_entries, Resolver};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::{CliError, ModuleError};

#[derive(Parser)]
#[command(name = "cpegraph", version, about = "Configuration-aware vulnerability normalization and retrieval")]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Store directory.
    #[arg(long, global = true, env = "CPEGRAPH_STORE_DIR")]
    store_dir: Option<PathBuf>,
    /// Name-similarity threshold used for standardization.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse NVD feeds into normalized records.
    Ingest(IngestArgs),
    /// Corpus statistics over feeds and the CPE dictionary.
    Stats(StatsArgs),
    /// Detect vendor and product naming inconsistencies.
    Inconsistencies(InconsistencyArgs),
    /// Build the canonical dictionary from reviewed groups.
    BuildDict(BuildDictArgs),
    /// Extract product and version mentions from text.
    Extract(ExtractArgs),
    /// Resolve feeds into uCPE configuration graphs and store them.
    BuildDb(BuildDbArgs),
    /// Query the store.
    #[command(subcommand)]
    Query(QueryCommand),
    /// Decide which stored vulnerabilities apply to an inventory.
    Filter(FilterArgs),
    /// Compare retrieval strategies against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// NVD JSON feed (plain or gzip); repeatable.
    #[arg(long = "feed")]
    feeds: Vec<PathBuf>,
    /// Skip entries last modified before this timestamp.
    #[arg(long)]
    since: Option<String>,
    /// Write records as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write quarantined items as JSON lines.
    #[arg(long)]
    quarantine_out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "feed")]
    feeds: Vec<PathBuf>,
    /// Official CPE dictionary (XML or JSON lines).
    #[arg(long)]
    cpe_dictionary: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CatalogArgs {
    #[arg(long)]
    cpe_dictionary: Option<PathBuf>,
    /// External vendor/product catalog (JSON lines).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Feeds used for per-vendor CVE counts; repeatable.
    #[arg(long = "feed")]
    feeds: Vec<PathBuf>,
    #[arg(long)]
    tau_spelling: Option<f64>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    theta_p: Option<f64>,
    #[arg(long)]
    theta_high: Option<f64>,
    /// Ratio gating the vendor heuristics: jaccard or min_denominator.
    #[arg(long)]
    spr_gate: Option<String>,
}

#[derive(Args)]
struct InconsistencyArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Review decisions (JSON lines of {group_id, status}).
    #[arg(long)]
    review: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Groups as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDictArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long)]
    review: Option<PathBuf>,
    /// Treat every group not rejected by review as confirmed.
    #[arg(long)]
    accept_all: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Gazetteer (JSON lines of {vendor, product, part, versions}).
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Canonical dictionary used as gazetteer when --gazetteer is absent.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Text to extract from.
    #[arg(long, conflicts_with_all = ["input", "gold"])]
    text: Option<String>,
    /// File with one description per line.
    #[arg(long, conflicts_with = "gold")]
    input: Option<PathBuf>,
    /// Gold BIO file; prints an evaluation report.
    #[arg(long, requires = "gold_pairs")]
    gold: Option<PathBuf>,
    /// Gold pair labels (JSON lines).
    #[arg(long)]
    gold_pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDbArgs {
    #[arg(long = "feed")]
    feeds: Vec<PathBuf>,
    /// Canonical dictionary from build-dict.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Extract Basic configurations for records without any configuration.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Write unresolved entries and failed records as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum QueryCommand {
    /// Record and configuration graphs of one CVE.
    Cve { cve_id: String },
    /// Vulnerabilities affecting a product version.
    Product {
        #[arg(long)]
        vendor: String,
        #[arg(long)]
        product: String,
        #[arg(long)]
        version: Option<String>,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    inventory: Option<PathBuf>,
    /// Incremental state file; created when missing.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Omit per-configuration match traces.
    #[arg(long)]
    no_traces: bool,
    /// Print a text table instead of JSON.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    inventory: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Comma-separated: keyword-match, cpe-query, ucpe-graph-filtered.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// CSV table path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a synthetic adversarial fixture into this directory and exit.
    #[arg(long)]
    generate: Option<PathBuf>,
    /// Seed for --generate.
    #[arg(long)]
    seed: Option<u64>,
    /// Random vulnerabilities added by --generate.
    #[arg(long, default_value_t = 60)]
    rounds: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let e = CliError::from_anyhow(&err);
            let text = serde_json::to_string(&serde_json::to_value(&e).unwrap_or(Value::Null)).unwrap_or_default();
            eprintln!("{text}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = cli.workers.or(cfg.workers) {
        if n == 0 {
            return Err(CliError::config("--workers must be positive", json!({ "option": "workers" })).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string(), json!({ "option": "workers" })))?;
    }
    let tau = config::tau(cli.tau, &cfg)?;
    let store_dir = cli.store_dir.clone().or_else(|| cfg.store_dir.clone());
    match cli.command {
        Command::Ingest(a) => ingest(a, &cfg),
        Command::Stats(a) => stats(a, &cfg),
        Command::Inconsistencies(a) => inconsistencies(a, &cfg),
        Command::BuildDict(a) => build_dict(a, &cfg),
        Command::Extract(a) => extract(a, &cfg),
        Command::BuildDb(a) => build_db(a, &cfg, store_dir, tau),
        Command::Query(q) => query(q, store_dir, tau),
        Command::Filter(a) => run_filter(a, &cfg, store_dir, tau),
        Command::Eval(a) => run_eval(a, &cfg, store_dir, tau),
    }
}

/// Serializes through `serde_json::Value` so object keys come out sorted.
fn to_stable_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = to_stable_json(value)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        writeln!(w, "{}", serde_json::to_string(&serde_json::to_value(item)?)?).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn path_ctx(path: &Path) -> Value {
    json!({ "path": path.display().to_string() })
}

/// Reads feeds; a CVE present in several feeds keeps its latest copy.
fn load_records(feeds: &[PathBuf], since: Option<&str>) -> Result<(Vec<VulnerabilityRecord>, feed::FeedIngest)> {
    let since = since
        .map(|s| {
            feed::parse_timestamp(s)
                .ok_or_else(|| CliError::config(format!("unparseable --since `{s}`"), json!({ "option": "since" })))
        })
        .transpose()?;
    let mut merged: BTreeMap<String, VulnerabilityRecord> = BTreeMap::new();
    let mut totals = feed::FeedIngest::default();
    for path in feeds {
        let ingest = feed::ingest_nvd_feed(path, since).module("feed_ingest", path_ctx(path))?;
        totals.quarantined.extend(ingest.quarantined);
        totals.rejected += ingest.rejected;
        totals.skipped_before_since += ingest.skipped_before_since;
        for r in ingest.records {
            match merged.get(&r.cve_id) {
                Some(existing) if existing.last_modified >= r.last_modified => {}
                _ => {
                    merged.insert(r.cve_id.clone(), r);
                }
            }
        }
    }
    Ok((merged.into_values().collect(), totals))
}

fn ingest(a: IngestArgs, cfg: &PipelineConfig) -> Result<()> {
    let feeds = config::feeds(a.feeds, cfg)?;
    let (records, totals) = load_records(&feeds, a.since.as_deref())?;
    if let Some(out) = &a.out {
        write_jsonl(out, &records)?;
    }
    if let Some(out) = &a.quarantine_out {
        write_jsonl(out, &totals.quarantined)?;
    }
    emit(
        &json!({
            "records": records.len(),
            "rejected": totals.rejected,
            "quarantined": totals.quarantined.len(),
            "skipped_before_since": totals.skipped_before_since,
        }),
        None,
    )
}

fn stats(a: StatsArgs, cfg: &PipelineConfig) -> Result<()> {
    let feeds = config::feeds(a.feeds, cfg)?;
    let dict_path = config::require(a.cpe_dictionary, &cfg.cpe_dictionary, "cpe-dictionary")?;
    let (records, _) = load_records(&feeds, None)?;
    let dictionary = feed::ingest_cpe_dictionary(&dict_path).module("feed_ingest", path_ctx(&dict_path))?;
    emit(&feed::compute_corpus_stats(&records, &dictionary), a.out.as_deref())
}

fn heuristic_config(a: &CatalogArgs, cfg: &PipelineConfig) -> Result<HeuristicConfig> {
    let mut h = cfg.heuristics;
    if let Some(v) = a.tau_spelling {
        h.tau_spelling = v;
    }
    if let Some(v) = a.min_len {
        h.min_len_m = v;
    }
    if let Some(v) = a.theta_p {
        h.theta_p = v;
    }
    if let Some(v) = a.theta_high {
        h.theta_high = v;
    }
    if let Some(v) = &a.spr_gate {
        h.spr_gate = match v.as_str() {
            "jaccard" => SprVariant::Jaccard,
            "min_denominator" | "min-denominator" => SprVariant::MinDenominator,
            other => {
                return Err(CliError::config(format!("unknown --spr-gate `{other}`"), json!({ "option": "spr-gate" })).into())
            }
        };
    }
    h.validate().module("inconsistency", json!({ "option": "heuristics" }))?;
    Ok(h)
}

fn load_catalog(a: &CatalogArgs, cfg: &PipelineConfig) -> Result<Catalog> {
    let dict_path = config::optional(a.cpe_dictionary.clone(), &cfg.cpe_dictionary, "cpe-dictionary")?;
    let catalog_path = config::optional(a.catalog.clone(), &cfg.catalog, "catalog")?;
    if dict_path.is_none() && catalog_path.is_none() {
        return Err(CliError::config("need --cpe-dictionary or --catalog", json!({ "option": "cpe-dictionary" })).into());
    }
    let mut entries: Vec<CatalogEntry> = Vec::new();
    if let Some(p) = &dict_path {
        entries.extend(feed::ingest_cpe_dictionary(p).module("feed_ingest", path_ctx(p))?.entries);
    }
    if let Some(p) = &catalog_path {
        entries.extend(feed::ingest_catalog(p).module("feed_ingest", path_ctx(p))?);
    }
    let feeds = if a.feeds.is_empty() { cfg.feeds.clone() } else { a.feeds.clone() };
    let mut catalog = Catalog::new(&entries);
    if !feeds.is_empty() {
        let feeds: Vec<PathBuf> = feeds
            .into_iter()
            .map(|p| config::existing(p, "feed"))
            .collect::<Result<_, _>>()?;
        let (records, _) = load_records(&feeds, None)?;
        catalog = catalog.with_cve_counts(feed::cve_counts(&records));
    }
    Ok(catalog)
}

fn reviewed_groups(
    a: &CatalogArgs,
    review: Option<PathBuf>,
    cfg: &PipelineConfig,
) -> Result<(Catalog, Vec<InconsistencyGroup>)> {
    let h = heuristic_config(a, cfg)?;
    let catalog = load_catalog(a, cfg)?;
    let mut groups = cluster_inconsistencies(&catalog, &h).module("inconsistency", json!({}))?;
    if let Some(path) = config::optional(review, &cfg.review, "review")? {
        let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let decisions = read_review(BufReader::new(file)).module("inconsistency", path_ctx(&path))?;
        apply_review(&mut groups, &decisions).module("inconsistency", path_ctx(&path))?;
    }
    Ok((catalog, groups))
}

fn inconsistencies(a: InconsistencyArgs, cfg: &PipelineConfig) -> Result<()> {
    let (_, groups) = reviewed_groups(&a.catalog, a.review, cfg)?;
    if let Some(path) = &a.report {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_report(&groups, BufWriter::new(file)).module("inconsistency", path_ctx(path))?;
    }
    emit(&groups, a.out.as_deref())
}

fn build_dict(a: BuildDictArgs, cfg: &PipelineConfig) -> Result<()> {
    let (catalog, mut groups) = reviewed_groups(&a.catalog, a.review, cfg)?;
    if a.accept_all {
        for g in &mut groups {
            if g.status == GroupStatus::Possible {
                g.status = GroupStatus::Confirmed;
            }
        }
    }
    let dict = build_canonical_dictionary(&catalog, &groups).module("inconsistency", json!({}))?;
    dict.save(&a.out).module("inconsistency", path_ctx(&a.out))?;
    emit(
        &json!({
            "vendors": dict.vendors.len(),
            "products": dict.products.values().map(|p| p.len()).sum::<usize>(),
            "vendor_aliases": dict.vendor_aliases.len(),
            "product_aliases": dict.product_aliases.values().map(|p| p.len()).sum::<usize>(),
            "confirmed_groups": groups.iter().filter(|g| g.status == GroupStatus::Confirmed).count(),
        }),
        None,
    )
}

fn load_dictionary(path: &Path) -> Result<CanonicalDictionary> {
    Ok(CanonicalDictionary::load(path).module("inconsistency", path_ctx(path))?)
}

fn load_gazetteer(gazetteer: Option<PathBuf>, dictionary: Option<PathBuf>, cfg: &PipelineConfig) -> Result<Gazetteer> {
    if let Some(path) = config::optional(gazetteer, &cfg.gazetteer, "gazetteer")? {
        let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
        return Ok(Gazetteer::read_jsonl(BufReader::new(file)).module("extraction", path_ctx(&path))?);
    }
    let path = config::require(dictionary, &cfg.canonical_dictionary, "dictionary")?;
    Ok(Gazetteer::from_dictionary(&load_dictionary(&path)?))
}

fn extract(a: ExtractArgs, cfg: &PipelineConfig) -> Result<()> {
    let extractor = RuleExtractor::new(load_gazetteer(a.gazetteer, a.dictionary, cfg)?);
    let classifier = NearestProductClassifier;
    if let Some(gold) = a.gold {
        let gold = config::existing(gold, "gold")?;
        let pairs = config::existing(a.gold_pairs.expect("clap requires gold-pairs"), "gold-pairs")?;
        let sentences = read_bio(BufReader::new(File::open(&gold).map_err(|e| CliError::io(&gold, e))?))
            .module("extraction", path_ctx(&gold))?;
        let gold_pairs = read_pairs(BufReader::new(File::open(&pairs).map_err(|e| CliError::io(&pairs, e))?))
            .module("extraction", path_ctx(&pairs))?;
        let report = evaluate_extraction(&sentences, &gold_pairs, &extractor, &classifier);
        return emit(&report, a.out.as_deref());
    }
    let texts: Vec<String> = match (a.text, a.input) {
        (Some(t), _) => vec![t],
        (None, Some(path)) => {
            let path = config::existing(path, "input")?;
            let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
            BufReader::new(file)
                .lines()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::io(&path, e))?
                .into_iter()
                .filter(|l| !l.trim().is_empty())
                .collect()
        }
        (None, None) => return Err(CliError::config("need --text, --input or --gold", json!({})).into()),
    };
    let out: Vec<Value> = texts
        .iter()
        .map(|text| {
            let sentences: Vec<Value> = split_sentences(text)
                .iter()
                .map(|tokens| serde_json::to_value(extract_sentence(tokens, &extractor, &classifier)))
                .collect::<Result<_, _>>()?;
            let entries = extract_raw_entries(text, &extractor, &classifier);
            Ok(json!({
                "text": text,
                "tokens": tokenize(text).len(),
                "sentences": sentences,
                "entries": entries,
            }))
        })
        .collect::<Result<_, serde_json::Error>>()?;
    emit(&out, a.out.as_deref())
}

fn require_store_dir(store_dir: Option<PathBuf>) -> Result<PathBuf> {
    Ok(store_dir.ok_or_else(|| CliError::config("missing --store-dir", json!({ "option": "store-dir" })))?)
}

fn open_store(store_dir: Option<PathBuf>) -> Result<Store> {
    let dir = require_store_dir(store_dir)?;
    Ok(Store::open(&dir).module("config_graph", path_ctx(&dir))?)
}

fn build_db(a: BuildDbArgs, cfg: &PipelineConfig, store_dir: Option<PathBuf>, tau: f64) -> Result<()> {
    let feeds = config::feeds(a.feeds, cfg)?;
    let dict_path = config::require(a.dictionary, &cfg.canonical_dictionary, "dictionary")?;
    let dict = load_dictionary(&dict_path)?;
    let gazetteer = config::optional(a.gazetteer, &cfg.gazetteer, "gazetteer")?
        .map(|p| load_gazetteer(Some(p), None, cfg))
        .transpose()?;
    let mut store = open_store(store_dir)?;
    let (records, totals) = load_records(&feeds, None)?;
    let resolver = Resolver::new(&dict, tau);
    let extractor = gazetteer.map(RuleExtractor::new);
    let extract_fn = extractor
        .as_ref()
        .map(|ex| move |r: &VulnerabilityRecord| extract_raw_entries(&r.description, ex, &NearestProductClassifier));
    let mut build = graph::build_batch(&records, &resolver, extract_fn);
    build.batch.dictionary = Some(dict.clone());
    let generation = store.put(build.batch).module("config_graph", json!({}))?;
    if let Some(path) = &a.report {
        emit(
            &json!({ "unresolved": build.unresolved, "failed": build.failed, "quarantined": totals.quarantined }),
            Some(path),
        )?;
    }
    emit(
        &json!({
            "generation": generation,
            "vulnerabilities": store.vulnerability_count(),
            "configurations": store.config_count(),
            "ucpe": store.ucpe_count(),
            "unresolved": build.unresolved.len(),
            "failed": build.failed.len(),
            "quarantined": totals.quarantined.len(),
        }),
        None,
    )
}

fn query(q: QueryCommand, store_dir: Option<PathBuf>, tau: f64) -> Result<()> {
    let store = open_store(store_dir)?;
    match q {
        QueryCommand::Cve { cve_id } => emit(&store.query_by_cve(&cve_id), None),
        QueryCommand::Product { vendor, product, version } => {
            emit(&store.query_by_product(&vendor, &product, version.as_deref(), tau), None)
        }
    }
}

fn system_graph(inventory: &Path, store: &Store, tau: f64) -> Result<graph::SysBuild> {
    let inv = Inventory::read(inventory).module("config_graph", path_ctx(inventory))?;
    let empty = CanonicalDictionary::default();
    let dict = store.dictionary().unwrap_or(&empty);
    Ok(graph::build_sys_graph(&inv, &Resolver::new(dict, tau)).module("config_graph", path_ctx(inventory))?)
}

fn run_filter(a: FilterArgs, cfg: &PipelineConfig, store_dir: Option<PathBuf>, tau: f64) -> Result<()> {
    let inventory = config::require(a.inventory, &cfg.inventory, "inventory")?;
    let store = open_store(store_dir)?;
    let sys = system_graph(&inventory, &store, tau)?;
    let vuls = store.vul_graphs();
    let opts = FilterOptions { traces: !a.no_traces };
    let (result, evaluated) = match &a.state {
        Some(path) => {
            let mut state = if path.exists() {
                FilterState::load(path).module("fp_filter", path_ctx(path))?
            } else {
                FilterState::default()
            };
            let evaluated = filter::incremental_add(&mut state, store.generation(), &sys.graph, &vuls, opts)
                .module("fp_filter", path_ctx(path))?;
            state.save(path).module("fp_filter", path_ctx(path))?;
            (state.result, evaluated)
        }
        None => {
            let evaluated = (vuls.len() * sys.graph.assets.len()) as u64;
            (filter::filter_with(&sys.graph, &vuls, opts), evaluated)
        }
    };
    if a.table {
        let text = result.to_table();
        return match &a.out {
            Some(path) => Ok(std::fs::write(path, text).map_err(|e| CliError::io(path, e))?),
            None => Ok(std::io::stdout().write_all(text.as_bytes())?),
        };
    }
    emit(
        &json!({
            "store_generation": store.generation(),
            "evaluated_pairs": evaluated,
            "applicable": result.applicable,
            "filtered_out": result.filtered_out,
            "traces": result.traces,
            "unresolved_components": sys.unresolved,
        }),
        a.out.as_deref(),
    )
}

fn run_eval(a: EvalArgs, cfg: &PipelineConfig, store_dir: Option<PathBuf>, tau: f64) -> Result<()> {
    if let Some(dir) = &a.generate {
        let seed = a.seed.or(cfg.seed).unwrap_or(0);
        let fixture = eval::synthetic::adversarial(seed, a.rounds);
        fixture.write(dir).map_err(|e| CliError::io(dir, e))?;
        return emit(
            &json!({
                "seed": seed,
                "vulnerabilities": fixture.feed["CVE_Items"].as_array().map_or(0, Vec::len),
                "assets": fixture.inventory.assets.len(),
                "dir": dir.display().to_string(),
            }),
            None,
        );
    }
    let inventory = config::require(a.inventory, &cfg.inventory, "inventory")?;
    let gt_path = a.ground_truth.or_else(|| cfg.ground_truth.clone()).ok_or_else(|| {
        CliError::new("eval_harness", "GroundTruthMissing", "missing --ground-truth", json!({}))
    })?;
    let ground_truth = GroundTruth::read(&gt_path).module("eval_harness", path_ctx(&gt_path))?;
    let strategies: Vec<Strategy> = if a.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        a.strategies
            .iter()
            .map(|s| {
                Strategy::from_name(s.trim()).ok_or_else(|| {
                    CliError::config(format!("unknown strategy `{s}`"), json!({ "option": "strategies" }))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let store = open_store(store_dir)?;
    let sys = system_graph(&inventory, &store, tau)?;
    let table = eval::run_comparison(&store, &sys.graph, &strategies, &ground_truth, tau)
        .module("eval_harness", path_ctx(&gt_path))?;
    if let Some(path) = &a.csv {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        table.write_csv(BufWriter::new(file)).module("eval_harness", path_ctx(path))?;
    }
    emit(&table, a.out.as_deref())
}
