//! Cross-module properties checked against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cpegraph::cpe::{format_cpe, parse_cpe, AttrValue, CpeName, Part, UcpeEntry, VersionConstraint};
use cpegraph::eval::score;
use cpegraph::feed::{
    compute_corpus_stats, ingest_nvd_feed, CatalogEntry, CatalogSource, ConfigNodeRaw, CpeMatchRaw, DictionaryIngest,
    Operator, RecordStatus, VulnerabilityRecord,
};
use cpegraph::filter::{filter_with, FilterOptions};
use cpegraph::graph::{build_batch, raw_operator_profile, Asset, ConfigGraph, ConfigNode, Leaf, SysGraph, VulGraph};
use cpegraph::inconsistency::{
    cluster_inconsistencies, detect_acronym, detect_format_variation, detect_product_as_vendor,
    detect_shared_product_names, detect_spelling_error, detect_substring_match, normalize_str, shared_product_ratio,
    CanonicalDictionary, Catalog, Heuristic, HeuristicConfig, SprVariant,
};
use cpegraph::postprocess::Resolver;
use proptest::prelude::*;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

const VENDORS: &[&str] = &[
    "Microsoft",
    "microsoft",
    "Microsoft Corp",
    "microsoft-corp",
    "Microsfot",
    "micro soft",
    "IBM",
    "International Business Machines",
    "Apache",
    "Apache Software Foundation",
    "Oracle",
    "Orcale",
    "Sun",
    "Sun Microsystems",
    "Windows",
    "Heimdal",
    "Heimdal Project",
    "Google",
];

const PRODUCTS: &[&str] = &[
    "windows", "office", "chrome", "java", "mysql", "httpd", "tomcat", "heimdal", "sun", "ibm", "db2", "Windows_Server",
];

fn catalog_strategy() -> impl Strategy<Value = Vec<CatalogEntry>> {
    prop::collection::btree_map(
        prop::sample::select(VENDORS),
        prop::collection::btree_set(prop::sample::select(PRODUCTS), 1..5),
        1..10,
    )
    .prop_map(|m| {
        m.into_iter()
            .flat_map(|(v, ps)| {
                ps.into_iter().map(move |p| CatalogEntry {
                    vendor: v.to_string(),
                    product: p.to_string(),
                    versions: vec!["1.0".to_string()],
                    source: CatalogSource::ExternalCatalog,
                    part: None,
                })
            })
            .collect()
    })
}

fn config_strategy() -> impl Strategy<Value = HeuristicConfig> {
    (0.5f64..=1.0, 1usize..6, 0.1f64..=1.0, 0.1f64..=1.0, any::<bool>()).prop_map(|(tau, m, p, high, jac)| {
        HeuristicConfig {
            tau_spelling: tau,
            min_len_m: m,
            theta_p: p,
            theta_high: high,
            spr_gate: if jac { SprVariant::Jaccard } else { SprVariant::MinDenominator },
        }
    })
}

/// Connected components of `edges` over `n` nodes, by repeated relabeling.
fn components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for &(a, b) in edges {
            let m = label[a].min(label[b]);
            for x in [a, b] {
                if label[x] != m {
                    label[x] = m;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let touched: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in touched {
        out.entry(label[i]).or_default().insert(i);
    }
    out.into_values().collect()
}

/// All-pairs vendor grouping using only the public detectors.
fn brute_force_vendor_groups(catalog: &Catalog, cfg: &HeuristicConfig) -> BTreeSet<(Heuristic, BTreeSet<String>)> {
    let names: Vec<&str> = catalog.vendors().collect();
    let mut edges: BTreeMap<Heuristic, Vec<(usize, usize)>> = BTreeMap::new();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            let (x, y) = (names[a], names[b]);
            let same_norm = normalize_str(x) == normalize_str(y);
            let checks = [
                (Heuristic::FormatVariation, detect_format_variation(x, y, catalog, cfg).unwrap()),
                (Heuristic::SpellingError, detect_spelling_error(x, y, catalog, cfg).unwrap()),
                (Heuristic::Acronym, detect_acronym(x, y, catalog, cfg).unwrap()),
                (Heuristic::SubstringMatch, detect_substring_match(x, y, catalog, cfg).unwrap()),
                (
                    Heuristic::SharedProductNames,
                    !same_norm && detect_shared_product_names(x, y, catalog, cfg).unwrap(),
                ),
            ];
            for (h, hit) in checks {
                if hit {
                    edges.entry(h).or_default().push((a, b));
                }
            }
        }
        for (owner, _) in detect_product_as_vendor(names[a], catalog) {
            for (b, other) in names.iter().enumerate() {
                if normalize_str(other) == owner {
                    edges.entry(Heuristic::ProductAsVendor).or_default().push((a, b));
                }
            }
        }
    }
    edges
        .into_iter()
        .flat_map(|(h, e)| {
            components(names.len(), &e)
                .into_iter()
                .map(|c| (h, c.into_iter().map(|i| names[i].to_string()).collect()))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn random_attr() -> impl Strategy<Value = AttrValue> {
    prop_oneof![
        Just(AttrValue::Any),
        Just(AttrValue::Na),
        "[a-z0-9._~!@#$%^&()+=:;,/\\\\*?-]{1,10}".prop_map(|s| AttrValue::literal(&s).unwrap()),
    ]
}

fn leaf(product: &str, version: &str, vulnerable: bool) -> ConfigNode {
    let u = UcpeEntry::new(Part::Application, "acme", product, version);
    ConfigNode::Leaf(Leaf {
        ucpe_ids: vec![u.id.clone()],
        versions: vec![version.to_string()],
        vendor: "acme".into(),
        product: product.into(),
        part: Part::Application,
        constraint: VersionConstraint::exact(version),
        vulnerable,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn jaccard_never_exceeds_min_denominator(entries in catalog_strategy()) {
        let catalog = Catalog::new(&entries);
        let names: Vec<&str> = catalog.vendors().collect();
        for a in &names {
            for b in &names {
                let j = shared_product_ratio(a, b, &catalog, SprVariant::Jaccard).unwrap();
                let m = shared_product_ratio(a, b, &catalog, SprVariant::MinDenominator).unwrap();
                prop_assert!((0.0..=1.0).contains(&j) && (0.0..=1.0).contains(&m));
                prop_assert!(j <= m + 1e-12, "{a}/{b}: {j} > {m}");
            }
        }
    }

    #[test]
    fn detectors_are_symmetric(entries in catalog_strategy(), cfg in config_strategy()) {
        let catalog = Catalog::new(&entries);
        let names: Vec<&str> = catalog.vendors().collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                prop_assert_eq!(
                    detect_format_variation(a, b, &catalog, &cfg).unwrap(),
                    detect_format_variation(b, a, &catalog, &cfg).unwrap()
                );
                prop_assert_eq!(
                    detect_spelling_error(a, b, &catalog, &cfg).unwrap(),
                    detect_spelling_error(b, a, &catalog, &cfg).unwrap()
                );
                prop_assert_eq!(
                    detect_substring_match(a, b, &catalog, &cfg).unwrap(),
                    detect_substring_match(b, a, &catalog, &cfg).unwrap()
                );
                prop_assert_eq!(
                    detect_acronym(a, b, &catalog, &cfg).unwrap(),
                    detect_acronym(b, a, &catalog, &cfg).unwrap()
                );
                prop_assert_eq!(
                    detect_shared_product_names(a, b, &catalog, &cfg).unwrap(),
                    detect_shared_product_names(b, a, &catalog, &cfg).unwrap()
                );
            }
        }
    }

    #[test]
    fn clustering_matches_all_pairs_oracle(entries in catalog_strategy(), cfg in config_strategy()) {
        let catalog = Catalog::new(&entries);
        let got: BTreeSet<(Heuristic, BTreeSet<String>)> = cluster_inconsistencies(&catalog, &cfg)
            .unwrap()
            .into_iter()
            .filter(|g| g.vendor_scope.is_none())
            .map(|g| {
                assert!(g.members.len() >= 2 && g.members.contains(&g.canonical));
                (g.heuristic, g.members)
            })
            .collect();
        prop_assert_eq!(got, brute_force_vendor_groups(&catalog, &cfg));
    }

    #[test]
    fn standardized_names_are_fixed_points(name in "[A-Za-z _.-]{0,20}", pick in 0usize..16) {
        let dict = CanonicalDictionary::load(&fixture("alias/dictionary.json")).unwrap();
        let aliases: Vec<&String> = dict.vendor_aliases.keys().collect();
        let raw = if pick < aliases.len() { aliases[pick].clone() } else { name };
        if let Some(c) = dict.standardize_vendor(&raw, 0.8) {
            prop_assert_eq!(dict.standardize_vendor(&c, 0.8), Some(c.clone()));
            prop_assert_eq!(normalize_str(&c), c.clone());
            for p in dict.products.get(&c).into_iter().flatten() {
                prop_assert_eq!(dict.standardize_product(&c, p, 0.8), Some(p.clone()));
            }
        }
    }

    #[test]
    fn cpe_format_parse_round_trip(
        part in prop::sample::select(vec![Part::Application, Part::OperatingSystem, Part::Hardware]),
        attrs in prop::collection::vec(random_attr(), 10),
    ) {
        let name = CpeName {
            part,
            vendor: attrs[0].clone(),
            product: attrs[1].clone(),
            version: attrs[2].clone(),
            update: attrs[3].clone(),
            edition: attrs[4].clone(),
            language: attrs[5].clone(),
            sw_edition: attrs[6].clone(),
            target_sw: attrs[7].clone(),
            target_hw: attrs[8].clone(),
            other: attrs[9].clone(),
        };
        let text = format_cpe(&name);
        let parsed = parse_cpe(&text).unwrap();
        prop_assert_eq!(format_cpe(&parsed), text.clone());
        // Upper-casing every attribute canonicalizes back to the same string.
        let upper = format!("{}{}", &text[..10], text[10..].to_uppercase());
        prop_assert_eq!(format_cpe(&parse_cpe(&upper).unwrap()), text);
    }

    #[test]
    fn ucpe_id_equality_iff_fields_equal(
        a in ("[ab]", "[ab]", "[12]", 0usize..3),
        b in ("[ab]", "[ab]", "[12]", 0usize..3),
    ) {
        let parts = [Part::Application, Part::OperatingSystem, Part::Hardware];
        let x = UcpeEntry::new(parts[a.3], &a.0, &a.1, &a.2);
        let y = UcpeEntry::new(parts[b.3], &b.0, &b.1, &b.2);
        prop_assert_eq!(x.id == y.id, a == b);
    }

    #[test]
    fn pair_counts_are_cartesian(flags in prop::collection::vec((any::<bool>(), 0usize..3), 1..8)) {
        let parts = [Part::Application, Part::OperatingSystem, Part::Hardware];
        let matches: Vec<CpeMatchRaw> = flags
            .iter()
            .enumerate()
            .map(|(i, &(vulnerable, p))| CpeMatchRaw {
                cpe: parse_cpe(&format!("cpe:2.3:{}:v{i}:p{i}:1.0:*:*:*:*:*:*:*", parts[p])).unwrap(),
                constraint: VersionConstraint::Any,
                vulnerable,
            })
            .collect();
        let record = VulnerabilityRecord {
            cve_id: "CVE-2024-0001".into(),
            description: String::new(),
            status: RecordStatus::Active,
            cvss: None,
            raw_configurations: vec![ConfigNodeRaw { operator: Operator::And, matches, children: Vec::new() }],
            last_modified: cpegraph::feed::parse_timestamp("2024-01-01T00:00Z").unwrap(),
        };
        let stats = compute_corpus_stats(&[record], &DictionaryIngest::default());
        let v = flags.iter().filter(|f| f.0).count() as u64;
        let c = flags.len() as u64 - v;
        prop_assert_eq!(stats.runningon_pair_counts.values().sum::<u64>(), v * c);
        prop_assert_eq!(stats.runningon_pairs_total, v * c);
    }

    #[test]
    fn filter_is_order_independent(
        assets in prop::collection::vec(prop::collection::btree_set(0usize..4, 0..4), 1..4),
        configs in prop::collection::vec((0usize..4, 0usize..4, any::<bool>()), 1..6),
        rotate in 0usize..6,
    ) {
        let sys = SysGraph {
            assets: assets
                .iter()
                .enumerate()
                .map(|(i, ps)| {
                    Asset::new(
                        format!("asset-{i}"),
                        ps.iter().map(|p| UcpeEntry::new(Part::Application, "acme", &format!("p{p}"), "1.0")).collect(),
                    )
                })
                .collect(),
            ..SysGraph::default()
        };
        let vuls: Vec<VulGraph> = configs
            .iter()
            .enumerate()
            .map(|(i, &(a, b, and))| {
                let cve = format!("CVE-2024-{:04}", i + 1);
                let root = ConfigNode::Group {
                    operator: if and { Operator::And } else { Operator::Or },
                    children: vec![leaf(&format!("p{a}"), "1.0", true), leaf(&format!("p{b}"), "1.0", !and)],
                };
                VulGraph { cve_id: cve.clone(), configs: vec![ConfigGraph::new(&cve, 0, root)] }
            })
            .collect();
        let opts = FilterOptions { traces: true };
        let base = filter_with(&sys, &vuls, opts);
        let mut shuffled_vuls = vuls.clone();
        shuffled_vuls.rotate_left(rotate % vuls.len());
        shuffled_vuls.reverse();
        let mut shuffled_sys = sys.clone();
        shuffled_sys.assets.reverse();
        let other = filter_with(&shuffled_sys, &shuffled_vuls, opts);
        prop_assert_eq!(serde_json::to_value(&base).unwrap(), serde_json::to_value(&other).unwrap());
        // Every candidate pair lands in exactly one of the two outcomes.
        for asset in &sys.assets {
            let applicable = base.applicable_for(&asset.asset_id);
            let filtered: BTreeSet<&str> = base
                .filtered_out
                .iter()
                .filter(|f| f.asset_id == asset.asset_id)
                .map(|f| f.cve_id.as_str())
                .collect();
            prop_assert!(applicable.is_disjoint(&filtered));
            prop_assert_eq!(applicable.len() + filtered.len(), vuls.len());
        }
    }

    #[test]
    fn score_is_invariant_under_relabeling(
        retrieved in prop::collection::btree_set(0u32..30, 0..20),
        truth in prop::collection::btree_set(0u32..30, 0..20),
        shift in 1u32..1000,
    ) {
        let label = |k: u32, s: u32| format!("CVE-2024-{:05}", (k * 7919 + s) % 100_000);
        let relabel = |set: &BTreeSet<u32>, s: u32| set.iter().map(|&k| label(k, s)).collect::<BTreeSet<String>>();
        let a = score(&relabel(&retrieved, 0), &relabel(&truth, 0));
        let b = score(&relabel(&retrieved, shift), &relabel(&truth, shift));
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.tp + a.fn_, truth.len());
        prop_assert_eq!(a.tp + a.fp, retrieved.len());
    }
}

#[test]
fn ingestion_is_idempotent_and_drops_rejected() {
    let path = fixture("corpus/feed.jsonl");
    let first = ingest_nvd_feed(&path, None).unwrap();
    let second = ingest_nvd_feed(&path, None).unwrap();
    assert_eq!(first.records, second.records);
    assert!(first.records.iter().all(|r| r.status == RecordStatus::Active));
    assert!(first.records.iter().all(|r| !r.description.starts_with("** REJECT **")));
}

#[test]
fn vul_graphs_keep_raw_operator_structure() {
    let mut compared = 0;
    for (feed, dict) in [
        ("corpus/feed.jsonl", None),
        ("alias/feed.jsonl", Some("alias/dictionary.json")),
        ("adversarial/feed.json", Some("adversarial/dictionary.json")),
    ] {
        let dict = dict
            .map(|d| CanonicalDictionary::load(&fixture(d)).unwrap())
            .unwrap_or_default();
        let records = ingest_nvd_feed(&fixture(feed), None).unwrap().records;
        let build = build_batch(&records, &Resolver::new(&dict, 0.8), None::<fn(&VulnerabilityRecord) -> Vec<_>>);
        let configs: BTreeMap<&str, &ConfigGraph> =
            build.batch.configurations.iter().map(|c| (c.config_id.as_str(), c)).collect();
        for v in &build.batch.vulnerabilities {
            assert_eq!(v.config_ids.len(), v.record.raw_configurations.len());
            for (raw, id) in v.record.raw_configurations.iter().zip(&v.config_ids) {
                assert_eq!(configs[id.as_str()].operator_profile(), raw_operator_profile(raw), "{}", v.record.cve_id);
                compared += 1;
            }
        }
    }
    assert!(compared > 100, "{compared}");
}
