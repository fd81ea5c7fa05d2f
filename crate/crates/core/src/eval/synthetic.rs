//! Seeded generator for the adversarial retrieval fixture.
//!
//! Vulnerabilities fall into four classes: plain version ranges, ranges that
//! only apply on one operating system, ranges below every installed version,
//! and decoys whose description names an installed product that the
//! configuration does not contain. Ground truth follows from the class of
//! each vulnerability and the inventory, not from graph evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::GroundTruth;
use crate::cpe::{compare_versions, Part};
use crate::graph::{Inventory, InventoryAsset, InventoryComponent};
use crate::inconsistency::{normalize_str, CanonicalDictionary};

struct Product {
    vendor: &'static str,
    product: &'static str,
    display: &'static str,
}

const APPS: &[Product] = &[
    Product { vendor: "google", product: "chrome", display: "Google Chrome" },
    Product { vendor: "mozilla", product: "firefox", display: "Mozilla Firefox" },
    Product { vendor: "videolan", product: "vlc_media_player", display: "VideoLAN VLC media player" },
    Product { vendor: "oracle", product: "mysql", display: "Oracle MySQL" },
    Product { vendor: "apache", product: "http_server", display: "Apache HTTP Server" },
];

const OSES: &[(Product, &str)] = &[
    (Product { vendor: "microsoft", product: "windows_10", display: "Microsoft Windows 10" }, "1909"),
    (Product { vendor: "canonical", product: "ubuntu_linux", display: "Canonical Ubuntu Linux" }, "22.04"),
    (Product { vendor: "apple", product: "macos", display: "Apple macOS" }, "14.0"),
];

/// (asset id, OS index, app indices)
const ASSETS: &[(&str, usize, &[usize])] = &[
    ("win-desktop", 0, &[0, 1, 2]),
    ("linux-server", 1, &[3, 4, 0]),
    ("mac-laptop", 2, &[1, 2, 0]),
];

const RELEASES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Range,
    OsBound(usize),
    BelowInstalled,
    Decoy,
}

#[derive(Debug, Clone)]
pub struct AdversarialFixture {
    /// An NVD JSON 1.1 feed document.
    pub feed: Value,
    pub dictionary: CanonicalDictionary,
    pub inventory: Inventory,
    pub ground_truth: GroundTruth,
}

impl AdversarialFixture {
    /// Writes `feed.json`, `dictionary.json`, `inventory.json` and
    /// `ground_truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json value") + "\n";
        std::fs::write(dir.join("feed.json"), pretty(&self.feed))?;
        std::fs::write(dir.join("dictionary.json"), self.dictionary.to_json() + "\n")?;
        std::fs::write(dir.join("inventory.json"), pretty(&serde_json::to_value(&self.inventory)?))?;
        std::fs::write(dir.join("ground_truth.json"), pretty(&serde_json::to_value(&self.ground_truth)?))?;
        Ok(())
    }
}

fn releases(rng: &mut ChaCha8Rng) -> Vec<String> {
    let major = rng.gen_range(1..40);
    (0..RELEASES)
        .map(|i| format!("{}.{}.{}", major + i / 4, i % 4, rng.gen_range(0..100)))
        .collect()
}

/// Generates the fixture. `rounds` random vulnerabilities are added to a
/// fixed core that gives every asset at least one applicable vulnerability
/// and one operating-system mismatch.
pub fn adversarial(seed: u64, rounds: usize) -> AdversarialFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let app_releases: Vec<Vec<String>> = APPS.iter().map(|_| releases(&mut rng)).collect();

    let mut dictionary = CanonicalDictionary::default();
    for (app, rel) in APPS.iter().zip(&app_releases) {
        add_product(&mut dictionary, app, rel.clone(), Part::Application);
    }
    for (os, version) in OSES {
        add_product(&mut dictionary, os, vec![version.to_string()], Part::OperatingSystem);
    }
    for app in APPS {
        let helper = Product {
            vendor: "acme",
            product: app.product,
            display: app.display,
        };
        add_product(&mut dictionary, &helper, vec!["1.0".into()], Part::Application);
    }

    // Installed release index per (asset, app); never among the lowest three.
    let mut installed: Vec<BTreeMap<usize, usize>> = Vec::new();
    let mut inventory = Inventory::default();
    for (asset_id, os, apps) in ASSETS {
        let (os_product, os_version) = &OSES[*os];
        let mut components = vec![component(os_product, os_version, Part::OperatingSystem)];
        let mut versions = BTreeMap::new();
        for &a in *apps {
            let idx = rng.gen_range(3..RELEASES - 1);
            versions.insert(a, idx);
            components.push(component(&APPS[a], &app_releases[a][idx], Part::Application));
        }
        installed.push(versions);
        inventory.assets.push(InventoryAsset {
            asset_id: asset_id.to_string(),
            components,
            relations: Vec::new(),
        });
    }

    let mut plan: Vec<(Class, usize, usize)> = Vec::new();
    for (asset, (_, os, apps)) in ASSETS.iter().enumerate() {
        let app = apps[0];
        plan.push((Class::Range, app, RELEASES - 1));
        plan.push((Class::OsBound((os + 1) % OSES.len()), app, RELEASES - 1));
        plan.push((Class::OsBound(*os), app, installed[asset][&app] + 1));
    }
    for _ in 0..rounds {
        let app = rng.gen_range(0..APPS.len());
        let class = match rng.gen_range(0..4) {
            0 => Class::Range,
            1 => Class::OsBound(rng.gen_range(0..OSES.len())),
            2 => Class::BelowInstalled,
            _ => Class::Decoy,
        };
        let bound = match class {
            Class::BelowInstalled => 1,
            _ => rng.gen_range(1..RELEASES),
        };
        plan.push((class, app, bound));
    }
    plan.shuffle(&mut rng);

    let mut items = Vec::new();
    let mut truth: BTreeMap<String, BTreeSet<String>> =
        ASSETS.iter().map(|(id, _, _)| (id.to_string(), BTreeSet::new())).collect();
    for (i, &(class, app, bound)) in plan.iter().enumerate() {
        let cve_id = format!("CVE-2030-{:05}", 10000 + i);
        let product = &APPS[app];
        let upper = &app_releases[app][bound];
        let (description, nodes) = match class {
            Class::Range | Class::BelowInstalled => (
                format!("Heap overflow in {} before {upper} allows remote attackers to execute code.", product.display),
                json!([range_node(product, upper)]),
            ),
            Class::OsBound(os) => (
                format!(
                    "{} before {upper} on {} allows local users to gain privileges.",
                    product.display, OSES[os].0.display
                ),
                json!([{
                    "operator": "AND",
                    "children": [range_node(product, upper), {
                        "operator": "OR",
                        "children": [],
                        "cpe_match": [{
                            "vulnerable": false,
                            "cpe23Uri": format!("cpe:2.3:o:{}:{}:*:*:*:*:*:*:*:*", OSES[os].0.vendor, OSES[os].0.product)
                        }]
                    }],
                    "cpe_match": []
                }]),
            ),
            Class::Decoy => (
                format!(
                    "The Acme helper extension for {} 1.0 exposes session tokens.",
                    product.display
                ),
                json!([{
                    "operator": "OR",
                    "children": [],
                    "cpe_match": [{
                        "vulnerable": true,
                        "cpe23Uri": format!("cpe:2.3:a:acme:{}:1.0:*:*:*:*:*:*:*", product.product)
                    }]
                }]),
            ),
        };
        for (asset, (asset_id, os, _)) in ASSETS.iter().enumerate() {
            let applies = match class {
                Class::Decoy => false,
                Class::Range | Class::BelowInstalled => below(&installed[asset], app, &app_releases, upper),
                Class::OsBound(target) => target == *os && below(&installed[asset], app, &app_releases, upper),
            };
            if applies {
                truth.get_mut(*asset_id).expect("asset").insert(cve_id.clone());
            }
        }
        items.push(json!({
            "cve": {
                "CVE_data_meta": {"ID": cve_id},
                "description": {"description_data": [{"lang": "en", "value": description}]}
            },
            "configurations": {"CVE_data_version": "4.0", "nodes": nodes},
            "impact": {},
            "publishedDate": "2030-01-01T00:00Z",
            "lastModifiedDate": "2030-01-02T00:00Z"
        }));
    }

    AdversarialFixture {
        feed: json!({
            "CVE_data_type": "CVE",
            "CVE_data_format": "MITRE",
            "CVE_data_version": "4.0",
            "CVE_data_numberOfCVEs": items.len().to_string(),
            "CVE_Items": items
        }),
        dictionary,
        inventory,
        ground_truth: GroundTruth { assets: truth },
    }
}

fn below(installed: &BTreeMap<usize, usize>, app: usize, releases: &[Vec<String>], upper: &str) -> bool {
    installed
        .get(&app)
        .is_some_and(|&idx| compare_versions(&releases[app][idx], upper) == Ordering::Less)
}

fn range_node(product: &Product, upper: &str) -> Value {
    json!({
        "operator": "OR",
        "children": [],
        "cpe_match": [{
            "vulnerable": true,
            "cpe23Uri": format!("cpe:2.3:a:{}:{}:*:*:*:*:*:*:*:*", product.vendor, product.product),
            "versionEndExcluding": upper
        }]
    })
}

fn component(p: &Product, version: &str, part: Part) -> InventoryComponent {
    InventoryComponent {
        vendor: Some(p.vendor.to_string()),
        product: p.product.to_string(),
        version: Some(version.to_string()),
        part: Some(part),
    }
}

fn add_product(dict: &mut CanonicalDictionary, p: &Product, versions: Vec<String>, part: Part) {
    let vendor = normalize_str(p.vendor);
    let product = normalize_str(p.product);
    dict.merge_versions(&vendor, &product, versions);
    dict.parts.entry(vendor).or_default().insert(product, part);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_fixture() {
        let a = adversarial(7, 30);
        let b = adversarial(7, 30);
        assert_eq!(a.feed, b.feed);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_ne!(adversarial(8, 30).feed, a.feed);
    }

    #[test]
    fn every_asset_has_ground_truth() {
        let f = adversarial(3, 0);
        assert_eq!(f.ground_truth.assets.len(), ASSETS.len());
        assert!(f.ground_truth.assets.values().all(|s| !s.is_empty()));
        assert!(f.dictionary.check_invariants().is_ok());
    }
}
