//! Product, modifier and version extraction from vulnerability descriptions.
//!
//! Labels follow a BIO scheme with product names split by part
//! (`B-PN-APP`, `I-PN-OS`, ...), modifiers (`B-MOD`) and versions (`B-V`).
//! [`RuleExtractor`] is a deterministic gazetteer-and-lexicon labeller; any
//! other labeller can be used through [`EntityExtractor`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::Range;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpe::Part;
use crate::inconsistency::{normalize_str, CanonicalDictionary};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExtractionError {
    pub fn code(&self) -> &'static str {
        match self {
            ExtractionError::Format { .. } => "InvalidInput",
            ExtractionError::Io(_) => "StorageIo",
        }
    }
}

/// A token with its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+(?:[._\-+][\p{L}\p{N}]+)*|\S").unwrap());
static VERSION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^v?\d[a-z0-9]*(?:[._\-+][a-z0-9]+)*$").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:19|20)\d{2}$").unwrap());
static VERSION_SUFFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(?:sp|rc|u|update|r)\d+$").unwrap());

/// Splits text into words, version/date tokens and single punctuation marks.
/// Dotted, dashed and underscored runs (`8.0.552.237`, `2017-02-12`,
/// `ios_xe`) stay whole; only whitespace is discarded.
pub fn tokenize(text: &str) -> Vec<Token> {
    TOKEN
        .find_iter(text)
        .map(|m| Token {
            text: m.as_str().to_string(),
            start: m.start(),
            end: m.end(),
        })
        .collect()
}

pub fn is_version_token(token: &str) -> bool {
    VERSION.is_match(token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    BeginProduct(Part),
    InsideProduct(Part),
    BeginMod,
    InsideMod,
    BeginVersion,
    InsideVersion,
    Outside,
}

fn part_tag(part: Part) -> &'static str {
    match part {
        Part::Application => "APP",
        Part::OperatingSystem => "OS",
        Part::Hardware => "HW",
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::BeginProduct(p) => write!(f, "B-PN-{}", part_tag(*p)),
            Label::InsideProduct(p) => write!(f, "I-PN-{}", part_tag(*p)),
            Label::BeginMod => f.write_str("B-MOD"),
            Label::InsideMod => f.write_str("I-MOD"),
            Label::BeginVersion => f.write_str("B-V"),
            Label::InsideVersion => f.write_str("I-V"),
            Label::Outside => f.write_str("O"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let part = |tag: &str| match tag {
            "APP" => Ok(Part::Application),
            "OS" => Ok(Part::OperatingSystem),
            "HW" => Ok(Part::Hardware),
            other => Err(format!("unknown product tag `{other}`")),
        };
        Ok(match s {
            "B-MOD" => Label::BeginMod,
            "I-MOD" => Label::InsideMod,
            "B-V" => Label::BeginVersion,
            "I-V" => Label::InsideVersion,
            "O" => Label::Outside,
            _ => {
                if let Some(tag) = s.strip_prefix("B-PN-") {
                    Label::BeginProduct(part(tag)?)
                } else if let Some(tag) = s.strip_prefix("I-PN-") {
                    Label::InsideProduct(part(tag)?)
                } else {
                    return Err(format!("unknown label `{s}`"));
                }
            }
        })
    }
}

impl Label {
    fn inside_of(self) -> Option<Label> {
        match self {
            Label::InsideProduct(p) => Some(Label::BeginProduct(p)),
            Label::InsideMod => Some(Label::BeginMod),
            Label::InsideVersion => Some(Label::BeginVersion),
            _ => None,
        }
    }

    fn continues(self, previous: Label) -> bool {
        match self.inside_of() {
            Some(begin) => previous == begin || previous == self,
            None => true,
        }
    }
}

/// True when every `I-x` follows a `B-x` or `I-x` of the same type.
pub fn is_valid_bio(labels: &[Label]) -> bool {
    let mut previous = Label::Outside;
    for &label in labels {
        if !label.continues(previous) {
            return false;
        }
        previous = label;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Product,
    Modifier,
    Version,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub kind: EntityKind,
    pub text: String,
    /// Token index range within the sentence.
    pub span: Range<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<Part>,
}

/// Groups labelled tokens into entities.
pub fn entities_from_labels(tokens: &[String], labels: &[Label]) -> Vec<ExtractedEntity> {
    let mut out: Vec<ExtractedEntity> = Vec::new();
    let mut open: Option<(EntityKind, Option<Part>, usize)> = None;
    let close = |open: &mut Option<(EntityKind, Option<Part>, usize)>, end: usize, out: &mut Vec<ExtractedEntity>| {
        if let Some((kind, part, start)) = open.take() {
            out.push(ExtractedEntity {
                kind,
                text: tokens[start..end].join(" "),
                span: start..end,
                part,
            });
        }
    };
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::BeginProduct(p) => {
                close(&mut open, i, &mut out);
                open = Some((EntityKind::Product, Some(*p), i));
            }
            Label::BeginMod => {
                close(&mut open, i, &mut out);
                open = Some((EntityKind::Modifier, None, i));
            }
            Label::BeginVersion => {
                close(&mut open, i, &mut out);
                open = Some((EntityKind::Version, None, i));
            }
            Label::Outside => close(&mut open, i, &mut out),
            Label::InsideProduct(_) | Label::InsideMod | Label::InsideVersion => {
                if open.is_none() {
                    // Lenient reading of an ill-formed sequence: start a new entity.
                    let kind = match label {
                        Label::InsideProduct(_) => EntityKind::Product,
                        Label::InsideMod => EntityKind::Modifier,
                        _ => EntityKind::Version,
                    };
                    let part = match label {
                        Label::InsideProduct(p) => Some(*p),
                        _ => None,
                    };
                    open = Some((kind, part, i));
                }
            }
        }
    }
    close(&mut open, labels.len(), &mut out);
    out
}

/// One gazetteer product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub vendor: String,
    pub product: String,
    pub part: Part,
    #[serde(default)]
    pub versions: Vec<String>,
}

/// Vendor and product names (normalized) used for product-name lookup.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    keys: HashMap<String, usize>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new(entries: impl IntoIterator<Item = GazetteerEntry>) -> Self {
        let mut g = Gazetteer::default();
        for e in entries {
            g.insert(e);
        }
        g
    }

    /// Adds an entry. Product-only keys keep their first owner.
    pub fn insert(&mut self, entry: GazetteerEntry) {
        let entry = GazetteerEntry {
            vendor: normalize_str(&entry.vendor),
            product: normalize_str(&entry.product),
            versions: entry.versions.iter().map(|v| v.to_ascii_lowercase()).collect(),
            part: entry.part,
        };
        if entry.product.is_empty() {
            return;
        }
        let index = self.entries.len();
        let full = if entry.vendor.is_empty() || entry.product.starts_with(&format!("{} ", entry.vendor)) {
            entry.product.clone()
        } else {
            format!("{} {}", entry.vendor, entry.product)
        };
        for key in [full, entry.product.clone()] {
            self.max_tokens = self.max_tokens.max(key.split(' ').count());
            self.keys.entry(key).or_insert(index);
        }
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn lookup(&self, normalized: &str) -> Option<&GazetteerEntry> {
        self.keys.get(normalized).map(|&i| &self.entries[i])
    }

    /// Reads JSON-lines of [`GazetteerEntry`].
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, ExtractionError> {
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| ExtractionError::Format {
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Gazetteer::new(entries))
    }

    /// One entry per canonical product that has a known part.
    pub fn from_dictionary(dict: &CanonicalDictionary) -> Self {
        let mut entries = Vec::new();
        for (vendor, products) in &dict.products {
            for product in products {
                if let Some(part) = dict.part_of(vendor, product) {
                    entries.push(GazetteerEntry {
                        vendor: vendor.clone(),
                        product: product.clone(),
                        part,
                        versions: dict.versions_of(vendor, product).to_vec(),
                    });
                }
            }
        }
        Gazetteer::new(entries)
    }
}

/// Anything that assigns BIO labels to a token sequence.
pub trait EntityExtractor {
    fn label(&self, tokens: &[String]) -> Vec<Label>;
}

/// Anything that decides which candidate pairs are real relations.
pub trait RelationClassifier {
    fn classify(&self, tokens: &[String], candidates: Vec<RelationPair>) -> Vec<RelationPair>;
}

const PRE_MODIFIERS: &[&[&str]] = &[
    &["not", "affected", "before"],
    &["up", "to", "and", "including"],
    &["prior", "to"],
    &["earlier", "than"],
    &["later", "than"],
    &["lower", "than"],
    &["fixed", "in"],
    &["starting", "with"],
    &["up", "to"],
    &["before"],
    &["through"],
    &["thru"],
    &["after"],
    &["since"],
    &["from"],
    &["between"],
    &["below"],
];

const POST_MODIFIERS: &[&[&str]] = &[
    &["and", "earlier"],
    &["or", "earlier"],
    &["and", "prior"],
    &["and", "before"],
    &["and", "below"],
    &["and", "later"],
    &["or", "later"],
    &["and", "above"],
    &["and", "newer"],
    &["or", "newer"],
];

const VERSION_WORDS: &[&str] = &["version", "versions", "ver"];

/// Deterministic gazetteer and lexicon labeller.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor {
    pub gazetteer: Gazetteer,
}

impl RuleExtractor {
    pub fn new(gazetteer: Gazetteer) -> Self {
        RuleExtractor { gazetteer }
    }

    /// Gazetteer matches, chosen longest first; among equally long
    /// overlapping matches the earlier-inserted entry wins, then the leftmost.
    fn product_spans(&self, tokens: &[String], lower: &[String]) -> Vec<(Range<usize>, usize)> {
        let wordish = |t: &str| t.chars().any(char::is_alphanumeric);
        let mut found: Vec<(Range<usize>, usize)> = Vec::new();
        for start in 0..tokens.len() {
            let longest = self.gazetteer.max_tokens.min(tokens.len() - start);
            for len in 1..=longest {
                if !wordish(&tokens[start + len - 1]) {
                    break;
                }
                let key = normalize_str(&tokens[start..start + len].join(" "));
                if let Some(&index) = self.gazetteer.keys.get(&key) {
                    found.push((start..start + len, index));
                }
            }
        }
        found.sort_by_key(|(span, index)| (std::cmp::Reverse(span.len()), *index, span.start));
        let mut used = vec![false; tokens.len()];
        let mut chosen = Vec::new();
        for (span, index) in found {
            if span.clone().any(|i| used[i]) {
                continue;
            }
            for i in span.clone() {
                used[i] = true;
            }
            chosen.push((span, index));
        }
        chosen.sort_by_key(|(span, _)| span.start);

        let mut out = Vec::with_capacity(chosen.len());
        for (mut span, index) in chosen {
            // A trailing year followed by a service-pack token is a version.
            if span.len() > 1
                && YEAR.is_match(&tokens[span.end - 1])
                && lower.get(span.end).is_some_and(|t| VERSION_SUFFIX.is_match(t))
            {
                span.end -= 1;
                used[span.end] = false;
            }
            if lower.get(span.end).is_some_and(|t| t == "edition") && !used[span.end] {
                used[span.end] = true;
                span.end += 1;
            }
            // Platforms introduced by "for" are context, not products.
            if span.start > 0 && lower[span.start - 1] == "for" {
                continue;
            }
            out.push((span, index));
        }
        out
    }
}

fn match_phrase(lower: &[String], at: usize, lexicon: &[&[&str]]) -> Option<usize> {
    lexicon
        .iter()
        .filter(|phrase| {
            at + phrase.len() <= lower.len() && phrase.iter().zip(&lower[at..]).all(|(p, t)| *p == t.as_str())
        })
        .map(|phrase| phrase.len())
        .max()
}

impl EntityExtractor for RuleExtractor {
    fn label(&self, tokens: &[String]) -> Vec<Label> {
        let n = tokens.len();
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut labels = vec![Label::Outside; n];
        let mut taken = vec![false; n];

        let products = self.product_spans(tokens, &lower);
        let mut known_versions: Vec<Option<usize>> = vec![None; n];
        for (k, (span, index)) in products.iter().enumerate() {
            let part = self.gazetteer.entries[*index].part;
            for i in span.clone() {
                labels[i] = if i == span.start {
                    Label::BeginProduct(part)
                } else {
                    Label::InsideProduct(part)
                };
                taken[i] = true;
            }
            let until = products.get(k + 1).map_or(n, |(next, _)| next.start);
            for slot in &mut known_versions[span.end..until] {
                *slot = Some(*index);
            }
        }

        // Versions.
        let mut is_version = vec![false; n];
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let known = known_versions[i].is_some_and(|e| self.gazetteer.entries[e].versions.contains(&lower[i]));
            if is_version_token(&tokens[i]) || known {
                is_version[i] = true;
            }
        }
        for i in 0..n {
            if !is_version[i] {
                continue;
            }
            let continues = i > 0 && is_version[i - 1] && VERSION_SUFFIX.is_match(&lower[i]);
            labels[i] = if continues {
                Label::InsideVersion
            } else {
                Label::BeginVersion
            };
            taken[i] = true;
        }
        // Service-pack tokens that are not version-shaped still extend a version.
        for i in 1..n {
            if !taken[i] && is_version[i - 1] && VERSION_SUFFIX.is_match(&lower[i]) {
                labels[i] = Label::InsideVersion;
                taken[i] = true;
                is_version[i] = true;
            }
        }

        // Modifiers: pre-positioned phrases must reach a version, possibly
        // through further modifiers; post-positioned ones must follow one.
        let mut i = 0;
        while i < n {
            if taken[i] {
                i += 1;
                continue;
            }
            if i > 0 && is_version[i - 1] {
                if let Some(len) = match_phrase(&lower, i, POST_MODIFIERS) {
                    if (i..i + len).all(|k| !taken[k]) {
                        mark_mod(&mut labels, &mut taken, i..i + len, false);
                        i += len;
                        continue;
                    }
                }
                if lower[i] == "to" && is_version.get(i + 1).copied().unwrap_or(false) {
                    mark_mod(&mut labels, &mut taken, i..i + 1, false);
                    i += 1;
                    continue;
                }
            }
            let mut j = i;
            let mut phrases = Vec::new();
            loop {
                if j >= n || taken[j] {
                    break;
                }
                let len = match_phrase(&lower, j, PRE_MODIFIERS)
                    .or_else(|| VERSION_WORDS.contains(&lower[j].as_str()).then_some(1));
                match len {
                    Some(len) if (j..j + len).all(|k| !taken[k]) => {
                        phrases.push(j..j + len);
                        j += len;
                    }
                    _ => break,
                }
            }
            if !phrases.is_empty() && is_version.get(j).copied().unwrap_or(false) {
                for (k, phrase) in phrases.into_iter().enumerate() {
                    mark_mod(&mut labels, &mut taken, phrase, k > 0);
                }
                i = j;
            } else {
                i += 1;
            }
        }
        labels
    }
}

fn mark_mod(labels: &mut [Label], taken: &mut [bool], span: Range<usize>, continuing: bool) {
    for i in span.clone() {
        labels[i] = if i == span.start && !continuing {
            Label::BeginMod
        } else {
            Label::InsideMod
        };
        taken[i] = true;
    }
}

/// A modifier/version group such as `before 8.0.552.237` or `1.4 and earlier`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModVersion {
    pub span: Range<usize>,
    /// The group's tokens joined by spaces, e.g. `version 1.4 and earlier`.
    pub descriptor: String,
    pub modifiers: Vec<ExtractedEntity>,
    pub versions: Vec<ExtractedEntity>,
}

const RANGE_JOINERS: &[&str] = &["through", "thru", "to", "-"];

/// Groups each version with its adjacent modifiers. A leading modifier, a
/// range joiner with a second version, and a trailing modifier are absorbed.
pub fn group_mod_versions(tokens: &[String], entities: &[ExtractedEntity]) -> Vec<ModVersion> {
    let seq: Vec<ExtractedEntity> = entities.iter().filter(|e| e.kind != EntityKind::Product).cloned().collect();
    let mut groups = Vec::new();
    let mut k = 0;
    while k < seq.len() {
        let mut modifiers = Vec::new();
        let mut versions = Vec::new();
        let mut cursor = k;
        while cursor < seq.len() && seq[cursor].kind == EntityKind::Modifier {
            let adjacent = modifiers
                .last()
                .is_none_or(|m: &ExtractedEntity| m.span.end == seq[cursor].span.start);
            if !adjacent {
                break;
            }
            modifiers.push(seq[cursor].clone());
            cursor += 1;
        }
        let Some(first) = seq.get(cursor).filter(|e| e.kind == EntityKind::Version) else {
            k = cursor.max(k + 1);
            continue;
        };
        if modifiers.last().is_some_and(|m| m.span.end != first.span.start) {
            k = cursor;
            continue;
        }
        versions.push(first.clone());
        cursor += 1;

        let between = modifiers.last().is_some_and(|m| m.text.eq_ignore_ascii_case("between"));
        let last_end = first.span.end;
        if between
            && tokens.get(last_end).is_some_and(|t| t.eq_ignore_ascii_case("and"))
            && seq
                .get(cursor)
                .is_some_and(|e| e.kind == EntityKind::Version && e.span.start == last_end + 1)
        {
            versions.push(seq[cursor].clone());
            cursor += 1;
        } else if let (Some(joiner), Some(second)) = (seq.get(cursor), seq.get(cursor + 1)) {
            if joiner.kind == EntityKind::Modifier
                && joiner.span.start == last_end
                && RANGE_JOINERS.contains(&joiner.text.to_lowercase().as_str())
                && second.kind == EntityKind::Version
                && second.span.start == joiner.span.end
            {
                modifiers.push(joiner.clone());
                versions.push(second.clone());
                cursor += 2;
            }
        }
        let end = versions.last().map(|v| v.span.end).unwrap_or(last_end);
        if let Some(post) = seq.get(cursor) {
            let is_post = post.kind == EntityKind::Modifier
                && post.span.start == end
                && POST_MODIFIERS
                    .iter()
                    .any(|p| p.join(" ") == post.text.to_lowercase());
            if is_post {
                modifiers.push(post.clone());
                cursor += 1;
            }
        }
        let start = modifiers
            .first()
            .map(|m| m.span.start)
            .unwrap_or(versions[0].span.start)
            .min(versions[0].span.start);
        let end = modifiers
            .iter()
            .chain(&versions)
            .map(|e| e.span.end)
            .max()
            .unwrap_or(end);
        groups.push(ModVersion {
            span: start..end,
            descriptor: tokens[start..end].join(" "),
            modifiers,
            versions,
        });
        k = cursor;
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPair {
    pub product: ExtractedEntity,
    pub mod_v: ModVersion,
    pub valid: bool,
}

/// Every product paired with every modifier/version group, all unclassified.
pub fn generate_candidate_pairs(entities: &[ExtractedEntity], groups: &[ModVersion]) -> Vec<RelationPair> {
    let products: Vec<&ExtractedEntity> = entities.iter().filter(|e| e.kind == EntityKind::Product).collect();
    products
        .iter()
        .flat_map(|p| {
            groups.iter().map(move |g| RelationPair {
                product: (*p).clone(),
                mod_v: g.clone(),
                valid: false,
            })
        })
        .collect()
}

/// Nearest-product relation rule.
///
/// A group belongs to the closest product before it, or the closest after it
/// when none precedes. Products chained to the owner by `and`, `or`, `,` or
/// `/` share the group.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestProductClassifier;

const CONJUNCTIONS: &[&str] = &["and", "or", ",", "/", "&"];

impl RelationClassifier for NearestProductClassifier {
    fn classify(&self, tokens: &[String], mut candidates: Vec<RelationPair>) -> Vec<RelationPair> {
        let mut products: Vec<Range<usize>> = candidates.iter().map(|c| c.product.span.clone()).collect();
        products.sort_by_key(|s| s.start);
        products.dedup();

        let joined = |a: &Range<usize>, b: &Range<usize>| {
            a.end <= b.start
                && tokens[a.end..b.start]
                    .iter()
                    .all(|t| CONJUNCTIONS.contains(&t.to_lowercase().as_str()))
        };
        for c in &mut candidates {
            let g = &c.mod_v.span;
            let before = products.iter().rposition(|p| p.end <= g.start);
            let owners: Vec<&Range<usize>> = match before {
                Some(mut idx) => {
                    let mut owners = vec![&products[idx]];
                    while idx > 0 && joined(&products[idx - 1], &products[idx]) {
                        idx -= 1;
                        owners.push(&products[idx]);
                    }
                    owners
                }
                None => products.iter().find(|p| p.start >= g.end).into_iter().collect(),
            };
            c.valid = owners.contains(&&c.product.span);
        }
        candidates
    }
}

/// Relations extracted from one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceExtraction {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub entities: Vec<ExtractedEntity>,
    pub pairs: Vec<RelationPair>,
}

/// Labels, groups and classifies one already tokenized sentence.
pub fn extract_sentence(
    tokens: &[String],
    extractor: &dyn EntityExtractor,
    classifier: &dyn RelationClassifier,
) -> SentenceExtraction {
    let labels = extractor.label(tokens);
    debug_assert!(is_valid_bio(&labels));
    let entities = entities_from_labels(tokens, &labels);
    let groups = group_mod_versions(tokens, &entities);
    let candidates = generate_candidate_pairs(&entities, &groups);
    let pairs = classifier.classify(tokens, candidates);
    SentenceExtraction {
        tokens: tokens.to_vec(),
        labels: labels.iter().map(Label::to_string).collect(),
        entities,
        pairs,
    }
}

/// Labels one raw sentence with a gazetteer.
pub fn extract_entities(sentence: &str, gazetteer: &Gazetteer) -> Vec<(String, Label)> {
    let tokens: Vec<String> = tokenize(sentence).into_iter().map(|t| t.text).collect();
    let labels = RuleExtractor::new(gazetteer.clone()).label(&tokens);
    tokens.into_iter().zip(labels).collect()
}

/// Splits a description into sentences at `.`, `!` and `?` tokens.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for t in tokenize(text) {
        let end = matches!(t.text.as_str(), "." | "!" | "?");
        current.push(t.text);
        if end {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// A sentence with gold labels, as read from a BIO file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
}

/// Reads `token<TAB>label` lines with blank lines between sentences.
pub fn read_bio(reader: impl BufRead) -> Result<Vec<LabeledSentence>, ExtractionError> {
    let mut out = Vec::new();
    let mut current = LabeledSentence {
        tokens: vec![],
        labels: vec![],
    };
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if !current.tokens.is_empty() {
                out.push(std::mem::replace(
                    &mut current,
                    LabeledSentence {
                        tokens: vec![],
                        labels: vec![],
                    },
                ));
            }
            continue;
        }
        let (token, label) = line.split_once('\t').ok_or_else(|| ExtractionError::Format {
            line: n + 1,
            message: "expected token<TAB>label".into(),
        })?;
        let label = label
            .trim()
            .parse::<Label>()
            .map_err(|message| ExtractionError::Format { line: n + 1, message })?;
        current.tokens.push(token.to_string());
        current.labels.push(label);
    }
    if !current.tokens.is_empty() {
        out.push(current);
    }
    for (i, s) in out.iter().enumerate() {
        if !is_valid_bio(&s.labels) {
            return Err(ExtractionError::Format {
                line: 0,
                message: format!("sentence {i} is not a valid BIO sequence"),
            });
        }
    }
    Ok(out)
}

pub fn write_bio(sentences: &[LabeledSentence], mut writer: impl Write) -> io::Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(writer)?;
        }
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            writeln!(writer, "{t}\t{l}")?;
        }
    }
    Ok(())
}

/// One line of a relation pair file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairRecord {
    pub sentence_id: usize,
    pub product_span: [usize; 2],
    pub mod_v_span: [usize; 2],
    pub label: String,
}

impl PairRecord {
    pub fn from_pair(sentence_id: usize, pair: &RelationPair) -> Self {
        PairRecord {
            sentence_id,
            product_span: [pair.product.span.start, pair.product.span.end],
            mod_v_span: [pair.mod_v.span.start, pair.mod_v.span.end],
            label: if pair.valid { "Y" } else { "N" }.to_string(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.label == "Y"
    }
}

pub fn read_pairs(reader: impl BufRead) -> Result<Vec<PairRecord>, ExtractionError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| ExtractionError::Format {
            line: n + 1,
            message: e.to_string(),
        })?;
        if record.label != "Y" && record.label != "N" {
            return Err(ExtractionError::Format {
                line: n + 1,
                message: format!("label must be Y or N, got `{}`", record.label),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Precision, recall and F1 over exact matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchScore {
    pub fn from_sets<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Self {
        let tp = predicted.intersection(gold).count();
        let fp = predicted.len() - tp;
        let fn_ = gold.len() - tp;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MatchScore {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub sentences: usize,
    pub entities: MatchScore,
    pub valid_pairs: MatchScore,
}

/// Scores an extractor against gold BIO sentences and gold pair labels.
/// Entities match on sentence, kind, part and token span; pairs on sentence
/// and both spans, counting only pairs labelled valid.
pub fn evaluate_extraction(
    gold: &[LabeledSentence],
    gold_pairs: &[PairRecord],
    extractor: &dyn EntityExtractor,
    classifier: &dyn RelationClassifier,
) -> ExtractionReport {
    type EntityKey = (usize, EntityKind, Option<Part>, usize, usize);
    let mut predicted_entities: BTreeSet<EntityKey> = BTreeSet::new();
    let mut gold_entities: BTreeSet<EntityKey> = BTreeSet::new();
    let mut predicted_pairs: BTreeSet<(usize, [usize; 2], [usize; 2])> = BTreeSet::new();
    for (id, sentence) in gold.iter().enumerate() {
        for e in entities_from_labels(&sentence.tokens, &sentence.labels) {
            gold_entities.insert((id, e.kind, e.part, e.span.start, e.span.end));
        }
        let out = extract_sentence(&sentence.tokens, extractor, classifier);
        for e in &out.entities {
            predicted_entities.insert((id, e.kind, e.part, e.span.start, e.span.end));
        }
        for p in out.pairs.iter().filter(|p| p.valid) {
            let r = PairRecord::from_pair(id, p);
            predicted_pairs.insert((id, r.product_span, r.mod_v_span));
        }
    }
    let gold_valid: BTreeSet<(usize, [usize; 2], [usize; 2])> = gold_pairs
        .iter()
        .filter(|p| p.is_valid())
        .map(|p| (p.sentence_id, p.product_span, p.mod_v_span))
        .collect();
    ExtractionReport {
        sentences: gold.len(),
        entities: MatchScore::from_sets(&predicted_entities, &gold_entities),
        valid_pairs: MatchScore::from_sets(&predicted_pairs, &gold_valid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gazetteer() -> Gazetteer {
        let e = |vendor: &str, product: &str, part| GazetteerEntry {
            vendor: vendor.into(),
            product: product.into(),
            part,
            versions: vec![],
        };
        Gazetteer::new([
            e("google", "chrome", Part::Application),
            e("google", "chrome os", Part::OperatingSystem),
            e("google", "android", Part::OperatingSystem),
            e("microsoft", "internet explorer", Part::Application),
            e("microsoft", "word", Part::Application),
            e("microsoft", "office", Part::Application),
            e("newphoria", "auction camera", Part::Application),
            e("apple", "ios", Part::OperatingSystem),
        ])
    }

    fn words(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    fn labels(s: &str) -> Vec<String> {
        let tokens = words(s);
        RuleExtractor::new(gazetteer())
            .label(&tokens)
            .iter()
            .map(Label::to_string)
            .collect()
    }

    #[test]
    fn tokenizer_keeps_versions_and_dates() {
        assert_eq!(words("Google Chrome before 8.0.552.237"), ["Google", "Chrome", "before", "8.0.552.237"]);
        assert!(words("").is_empty());
        assert_eq!(words("Android for MSM before 2017-02-12").last().unwrap(), "2017-02-12");
        assert_eq!(words("Cisco ios_xe 3.13.2as."), ["Cisco", "ios_xe", "3.13.2as", "."]);
    }

    #[test]
    fn chrome_running_example() {
        assert_eq!(labels("Google Chrome before 8.0.552.237"), ["B-PN-APP", "I-PN-APP", "B-MOD", "B-V"]);
    }

    #[test]
    fn platform_after_for_is_outside() {
        assert_eq!(
            labels("Newphoria Auction Camera for iOS"),
            ["B-PN-APP", "I-PN-APP", "I-PN-APP", "O", "O"]
        );
    }

    #[test]
    fn no_gazetteer_hits_all_outside() {
        assert!(labels("a crafted request causes a crash").iter().all(|l| l == "O"));
    }

    #[test]
    fn year_with_service_pack_is_version() {
        assert_eq!(
            labels("Microsoft Word 2007 SP3 , Office 2010 SP2"),
            ["B-PN-APP", "I-PN-APP", "B-V", "I-V", "O", "B-PN-APP", "B-V", "I-V"]
        );
    }

    #[test]
    fn post_positioned_modifier() {
        let tokens = words("Internet Explorer version 1.4 and earlier");
        let l = RuleExtractor::new(gazetteer()).label(&tokens);
        let names: Vec<String> = l.iter().map(Label::to_string).collect();
        assert_eq!(names, ["B-PN-APP", "I-PN-APP", "B-MOD", "B-V", "B-MOD", "I-MOD"]);
        let entities = entities_from_labels(&tokens, &l);
        let groups = group_mod_versions(&tokens, &entities);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].descriptor, "version 1.4 and earlier");
    }

    #[test]
    fn candidate_pairs_and_nearest_product() {
        let tokens = words("Google Chrome before 8.0.552.237 and Google Chrome OS before 8.0.552.344");
        let out = extract_sentence(&tokens, &RuleExtractor::new(gazetteer()), &NearestProductClassifier);
        assert_eq!(out.pairs.len(), 4);
        let valid: Vec<(String, String)> = out
            .pairs
            .iter()
            .filter(|p| p.valid)
            .map(|p| (p.product.text.clone(), p.mod_v.descriptor.clone()))
            .collect();
        assert_eq!(
            valid,
            [
                ("Google Chrome".to_string(), "before 8.0.552.237".to_string()),
                ("Google Chrome OS".to_string(), "before 8.0.552.344".to_string()),
            ]
        );
    }

    #[test]
    fn one_product_three_versions() {
        let tokens = words("Google Chrome 1.0 , 1.1 and 1.2");
        let out = extract_sentence(&tokens, &RuleExtractor::new(gazetteer()), &NearestProductClassifier);
        assert_eq!(out.pairs.len(), 3);
        assert!(out.pairs.iter().all(|p| p.valid));
    }

    #[test]
    fn range_groups() {
        let tokens = words("Google Chrome 1.0 through 1.5 and between 2.0 and 2.4");
        let out = extract_sentence(&tokens, &RuleExtractor::new(gazetteer()), &NearestProductClassifier);
        let descriptors: Vec<&str> = out.pairs.iter().map(|p| p.mod_v.descriptor.as_str()).collect();
        assert_eq!(descriptors, ["1.0 through 1.5", "between 2.0 and 2.4"]);
    }

    #[test]
    fn product_without_version_has_no_pairs() {
        let tokens = words("Google Chrome allows remote attackers to crash");
        let out = extract_sentence(&tokens, &RuleExtractor::new(gazetteer()), &NearestProductClassifier);
        assert!(out.pairs.is_empty());
    }

    #[test]
    fn bio_round_trip() {
        let s = LabeledSentence {
            tokens: words("Google Chrome before 8.0"),
            labels: vec![
                Label::BeginProduct(Part::Application),
                Label::InsideProduct(Part::Application),
                Label::BeginMod,
                Label::BeginVersion,
            ],
        };
        let mut buf = Vec::new();
        write_bio(&[s.clone(), s.clone()], &mut buf).unwrap();
        assert_eq!(read_bio(&buf[..]).unwrap(), vec![s.clone(), s]);
        assert!(read_bio(&b"x\tI-V\n"[..]).is_err());
    }

    #[test]
    fn bio_validity() {
        assert!(is_valid_bio(&[Label::BeginVersion, Label::InsideVersion]));
        assert!(!is_valid_bio(&[Label::Outside, Label::InsideVersion]));
        assert!(!is_valid_bio(&[
            Label::BeginProduct(Part::Application),
            Label::InsideProduct(Part::OperatingSystem)
        ]));
    }

    fn sentence() -> impl Strategy<Value = String> {
        let word = prop_oneof![
            Just("Google".to_string()),
            Just("Chrome".to_string()),
            Just("OS".to_string()),
            Just("Internet".to_string()),
            Just("Explorer".to_string()),
            Just("for".to_string()),
            Just("iOS".to_string()),
            Just("before".to_string()),
            Just("version".to_string()),
            Just("and".to_string()),
            Just("earlier".to_string()),
            Just("through".to_string()),
            Just("SP2".to_string()),
            Just("2007".to_string()),
            Just(",".to_string()),
            Just("Edition".to_string()),
            "[0-9]{1,2}(\\.[0-9]{1,3}){0,3}",
            "[a-z]{1,6}",
        ];
        proptest::collection::vec(word, 0..14).prop_map(|w| w.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn tokens_reconstruct_text(s in "\\PC{0,40}") {
            let tokens = tokenize(&s);
            let mut last = 0;
            for t in &tokens {
                prop_assert!(s[last..t.start].chars().all(char::is_whitespace));
                prop_assert_eq!(&s[t.start..t.end], t.text.as_str());
                last = t.end;
            }
            prop_assert!(s[last..].chars().all(char::is_whitespace));
        }

        #[test]
        fn labels_always_valid_bio(s in sentence()) {
            let tokens = words(&s);
            let l = RuleExtractor::new(gazetteer()).label(&tokens);
            prop_assert_eq!(l.len(), tokens.len());
            prop_assert!(is_valid_bio(&l));
        }

        #[test]
        fn candidates_are_cartesian(s in sentence()) {
            let tokens = words(&s);
            let out = extract_sentence(&tokens, &RuleExtractor::new(gazetteer()), &NearestProductClassifier);
            let products = out.entities.iter().filter(|e| e.kind == EntityKind::Product).count();
            let groups = group_mod_versions(&tokens, &out.entities).len();
            prop_assert_eq!(out.pairs.len(), products * groups);
            if products > 0 && groups > 0 {
                prop_assert!(out.pairs.iter().any(|p| p.valid));
            }
        }

        #[test]
        fn gazetteer_growth_keeps_product_coverage(s in sentence(), extra in "[a-z]{2,6}( [a-z]{2,6})?") {
            let tokens = words(&s);
            let before = RuleExtractor::new(gazetteer()).label(&tokens);
            let mut bigger = gazetteer();
            bigger.insert(GazetteerEntry {
                vendor: "acme".into(),
                product: extra,
                part: Part::Hardware,
                versions: vec![],
            });
            let after = RuleExtractor::new(bigger).label(&tokens);
            for (i, (b, a)) in before.iter().zip(&after).enumerate() {
                let was_product = matches!(b, Label::BeginProduct(_) | Label::InsideProduct(_));
                let is_product = matches!(a, Label::BeginProduct(_) | Label::InsideProduct(_));
                prop_assert!(!was_product || is_product, "token {} lost its product label", i);
            }
        }
    }
}
