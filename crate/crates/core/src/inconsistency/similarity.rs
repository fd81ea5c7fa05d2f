//! Name normalization and edit similarity.

use serde::{Deserialize, Serialize};

/// A raw name together with its normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NormalizedName {
    pub raw: String,
    pub norm: String,
}

impl NormalizedName {
    pub fn new(raw: &str) -> Self {
        normalize(raw)
    }
}

/// Lowercases, turns runs of whitespace, `-`, `_` and `.` into a single space,
/// drops every other non-alphanumeric character and trims the result.
pub fn normalize(name: &str) -> NormalizedName {
    NormalizedName {
        raw: name.to_string(),
        norm: normalize_str(name),
    }
}

/// The `norm` half of [`normalize`].
pub fn normalize_str(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            let mut lowered = c.to_lowercase().filter(|l| l.is_alphanumeric()).peekable();
            if lowered.peek().is_none() {
                continue;
            }
            if pending_sep && !out.is_empty() {
                out.push(' ');
            }
            pending_sep = false;
            out.extend(lowered);
        } else if c.is_whitespace() || matches!(c, '-' | '_' | '.') {
            pending_sep = true;
        }
    }
    out
}

/// Optimal-string-alignment distance: insertions, deletions, substitutions
/// and adjacent transpositions each cost one edit. Operates on chars.
pub fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    let width = b.len() + 1;
    let mut before_prev = vec![0usize; width];
    let mut prev: Vec<usize> = (0..width).collect();
    let mut cur = vec![0usize; width];

    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut d = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                d = d.min(before_prev[j - 2] + 1);
            }
            cur[j] = d;
        }
        std::mem::swap(&mut before_prev, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d(a, b) / max(|a|, |b|)` over the normalized forms, with `d` the
/// Damerau-Levenshtein distance. Two empty names are identical.
pub fn sim_edit(a: &NormalizedName, b: &NormalizedName) -> f64 {
    sim_edit_str(&a.norm, &b.norm)
}

/// [`sim_edit`] over strings that are already normalized.
pub fn sim_edit_str(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - damerau_levenshtein(a, b) as f64 / longest as f64
}
