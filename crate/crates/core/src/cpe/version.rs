use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Total order over version tokens.
///
/// Tokens are split on `.`, `-`, `_`, `+`, `:` and `~`. Each segment is either
/// numeric (leading digits plus an optional alphanumeric suffix such as the
/// `as` in `2as`) or textual. Segments compare pairwise: numbers numerically
/// and then by suffix, text lexicographically, and any textual segment sorts
/// below any numeric one. A token that runs out of segments first is smaller.
/// Date-shaped tokens (`YYYY-MM-DD`) decompose into year, month and day
/// segments, so they compare chronologically.
///
/// Tokens whose segments compare equal but differ textually (`1.01` and
/// `1.1`) fall back to plain lexicographic order, which keeps the relation
/// antisymmetric: `Equal` is returned only for identical tokens.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    let mut left = segments(a);
    let mut right = segments(b);
    loop {
        match (left.next(), right.next()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) => match x.cmp(&y) {
                Ordering::Equal => continue,
                other => return other,
            },
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Number { digits: &'a str, suffix: &'a str },
}

impl Ord for Segment<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Segment::Text(a), Segment::Text(b)) => a.cmp(b),
            (Segment::Text(_), Segment::Number { .. }) => Ordering::Less,
            (Segment::Number { .. }, Segment::Text(_)) => Ordering::Greater,
            (
                Segment::Number { digits: da, suffix: sa },
                Segment::Number { digits: db, suffix: sb },
            ) => da
                .len()
                .cmp(&db.len())
                .then_with(|| da.cmp(db))
                .then_with(|| sa.cmp(sb)),
        }
    }
}

impl PartialOrd for Segment<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn segments(token: &str) -> impl Iterator<Item = Segment<'_>> {
    token
        .split(['.', '-', '_', '+', ':', '~'])
        .filter(|s| !s.is_empty())
        .map(|s| {
            let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
            if split == 0 {
                Segment::Text(s)
            } else {
                let digits = s[..split].trim_start_matches('0');
                Segment::Number {
                    digits,
                    suffix: &s[split..],
                }
            }
        })
}

/// One end of a version range.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionBound {
    pub version: String,
    pub inclusive: bool,
}

impl VersionBound {
    pub fn inclusive(version: impl Into<String>) -> Self {
        VersionBound {
            version: version.into(),
            inclusive: true,
        }
    }

    pub fn exclusive(version: impl Into<String>) -> Self {
        VersionBound {
            version: version.into(),
            inclusive: false,
        }
    }
}

/// Which versions of a product a configuration entry covers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VersionConstraint {
    /// Every version (`*` with no range attributes).
    Any,
    Exact {
        version: String,
    },
    /// At least one bound is always present; see [`VersionConstraint::range`].
    Range {
        lower: Option<VersionBound>,
        upper: Option<VersionBound>,
    },
    /// Sorted under [`compare_versions`], duplicate-free.
    List {
        versions: Vec<String>,
    },
}

impl VersionConstraint {
    pub fn exact(version: impl Into<String>) -> Self {
        VersionConstraint::Exact {
            version: version.into(),
        }
    }

    /// A range; collapses to [`VersionConstraint::Any`] when both bounds are absent.
    pub fn range(lower: Option<VersionBound>, upper: Option<VersionBound>) -> Self {
        if lower.is_none() && upper.is_none() {
            VersionConstraint::Any
        } else {
            VersionConstraint::Range { lower, upper }
        }
    }

    pub fn list<I, S>(versions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut versions: Vec<String> = versions.into_iter().map(Into::into).collect();
        versions.sort_by(|a, b| compare_versions(a, b));
        versions.dedup();
        VersionConstraint::List { versions }
    }

    /// Builds the constraint carried by an NVD `cpe_match` entry.
    pub fn from_match_attributes(
        version: &super::AttrValue,
        start_including: Option<&str>,
        start_excluding: Option<&str>,
        end_including: Option<&str>,
        end_excluding: Option<&str>,
    ) -> Self {
        let lower = start_including
            .map(VersionBound::inclusive)
            .or_else(|| start_excluding.map(VersionBound::exclusive));
        let upper = end_including
            .map(VersionBound::inclusive)
            .or_else(|| end_excluding.map(VersionBound::exclusive));
        if lower.is_some() || upper.is_some() {
            return VersionConstraint::Range { lower, upper };
        }
        match version {
            super::AttrValue::Any => VersionConstraint::Any,
            other => VersionConstraint::exact(other.token()),
        }
    }

    /// Whether `version` satisfies the constraint.
    pub fn admits(&self, version: &str) -> bool {
        match self {
            VersionConstraint::Any => true,
            VersionConstraint::Exact { version: v } => v == version,
            VersionConstraint::List { versions } => versions.iter().any(|v| v == version),
            VersionConstraint::Range { lower, upper } => {
                // NA and ANY tokens never fall inside a numeric range.
                if version == "-" || version == "*" {
                    return false;
                }
                let above = lower.as_ref().is_none_or(|b| {
                    let ord = compare_versions(version, &b.version);
                    ord == Ordering::Greater || (b.inclusive && ord == Ordering::Equal)
                });
                let below = upper.as_ref().is_none_or(|b| {
                    let ord = compare_versions(version, &b.version);
                    ord == Ordering::Less || (b.inclusive && ord == Ordering::Equal)
                });
                above && below
            }
        }
    }

    /// A short human-readable rendering, e.g. `>= 1.0, < 2.0`.
    pub fn describe(&self) -> String {
        match self {
            VersionConstraint::Any => "*".to_string(),
            VersionConstraint::Exact { version } => format!("= {version}"),
            VersionConstraint::List { versions } => format!("in [{}]", versions.join(", ")),
            VersionConstraint::Range { lower, upper } => {
                let mut parts = Vec::new();
                if let Some(b) = lower {
                    parts.push(format!("{} {}", if b.inclusive { ">=" } else { ">" }, b.version));
                }
                if let Some(b) = upper {
                    parts.push(format!("{} {}", if b.inclusive { "<=" } else { "<" }, b.version));
                }
                parts.join(", ")
            }
        }
    }
}
