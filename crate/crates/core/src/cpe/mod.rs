//! CPE 2.3 formatted strings, version ordering and uCPE entries.
//!
//! Only the formatted-string binding (`cpe:2.3:...`) is accepted. Values are
//! held unescaped and lowercased; [`CpeName`]'s `Display` re-escapes every
//! character that is not alphanumeric or one of `-`, `.`, `_`.

mod ucpe;
mod version;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use ucpe::{UcpeEntry, UcpeId};
pub use version::{compare_versions, VersionBound, VersionConstraint};

const PREFIX: &str = "cpe:2.3:";
const ATTRIBUTE_COUNT: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CpeError {
    #[error("malformed CPE `{input}`: {reason}")]
    Malformed { input: String, reason: String },
}

impl CpeError {
    fn malformed(input: &str, reason: impl Into<String>) -> Self {
        CpeError::Malformed {
            input: input.to_string(),
            reason: reason.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        "MalformedCpe"
    }
}

/// The `part` attribute: application, operating system or hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    #[serde(rename = "a")]
    Application,
    #[serde(rename = "o")]
    OperatingSystem,
    #[serde(rename = "h")]
    Hardware,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Application, Part::OperatingSystem, Part::Hardware];

    pub fn as_char(self) -> char {
        match self {
            Part::Application => 'a',
            Part::OperatingSystem => 'o',
            Part::Hardware => 'h',
        }
    }

    pub fn from_code(code: &str) -> Option<Part> {
        match code {
            "a" | "A" => Some(Part::Application),
            "o" | "O" => Some(Part::OperatingSystem),
            "h" | "H" => Some(Part::Hardware),
            _ => None,
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A single attribute value of a CPE name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrValue {
    /// `*`
    Any,
    /// `-`
    Na,
    /// A literal, unescaped, lowercase value.
    Value(String),
}

impl AttrValue {
    /// Builds a literal value. Returns `None` for empty strings or strings
    /// containing whitespace, control or non-ASCII characters.
    pub fn literal(s: &str) -> Option<AttrValue> {
        if s.is_empty() || !s.chars().all(is_legal_char) {
            return None;
        }
        Some(AttrValue::Value(s.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_any(&self) -> bool {
        matches!(self, AttrValue::Any)
    }

    /// The value as a token: `*`, `-` or the literal text.
    pub fn token(&self) -> &str {
        match self {
            AttrValue::Any => "*",
            AttrValue::Na => "-",
            AttrValue::Value(v) => v,
        }
    }

    fn parse_field(input: &str, raw: &str) -> Result<AttrValue, CpeError> {
        match raw {
            "*" => return Ok(AttrValue::Any),
            "-" => return Ok(AttrValue::Na),
            "" => return Err(CpeError::malformed(input, "empty attribute")),
            _ => {}
        }
        let mut out = String::with_capacity(raw.len());
        let mut chars = raw.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some(q) if is_legal_char(q) => out.push(q.to_ascii_lowercase()),
                    Some(q) => {
                        return Err(CpeError::malformed(
                            input,
                            format!("illegal quoted character {q:?}"),
                        ))
                    }
                    None => return Err(CpeError::malformed(input, "dangling escape")),
                },
                '*' | '?' => {
                    return Err(CpeError::malformed(
                        input,
                        "embedded wildcard characters are not supported",
                    ))
                }
                c if is_legal_char(c) => out.push(c.to_ascii_lowercase()),
                c => {
                    return Err(CpeError::malformed(
                        input,
                        format!("illegal character {c:?}"),
                    ))
                }
            }
        }
        Ok(AttrValue::Value(out))
    }

    fn write_escaped(&self, out: &mut String) {
        match self {
            AttrValue::Any => out.push('*'),
            AttrValue::Na => out.push('-'),
            AttrValue::Value(v) if v == "-" => out.push_str("\\-"),
            AttrValue::Value(v) => {
                for c in v.chars() {
                    if !(c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_')) {
                        out.push('\\');
                    }
                    out.push(c.to_ascii_lowercase());
                }
            }
        }
    }
}

fn is_legal_char(c: char) -> bool {
    c.is_ascii_graphic()
}

/// A parsed CPE 2.3 name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CpeName {
    pub part: Part,
    pub vendor: AttrValue,
    pub product: AttrValue,
    pub version: AttrValue,
    pub update: AttrValue,
    pub edition: AttrValue,
    pub language: AttrValue,
    pub sw_edition: AttrValue,
    pub target_sw: AttrValue,
    pub target_hw: AttrValue,
    pub other: AttrValue,
}

impl CpeName {
    /// A name with the given part and every other attribute set to ANY.
    pub fn any(part: Part) -> Self {
        CpeName {
            part,
            vendor: AttrValue::Any,
            product: AttrValue::Any,
            version: AttrValue::Any,
            update: AttrValue::Any,
            edition: AttrValue::Any,
            language: AttrValue::Any,
            sw_edition: AttrValue::Any,
            target_sw: AttrValue::Any,
            target_hw: AttrValue::Any,
            other: AttrValue::Any,
        }
    }

    fn attributes(&self) -> [&AttrValue; 10] {
        [
            &self.vendor,
            &self.product,
            &self.version,
            &self.update,
            &self.edition,
            &self.language,
            &self.sw_edition,
            &self.target_sw,
            &self.target_hw,
            &self.other,
        ]
    }
}

/// Parses a CPE 2.3 formatted string.
pub fn parse_cpe(s: &str) -> Result<CpeName, CpeError> {
    let body = match s.get(..PREFIX.len()) {
        Some(p) if p.eq_ignore_ascii_case(PREFIX) => &s[PREFIX.len()..],
        _ => return Err(CpeError::malformed(s, "missing `cpe:2.3:` prefix")),
    };

    let fields = split_unescaped(body);
    if fields.len() != ATTRIBUTE_COUNT {
        return Err(CpeError::malformed(
            s,
            format!("expected {ATTRIBUTE_COUNT} attributes, found {}", fields.len()),
        ));
    }

    let part = Part::from_code(fields[0])
        .ok_or_else(|| CpeError::malformed(s, format!("invalid part `{}`", fields[0])))?;
    let mut values = fields[1..]
        .iter()
        .map(|raw| AttrValue::parse_field(s, raw))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();
    let mut next = || values.next().expect("field count checked");

    Ok(CpeName {
        part,
        vendor: next(),
        product: next(),
        version: next(),
        update: next(),
        edition: next(),
        language: next(),
        sw_edition: next(),
        target_sw: next(),
        target_hw: next(),
        other: next(),
    })
}

/// Formats a name as a canonical lowercase CPE 2.3 formatted string.
pub fn format_cpe(c: &CpeName) -> String {
    let mut out = String::with_capacity(64);
    out.push_str(PREFIX);
    out.push(c.part.as_char());
    for attr in c.attributes() {
        out.push(':');
        attr.write_escaped(&mut out);
    }
    out
}

fn split_unescaped(body: &str) -> Vec<&str> {
    let mut fields = Vec::with_capacity(ATTRIBUTE_COUNT);
    let bytes = body.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b':' => {
                fields.push(&body[start..i]);
                i += 1;
                start = i;
            }
            _ => i += 1,
        }
    }
    fields.push(&body[start.min(body.len())..]);
    fields
}

impl FromStr for CpeName {
    type Err = CpeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_cpe(s)
    }
}

impl fmt::Display for CpeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_cpe(self))
    }
}

impl Serialize for CpeName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_cpe(self))
    }
}

impl<'de> Deserialize<'de> for CpeName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_cpe(&s).map_err(serde::de::Error::custom)
    }
}
