use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttrValue, CpeName, Part};
use crate::inconsistency::normalize_str;

/// Content-addressed identifier of a [`UcpeEntry`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UcpeId(String);

impl UcpeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_raw(s: impl Into<String>) -> Self {
        UcpeId(s.into())
    }
}

impl fmt::Display for UcpeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical vendor/product/version/part unit.
///
/// Vendor and product are stored normalized; the version is a single token
/// (`*` marks a wildcard entry, `-` a not-applicable one). The id is derived
/// from the four fields, so equal tuples always share an id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UcpeEntry {
    pub id: UcpeId,
    pub vendor: String,
    pub product: String,
    pub version: String,
    pub part: Part,
}

impl UcpeEntry {
    pub fn new(part: Part, vendor: &str, product: &str, version: &str) -> Self {
        let vendor = normalize_str(vendor);
        let product = normalize_str(product);
        let version = version.trim().to_ascii_lowercase();
        let id = Self::derive_id(part, &vendor, &product, &version);
        UcpeEntry {
            id,
            vendor,
            product,
            version,
            part,
        }
    }

    fn derive_id(part: Part, vendor: &str, product: &str, version: &str) -> UcpeId {
        let mut hasher = Sha256::new();
        for field in [&part.as_char().to_string()[..], vendor, product, version] {
            hasher.update(field.as_bytes());
            hasher.update([0x1f]);
        }
        let digest = hasher.finalize();
        UcpeId(hex::encode(&digest[..16]))
    }

    /// True if the stored id matches the one derived from the fields.
    pub fn id_is_consistent(&self) -> bool {
        Self::derive_id(self.part, &self.vendor, &self.product, &self.version) == self.id
    }

    /// Renders the entry as a CPE 2.3 name, with name separators written as `_`.
    pub fn to_cpe(&self) -> CpeName {
        let cpe_token = |s: &str| s.replace(' ', "_");
        let mut name = CpeName::any(self.part);
        name.vendor = AttrValue::literal(&cpe_token(&self.vendor)).unwrap_or(AttrValue::Any);
        name.product = AttrValue::literal(&cpe_token(&self.product)).unwrap_or(AttrValue::Any);
        name.version = match self.version.as_str() {
            "*" => AttrValue::Any,
            "-" => AttrValue::Na,
            v => AttrValue::literal(v).unwrap_or(AttrValue::Any),
        };
        name
    }
}
