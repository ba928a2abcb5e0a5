//! Knowledge-base item identifiers.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid QID `{0}` (expected Q followed by digits)")]
pub struct InvalidQid(pub String);

/// A Wikidata-style item id matching `Q[0-9]+`.
///
/// Ordering is numeric (`Q9 < Q10`), which is the tie-break order used by
/// every ranked list in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Qid(String);

impl Qid {
    pub fn new(s: impl Into<String>) -> Result<Self, InvalidQid> {
        let s = s.into();
        let digits = s.strip_prefix('Q').unwrap_or("");
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(InvalidQid(s));
        }
        Ok(Qid(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn digits(&self) -> &str {
        let d = self.0[1..].trim_start_matches('0');
        d
    }
}

impl Ord for Qid {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.digits(), other.digits());
        a.len()
            .cmp(&b.len())
            .then_with(|| a.cmp(b))
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Qid {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Qid {
    type Err = InvalidQid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Qid::new(s)
    }
}

impl Serialize for Qid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Qid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Qid::new(s).map_err(serde::de::Error::custom)
    }
}

/// Orders optional QIDs ascending with missing ids last.
pub(crate) fn cmp_optional(a: Option<&Qid>, b: Option<&Qid>) -> Ordering {
    match (a, b) {
        (Some(a), Some(b)) => a.cmp(b),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed() {
        for bad in ["", "Q", "q1", "Q1a", "P2534", " Q1"] {
            assert!(Qid::new(bad).is_err(), "{bad}");
        }
        assert_eq!(Qid::new("Q35875").unwrap().as_str(), "Q35875");
    }

    #[test]
    fn numeric_order() {
        let mut v: Vec<Qid> = ["Q100", "Q9", "Q35875", "Q10"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        v.sort();
        let s: Vec<_> = v.iter().map(Qid::as_str).collect();
        assert_eq!(s, ["Q9", "Q10", "Q100", "Q35875"]);
    }

    #[test]
    fn serde_validates() {
        assert!(serde_json::from_str::<Qid>("\"Q2111\"").is_ok());
        assert!(serde_json::from_str::<Qid>("\"x\"").is_err());
    }
}
