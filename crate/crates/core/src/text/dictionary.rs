use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Abbreviation term to its ordered sense phrases; the position of a
/// phrase is its `sense_id`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct TermSenseDictionary {
    terms: BTreeMap<String, Vec<String>>,
}

impl TryFrom<BTreeMap<String, Vec<String>>> for TermSenseDictionary {
    type Error = Error;

    fn try_from(terms: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut dict = TermSenseDictionary::default();
        for (term, senses) in terms {
            dict.insert(term, senses)?;
        }
        Ok(dict)
    }
}

impl From<TermSenseDictionary> for BTreeMap<String, Vec<String>> {
    fn from(d: TermSenseDictionary) -> Self {
        d.terms
    }
}

impl TermSenseDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, term: impl Into<String>, senses: Vec<String>) -> Result<()> {
        let term = term.into();
        for (i, s) in senses.iter().enumerate() {
            if senses[..i].contains(s) {
                return Err(Error::Data(format!("duplicate sense `{s}` for term {term}")));
            }
        }
        self.terms.insert(term, senses);
        Ok(())
    }

    pub fn senses(&self, term: &str) -> Option<&[String]> {
        self.terms.get(term).map(Vec::as_slice)
    }

    pub fn num_senses(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, Vec::len)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.terms.iter().map(|(t, s)| (t.as_str(), s.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
