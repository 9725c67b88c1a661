use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dictionary::TermSenseDictionary;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Synthetic,
    Replaced,
    Manual,
}

/// One labeled sentence containing an abbreviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SenseSample {
    pub term: String,
    pub sense_id: usize,
    pub sense_phrase: String,
    pub tokens: Vec<String>,
    pub abbrev_pos: usize,
    pub source: SampleSource,
}

impl SenseSample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.abbrev_pos >= self.tokens.len() {
            return Err(format!(
                "abbrev_pos {} outside {} tokens",
                self.abbrev_pos,
                self.tokens.len()
            ));
        }
        if self.tokens[self.abbrev_pos] != self.term.to_lowercase() {
            return Err(format!(
                "token `{}` at abbrev_pos is not the term `{}`",
                self.tokens[self.abbrev_pos], self.term
            ));
        }
        Ok(())
    }

    pub fn validate_against(&self, dict: &TermSenseDictionary) -> std::result::Result<(), String> {
        self.validate()?;
        let n = dict.num_senses(&self.term);
        if self.sense_id >= n {
            return Err(format!(
                "sense_id {} but term {} has {n} senses",
                self.sense_id, self.term
            ));
        }
        Ok(())
    }
}

const FIELDS: [&str; 6] = ["term", "sense_id", "sense_phrase", "tokens", "abbrev_pos", "source"];

/// Reads one sample per line. Blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<SenseSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file))
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<SenseSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Schema {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if let Some(missing) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("missing field `{missing}`"),
            });
        }
        let sample: SenseSample = serde_json::from_value(value).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        sample.validate().map_err(|message| Error::Schema {
            line: line_no,
            message,
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[SenseSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
