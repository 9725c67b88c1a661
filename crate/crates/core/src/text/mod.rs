//! Tokenization, vocabulary, datasets and the synthetic benchmark.

mod dictionary;
mod replace;
mod sample;
pub mod synthetic;
mod tokenize;
pub mod vocab;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use dictionary::TermSenseDictionary;
pub use replace::replace_sense_mentions;
pub use sample::{parse_jsonl, read_jsonl, write_jsonl, SampleSource, SenseSample};
pub use synthetic::{generate_synthetic_benchmark, SyntheticBenchmark, SyntheticConfig, TrainSchedule};
pub use tokenize::{tokenize, NUM_TOKEN};
pub use vocab::Vocabulary;

use crate::error::{Error, Result};

/// Samples grouped by term, terms in sorted order.
pub fn group_by_term(samples: &[SenseSample]) -> BTreeMap<String, Vec<SenseSample>> {
    let mut out: BTreeMap<String, Vec<SenseSample>> = BTreeMap::new();
    for s in samples {
        out.entry(s.term.clone()).or_default().push(s.clone());
    }
    out
}

/// Writes whitespace-joined token documents, one per line.
pub fn write_corpus(path: &Path, docs: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        writeln!(w, "{}", d.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let doc: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !doc.is_empty() {
            docs.push(doc);
        }
    }
    Ok(docs)
}
