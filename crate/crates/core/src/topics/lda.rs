use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::text::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub n_topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / n_topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    /// Words occurring in a larger fraction of documents are dropped
    /// before sampling, as a stopword filter. `1.0` keeps everything.
    pub max_doc_freq: f64,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: 50,
            alpha: None,
            beta: 0.01,
            iterations: 30,
            max_doc_freq: 1.0,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.n_topics as f64)
    }
}

/// Collapsed Gibbs sampler state for LDA.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    n_topics: usize,
    vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    docs: Vec<Vec<u32>>,
    assignments: Vec<Vec<u32>>,
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
    doc_topic: Vec<u32>,
    pub iterations_run: usize,
    /// Per-token corpus log-likelihood after each sweep.
    pub log_likelihood: Vec<f64>,
}

impl LdaModel {
    /// Random initial assignments; no sweeps yet.
    pub fn init(corpus: &[Vec<usize>], vocab_size: usize, n_topics: usize, alpha: f64, beta: f64, rng: &mut Rng) -> Result<Self> {
        if n_topics < 2 {
            return Err(Error::Config("LDA needs at least 2 topics".into()));
        }
        if corpus.iter().all(Vec::is_empty) {
            return Err(Error::Data("LDA corpus is empty".into()));
        }
        if let Some(&w) = corpus.iter().flatten().find(|&&w| w >= vocab_size) {
            return Err(Error::Data(format!("word id {w} outside vocabulary of {vocab_size}")));
        }
        let mut m = LdaModel {
            n_topics,
            vocab_size,
            alpha,
            beta,
            docs: corpus
                .iter()
                .map(|d| d.iter().map(|&w| w as u32).collect())
                .collect(),
            assignments: Vec::with_capacity(corpus.len()),
            topic_word: vec![0; n_topics * vocab_size],
            topic_totals: vec![0; n_topics],
            doc_topic: vec![0; corpus.len() * n_topics],
            iterations_run: 0,
            log_likelihood: Vec::new(),
        };
        for (d, doc) in m.docs.iter().enumerate() {
            let mut z = Vec::with_capacity(doc.len());
            for &w in doc {
                let k = rng.gen_range(0..n_topics);
                m.topic_word[k * vocab_size + w as usize] += 1;
                m.topic_totals[k] += 1;
                m.doc_topic[d * n_topics + k] += 1;
                z.push(k as u32);
            }
            m.assignments.push(z);
        }
        Ok(m)
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> u32 {
        self.topic_word[k * self.vocab_size + w]
    }

    pub fn doc_topic_count(&self, d: usize, k: usize) -> u32 {
        self.doc_topic[d * self.n_topics + k]
    }

    pub fn topic_total(&self, k: usize) -> u32 {
        self.topic_totals[k]
    }

    pub fn assignment(&self, d: usize, i: usize) -> usize {
        self.assignments[d][i] as usize
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    /// All three count tables agree with the token count and the
    /// assignments.
    pub fn counts_consistent(&self) -> bool {
        let n = self.total_tokens() as u64;
        let tw: u64 = self.topic_word.iter().map(|&c| c as u64).sum();
        let tt: u64 = self.topic_totals.iter().map(|&c| c as u64).sum();
        let dt: u64 = self.doc_topic.iter().map(|&c| c as u64).sum();
        if tw != n || tt != n || dt != n {
            return false;
        }
        let mut recount = vec![0u32; self.topic_word.len()];
        for (doc, z) in self.docs.iter().zip(&self.assignments) {
            for (&w, &k) in doc.iter().zip(z) {
                recount[k as usize * self.vocab_size + w as usize] += 1;
            }
        }
        recount == self.topic_word
    }

    fn unassign(&mut self, d: usize, i: usize) -> (usize, usize) {
        let w = self.docs[d][i] as usize;
        let k = self.assignments[d][i] as usize;
        self.topic_word[k * self.vocab_size + w] -= 1;
        self.topic_totals[k] -= 1;
        self.doc_topic[d * self.n_topics + k] -= 1;
        (w, k)
    }

    fn assign(&mut self, d: usize, i: usize, w: usize, k: usize) {
        self.topic_word[k * self.vocab_size + w] += 1;
        self.topic_totals[k] += 1;
        self.doc_topic[d * self.n_topics + k] += 1;
        self.assignments[d][i] = k as u32;
    }

    fn weights_into(&self, d: usize, w: usize, out: &mut [f64]) {
        let vb = self.vocab_size as f64 * self.beta;
        for (k, o) in out.iter_mut().enumerate() {
            let ndk = self.doc_topic[d * self.n_topics + k] as f64;
            let nkw = self.topic_word[k * self.vocab_size + w] as f64;
            let nk = self.topic_totals[k] as f64;
            *o = (ndk + self.alpha) * (nkw + self.beta) / (nk + vb);
        }
    }

    /// Normalized full conditional of token `i` in document `d` given every
    /// other assignment.
    pub fn conditional(&mut self, d: usize, i: usize) -> Vec<f64> {
        let (w, k) = self.unassign(d, i);
        let mut p = vec![0.0; self.n_topics];
        self.weights_into(d, w, &mut p);
        self.assign(d, i, w, k);
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Draws a new topic for one token from its full conditional.
    pub fn resample_token(&mut self, d: usize, i: usize, rng: &mut Rng, scratch: &mut Vec<f64>) -> usize {
        let (w, _) = self.unassign(d, i);
        scratch.resize(self.n_topics, 0.0);
        self.weights_into(d, w, scratch);
        let total: f64 = scratch.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut k_new = self.n_topics - 1;
        for (k, &p) in scratch.iter().enumerate() {
            if u < p {
                k_new = k;
                break;
            }
            u -= p;
        }
        self.assign(d, i, w, k_new);
        k_new
    }

    pub fn sweep(&mut self, rng: &mut Rng) {
        let mut scratch = Vec::with_capacity(self.n_topics);
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                self.resample_token(d, i, rng, &mut scratch);
            }
        }
        self.iterations_run += 1;
        let ll = self.per_token_log_likelihood();
        self.log_likelihood.push(ll);
    }

    /// Smoothed topic-word probability `(n_kw + beta) / (n_k + V beta)`.
    pub fn phi(&self, k: usize, w: usize) -> f64 {
        (self.topic_word[k * self.vocab_size + w] as f64 + self.beta)
            / (self.topic_totals[k] as f64 + self.vocab_size as f64 * self.beta)
    }

    pub fn theta(&self, d: usize, k: usize) -> f64 {
        let nd = self.docs[d].len() as f64;
        (self.doc_topic[d * self.n_topics + k] as f64 + self.alpha) / (nd + self.n_topics as f64 * self.alpha)
    }

    /// Mean over tokens of `log sum_k theta_dk phi_kw`.
    pub fn per_token_log_likelihood(&self) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        let mut theta = vec![0.0; self.n_topics];
        for (d, doc) in self.docs.iter().enumerate() {
            for (k, t) in theta.iter_mut().enumerate() {
                *t = self.theta(d, k);
            }
            for &w in doc {
                let p: f64 = (0..self.n_topics).map(|k| theta[k] * self.phi(k, w as usize)).sum();
                total += p.ln();
                n += 1;
            }
        }
        total / n.max(1) as f64
    }

    /// The `k` most probable words of `topic` with their probabilities,
    /// ties broken by ascending word id. Asking for more than the
    /// vocabulary returns the whole vocabulary.
    pub fn top_k_words(&self, topic: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        if topic >= self.n_topics {
            return Err(Error::Contract(format!(
                "topic {topic} out of range for {} topics",
                self.n_topics
            )));
        }
        let k = if k > self.vocab_size {
            log::warn!("top-k of {k} exceeds vocabulary of {}; truncating", self.vocab_size);
            self.vocab_size
        } else {
            k
        };
        let mut ids: Vec<usize> = (0..self.vocab_size).collect();
        let row = &self.topic_word[topic * self.vocab_size..(topic + 1) * self.vocab_size];
        ids.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
        Ok(ids.into_iter().take(k).map(|w| (w, self.phi(topic, w))).collect())
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        let meta = serde_json::json!({
            "n_topics": self.n_topics,
            "alpha": self.alpha,
            "beta": self.beta,
            "vocab_size": self.vocab_size,
            "vocab_hash": vocab_hash,
            "iterations_run": self.iterations_run,
            "log_likelihood": self.log_likelihood,
        });
        let mut c = Checkpoint::new("lda", meta);
        c.push_u32("topic_word", vec![self.n_topics, self.vocab_size], self.topic_word.clone());
        c.push_u32("doc_topic", vec![self.docs.len(), self.n_topics], self.doc_topic.clone());
        let lens: Vec<u32> = self.docs.iter().map(|d| d.len() as u32).collect();
        c.push_u32("doc_lengths", vec![lens.len()], lens);
        let words: Vec<u32> = self.docs.concat();
        let z: Vec<u32> = self.assignments.concat();
        let n = words.len().max(1);
        c.push_u32("words", vec![n], if words.is_empty() { vec![0] } else { words });
        c.push_u32("assignments", vec![n], if z.is_empty() { vec![0] } else { z });
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("lda")?;
        let meta = &c.meta;
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Format(format!("lda meta lacks {k}")));
        let n_topics = get("n_topics")?.as_u64().unwrap_or(0) as usize;
        let vocab_size = get("vocab_size")?.as_u64().unwrap_or(0) as usize;
        let alpha = get("alpha")?.as_f64().unwrap_or(0.0);
        let beta = get("beta")?.as_f64().unwrap_or(0.0);
        let iterations_run = get("iterations_run")?.as_u64().unwrap_or(0) as usize;
        let log_likelihood: Vec<f64> = serde_json::from_value(get("log_likelihood")?.clone())?;
        let lens = c.u32_blob("doc_lengths")?.1;
        let words = c.u32_blob("words")?.1;
        let z = c.u32_blob("assignments")?.1;
        let mut docs = Vec::with_capacity(lens.len());
        let mut assignments = Vec::with_capacity(lens.len());
        let mut pos = 0;
        for &l in lens {
            let l = l as usize;
            docs.push(words[pos..pos + l].to_vec());
            assignments.push(z[pos..pos + l].to_vec());
            pos += l;
        }
        let topic_word = c.u32_blob("topic_word")?.1.to_vec();
        let topic_totals = (0..n_topics)
            .map(|k| topic_word[k * vocab_size..(k + 1) * vocab_size].iter().sum())
            .collect();
        let m = LdaModel {
            n_topics,
            vocab_size,
            alpha,
            beta,
            docs,
            assignments,
            topic_word,
            topic_totals,
            doc_topic: c.u32_blob("doc_topic")?.1.to_vec(),
            iterations_run,
            log_likelihood,
        };
        if !m.counts_consistent() {
            return Err(Error::Format("lda checkpoint counts are inconsistent".into()));
        }
        Ok(m)
    }

    /// TSV report with columns topic, rank, word, probability.
    pub fn write_top_words_tsv(&self, path: &Path, vocab: &Vocabulary, k: usize) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "topic\trank\tword\tprobability").map_err(io)?;
        for t in 0..self.n_topics {
            for (rank, (id, p)) in self.top_k_words(t, k)?.into_iter().enumerate() {
                writeln!(w, "{t}\t{}\t{}\t{p}", rank + 1, vocab.token(id)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Removes every word whose document frequency exceeds `max_doc_freq`
/// times the number of documents.
pub fn drop_frequent_words(corpus: &[Vec<usize>], max_doc_freq: f64) -> Vec<Vec<usize>> {
    let limit = max_doc_freq * corpus.len() as f64;
    let mut df: HashMap<usize, usize> = HashMap::new();
    for doc in corpus {
        let mut seen: Vec<usize> = doc.clone();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1;
        }
    }
    corpus
        .iter()
        .map(|doc| doc.iter().copied().filter(|w| df[w] as f64 <= limit).collect())
        .collect()
}

/// Runs collapsed Gibbs sampling over word-id documents.
pub fn train_lda(corpus: &[Vec<usize>], vocab_size: usize, config: &LdaConfig) -> Result<LdaModel> {
    if corpus.is_empty() {
        return Err(Error::Data("LDA corpus is empty".into()));
    }
    if !(config.max_doc_freq > 0.0 && config.max_doc_freq <= 1.0) {
        return Err(Error::Config(format!("max_doc_freq must lie in (0, 1], got {}", config.max_doc_freq)));
    }
    let filtered;
    let corpus = if config.max_doc_freq < 1.0 {
        filtered = drop_frequent_words(corpus, config.max_doc_freq);
        &filtered[..]
    } else {
        corpus
    };
    let mut r = rng::substream(config.seed, "lda");
    let mut m = LdaModel::init(corpus, vocab_size, config.n_topics, config.alpha(), config.beta, &mut r)?;
    for _ in 0..config.iterations {
        m.sweep(&mut r);
    }
    Ok(m)
}
