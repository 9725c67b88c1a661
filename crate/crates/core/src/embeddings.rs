//! Static word embeddings trained with skip-gram and negative sampling.

use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};
use crate::rng;
use crate::text::vocab::{PAD, UNK};
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"SNSLEMB\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config: Option<SkipGramConfig>,
    /// Mean negative-sampling loss per epoch.
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: Tensor,
    pub trained: bool,
    pub log: TrainingLog,
}

impl EmbeddingTable {
    /// Uniform(-0.5/d, 0.5/d) rows with a zero PAD row.
    pub fn random(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let bound = 0.5 / dim as f64;
        let mut vectors = Tensor::uniform(&[vocab.len(), dim], -bound, bound, &mut r);
        vectors.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
        EmbeddingTable {
            vocab,
            vectors,
            trained: false,
            log: TrainingLog::default(),
        }
    }

    pub fn from_parts(vocab: Vocabulary, vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 || vectors.rows() != vocab.len() {
            return Err(Error::dim(format!(
                "embedding matrix {:?} for vocabulary of {}",
                vectors.shape(),
                vocab.len()
            )));
        }
        Ok(EmbeddingTable {
            vocab,
            vectors,
            trained: false,
            log: TrainingLog::default(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.vectors
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    /// Embedding of `token`, or the UNK row when it is out of vocabulary.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.vectors.row(self.vocab.id(token))
    }

    pub fn unk(&self) -> &[f64] {
        self.vectors.row(UNK)
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (x, y) = (self.lookup(a), self.lookup(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (nx * ny).max(f64::MIN_POSITIVE)
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.vectors.rows())
            .map(|r| self.vectors.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Binary layout: magic, version u32, V u64, d u64, 64-byte vocabulary
    /// hash, then `V * d` little-endian doubles.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(92 + 8 * self.vectors.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(self.vocab.hash().as_bytes());
        for v in self.vectors.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], vocab: Vocabulary) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("embedding file: {m}"));
        if bytes.len() < 92 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let v = u64::from_le_bytes(bytes[12..20].try_into().expect("8")) as usize;
        let d = u64::from_le_bytes(bytes[20..28].try_into().expect("8")) as usize;
        let hash = std::str::from_utf8(&bytes[28..92]).map_err(|_| bad("hash"))?;
        if v != vocab.len() || hash != vocab.hash() {
            return Err(bad("vocabulary does not match the file"));
        }
        let body = &bytes[92..];
        if body.len() != 8 * v * d {
            return Err(bad("payload length"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect();
        let mut table = EmbeddingTable::from_parts(vocab, Tensor::new(vec![v, d], data)?)?;
        table.trained = true;
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, vocab: Vocabulary) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, vocab)
    }

    /// word2vec-style text: a `V d` line, then `token v1 .. vd` per row.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.vocab.len(), self.dim()).map_err(io)?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            write!(w, "{tok}").map_err(io)?;
            for v in self.vectors.row(i) {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Trains skip-gram with negative sampling over tokenized documents.
///
/// Context windows are shrunk uniformly at random per center word and
/// negatives are drawn from the unigram distribution raised to 0.75.
pub fn train_skipgram(corpus: &[Vec<String>], vocab: &Vocabulary, config: &SkipGramConfig) -> Result<EmbeddingTable> {
    if config.window < 1 || config.negatives < 1 {
        return Err(Error::Config("window and negatives must be at least 1".into()));
    }
    if config.dim == 0 || config.epochs == 0 {
        return Err(Error::Config("dim and epochs must be positive".into()));
    }
    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| d.iter().map(|t| vocab.id(t)).filter(|&id| id != UNK).collect())
        .filter(|d: &Vec<usize>| !d.is_empty())
        .collect();
    let total_tokens: usize = docs.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Data("skip-gram corpus is empty".into()));
    }

    let d = config.dim;
    let mut table = EmbeddingTable::random(vocab.clone(), d, rng::substream_seed(config.seed, "init"));
    let mut output = vec![0.0; vocab.len() * d];
    let weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c as f64).powf(0.75))
        .collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::Data(format!("noise distribution: {e}")))?;
    let mut r = rng::substream(config.seed, "train");

    let total_steps = (config.epochs * total_tokens) as f64;
    let mut step = 0usize;
    let mut grad_in = vec![0.0; d];
    let input = table.vectors.data_mut();
    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for doc in &docs {
            for (pos, &center) in doc.iter().enumerate() {
                let lr = (config.lr * (1.0 - step as f64 / total_steps)).max(config.lr * 1e-4);
                step += 1;
                let span = r.gen_range(1..=config.window);
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(doc.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let ctx = doc[ctx_pos];
                    grad_in.fill(0.0);
                    let cvec = &input[center * d..(center + 1) * d];
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (ctx, 1.0)
                        } else {
                            let t = noise.sample(&mut r);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let ovec = &mut output[target * d..(target + 1) * d];
                        let score: f64 = cvec.iter().zip(ovec.iter()).map(|(a, b)| a * b).sum();
                        let p = sigmoid(score);
                        loss_sum -= if label > 0.0 {
                            p.max(1e-12).ln()
                        } else {
                            (1.0 - p).max(1e-12).ln()
                        };
                        let gcoef = lr * (label - p);
                        for k in 0..d {
                            grad_in[k] += gcoef * ovec[k];
                            ovec[k] += gcoef * cvec[k];
                        }
                    }
                    for (w, g) in input[center * d..(center + 1) * d].iter_mut().zip(&grad_in) {
                        *w += g;
                    }
                    pairs += 1;
                }
            }
        }
        table.log.epoch_loss.push(loss_sum / pairs.max(1) as f64);
    }
    table.trained = true;
    table.log.config = Some(config.clone());
    if !table.vectors.is_finite() {
        return Err(Error::Data("skip-gram training diverged".into()));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{generate_synthetic_benchmark, SyntheticConfig};

    fn corpus(seed: u64) -> (Vec<Vec<String>>, Vocabulary) {
        let b = generate_synthetic_benchmark(&SyntheticConfig {
            n_terms: 3,
            unlabeled_docs: 300,
            seed,
            ..Default::default()
        })
        .unwrap();
        let v = Vocabulary::build(b.unlabeled.iter(), 1);
        (b.unlabeled, v)
    }

    fn small_config(seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: 24,
            epochs: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn loss_decreases_in_most_seeds() {
        let mut improved = 0;
        for seed in 0..5 {
            let (c, v) = corpus(seed);
            let t = train_skipgram(&c, &v, &small_config(seed)).unwrap();
            let l = &t.log.epoch_loss;
            if l.last().unwrap() < l.first().unwrap() {
                improved += 1;
            }
            assert!(t.max_row_norm() < 100.0);
        }
        assert!(improved >= 3, "{improved}/5");
    }

    #[test]
    fn interchangeable_tokens_end_up_similar() {
        let mut r = rng::seeded(11);
        let fillers: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let mut docs = Vec::new();
        for _ in 0..600 {
            let a = r.gen_range(0..5);
            let swap = if r.gen::<bool>() { "alpha" } else { "beta" };
            let mut doc: Vec<String> = (0..3).map(|k| fillers[a * 3 + k].clone()).collect();
            doc.push(swap.to_string());
            doc.extend((0..3).map(|k| fillers[15 + a * 3 + k].clone()));
            docs.push(doc);
            let b = r.gen_range(30..40);
            docs.push((0..7).map(|k| fillers[(b + k) % 40].clone()).collect());
        }
        let vocab = Vocabulary::build(docs.iter(), 1);
        let t = train_skipgram(
            &docs,
            &vocab,
            &SkipGramConfig {
                dim: 20,
                window: 3,
                epochs: 10,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let cos = t.cosine("alpha", "beta");
        assert!(cos > 0.8, "cosine {cos}");
    }

    #[test]
    fn lookup_falls_back_to_unk_and_is_pure() {
        let (c, v) = corpus(1);
        let t = train_skipgram(&c, &v, &SkipGramConfig { epochs: 1, ..small_config(1) }).unwrap();
        assert_eq!(t.lookup("never-seen-token"), t.unk());
        let tok = v.token(5).to_string();
        assert_eq!(t.lookup(&tok), t.row(5));
        assert_eq!(t.lookup(&tok), t.lookup(&tok));
    }

    #[test]
    fn deterministic_and_bitwise_round_trip() {
        let (c, v) = corpus(2);
        let cfg = SkipGramConfig { epochs: 1, ..small_config(2) };
        let a = train_skipgram(&c, &v, &cfg).unwrap();
        let b = train_skipgram(&c, &v, &cfg).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        let back = EmbeddingTable::from_bytes(&a.to_bytes(), v.clone()).unwrap();
        assert_eq!(back.matrix().data(), a.matrix().data());
        assert!(back.matrix().data().iter().zip(a.matrix().data()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let other = Vocabulary::build([vec!["zz".to_string()]].iter(), 1);
        assert!(EmbeddingTable::from_bytes(&a.to_bytes(), other).is_err());
    }

    #[test]
    fn config_errors() {
        let (c, v) = corpus(3);
        for cfg in [
            SkipGramConfig { window: 0, ..small_config(0) },
            SkipGramConfig { negatives: 0, ..small_config(0) },
        ] {
            assert!(matches!(train_skipgram(&c, &v, &cfg), Err(Error::Config(_))));
        }
        assert!(matches!(
            train_skipgram(&[], &v, &small_config(0)),
            Err(Error::Data(_))
        ));
    }
}
