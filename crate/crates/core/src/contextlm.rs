//! Two-layer bidirectional LSTM language model used as a source of
//! contextual token representations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{clip_global_norm, Adam, AdamConfig, Bound, Graph, LstmLayer, ParamId, ParamStore, Tensor, Var};
use crate::rng;
use crate::text::vocab::{BOS, EOS};
use crate::text::Vocabulary;

/// The starting perplexity is only a reference point for the training log,
/// so it is measured on a prefix of the corpus.
pub const INITIAL_PERPLEXITY_DOCS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLmConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    /// Chunks per optimizer step.
    pub batch: usize,
    /// Truncated backpropagation window, in predicted tokens.
    pub bptt_len: usize,
    pub lr: f64,
    pub clip: f64,
    pub init: f64,
    pub seed: u64,
}

impl Default for BiLmConfig {
    fn default() -> Self {
        BiLmConfig {
            emb_dim: 64,
            hidden: 64,
            layers: 2,
            epochs: 5,
            batch: 8,
            bptt_len: 20,
            lr: 5e-3,
            clip: 5.0,
            init: 0.1,
            seed: 0,
        }
    }
}

impl BiLmConfig {
    fn validate(&self) -> Result<()> {
        if self.bptt_len < 2 {
            return Err(Error::Config(format!("bptt_len must be at least 2, got {}", self.bptt_len)));
        }
        if self.emb_dim == 0 || self.hidden == 0 || self.layers == 0 || self.batch == 0 {
            return Err(Error::Config("bilm dimensions, layers and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub perplexity: f64,
    pub forward_perplexity: f64,
    pub backward_perplexity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLmModel {
    pub config: BiLmConfig,
    vocab: Vocabulary,
    store: ParamStore,
    embed: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    fwd: Vec<LstmLayer>,
    bwd: Vec<LstmLayer>,
    /// Perplexity of the untrained model on the first
    /// `INITIAL_PERPLEXITY_DOCS` training documents.
    pub initial_perplexity: Option<f64>,
    pub log: Vec<EpochLog>,
}

/// Per-layer `(h, c)` values carried between chunks.
type State = Vec<(Tensor, Tensor)>;

impl BiLmModel {
    /// Randomly initialized model; the output projection is shared by both
    /// directions.
    pub fn new(vocab: Vocabulary, config: BiLmConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::substream(config.seed, "bilm/init");
        let mut store = ParamStore::new();
        let v = vocab.len();
        let a = config.init;
        let embed = store.add("embed", Tensor::uniform(&[v, config.emb_dim], -a, a, &mut r));
        let mut stack = |store: &mut ParamStore, name: &str| {
            (0..config.layers)
                .map(|l| {
                    let input = if l == 0 { config.emb_dim } else { config.hidden };
                    LstmLayer::new(store, &format!("{name}/{l}/"), input, config.hidden, a, &mut r)
                })
                .collect::<Vec<_>>()
        };
        let fwd = stack(&mut store, "fwd");
        let bwd = stack(&mut store, "bwd");
        let out_w = store.add("out/w", Tensor::uniform(&[v, config.hidden], -a, a, &mut r));
        let out_b = store.add("out/b", Tensor::zeros(&[v]));
        Ok(BiLmModel {
            config,
            vocab,
            store,
            embed,
            out_w,
            out_b,
            fwd,
            bwd,
            initial_perplexity: None,
            log: Vec::new(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Width of a contextual vector: both top-layer hidden states.
    pub fn output_dim(&self) -> usize {
        2 * self.config.hidden
    }

    fn layers(&self, dir: Direction) -> &[LstmLayer] {
        match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }

    /// Runs one direction over `ids` (already in reading order for that
    /// direction) and returns the top-layer hidden states plus the final
    /// state of every layer.
    fn run_direction(
        &self,
        g: &mut Graph,
        p: &Bound,
        dir: Direction,
        ids: &[usize],
        state: Option<&State>,
    ) -> Result<(Vec<Var>, Vec<(Var, Var)>)> {
        let mut xs = ids
            .iter()
            .map(|&id| g.row(p[self.embed], id))
            .collect::<Result<Vec<_>>>()?;
        let mut finals = Vec::with_capacity(self.config.layers);
        for (l, layer) in self.layers(dir).iter().enumerate() {
            let init = state.map(|s| (g.constant(s[l].0.clone()), g.constant(s[l].1.clone())));
            let (hs, c) = layer.run(g, p, &xs, init)?;
            finals.push((*hs.last().expect("nonempty chunk"), c));
            xs = hs;
        }
        Ok((xs, finals))
    }

    /// Contextual vectors built on a caller's graph, so the language model
    /// can be fine-tuned through them. Returns one `2H` node per token.
    pub fn contextual_graph(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Vec<Var>> {
        if ids.is_empty() {
            return Err(Error::dim("contextual embedding of an empty token list"));
        }
        let mut seq = Vec::with_capacity(ids.len() + 2);
        seq.push(BOS);
        seq.extend_from_slice(ids);
        seq.push(EOS);
        let (fh, _) = self.run_direction(g, p, Direction::Forward, &seq[..seq.len() - 1], None)?;
        let rev: Vec<usize> = seq[1..].iter().rev().copied().collect();
        let (mut bh, _) = self.run_direction(g, p, Direction::Backward, &rev, None)?;
        bh.reverse();
        // forward state after reading token t sits at index t + 1 (after BOS);
        // backward state after reading token t sits at index t
        (0..ids.len()).map(|t| g.concat(&[fh[t + 1], bh[t]])).collect()
    }

    pub fn contextual_embed_ids(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let rows = self.contextual_graph(&mut g, &p, ids)?;
        let rows: Vec<Vec<f64>> = rows.iter().map(|&v| g.value(v).data().to_vec()).collect();
        Tensor::from_rows(&rows)
    }

    /// `[len, 2H]` contextual vectors for a token list.
    pub fn contextual_embed(&self, tokens: &[String]) -> Result<Tensor> {
        self.contextual_embed_ids(&self.vocab.encode(tokens))
    }

    /// Sum of next-token cross-entropies over `ids` predicting `targets`.
    fn chunk_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        dir: Direction,
        inputs: &[usize],
        targets: &[usize],
        state: Option<&State>,
    ) -> Result<(Var, State)> {
        let (hs, finals) = self.run_direction(g, p, dir, inputs, state)?;
        // One [T, H] x [H, V] product per window instead of T matrix-vector
        // products keeps the vocabulary projection cache friendly.
        let stacked = g.stack_rows(&hs)?;
        let w_t = g.transpose(p[self.out_w])?;
        let logits = g.matmul(stacked, w_t)?;
        let logits = g.add_row(logits, p[self.out_b])?;
        let total = g.cross_entropy_rows(logits, targets)?;
        let state = finals
            .iter()
            .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
            .collect();
        Ok((total, state))
    }

    /// Forward and backward perplexities over documents of ids, each read
    /// as one untruncated sequence.
    pub fn perplexity(&self, docs: &[Vec<usize>]) -> Result<(f64, f64)> {
        let mut sums = [0.0; 2];
        let mut n = 0usize;
        for doc in docs.iter().filter(|d| !d.is_empty()) {
            let seq = wrap(doc);
            for (k, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
                let s = oriented(&seq, dir);
                let mut g = Graph::new();
                let p = self.store.bind(&mut g);
                let (loss, _) = self.chunk_loss(&mut g, &p, dir, &s[..s.len() - 1], &s[1..], None)?;
                sums[k] += g.value(loss).item();
            }
            n += seq.len() - 1;
        }
        if n == 0 {
            return Err(Error::Data("perplexity of an empty corpus".into()));
        }
        Ok(((sums[0] / n as f64).exp(), (sums[1] / n as f64).exp()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "vocab_size": self.vocab.len(),
            "vocab_hash": self.vocab.hash(),
            "epochs": self.log.len(),
            "initial_perplexity": self.initial_perplexity,
            "log": self.log,
        });
        let mut c = Checkpoint::new("bilm", meta);
        c.push_params("", &self.store);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, vocab: Vocabulary) -> Result<Self> {
        c.expect_kind("bilm")?;
        let field = |k: &str| c.meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let hash: String = serde_json::from_value(field("vocab_hash"))?;
        if hash != vocab.hash() {
            return Err(Error::Format("bilm checkpoint was trained on a different vocabulary".into()));
        }
        let config: BiLmConfig = serde_json::from_value(field("config"))?;
        let mut m = BiLmModel::new(vocab, config)?;
        m.store.load_values(&c.params("")?)?;
        m.initial_perplexity = serde_json::from_value(field("initial_perplexity"))?;
        m.log = serde_json::from_value(field("log"))?;
        Ok(m)
    }
}

fn wrap(doc: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(doc.len() + 2);
    s.push(BOS);
    s.extend_from_slice(doc);
    s.push(EOS);
    s
}

fn oriented(seq: &[usize], dir: Direction) -> Vec<usize> {
    match dir {
        Direction::Forward => seq.to_vec(),
        Direction::Backward => seq.iter().rev().copied().collect(),
    }
}

/// Trains both directions by truncated backpropagation through time.
///
/// Each document becomes `BOS doc EOS`; the forward stack predicts the next
/// token and the backward stack the previous one. Documents are cut into
/// windows of `bptt_len` predictions whose recurrent state is carried over
/// as a constant. The loss is the mean cross-entropy over both directions.
pub fn train_bilm(docs: &[Vec<usize>], vocab: Vocabulary, config: &BiLmConfig) -> Result<BiLmModel> {
    config.validate()?;
    let docs: Vec<Vec<usize>> = docs.iter().filter(|d| !d.is_empty()).cloned().collect();
    if docs.is_empty() {
        return Err(Error::Data("bilm corpus is empty".into()));
    }
    if let Some(&bad) = docs.iter().flatten().find(|&&w| w >= vocab.len()) {
        return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", vocab.len())));
    }
    let mut model = BiLmModel::new(vocab, config.clone())?;
    let head = &docs[..docs.len().min(INITIAL_PERPLEXITY_DOCS)];
    model.initial_perplexity = Some(model.perplexity(head)?.0);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut r = rng::substream(config.seed, "bilm/order");

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut r);
        // (direction, doc, chunk start, carries state from previous chunk)
        let mut chunks = Vec::new();
        for &d in &order {
            let n_pred = docs[d].len() + 1;
            for dir in [Direction::Forward, Direction::Backward] {
                let mut start = 0;
                while start < n_pred {
                    chunks.push((dir, d, start));
                    start += config.bptt_len;
                }
            }
        }
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        let mut carried: Option<State> = None;
        for batch in chunks.chunks(config.batch) {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let mut parts = Vec::with_capacity(batch.len());
            let mut n_pred = 0;
            for &(dir, d, start) in batch {
                let seq = oriented(&wrap(&docs[d]), dir);
                let end = (start + config.bptt_len).min(seq.len() - 1);
                let state = if start == 0 { None } else { carried.as_ref() };
                let (loss, next) = model.chunk_loss(&mut g, &p, dir, &seq[start..end], &seq[start + 1..end + 1], state)?;
                let k = (dir == Direction::Backward) as usize;
                sums[k] += g.value(loss).item();
                counts[k] += end - start;
                n_pred += end - start;
                carried = Some(next);
                parts.push(loss);
            }
            let all = g.concat(&parts)?;
            let total = g.sum(all);
            let loss = g.scale(total, 1.0 / n_pred as f64);
            g.backward(loss)?;
            let mut grads = model.store.collect_grads(&g, &p);
            clip_global_norm(&mut grads, config.clip);
            adam.step(&mut model.store, &grads)?;
        }
        if !model.store.all_finite() {
            return Err(Error::Data(format!("bilm training diverged in epoch {}", epoch + 1)));
        }
        let fwd = (sums[0] / counts[0].max(1) as f64).exp();
        let bwd = (sums[1] / counts[1].max(1) as f64).exp();
        let ppl = ((sums[0] + sums[1]) / (counts[0] + counts[1]).max(1) as f64).exp();
        log::info!("bilm epoch {}: perplexity {ppl:.3} (fwd {fwd:.3}, bwd {bwd:.3})", epoch + 1);
        model.log.push(EpochLog {
            epoch: epoch + 1,
            perplexity: ppl,
            forward_perplexity: fwd,
            backward_perplexity: bwd,
        });
    }
    Ok(model)
}
