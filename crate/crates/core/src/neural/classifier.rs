use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{soft_attention, AttentionMode, SelfAttention, TopicAttention};
use crate::checkpoint::Checkpoint;
use crate::contextlm::BiLmModel;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{BiLstm, Bound, Graph, LstmLayer, ParamId, ParamStore, Tensor, Var};
use crate::rng;
use crate::text::vocab::PAD;
use crate::text::Vocabulary;
use crate::topics::TopicMatrix;

/// Every classifier in the comparison, baselines included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nb,
    Lr,
    Svm,
    Cnn,
    Lstm,
    LstmSoft,
    LstmSelf,
    TopicOnly,
    ElmoOnly,
    ElmoTopic,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Nb,
        Variant::Lr,
        Variant::Svm,
        Variant::Cnn,
        Variant::Lstm,
        Variant::LstmSoft,
        Variant::LstmSelf,
        Variant::TopicOnly,
        Variant::ElmoOnly,
        Variant::ElmoTopic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nb => "nb",
            Variant::Lr => "lr",
            Variant::Svm => "svm",
            Variant::Cnn => "cnn",
            Variant::Lstm => "lstm",
            Variant::LstmSoft => "lstm_soft",
            Variant::LstmSelf => "lstm_self",
            Variant::TopicOnly => "topic_only",
            Variant::ElmoOnly => "elmo_only",
            Variant::ElmoTopic => "elmo_topic",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::Nb | Variant::Lr | Variant::Svm)
    }

    pub fn uses_context(self) -> bool {
        matches!(self, Variant::ElmoOnly | Variant::ElmoTopic)
    }

    pub fn uses_topics(self) -> bool {
        matches!(self, Variant::TopicOnly | Variant::ElmoTopic)
    }

    pub fn uses_words(self) -> bool {
        !self.is_baseline() && !self.uses_context()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    /// Word embedding width when no pre-trained table is supplied.
    pub emb_dim: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_filters: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub init: f64,
    pub attention: AttentionMode,
    pub finetune_embeddings: bool,
    /// Update the language model through the contextual inputs.
    pub finetune_context: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 128,
            emb_dim: 100,
            cnn_widths: vec![3, 4, 5],
            cnn_filters: 100,
            dropout: 0.5,
            epochs: 30,
            batch: 32,
            lr: 1e-3,
            clip: 5.0,
            init: 0.08,
            attention: AttentionMode::Scalar,
            finetune_embeddings: true,
            finetune_context: false,
            seed: 0,
        }
    }
}

/// Pre-trained artifacts a variant may draw on.
#[derive(Clone, Copy, Debug, Default)]
pub struct Assets<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub bilm: Option<&'a BiLmModel>,
    pub topics: Option<&'a TopicMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Cnn(Vec<(ParamId, ParamId)>),
    Lstm(LstmLayer),
    Soft(BiLstm),
    SelfAttn(BiLstm, SelfAttention),
    Topic(BiLstm, SelfAttention, TopicAttention),
}

/// One sentence prepared for a classifier: token ids plus, for frozen
/// contextual variants, the precomputed contextual vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub ids: Vec<usize>,
    pub context: Option<Tensor>,
}

/// Intermediate values of one forward pass, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Representation fed to the head (before dropout).
    pub features: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

/// Handles for one minibatch graph.
pub struct Session {
    pub params: Bound,
    pub context_params: Option<Bound>,
    pub topics: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub variant: Variant,
    pub config: ClassifierConfig,
    pub n_classes: usize,
    vocab: Vocabulary,
    store: ParamStore,
    embed: Option<ParamId>,
    body: Body,
    head: (ParamId, ParamId),
    topic_filters: Option<(ParamId, ParamId)>,
    bilm: Option<BiLmModel>,
    topics: Option<TopicMatrix>,
}

fn missing(variant: Variant, asset: &str) -> Error {
    Error::Config(format!("variant {variant} needs the {asset} asset"))
}

/// Assembles an untrained classifier for one term.
pub fn build_classifier(
    variant: Variant,
    config: &ClassifierConfig,
    n_classes: usize,
    vocab: &Vocabulary,
    assets: Assets<'_>,
) -> Result<Classifier> {
    if variant.is_baseline() {
        return Err(Error::Config(format!("{variant} is not a neural variant")));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!("a classifier needs at least 2 classes, got {n_classes}")));
    }
    if variant == Variant::TopicOnly && assets.embeddings.is_none() {
        return Err(missing(variant, "embeddings"));
    }
    if variant.uses_context() && assets.bilm.is_none() {
        return Err(missing(variant, "bilm"));
    }
    if variant.uses_topics() && assets.topics.is_none() {
        return Err(missing(variant, "topic-matrix"));
    }
    if let Some(e) = assets.embeddings {
        if variant.uses_words() && e.vocab().hash() != vocab.hash() {
            return Err(Error::Config("embedding table was trained on a different vocabulary".into()));
        }
    }
    if let Some(b) = assets.bilm {
        if variant.uses_context() && b.vocab().hash() != vocab.hash() {
            return Err(Error::Config("language model was trained on a different vocabulary".into()));
        }
    }

    let mut r = rng::substream(config.seed, "clf/init");
    let a = config.init;
    let h = config.hidden;
    let mut store = ParamStore::new();
    let (embed, input_dim) = if variant.uses_words() {
        let table = match assets.embeddings {
            Some(e) => e.matrix().clone(),
            None => {
                let mut t = Tensor::uniform(&[vocab.len(), config.emb_dim], -a, a, &mut r);
                t.data_mut()[PAD * config.emb_dim..(PAD + 1) * config.emb_dim].fill(0.0);
                t
            }
        };
        let dim = table.cols();
        let id = if config.finetune_embeddings {
            store.add("embed", table)
        } else {
            store.add_frozen("embed", table)
        };
        (Some(id), dim)
    } else {
        (None, assets.bilm.expect("checked above").output_dim())
    };

    let body = match variant {
        Variant::Cnn => Body::Cnn(
            config
                .cnn_widths
                .iter()
                .map(|&w| {
                    (
                        store.add(
                            format!("cnn/{w}/filters"),
                            Tensor::uniform(&[config.cnn_filters, input_dim, w], -a, a, &mut r),
                        ),
                        store.add(format!("cnn/{w}/bias"), Tensor::zeros(&[config.cnn_filters])),
                    )
                })
                .collect(),
        ),
        Variant::Lstm => Body::Lstm(LstmLayer::new(&mut store, "lstm/", input_dim, h, a, &mut r)),
        Variant::LstmSoft => Body::Soft(BiLstm::new(&mut store, "lstm/", input_dim, h, a, &mut r)),
        Variant::LstmSelf | Variant::ElmoOnly => {
            let bi = BiLstm::new(&mut store, "lstm/", input_dim, h, a, &mut r);
            Body::SelfAttn(bi, SelfAttention::new(&mut store, "self/", 2 * h, a, &mut r))
        }
        Variant::TopicOnly | Variant::ElmoTopic => {
            let bi = BiLstm::new(&mut store, "lstm/", input_dim, h, a, &mut r);
            let sa = SelfAttention::new(&mut store, "self/", 2 * h, a, &mut r);
            let tm = assets.topics.expect("checked above");
            let ta = TopicAttention::new(&mut store, "topic/", 2 * h, tm.dim(), config.attention, a, &mut r);
            Body::Topic(bi, sa, ta)
        }
        Variant::Nb | Variant::Lr | Variant::Svm => unreachable!("rejected above"),
    };
    let topic_filters = match (variant.uses_topics(), assets.topics) {
        (true, Some(tm)) if tm.config.trainable => Some((
            store.add("topic/filters", tm.filters.clone()),
            store.add("topic/filter_bias", tm.bias.clone()),
        )),
        _ => None,
    };
    let feat_dim = match &body {
        Body::Cnn(banks) => banks.len() * config.cnn_filters,
        Body::Lstm(_) => h,
        Body::Soft(_) | Body::SelfAttn(..) => 2 * h,
        Body::Topic(_, _, ta) => ta.content_dim + ta.topic_dim,
    };
    let head = (
        store.add("head/w", Tensor::uniform(&[n_classes, feat_dim], -a, a, &mut r)),
        store.add("head/b", Tensor::zeros(&[n_classes])),
    );
    Ok(Classifier {
        variant,
        config: config.clone(),
        n_classes,
        vocab: vocab.clone(),
        store,
        embed,
        body,
        head,
        topic_filters,
        bilm: if variant.uses_context() { assets.bilm.cloned() } else { None },
        topics: if variant.uses_topics() { assets.topics.cloned() } else { None },
    })
}

impl Classifier {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bilm(&self) -> Option<&BiLmModel> {
        self.bilm.as_ref()
    }

    pub(crate) fn bilm_mut(&mut self) -> Option<&mut BiLmModel> {
        self.bilm.as_mut()
    }

    pub fn topics(&self) -> Option<&TopicMatrix> {
        self.topics.as_ref()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Width of the sequence inputs to the encoder.
    pub fn input_dim(&self) -> usize {
        match (self.embed, &self.bilm) {
            (Some(e), _) => self.store.get(e).cols(),
            (None, Some(b)) => b.output_dim(),
            (None, None) => 0,
        }
    }

    /// Width of the representation fed to the head.
    pub fn feature_dim(&self) -> usize {
        self.store.get(self.head.0).cols()
    }

    pub fn finetunes_context(&self) -> bool {
        self.config.finetune_context && self.bilm.is_some()
    }

    pub fn encode(&self, tokens: &[String]) -> Result<EncodedSample> {
        if tokens.is_empty() {
            return Err(Error::dim("cannot classify an empty sentence"));
        }
        let ids = self.vocab.encode(tokens);
        let context = match &self.bilm {
            Some(b) if !self.config.finetune_context => Some(b.contextual_embed_ids(&ids)?),
            _ => None,
        };
        Ok(EncodedSample { ids, context })
    }

    /// Binds parameters and builds the topic bank once per graph.
    pub fn session(&self, g: &mut Graph) -> Result<Session> {
        let params = self.store.bind(g);
        self.session_with(g, params)
    }

    /// Like [`Classifier::session`] but with parameters already bound,
    /// for example from a perturbed copy of the store.
    pub fn session_with(&self, g: &mut Graph, params: Bound) -> Result<Session> {
        let context_params = if self.finetunes_context() {
            self.bilm.as_ref().map(|b| b.store().bind(g))
        } else {
            None
        };
        let topics = match (&self.topics, self.topic_filters) {
            (Some(tm), Some((f, b))) => Some(tm.graph_vectors(g, params[f], params[b])?),
            (Some(tm), None) => Some(g.constant(tm.vectors.clone())),
            _ => None,
        };
        Ok(Session {
            params,
            context_params,
            topics,
        })
    }

    fn inputs(&self, g: &mut Graph, s: &Session, x: &EncodedSample) -> Result<Vec<Var>> {
        if x.ids.is_empty() {
            return Err(Error::dim("cannot classify an empty sentence"));
        }
        if let Some(e) = self.embed {
            return x.ids.iter().map(|&id| g.row(s.params[e], id)).collect();
        }
        let bilm = self.bilm.as_ref().expect("contextual variant");
        match (&x.context, &s.context_params) {
            (_, Some(cp)) => bilm.contextual_graph(g, cp, &x.ids),
            (Some(ctx), None) => {
                if ctx.rows() != x.ids.len() || ctx.cols() != bilm.output_dim() {
                    return Err(Error::dim(format!(
                        "contextual vectors {:?} for {} tokens",
                        ctx.shape(),
                        x.ids.len()
                    )));
                }
                (0..ctx.rows()).map(|t| Ok(g.constant(Tensor::vector(ctx.row(t).to_vec())))).collect()
            }
            (None, None) => Err(Error::State("sample was encoded without contextual vectors".into())),
        }
    }

    /// Class logits for one sample. Dropout is applied only when `dropout`
    /// carries a random source.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        s: &Session,
        x: &EncodedSample,
        dropout: Option<&mut R>,
    ) -> Result<Forward> {
        let p = &s.params;
        let xs = self.inputs(g, s, x)?;
        let (features, alpha, beta) = match &self.body {
            Body::Cnn(banks) => {
                let max_w = self.config.cnn_widths.iter().copied().max().unwrap_or(1);
                let mut cols = Vec::with_capacity(xs.len().max(max_w));
                if xs.len() < max_w {
                    let embed = p[self.embed.expect("cnn reads words")];
                    for _ in xs.len()..max_w {
                        cols.push(g.row(embed, PAD)?);
                    }
                }
                cols.extend(xs);
                let rows = g.stack_rows(&cols)?;
                let e = g.transpose(rows)?;
                let mut pooled = Vec::with_capacity(banks.len());
                for &(f, b) in banks {
                    let c = g.conv1d(e, p[f], Some(p[b]))?;
                    let c = g.relu(c);
                    pooled.push(g.maxpool_over_time(c)?);
                }
                (g.concat(&pooled)?, None, None)
            }
            Body::Lstm(layer) => {
                let (hs, _) = layer.run(g, p, &xs, None)?;
                (*hs.last().expect("nonempty"), None, None)
            }
            Body::Soft(bi) => {
                let hs = bi.run(g, p, &xs)?;
                let (c, alpha) = soft_attention(g, &hs)?;
                (c, Some(alpha), None)
            }
            Body::SelfAttn(bi, sa) => {
                let hs = bi.run(g, p, &xs)?;
                let (c, alpha) = sa.forward(g, p, &hs)?;
                (c, Some(alpha), None)
            }
            Body::Topic(bi, sa, ta) => {
                let hs = bi.run(g, p, &xs)?;
                let (c, alpha) = sa.forward(g, p, &hs)?;
                let out = ta.forward(g, p, c, s.topics.expect("topic variant"))?;
                (out.r, Some(alpha), Some(out.beta))
            }
        };
        let head_in = match dropout {
            Some(r) if self.config.dropout > 0.0 => g.dropout(features, self.config.dropout, r)?,
            _ => features,
        };
        let z = g.matvec(p[self.head.0], head_in)?;
        let logits = g.add(z, p[self.head.1])?;
        Ok(Forward {
            logits,
            features,
            alpha,
            beta,
        })
    }

    /// Class probabilities for each sample, without dropout.
    pub fn predict_proba(&self, samples: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        // bounded graphs keep memory flat on long lists
        for chunk in samples.chunks(64) {
            let mut g = Graph::new();
            let s = self.session(&mut g)?;
            for x in chunk {
                let f = self.forward::<rng::Rng>(&mut g, &s, x, None)?;
                let p = g.softmax(f.logits, 0)?;
                out.push(g.value(p).data().to_vec());
            }
        }
        Ok(out)
    }

    /// Copies trained topic filters back into the owned topic matrix.
    pub(crate) fn sync_topic_filters(&mut self) -> Result<()> {
        if let (Some(tm), Some((f, b))) = (self.topics.as_mut(), self.topic_filters) {
            tm.set_filters(self.store.get(f).clone(), self.store.get(b).clone())?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "variant": self.variant,
            "config": self.config,
            "n_classes": self.n_classes,
            "vocab_hash": self.vocab.hash(),
        });
        let mut c = Checkpoint::new("classifier", meta);
        c.push_params("clf/", &self.store);
        if let (true, Some(b)) = (self.finetunes_context(), &self.bilm) {
            c.push_params("bilm/", b.store());
        }
        c
    }

    /// Rebuilds the architecture from the same assets and restores the
    /// trained values.
    pub fn from_checkpoint(c: &Checkpoint, vocab: &Vocabulary, assets: Assets<'_>) -> Result<Self> {
        c.expect_kind("classifier")?;
        let field = |k: &str| c.meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let variant: Variant = serde_json::from_value(field("variant"))?;
        let config: ClassifierConfig = serde_json::from_value(field("config"))?;
        let n_classes: usize = serde_json::from_value(field("n_classes"))?;
        let hash: String = serde_json::from_value(field("vocab_hash"))?;
        if hash != vocab.hash() {
            return Err(Error::Format("classifier checkpoint was trained on a different vocabulary".into()));
        }
        let mut m = build_classifier(variant, &config, n_classes, vocab, assets)?;
        m.store.load_values(&c.params("clf/")?)?;
        if m.finetunes_context() {
            let stored = c.params("bilm/")?;
            m.bilm.as_mut().expect("context variant").store_mut().load_values(&stored)?;
        }
        m.sync_topic_filters()?;
        Ok(m)
    }
}
