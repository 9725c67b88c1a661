use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng;
use crate::text::Vocabulary;

use super::lda::LdaModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvConfig {
    pub filters: usize,
    pub width: usize,
    pub activation: Activation,
    /// Whether classifiers update the filters during training.
    pub trainable: bool,
    /// Number of top words per topic.
    pub k_top: usize,
    pub seed: u64,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            filters: 100,
            width: 3,
            activation: Activation::Tanh,
            trainable: true,
            k_top: 100,
            seed: 0,
        }
    }
}

impl ConvConfig {
    /// Filters drawn uniformly from `±1/sqrt(d w)` with zero bias.
    pub fn init_filters(&self, dim: usize) -> (Tensor, Tensor) {
        let mut r = rng::substream(self.seed, "topic-filters");
        let a = 1.0 / ((dim * self.width) as f64).sqrt();
        (
            Tensor::uniform(&[self.filters, dim, self.width], -a, a, &mut r),
            Tensor::zeros(&[self.filters]),
        )
    }
}

/// Stacks word vectors column-wise into a `[d, k]` matrix.
pub fn stack_embeddings(words: &[&[f64]]) -> Result<Tensor> {
    let k = words.len();
    let d = words.first().map_or(0, |w| w.len());
    if k == 0 || d == 0 || words.iter().any(|w| w.len() != d) {
        return Err(Error::dim("topic words need equal, nonzero embedding lengths"));
    }
    let mut data = vec![0.0; d * k];
    for (j, w) in words.iter().enumerate() {
        for (i, &v) in w.iter().enumerate() {
            data[i * k + j] = v;
        }
    }
    Tensor::matrix(d, k, data)
}

/// Topic vector on a graph: max over positions of `act(conv(E) + b)`.
pub fn topic_vector_graph(g: &mut Graph, e: Var, filters: Var, bias: Var, activation: Activation) -> Result<Var> {
    let c = g.conv1d(e, filters, Some(bias))?;
    let c = match activation {
        Activation::Tanh => g.tanh(c),
        Activation::Identity => c,
    };
    g.maxpool_over_time(c)
}

/// Topic vector of an embedding stack `e [d, k]`; length equals the
/// number of filters.
pub fn build_topic_vector(e: &Tensor, filters: &Tensor, bias: &Tensor, activation: Activation) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let (e, f, b) = (g.constant(e.clone()), g.constant(filters.clone()), g.constant(bias.clone()));
    let t = topic_vector_graph(&mut g, e, f, b, activation)?;
    Ok(g.value(t).data().to_vec())
}

/// The bank of topic vectors plus everything needed to rebuild them with
/// updated filters.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicMatrix {
    pub config: ConvConfig,
    pub top_words: Vec<Vec<String>>,
    /// Per-topic embedding stacks `[d, k]`.
    pub inputs: Vec<Tensor>,
    pub filters: Tensor,
    pub bias: Tensor,
    /// `[J, f]`, one row per topic.
    pub vectors: Tensor,
    /// Content hash of the embedding table the stacks were read from.
    pub embedding_id: String,
}

impl TopicMatrix {
    pub fn from_words(
        top_words: Vec<Vec<String>>,
        embeddings: &EmbeddingTable,
        config: &ConvConfig,
        embedding_id: impl Into<String>,
    ) -> Result<Self> {
        if top_words.is_empty() {
            return Err(Error::Data("topic matrix needs at least one topic".into()));
        }
        let (filters, bias) = config.init_filters(embeddings.dim());
        let inputs = top_words
            .iter()
            .map(|words| {
                if words.len() < config.width {
                    return Err(Error::dim(format!(
                        "{} top words are fewer than filter width {}",
                        words.len(),
                        config.width
                    )));
                }
                let rows: Vec<&[f64]> = words.iter().map(|w| embeddings.lookup(w)).collect();
                stack_embeddings(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = TopicMatrix {
            config: config.clone(),
            top_words,
            inputs,
            filters,
            bias,
            vectors: Tensor::scalar(0.0),
            embedding_id: embedding_id.into(),
        };
        m.refresh()?;
        Ok(m)
    }

    pub fn n_topics(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.config.filters
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        self.vectors.row(j)
    }

    /// Recomputes the stored vectors from the current filters.
    pub fn refresh(&mut self) -> Result<()> {
        let rows = self
            .inputs
            .iter()
            .map(|e| build_topic_vector(e, &self.filters, &self.bias, self.config.activation))
            .collect::<Result<Vec<_>>>()?;
        let vectors = Tensor::from_rows(&rows)?;
        if !vectors.is_finite() {
            return Err(Error::Data("topic vectors are not finite".into()));
        }
        self.vectors = vectors;
        Ok(())
    }

    pub fn set_filters(&mut self, filters: Tensor, bias: Tensor) -> Result<()> {
        if filters.shape() != self.filters.shape() || bias.shape() != self.bias.shape() {
            return Err(Error::dim("replacement filters change shape"));
        }
        self.filters = filters;
        self.bias = bias;
        self.refresh()
    }

    /// Stacks all topic vectors as a `[J, f]` graph node built from the
    /// given filter nodes, so gradients reach the filters.
    pub fn graph_vectors(&self, g: &mut Graph, filters: Var, bias: Var) -> Result<Var> {
        let rows = self
            .inputs
            .iter()
            .map(|e| {
                let e = g.constant(e.clone());
                topic_vector_graph(g, e, filters, bias, self.config.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        g.stack_rows(&rows)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "config": self.config,
            "top_words": self.top_words,
            "embedding_id": self.embedding_id,
        });
        let mut c = Checkpoint::new("topic-matrix", meta);
        for (j, e) in self.inputs.iter().enumerate() {
            c.push_f64(format!("input/{j}"), e.shape().to_vec(), e.data().to_vec());
        }
        c.push_f64("filters", self.filters.shape().to_vec(), self.filters.data().to_vec());
        c.push_f64("bias", self.bias.shape().to_vec(), self.bias.data().to_vec());
        c.push_f64("vectors", self.vectors.shape().to_vec(), self.vectors.data().to_vec());
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("topic-matrix")?;
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("topic-matrix meta lacks {k}")))
        };
        let config: ConvConfig = serde_json::from_value(field("config")?)?;
        let top_words: Vec<Vec<String>> = serde_json::from_value(field("top_words")?)?;
        let embedding_id: String = serde_json::from_value(field("embedding_id")?)?;
        let tensor = |name: &str| -> Result<Tensor> {
            let (shape, data) = c.f64_blob(name)?;
            Tensor::new(shape.to_vec(), data.to_vec())
        };
        let inputs = (0..top_words.len())
            .map(|j| tensor(&format!("input/{j}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(TopicMatrix {
            config,
            top_words,
            inputs,
            filters: tensor("filters")?,
            bias: tensor("bias")?,
            vectors: tensor("vectors")?,
            embedding_id,
        })
    }
}

/// Builds one topic vector per LDA topic from its top words.
pub fn build_topic_matrix(
    model: &LdaModel,
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
    config: &ConvConfig,
    embedding_id: &str,
) -> Result<TopicMatrix> {
    let top_words = (0..model.n_topics())
        .map(|t| {
            Ok(model
                .top_k_words(t, config.k_top)?
                .into_iter()
                .map(|(id, _)| vocab.token(id).to_string())
                .collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    TopicMatrix::from_words(top_words, embeddings, config, embedding_id)
}
