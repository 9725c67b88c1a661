use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Dot-product attention of every state against the last one.
/// Returns `(context, alpha)`.
pub fn soft_attention(g: &mut Graph, hs: &[Var]) -> Result<(Var, Var)> {
    let last = *hs.last().ok_or_else(|| Error::dim("attention over an empty sequence"))?;
    let m = g.stack_rows(hs)?;
    let scores = g.matvec(m, last)?;
    let alpha = g.softmax(scores, 0)?;
    let mt = g.transpose(m)?;
    Ok((g.matvec(mt, alpha)?, alpha))
}

/// `u_t = tanh(W h_t + b)`, `alpha = softmax(u_t . u_w)`, `c = sum alpha_t h_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfAttention {
    pub dim: usize,
    w: ParamId,
    b: ParamId,
    u: ParamId,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, init: f64, rng: &mut R) -> Self {
        SelfAttention {
            dim,
            w: store.add(format!("{prefix}w"), Tensor::uniform(&[dim, dim], -init, init, rng)),
            b: store.add(format!("{prefix}b"), Tensor::zeros(&[dim])),
            u: store.add(format!("{prefix}u"), Tensor::uniform(&[dim], -init, init, rng)),
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w, self.b, self.u]
    }

    /// Returns `(c, alpha)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, hs: &[Var]) -> Result<(Var, Var)> {
        if hs.is_empty() {
            return Err(Error::dim("attention over an empty sequence"));
        }
        let mut scores = Vec::with_capacity(hs.len());
        for &h in hs {
            let z = g.matvec(p[self.w], h)?;
            let z = g.add(z, p[self.b])?;
            let u = g.tanh(z);
            scores.push(g.dot(u, p[self.u])?);
        }
        let scores = g.concat(&scores)?;
        let alpha = g.softmax(scores, 0)?;
        let m = g.stack_rows(hs)?;
        let mt = g.transpose(m)?;
        Ok((g.matvec(mt, alpha)?, alpha))
    }
}

/// How the attention score of a topic is formed from the bilinear term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "dim")]
pub enum AttentionMode {
    /// `v_ij` is a scalar and `v_w` a trainable scalar weight.
    Scalar,
    /// `v_ij` has one coordinate per bilinear map and `v_w` is a vector.
    Vector(usize),
}

impl AttentionMode {
    pub fn width(self) -> usize {
        match self {
            AttentionMode::Scalar => 1,
            AttentionMode::Vector(m) => m,
        }
    }
}

/// Attention over a bank of topic vectors driven by a content vector:
/// `v_j = tanh(c' W t_j + b)`, `beta = softmax(v_j . v_w)`,
/// `s = sum beta_j t_j`, output `[c, s]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopicAttention {
    pub content_dim: usize,
    pub topic_dim: usize,
    pub mode: AttentionMode,
    /// `[m * topic_dim, content_dim]`; block `o` holds the transpose of the
    /// `o`-th bilinear map.
    w: ParamId,
    b: ParamId,
    v: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct TopicAttentionOutput {
    pub r: Var,
    pub s: Var,
    pub beta: Var,
}

impl TopicAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        content_dim: usize,
        topic_dim: usize,
        mode: AttentionMode,
        init: f64,
        rng: &mut R,
    ) -> Self {
        let m = mode.width();
        // a scalar v_w starts at 1 so the scores initially follow v_ij
        let v = match mode {
            AttentionMode::Scalar => Tensor::filled(&[1], 1.0),
            AttentionMode::Vector(_) => Tensor::uniform(&[m], -init, init, rng),
        };
        TopicAttention {
            content_dim,
            topic_dim,
            mode,
            w: store.add(
                format!("{prefix}w"),
                Tensor::uniform(&[m * topic_dim, content_dim], -init, init, rng),
            ),
            b: store.add(format!("{prefix}b"), Tensor::zeros(&[m])),
            v: store.add(format!("{prefix}v"), v),
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w, self.b, self.v]
    }

    /// `topics` is the `[J, topic_dim]` bank.
    pub fn forward(&self, g: &mut Graph, p: &Bound, c: Var, topics: Var) -> Result<TopicAttentionOutput> {
        let (tc, tt) = (g.value(c), g.value(topics));
        if tc.rank() != 1 || tc.len() != self.content_dim {
            return Err(Error::dim(format!(
                "topic attention content vector c has shape {:?}, expected [{}]",
                tc.shape(),
                self.content_dim
            )));
        }
        if tt.rank() != 2 || tt.cols() != self.topic_dim || tt.rows() == 0 {
            return Err(Error::dim(format!(
                "topic matrix T has shape {:?}, expected [J, {}] with J >= 1",
                tt.shape(),
                self.topic_dim
            )));
        }
        let m = self.mode.width();
        let q = g.matvec(p[self.w], c)?;
        let mut scores = None;
        for o in 0..m {
            let qo = if m == 1 { q } else { g.slice(q, o * self.topic_dim, self.topic_dim)? };
            let bilinear = g.matvec(topics, qo)?;
            let bo = g.slice(p[self.b], o, 1)?;
            let z = g.add(bilinear, bo)?;
            let v = g.tanh(z);
            let vw = g.slice(p[self.v], o, 1)?;
            let term = g.mul(v, vw)?;
            scores = Some(match scores {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let beta = g.softmax(scores.expect("at least one coordinate"), 0)?;
        let tt = g.transpose(topics)?;
        let s = g.matvec(tt, beta)?;
        let r = g.concat(&[c, s])?;
        Ok(TopicAttentionOutput { r, s, beta })
    }
}
