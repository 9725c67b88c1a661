//! TF-IDF features with naive Bayes, logistic regression and linear SVM.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax_slice};
use crate::rng;

/// Sparse feature vector as `(feature, value)` pairs sorted by feature.
pub type SparseVec = Vec<(usize, f64)>;

fn dot(w: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(j, v)| w[j] * v).sum()
}

/// Term counting and inverse document frequencies fitted on a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    fitted: Option<TfidfState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TfidfState {
    features: BTreeMap<String, usize>,
    df: Vec<u64>,
    n_docs: usize,
}

impl TfidfVectorizer {
    pub fn new() -> Self {
        TfidfVectorizer::default()
    }

    /// Features are the distinct training tokens in lexicographic order.
    pub fn fit(docs: &[Vec<String>]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Data("tf-idf needs at least one document".into()));
        }
        let mut df_by_token: BTreeMap<String, u64> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&String> = doc.iter().collect();
            seen.sort();
            seen.dedup();
            for t in seen {
                *df_by_token.entry(t.clone()).or_default() += 1;
            }
        }
        let features = df_by_token.keys().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(TfidfVectorizer {
            fitted: Some(TfidfState {
                features,
                df: df_by_token.into_values().collect(),
                n_docs: docs.len(),
            }),
        })
    }

    fn state(&self) -> Result<&TfidfState> {
        self.fitted
            .as_ref()
            .ok_or_else(|| Error::State("tf-idf vectorizer used before fit".into()))
    }

    pub fn n_features(&self) -> Result<usize> {
        Ok(self.state()?.df.len())
    }

    pub fn n_docs(&self) -> Result<usize> {
        Ok(self.state()?.n_docs)
    }

    pub fn feature(&self, token: &str) -> Result<Option<usize>> {
        Ok(self.state()?.features.get(token).copied())
    }

    /// `ln(n_docs / df)` of a feature.
    pub fn idf(&self, feature: usize) -> Result<f64> {
        let s = self.state()?;
        Ok((s.n_docs as f64 / s.df[feature] as f64).ln())
    }

    /// Raw counts of known tokens; unseen tokens are dropped.
    pub fn counts(&self, doc: &[String]) -> Result<SparseVec> {
        let s = self.state()?;
        let mut c: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&j) = s.features.get(t) {
                *c.entry(j).or_default() += 1.0;
            }
        }
        Ok(c.into_iter().collect())
    }

    /// Raw count times idf for every known token.
    pub fn transform(&self, doc: &[String]) -> Result<SparseVec> {
        self.counts(doc)?
            .into_iter()
            .map(|(j, tf)| Ok((j, tf * self.idf(j)?)))
            .collect()
    }
}

/// Per-class scores for one sample.
pub trait Scorer {
    fn n_classes(&self) -> usize;
    fn predict_scores(&self, x: &SparseVec) -> Vec<f64>;

    fn predict(&self, x: &SparseVec) -> usize {
        argmax(&self.predict_scores(x))
    }

    /// Scores mapped to a distribution by softmax.
    fn predict_proba(&self, x: &SparseVec) -> Vec<f64> {
        softmax_slice(&self.predict_scores(x))
    }
}

fn check_training(xs: &[SparseVec], ys: &[usize], n_classes: usize, n_features: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::dim(format!("{} samples with {} labels", xs.len(), ys.len())));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Label(format!("label {y} outside {n_classes} classes")));
    }
    if let Some(&(j, _)) = xs.iter().flatten().find(|(j, _)| *j >= n_features) {
        return Err(Error::dim(format!("feature {j} outside {n_features} features")));
    }
    Ok(())
}

/// JSON has no infinities, so absent classes are written as `null`.
mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|&x| x.is_finite().then_some(x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

/// Multinomial naive Bayes with Laplace smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    /// Log class priors; classes without samples get negative infinity.
    #[serde(with = "neg_inf_as_null")]
    pub log_prior: Vec<f64>,
    /// `[class][feature]` log likelihoods.
    pub log_likelihood: Vec<Vec<f64>>,
}

pub fn train_nb(xs: &[SparseVec], ys: &[usize], n_classes: usize, n_features: usize, alpha: f64) -> Result<NaiveBayesModel> {
    check_training(xs, ys, n_classes, n_features)?;
    if alpha <= 0.0 {
        return Err(Error::Config(format!("naive Bayes alpha must be positive, got {alpha}")));
    }
    let mut class_n = vec![0usize; n_classes];
    let mut counts = vec![vec![0.0; n_features]; n_classes];
    for (x, &y) in xs.iter().zip(ys) {
        class_n[y] += 1;
        for &(j, v) in x {
            counts[y][j] += v;
        }
    }
    let n = xs.len() as f64;
    let log_prior = class_n
        .iter()
        .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
        .collect();
    let log_likelihood = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + alpha * n_features as f64;
            row.into_iter().map(|c| ((c + alpha) / total).ln()).collect()
        })
        .collect();
    Ok(NaiveBayesModel {
        alpha,
        log_prior,
        log_likelihood,
    })
}

impl Scorer for NaiveBayesModel {
    fn n_classes(&self) -> usize {
        self.log_prior.len()
    }

    /// Unnormalized log posteriors.
    fn predict_scores(&self, x: &SparseVec) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(&p, ll)| p + dot(ll, x))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub epochs: usize,
    /// Step size of logistic regression; the SVM uses the Pegasos schedule.
    pub lr: f64,
    pub reg: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            epochs: 200,
            lr: 0.5,
            reg: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    /// `[class][feature]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(kind: LinearKind, n_classes: usize, n_features: usize) -> Self {
        LinearModel {
            kind,
            weights: vec![vec![0.0; n_features]; n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.iter().chain(self.weights.iter().flatten()).all(|v| v.is_finite())
    }
}

impl Scorer for LinearModel {
    fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn predict_scores(&self, x: &SparseVec) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| dot(w, x) + b)
            .collect()
    }
}

/// Mean cross-entropy plus `reg / 2 * ||W||^2` and its gradient
/// `(dW, db)`. Biases are not regularized.
pub fn logistic_loss_grad(m: &LinearModel, xs: &[SparseVec], ys: &[usize], reg: f64) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut gw: Vec<Vec<f64>> = m.weights.iter().map(|w| w.iter().map(|v| reg * v).collect()).collect();
    let mut gb = vec![0.0; m.bias.len()];
    let mut loss: f64 = 0.5 * reg * m.weights.iter().flatten().map(|v| v * v).sum::<f64>();
    for (x, &y) in xs.iter().zip(ys) {
        let p = m.predict_proba(x);
        loss -= p[y].max(1e-300).ln() / n;
        for (c, &pc) in p.iter().enumerate() {
            let d = (pc - if c == y { 1.0 } else { 0.0 }) / n;
            gb[c] += d;
            for &(j, v) in x {
                gw[c][j] += d * v;
            }
        }
    }
    (loss, gw, gb)
}

fn train_logistic(xs: &[SparseVec], ys: &[usize], m: &mut LinearModel, config: &LinearConfig) {
    for _ in 0..config.epochs {
        let (_, gw, gb) = logistic_loss_grad(m, xs, ys, config.reg);
        for (w, g) in m.weights.iter_mut().zip(&gw) {
            w.iter_mut().zip(g).for_each(|(a, b)| *a -= config.lr * b);
        }
        m.bias.iter_mut().zip(&gb).for_each(|(a, b)| *a -= config.lr * b);
    }
}

/// One-vs-rest Pegasos: step `1 / (reg t)` on a randomly drawn sample,
/// shrinking the weights every step. The bias is treated as the weight of
/// a constant feature.
fn train_svm(xs: &[SparseVec], ys: &[usize], m: &mut LinearModel, config: &LinearConfig) {
    let n = xs.len();
    let reg = config.reg.max(1e-12);
    for c in 0..m.bias.len() {
        let mut r = rng::substream(config.seed, &format!("svm/{c}"));
        // w is stored as scale * v so shrinking is O(1)
        let mut v = vec![0.0; m.weights[c].len()];
        let mut vb = 0.0;
        let mut scale = 1.0;
        for t in 1..=config.epochs * n {
            let i = r.gen_range(0..n);
            let y = if ys[i] == c { 1.0 } else { -1.0 };
            let eta = 1.0 / (reg * t as f64);
            let margin = y * scale * (dot(&v, &xs[i]) + vb);
            let shrink = 1.0 - eta * reg;
            if shrink <= 0.0 {
                v.fill(0.0);
                vb = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                for &(j, x) in &xs[i] {
                    v[j] += eta * y * x / scale;
                }
                vb += eta * y / scale;
            }
            if scale < 1e-100 {
                v.iter_mut().for_each(|a| *a *= scale);
                vb *= scale;
                scale = 1.0;
            }
        }
        m.weights[c] = v.into_iter().map(|a| a * scale).collect();
        m.bias[c] = vb * scale;
    }
}

pub fn train_linear(
    xs: &[SparseVec],
    ys: &[usize],
    n_classes: usize,
    n_features: usize,
    kind: LinearKind,
    config: &LinearConfig,
) -> Result<LinearModel> {
    check_training(xs, ys, n_classes, n_features)?;
    let mut present = ys.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Data("linear models need at least two classes in training".into()));
    }
    let mut m = LinearModel::zeros(kind, n_classes, n_features);
    match kind {
        LinearKind::Logistic => train_logistic(xs, ys, &mut m, config),
        LinearKind::Svm => train_svm(xs, ys, &mut m, config),
    }
    if !m.is_finite() {
        return Err(Error::Data("linear model training diverged".into()));
    }
    Ok(m)
}

/// A fitted feature pipeline plus classifier, as stored for one term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaselineModel {
    NaiveBayes {
        vectorizer: TfidfVectorizer,
        /// Feed tf-idf weights instead of raw counts.
        tfidf_inputs: bool,
        model: NaiveBayesModel,
    },
    Linear {
        vectorizer: TfidfVectorizer,
        model: LinearModel,
    },
}

impl BaselineModel {
    pub fn features(&self, doc: &[String]) -> Result<SparseVec> {
        match self {
            BaselineModel::NaiveBayes {
                vectorizer,
                tfidf_inputs: false,
                ..
            } => vectorizer.counts(doc),
            BaselineModel::NaiveBayes { vectorizer, .. } | BaselineModel::Linear { vectorizer, .. } => {
                vectorizer.transform(doc)
            }
        }
    }

    pub fn scorer(&self) -> &dyn Scorer {
        match self {
            BaselineModel::NaiveBayes { model, .. } => model,
            BaselineModel::Linear { model, .. } => model,
        }
    }

    pub fn predict_proba(&self, doc: &[String]) -> Result<Vec<f64>> {
        Ok(self.scorer().predict_proba(&self.features(doc)?))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new("baseline", serde_json::to_value(self)?))
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("baseline")?;
        Ok(serde_json::from_value(c.meta.clone())?)
    }
}

/// Fits the vectorizer and classifier for one term's training sentences.
pub fn train_baseline(
    docs: &[Vec<String>],
    ys: &[usize],
    n_classes: usize,
    kind: BaselineKind,
    config: &LinearConfig,
) -> Result<BaselineModel> {
    let vectorizer = TfidfVectorizer::fit(docs)?;
    let nf = vectorizer.n_features()?;
    Ok(match kind {
        BaselineKind::NaiveBayes { tfidf_inputs } => {
            let xs = docs
                .iter()
                .map(|d| if tfidf_inputs { vectorizer.transform(d) } else { vectorizer.counts(d) })
                .collect::<Result<Vec<_>>>()?;
            let model = train_nb(&xs, ys, n_classes, nf, 1.0)?;
            BaselineModel::NaiveBayes {
                vectorizer,
                tfidf_inputs,
                model,
            }
        }
        BaselineKind::Linear(kind) => {
            let xs = docs.iter().map(|d| vectorizer.transform(d)).collect::<Result<Vec<_>>>()?;
            let model = train_linear(&xs, ys, n_classes, nf, kind, config)?;
            BaselineModel::Linear { vectorizer, model }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    NaiveBayes { tfidf_inputs: bool },
    Linear(LinearKind),
}
