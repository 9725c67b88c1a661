//! Commands behind the `senselab` binary.
//!
//! A [`Workspace`] pairs an output root with a [`PipelineConfig`]. Each
//! command reads its inputs from the layout below the root, writes its
//! outputs plus a `manifest.json` recording the stage config and content
//! hashes of every input, and warns when an input changed since a
//! downstream artifact was built from it.
//!
//! ```text
//! data/        train.jsonl test.jsonl dict.json corpus.txt vocab.json
//! assets/      lda/ embeddings/ bilm/ topic-matrix/
//! models/      <variant>/<term>/model.ckpt train_log.csv
//! reports/     <variant>/report.json summary.csv roc/ plots/
//! benchmark/   benchmark.csv benchmark.json seed-<n>/...
//! ```

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use config::{Paths, PipelineConfig};
pub use manifest::{file_hash, relative, Manifest, MANIFEST};

use crate::baselines::{train_baseline, BaselineKind, BaselineModel, LinearKind};
use crate::checkpoint::Checkpoint;
use crate::contextlm::{train_bilm, BiLmModel};
use crate::embeddings::{train_skipgram, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_term, EvalReport};
use crate::neural::{build_classifier, train_classifier, Assets, Classifier, Variant};
use crate::text::{
    generate_synthetic_benchmark, group_by_term, read_corpus, read_jsonl, write_corpus, write_jsonl, SenseSample,
    TermSenseDictionary, Vocabulary,
};
use crate::topics::{build_topic_matrix, train_lda, LdaModel, TopicMatrix};

pub const THREADS_ENV: &str = "SENSELAB_THREADS";

/// Pre-trained artifacts produced by `pretrain`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Asset {
    Lda,
    Embeddings,
    Bilm,
    TopicMatrix,
}

impl Asset {
    pub const ALL: [Asset; 4] = [Asset::Lda, Asset::Embeddings, Asset::Bilm, Asset::TopicMatrix];

    pub fn name(self) -> &'static str {
        match self {
            Asset::Lda => "lda",
            Asset::Embeddings => "embeddings",
            Asset::Bilm => "bilm",
            Asset::TopicMatrix => "topic-matrix",
        }
    }

    /// Assets that must exist before this one can be built.
    pub fn dependencies(self) -> &'static [Asset] {
        match self {
            Asset::TopicMatrix => &[Asset::Lda, Asset::Embeddings],
            _ => &[],
        }
    }

    /// The file downstream stages load and hash.
    pub fn file_name(self) -> &'static str {
        match self {
            Asset::Lda | Asset::Bilm => "model.ckpt",
            Asset::Embeddings => "embeddings.bin",
            Asset::TopicMatrix => "matrix.ckpt",
        }
    }

    /// Assets a classifier variant reads.
    pub fn required_by(variant: Variant) -> Vec<Asset> {
        let mut out = Vec::new();
        if variant.uses_words() || variant.uses_topics() {
            out.push(Asset::Embeddings);
        }
        if variant.uses_context() {
            out.push(Asset::Bilm);
        }
        if variant.uses_topics() {
            out.push(Asset::TopicMatrix);
        }
        out
    }
}

impl fmt::Display for Asset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Asset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Asset::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown asset `{s}` (expected lda, embeddings, bilm or topic-matrix)")))
    }
}

/// Which terms `train` covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TermSelection {
    All,
    One(String),
}

/// An output root plus the configuration every command runs under.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub config: PipelineConfig,
}

/// The dataset files as loaded by training commands. Test data is read
/// separately and only by `evaluate`.
struct TrainData {
    dictionary: TermSenseDictionary,
    vocab: Vocabulary,
    train: Vec<SenseSample>,
}

#[derive(Default)]
struct LoadedAssets {
    embeddings: Option<EmbeddingTable>,
    bilm: Option<BiLmModel>,
    topics: Option<TopicMatrix>,
}

impl LoadedAssets {
    fn view(&self) -> Assets<'_> {
        Assets {
            embeddings: self.embeddings.as_ref(),
            bilm: self.bilm.as_ref(),
            topics: self.topics.as_ref(),
        }
    }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: PipelineConfig) -> Self {
        Workspace {
            root: root.into(),
            config,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.data)
    }

    pub fn asset_dir(&self, asset: Asset) -> PathBuf {
        self.root.join(&self.config.paths.assets).join(asset.name())
    }

    pub fn asset_path(&self, asset: Asset) -> PathBuf {
        self.asset_dir(asset).join(asset.file_name())
    }

    pub fn model_dir(&self, variant: Variant, term: &str) -> PathBuf {
        self.root
            .join(&self.config.paths.models)
            .join(variant.name())
            .join(file_safe(term))
    }

    pub fn report_dir(&self, variant: Variant) -> PathBuf {
        self.root.join(&self.config.paths.reports).join(variant.name())
    }

    pub fn benchmark_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.benchmark)
    }

    fn data_file(&self, name: &str) -> Result<PathBuf> {
        let path = self.data_dir().join(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingAsset {
                asset: format!("dataset ({name})"),
                hint: "run `senselab generate` first".into(),
            })
        }
    }

    fn require_asset(&self, asset: Asset) -> Result<PathBuf> {
        let path = self.asset_path(asset);
        if !path.is_file() {
            return Err(Error::MissingAsset {
                asset: asset.name().into(),
                hint: format!("run `senselab pretrain {asset}` first"),
            });
        }
        let dir = self.asset_dir(asset);
        if let Ok(m) = Manifest::read(&dir) {
            for stale in m.stale_inputs(&self.root) {
                log::warn!("asset {asset} is stale: {stale} changed since it was built; rerun `senselab pretrain {asset}`");
            }
        }
        Ok(path)
    }

    fn read_vocab(&self) -> Result<Vocabulary> {
        let path = self.data_file("vocab.json")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn read_train(&self) -> Result<TrainData> {
        Ok(TrainData {
            dictionary: TermSenseDictionary::read(&self.data_file("dict.json")?)?,
            vocab: self.read_vocab()?,
            train: read_jsonl(&self.data_file("train.jsonl")?)?,
        })
    }

    fn load_assets(&self, needed: &[Asset], vocab: &Vocabulary, manifest: &mut Manifest) -> Result<LoadedAssets> {
        let mut out = LoadedAssets::default();
        for &asset in needed {
            let path = self.require_asset(asset)?;
            manifest.add_input(&self.root, &path)?;
            match asset {
                Asset::Embeddings => out.embeddings = Some(EmbeddingTable::read(&path, vocab.clone())?),
                Asset::Bilm => out.bilm = Some(BiLmModel::from_checkpoint(&Checkpoint::read(&path)?, vocab.clone())?),
                Asset::TopicMatrix => out.topics = Some(TopicMatrix::from_checkpoint(&Checkpoint::read(&path)?)?),
                Asset::Lda => {}
            }
        }
        Ok(out)
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Every file below `dir` except the manifest, in sorted order.
fn files_below(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn finish_manifest(root: &Path, dir: &Path, mut m: Manifest) -> Result<()> {
    for f in files_below(dir)? {
        m.add_output(root, &f)?;
    }
    m.write(dir)
}

/// Worker count from `SENSELAB_THREADS`, defaulting to the core count.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies `f` to every item on up to `threads` workers, keeping order.
fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().expect("no worker panicked holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|u| u.expect("every slot filled"))
        .collect()
}

/// Writes the synthetic dataset and the pre-training corpus.
///
/// The corpus holds the unlabeled documents followed by the training
/// sentences; test sentences never enter it.
pub fn cmd_generate(ws: &Workspace) -> Result<()> {
    let cfg = ws.config.synthetic_config();
    let bench = generate_synthetic_benchmark(&cfg)?;
    let dir = ws.data_dir();
    create_dir(&dir)?;
    write_jsonl(&dir.join("train.jsonl"), &bench.train)?;
    write_jsonl(&dir.join("test.jsonl"), &bench.test)?;
    bench.dictionary.write(&dir.join("dict.json"))?;
    let mut corpus = bench.unlabeled.clone();
    corpus.extend(bench.train.iter().map(|s| s.tokens.clone()));
    write_corpus(&dir.join("corpus.txt"), &corpus)?;
    let vocab = Vocabulary::build(corpus.iter(), ws.config.vocab_min_count);
    write_json(&dir.join("vocab.json"), &vocab)?;
    write_json(
        &dir.join("gold_topics.json"),
        &serde_json::json!({
            "topic_words": bench.topic_words,
            "train_topics": bench.train_topics,
            "test_topics": bench.test_topics,
        }),
    )?;
    let config = serde_json::json!({
        "synthetic": cfg,
        "vocab_min_count": ws.config.vocab_min_count,
    });
    let m = Manifest::new("generate", ws.config.seed, config)?;
    finish_manifest(&ws.root, &dir, m)?;
    log::info!(
        "generated {} train / {} test samples over {} terms, vocabulary {}",
        bench.train.len(),
        bench.test.len(),
        bench.dictionary.len(),
        vocab.len()
    );
    Ok(())
}

/// Trains one asset and returns the staleness warnings it caused
/// downstream.
pub fn cmd_pretrain(ws: &Workspace, asset: Asset) -> Result<Vec<String>> {
    for &dep in asset.dependencies() {
        ws.require_asset(dep)?;
    }
    let corpus_path = ws.data_file("corpus.txt")?;
    let vocab_path = ws.data_file("vocab.json")?;
    let vocab = ws.read_vocab()?;
    let dir = ws.asset_dir(asset);
    create_dir(&dir)?;
    let out = ws.asset_path(asset);
    let corpus_ids = || -> Result<Vec<Vec<usize>>> {
        Ok(read_corpus(&corpus_path)?.iter().map(|d| vocab.encode(d)).collect())
    };

    let config = match asset {
        Asset::Lda => serde_json::to_value(ws.config.lda_config())?,
        Asset::Embeddings => serde_json::to_value(ws.config.embeddings_config())?,
        Asset::Bilm => serde_json::to_value(ws.config.bilm_config())?,
        Asset::TopicMatrix => serde_json::to_value(ws.config.topic_config())?,
    };
    let mut m = Manifest::new(format!("pretrain {asset}"), ws.config.seed, config)?;
    m.add_input(&ws.root, &vocab_path)?;
    match asset {
        Asset::Lda => {
            m.add_input(&ws.root, &corpus_path)?;
            let cfg = ws.config.lda_config();
            let model = train_lda(&corpus_ids()?, vocab.len(), &cfg)?;
            model.to_checkpoint(&vocab.hash()).write(&out)?;
            model.write_top_words_tsv(&dir.join("top_words.tsv"), &vocab, ws.config.topic.k_top.min(vocab.len()))?;
            let mut csv = String::from("sweep,log_likelihood\n");
            for (i, ll) in model.log_likelihood.iter().enumerate() {
                csv.push_str(&format!("{},{ll}\n", i + 1));
            }
            let p = dir.join("train_log.csv");
            std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        }
        Asset::Embeddings => {
            m.add_input(&ws.root, &corpus_path)?;
            let cfg = ws.config.embeddings_config();
            let table = train_skipgram(&read_corpus(&corpus_path)?, &vocab, &cfg)?;
            table.write(&out)?;
            write_loss_csv(&dir.join("train_log.csv"), &table.log.epoch_loss)?;
        }
        Asset::Bilm => {
            m.add_input(&ws.root, &corpus_path)?;
            let cfg = ws.config.bilm_config();
            let model = train_bilm(&corpus_ids()?, vocab.clone(), &cfg)?;
            model.to_checkpoint().write(&out)?;
            let mut csv = String::from("epoch,perplexity,forward_perplexity,backward_perplexity\n");
            for e in &model.log {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    e.epoch, e.perplexity, e.forward_perplexity, e.backward_perplexity
                ));
            }
            let p = dir.join("train_log.csv");
            std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        }
        Asset::TopicMatrix => {
            let lda_path = ws.require_asset(Asset::Lda)?;
            let emb_path = ws.require_asset(Asset::Embeddings)?;
            m.add_input(&ws.root, &lda_path)?;
            m.add_input(&ws.root, &emb_path)?;
            let lda = LdaModel::from_checkpoint(&Checkpoint::read(&lda_path)?)?;
            if lda.vocab_size() != vocab.len() {
                return Err(Error::Data(format!(
                    "lda asset covers {} words but the vocabulary has {}; rerun `senselab pretrain lda`",
                    lda.vocab_size(),
                    vocab.len()
                )));
            }
            let emb = EmbeddingTable::read(&emb_path, vocab.clone())?;
            let matrix = build_topic_matrix(&lda, &vocab, &emb, &ws.config.topic_config(), &file_hash(&emb_path)?)?;
            matrix.to_checkpoint()?.write(&out)?;
        }
    }
    finish_manifest(&ws.root, &dir, m)?;
    log::info!("pretrained {asset} into {}", relative(&ws.root, &dir));
    Ok(downstream_warnings(ws))
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Warns about every built asset whose recorded inputs changed.
fn downstream_warnings(ws: &Workspace) -> Vec<String> {
    let mut out = Vec::new();
    for asset in Asset::ALL {
        let Ok(m) = Manifest::read(&ws.asset_dir(asset)) else { continue };
        for stale in m.stale_inputs(&ws.root) {
            let msg = format!("asset {asset} is stale: {stale} changed since it was built; rerun `senselab pretrain {asset}`");
            log::warn!("{msg}");
            out.push(msg);
        }
    }
    out
}

fn baseline_kind(ws: &Workspace, variant: Variant) -> BaselineKind {
    match variant {
        Variant::Nb => BaselineKind::NaiveBayes {
            tfidf_inputs: ws.config.nb_tfidf_inputs,
        },
        Variant::Svm => BaselineKind::Linear(LinearKind::Svm),
        _ => BaselineKind::Linear(LinearKind::Logistic),
    }
}

/// Trains `variant` on the selected terms, possibly in parallel.
///
/// Reads only the training split. Every term is attempted; the error lists
/// the terms that failed.
pub fn cmd_train(ws: &Workspace, variant: Variant, terms: &TermSelection) -> Result<()> {
    let data = ws.read_train()?;
    let by_term = group_by_term(&data.train);
    let selected: Vec<String> = match terms {
        TermSelection::All => data.dictionary.terms().map(str::to_string).collect(),
        TermSelection::One(t) => {
            if data.dictionary.senses(t).is_none() {
                return Err(Error::Config(format!("term `{t}` is not in the dictionary")));
            }
            vec![t.clone()]
        }
    };
    let mut base = Manifest::new("train", ws.config.seed, serde_json::Value::Null)?;
    base.add_input(&ws.root, &ws.data_file("train.jsonl")?)?;
    base.add_input(&ws.root, &ws.data_file("dict.json")?)?;
    base.add_input(&ws.root, &ws.data_file("vocab.json")?)?;
    let assets = ws.load_assets(&Asset::required_by(variant), &data.vocab, &mut base)?;

    let results = parallel_map(&selected, worker_threads(), |term| {
        train_term(ws, variant, term, &data, by_term.get(term).map_or(&[][..], Vec::as_slice), &assets, &base)
    });
    let failed: Vec<String> = selected
        .iter()
        .zip(&results)
        .filter_map(|(t, r)| r.as_ref().err().map(|e| format!("{t}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("training {variant} failed for {}", failed.join("; "))))
    }
}

fn train_term(
    ws: &Workspace,
    variant: Variant,
    term: &str,
    data: &TrainData,
    samples: &[SenseSample],
    assets: &LoadedAssets,
    base: &Manifest,
) -> Result<()> {
    let senses = data
        .dictionary
        .senses(term)
        .ok_or_else(|| Error::Config(format!("term `{term}` is not in the dictionary")))?;
    if samples.is_empty() {
        return Err(Error::Data(format!("no training samples for {term}")));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.sense_id).collect();
    let dir = ws.model_dir(variant, term);
    create_dir(&dir)?;
    let ckpt = dir.join("model.ckpt");
    let config = if variant.is_baseline() {
        let cfg = ws.config.linear_config(term);
        let docs: Vec<Vec<String>> = samples.iter().map(|s| s.tokens.clone()).collect();
        let model = train_baseline(&docs, &labels, senses.len(), baseline_kind(ws, variant), &cfg)?;
        model.to_checkpoint()?.write(&ckpt)?;
        serde_json::json!({
            "variant": variant,
            "term": term,
            "linear": cfg,
            "nb_tfidf_inputs": ws.config.nb_tfidf_inputs,
        })
    } else {
        let cfg = ws.config.classifier_config(term);
        let mut model = build_classifier(variant, &cfg, senses.len(), &data.vocab, assets.view())?;
        let encoded = samples.iter().map(|s| model.encode(&s.tokens)).collect::<Result<Vec<_>>>()?;
        let log = train_classifier(&mut model, &encoded, &labels)?;
        model.to_checkpoint().write(&ckpt)?;
        log.write_csv(&dir.join("train_log.csv"))?;
        serde_json::json!({"variant": variant, "term": term, "classifier": cfg})
    };
    let mut m = Manifest::new(format!("train {variant} {term}"), ws.config.seed, config)?;
    m.inputs = base.inputs.clone();
    finish_manifest(&ws.root, &dir, m)?;
    log::info!("trained {variant} for {term} on {} samples", samples.len());
    Ok(())
}

enum Trained {
    Baseline(BaselineModel),
    Neural(Box<Classifier>),
}

impl Trained {
    fn predict(&self, samples: &[SenseSample]) -> Result<Vec<Vec<f64>>> {
        match self {
            Trained::Baseline(m) => samples.iter().map(|s| m.predict_proba(&s.tokens)).collect(),
            Trained::Neural(m) => {
                let enc = samples.iter().map(|s| m.encode(&s.tokens)).collect::<Result<Vec<_>>>()?;
                m.predict_proba(&enc)
            }
        }
    }
}

/// Scores trained models on the test split and writes the report files.
pub fn cmd_evaluate(ws: &Workspace, variant: Variant) -> Result<EvalReport> {
    let dictionary = TermSenseDictionary::read(&ws.data_file("dict.json")?)?;
    let vocab = ws.read_vocab()?;
    let test_path = ws.data_file("test.jsonl")?;
    let by_term = group_by_term(&read_jsonl(&test_path)?);
    let mut m = Manifest::new(
        format!("evaluate {variant}"),
        ws.config.seed,
        serde_json::json!({"variant": variant}),
    )?;
    m.add_input(&ws.root, &test_path)?;
    let assets = ws.load_assets(&Asset::required_by(variant), &vocab, &mut m)?;

    let terms: Vec<(&str, &[String])> = dictionary.iter().filter(|(t, _)| by_term.contains_key(*t)).collect();
    let mut inputs = BTreeMap::new();
    let reports = parallel_map(&terms, worker_threads(), |&(term, senses)| {
        let dir = ws.model_dir(variant, term);
        let path = dir.join("model.ckpt");
        if !path.is_file() {
            return Err(Error::MissingAsset {
                asset: format!("{variant} model for {term}"),
                hint: format!("run `senselab train --variant {variant} --all-terms` first"),
            });
        }
        if let Ok(tm) = Manifest::read(&dir) {
            for stale in tm.stale_inputs(&ws.root) {
                log::warn!("{variant} model for {term} is stale: {stale} changed since training");
            }
        }
        let c = Checkpoint::read(&path)?;
        let model = if variant.is_baseline() {
            Trained::Baseline(BaselineModel::from_checkpoint(&c)?)
        } else {
            Trained::Neural(Box::new(Classifier::from_checkpoint(&c, &vocab, assets.view())?))
        };
        let samples = &by_term[term];
        let gold: Vec<usize> = samples.iter().map(|s| s.sense_id).collect();
        let probs = model.predict(samples)?;
        Ok((relative(&ws.root, &path), file_hash(&path)?, evaluate_term(term, senses, &probs, &gold)?))
    });
    let mut term_reports = Vec::with_capacity(reports.len());
    for r in reports {
        let (rel, hash, report) = r?;
        inputs.insert(rel, hash);
        term_reports.push(report);
    }
    m.inputs.extend(inputs);
    let report = aggregate(variant.name(), term_reports)?;
    let dir = ws.report_dir(variant);
    create_dir(&dir)?;
    report.write_all(&dir)?;
    finish_manifest(&ws.root, &dir, m)?;
    log::info!(
        "{variant}: accuracy {:.4}, macro-F1 {:.4}, AUC {}",
        report.mean_accuracy,
        report.mean_macro_f1,
        report.mean_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(report)
}

/// One variant's scores on one benchmark run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

/// Per-variant test AUC of the least frequent training sense of a term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareSense {
    pub term: String,
    pub class: usize,
    pub sense: String,
    pub train_count: usize,
    pub auc: BTreeMap<Variant, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub seed: u64,
    pub rows: Vec<BenchmarkRow>,
    pub rare_senses: Vec<RareSense>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMean {
    pub variant: Variant,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_hash: String,
    pub variants: Vec<Variant>,
    pub runs: Vec<BenchmarkRun>,
    pub means: Vec<VariantMean>,
}

impl BenchmarkReport {
    pub fn mean(&self, variant: Variant) -> Option<&VariantMean> {
        self.means.iter().find(|m| m.variant == variant)
    }

    /// One row per variant per seed, then one `mean` row per variant.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut csv = String::from("variant,seed,accuracy,macro_f1,auc\n");
        for run in &self.runs {
            for r in &run.rows {
                csv.push_str(&format!("{},{},{},{},{}\n", r.variant, r.seed, r.accuracy, r.macro_f1, opt(r.auc)));
            }
        }
        for m in &self.means {
            csv.push_str(&format!("{},mean,{},{},{}\n", m.variant, m.accuracy, m.macro_f1, opt(m.auc)));
        }
        csv
    }
}

/// Runs the whole pipeline for `seeds` consecutive root seeds, each in its
/// own sub-workspace, and aggregates the per-variant scores.
pub fn cmd_benchmark(ws: &Workspace, seeds: usize) -> Result<BenchmarkReport> {
    if seeds == 0 {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let variants = ws.config.variants.clone();
    if variants.is_empty() {
        return Err(Error::Config("no variants to benchmark".into()));
    }
    let dir = ws.benchmark_dir();
    create_dir(&dir)?;
    let mut runs = Vec::with_capacity(seeds);
    for i in 0..seeds {
        let seed = ws.config.seed + i as u64;
        let mut config = ws.config.clone();
        config.seed = seed;
        config.paths = Paths::default();
        let sub = Workspace::new(dir.join(format!("seed-{seed}")), config);
        runs.push(benchmark_run(&sub, &variants)?);
    }
    let means = variants
        .iter()
        .map(|&v| {
            let rows: Vec<&BenchmarkRow> = runs.iter().flat_map(|r| &r.rows).filter(|r| r.variant == v).collect();
            let n = rows.len() as f64;
            let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
            VariantMean {
                variant: v,
                accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
                macro_f1: rows.iter().map(|r| r.macro_f1).sum::<f64>() / n,
                auc: (aucs.len() == rows.len()).then(|| aucs.iter().sum::<f64>() / n),
            }
        })
        .collect();
    let mut config = ws.config.clone();
    config.paths = Paths::default();
    let config = serde_json::json!({"pipeline": config, "seeds": seeds});
    let m = Manifest::new("benchmark", ws.config.seed, config)?;
    let report = BenchmarkReport {
        config_hash: m.config_hash.clone(),
        variants,
        runs,
        means,
    };
    let csv = dir.join("benchmark.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    write_json(&dir.join("benchmark.json"), &report)?;
    let mut m = m;
    m.add_output(&ws.root, &csv)?;
    m.add_output(&ws.root, &dir.join("benchmark.json"))?;
    m.write(&dir)?;
    Ok(report)
}

fn benchmark_run(ws: &Workspace, variants: &[Variant]) -> Result<BenchmarkRun> {
    log::info!("benchmark run with seed {}", ws.config.seed);
    cmd_generate(ws)?;
    let mut needed: Vec<Asset> = variants.iter().flat_map(|&v| Asset::required_by(v)).collect();
    needed.extend(needed.clone().iter().flat_map(|a| a.dependencies().to_vec()));
    for asset in Asset::ALL {
        if needed.contains(&asset) {
            cmd_pretrain(ws, asset)?;
        }
    }
    let mut reports = BTreeMap::new();
    for &v in variants {
        cmd_train(ws, v, &TermSelection::All)?;
        reports.insert(v, cmd_evaluate(ws, v)?);
    }
    let rows = variants
        .iter()
        .map(|v| {
            let r = &reports[v];
            BenchmarkRow {
                variant: *v,
                seed: ws.config.seed,
                accuracy: r.mean_accuracy,
                macro_f1: r.mean_macro_f1,
                auc: r.mean_auc,
            }
        })
        .collect();

    let train = read_jsonl(&ws.data_file("train.jsonl")?)?;
    let dictionary = TermSenseDictionary::read(&ws.data_file("dict.json")?)?;
    let mut rare_senses = Vec::new();
    for (term, samples) in group_by_term(&train) {
        let n = dictionary.num_senses(&term);
        let mut counts = vec![0usize; n];
        samples.iter().for_each(|s| counts[s.sense_id] += 1);
        let (class, &train_count) = counts
            .iter()
            .enumerate()
            .min_by_key(|&(c, &k)| (k, c))
            .expect("terms have senses");
        let auc = reports
            .iter()
            .map(|(v, r)| {
                let auc = r.terms.iter().find(|t| t.term == term).and_then(|t| t.classes[class].auc);
                (*v, auc)
            })
            .collect();
        rare_senses.push(RareSense {
            sense: dictionary.senses(&term).expect("term in dictionary")[class].clone(),
            term,
            class,
            train_count,
            auc,
        });
    }
    Ok(BenchmarkRun {
        seed: ws.config.seed,
        rows,
        rare_senses,
    })
}
