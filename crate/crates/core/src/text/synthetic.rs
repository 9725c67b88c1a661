//! Synthetic stand-in for a clinical abbreviation corpus.
//!
//! Generative process:
//!
//! * every sense of every term owns one latent topic, and every topic owns a
//!   disjoint block of pseudo-words (`topic_vocab_size` words split evenly);
//! * a sentence draws each content word from its sense topic with
//!   probability `topic_weight`, otherwise from a shared background
//!   vocabulary; within a block words follow a Zipf law;
//! * the abbreviation token is inserted at a uniformly random position;
//! * training counts per sense follow a long-tail schedule whose rarest
//!   sense gets between `rare_min` and `rare_max` samples, while the test
//!   set has exactly `samples_per_sense_test` samples for every sense;
//! * an unlabeled corpus of longer single-topic documents (occasionally
//!   mentioning the owning abbreviation) feeds the unsupervised stages.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dictionary::TermSenseDictionary;
use super::sample::{SampleSource, SenseSample};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const TERMS: [&str; 40] = [
    "ab", "ac", "ama", "asa", "av", "bal", "bk", "bm", "ca", "cea", "cr", "cva", "cvp", "cvs",
    "dc", "dip", "dm", "dt", "ec", "ed", "er", "fish", "gt", "im", "ir", "ivf", "la", "le",
    "mom", "mr", "ms", "nad", "op", "pa", "pcp", "pda", "pe", "ra", "sbp", "sma",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const BACKGROUND_OFFSET: usize = 200_000;
const PHRASE_OFFSET: usize = 300_000;
const MIN_WORDS_PER_TOPIC: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    /// Off means every sense gets `head` samples.
    pub long_tail: bool,
    pub head: usize,
    /// Count of the r-th most frequent sense is `head * decay^r`.
    pub decay: f64,
    pub rare_min: usize,
    pub rare_max: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            long_tail: true,
            head: 80,
            decay: 0.35,
            rare_min: 1,
            rare_max: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_terms: usize,
    pub senses_per_term: usize,
    /// Content words shared out evenly among all sense topics.
    pub topic_vocab_size: usize,
    pub background_vocab_size: usize,
    pub samples_per_sense_train: TrainSchedule,
    pub samples_per_sense_test: usize,
    /// Probability that a content word comes from the sense topic.
    pub topic_weight: f64,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub unlabeled_docs: usize,
    pub doc_min_len: usize,
    pub doc_max_len: usize,
    /// Chance that an unlabeled document mentions the abbreviation owning
    /// its topic.
    pub doc_mention_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_terms: 10,
            senses_per_term: 3,
            topic_vocab_size: 720,
            background_vocab_size: 150,
            samples_per_sense_train: TrainSchedule::default(),
            samples_per_sense_test: 15,
            topic_weight: 0.6,
            zipf_exponent: 1.0,
            min_len: 8,
            max_len: 14,
            unlabeled_docs: 1500,
            doc_min_len: 20,
            doc_max_len: 40,
            doc_mention_rate: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn n_topics(&self) -> usize {
        self.n_terms * self.senses_per_term
    }

    pub fn words_per_topic(&self) -> usize {
        self.topic_vocab_size / self.n_topics().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_terms == 0 || self.senses_per_term < 2 {
            return Err(Error::Config(
                "need at least one term and two senses per term".into(),
            ));
        }
        if self.words_per_topic() < MIN_WORDS_PER_TOPIC {
            return Err(Error::Config(format!(
                "topic_vocab_size {} cannot give {} topics {MIN_WORDS_PER_TOPIC}+ disjoint words each",
                self.topic_vocab_size,
                self.n_topics()
            )));
        }
        if self.background_vocab_size == 0 && self.topic_weight < 1.0 {
            return Err(Error::Config("background vocabulary is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.topic_weight) || !(0.0..=1.0).contains(&self.doc_mention_rate) {
            return Err(Error::Config("weights must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.doc_min_len > self.doc_max_len {
            return Err(Error::Config("invalid length range".into()));
        }
        let s = &self.samples_per_sense_train;
        if s.head == 0 || s.rare_min == 0 || s.rare_min > s.rare_max {
            return Err(Error::Config("invalid training schedule".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub dictionary: TermSenseDictionary,
    pub train: Vec<SenseSample>,
    pub test: Vec<SenseSample>,
    /// Latent topic of each training sample.
    pub train_topics: Vec<usize>,
    pub test_topics: Vec<usize>,
    /// Content vocabulary of each latent topic.
    pub topic_words: Vec<Vec<String>>,
    /// Unlabeled tokenized documents for unsupervised pre-training.
    pub unlabeled: Vec<Vec<String>>,
}

/// Deterministic pronounceable pseudo-word for an index below 343,000.
pub fn pseudo_word(mut index: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let mut out = String::with_capacity(6);
    for _ in 0..3 {
        let syl = index % n;
        index /= n;
        out.push(CONSONANTS[syl / VOWELS.len()] as char);
        out.push(VOWELS[syl % VOWELS.len()] as char);
    }
    out
}

fn term_name(i: usize) -> String {
    match TERMS.get(i) {
        Some(t) => t.to_uppercase(),
        None => format!("X{}", pseudo_word(i).to_uppercase()),
    }
}

fn zipf(n: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / ((r + 1) as f64).powf(exponent))).expect("nonempty")
}

struct Sampler<'a> {
    config: &'a SyntheticConfig,
    topic_words: &'a [Vec<String>],
    background: Vec<String>,
    topic_dist: WeightedIndex<f64>,
    background_dist: Option<WeightedIndex<f64>>,
}

impl Sampler<'_> {
    fn content_word(&self, topic: usize, rng: &mut Rng) -> String {
        let from_topic = self.background_dist.is_none() || rng.gen::<f64>() < self.config.topic_weight;
        match (&self.background_dist, from_topic) {
            (Some(bg), false) => self.background[bg.sample(rng)].clone(),
            _ => self.topic_words[topic][self.topic_dist.sample(rng)].clone(),
        }
    }

    fn words(&self, topic: usize, len: usize, rng: &mut Rng) -> Vec<String> {
        (0..len).map(|_| self.content_word(topic, rng)).collect()
    }

    fn sentence(&self, term: &str, topic: usize, rng: &mut Rng) -> (Vec<String>, usize) {
        let len = rng.gen_range(self.config.min_len..=self.config.max_len);
        let mut tokens = self.words(topic, len, rng);
        let pos = rng.gen_range(0..=len);
        tokens.insert(pos, term.to_lowercase());
        (tokens, pos)
    }
}

/// Per-sense training counts for one term, in sense order.
fn train_counts(schedule: &TrainSchedule, senses: usize, rng: &mut Rng) -> Vec<usize> {
    if !schedule.long_tail {
        return vec![schedule.head; senses];
    }
    let mut by_rank: Vec<usize> = (0..senses)
        .map(|r| {
            let c = (schedule.head as f64 * schedule.decay.powi(r as i32)).round() as usize;
            c.max(schedule.rare_max + 1)
        })
        .collect();
    by_rank[senses - 1] = rng.gen_range(schedule.rare_min..=schedule.rare_max);
    let mut order: Vec<usize> = (0..senses).collect();
    order.shuffle(rng);
    let mut counts = vec![0; senses];
    for (rank, &sense) in order.iter().enumerate() {
        counts[sense] = by_rank[rank];
    }
    counts
}

pub fn generate_synthetic_benchmark(config: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let wpt = config.words_per_topic();
    let n_topics = config.n_topics();
    let topic_words: Vec<Vec<String>> = (0..n_topics)
        .map(|t| (0..wpt).map(|j| pseudo_word(t * wpt + j)).collect())
        .collect();
    let background: Vec<String> = (0..config.background_vocab_size)
        .map(|j| pseudo_word(BACKGROUND_OFFSET + j))
        .collect();
    let sampler = Sampler {
        config,
        topic_words: &topic_words,
        topic_dist: zipf(wpt, config.zipf_exponent),
        background_dist: (!background.is_empty() && config.topic_weight < 1.0)
            .then(|| zipf(background.len(), config.zipf_exponent)),
        background,
    };

    let mut dictionary = TermSenseDictionary::new();
    let mut bench = SyntheticBenchmark {
        dictionary: TermSenseDictionary::new(),
        train: Vec::new(),
        test: Vec::new(),
        train_topics: Vec::new(),
        test_topics: Vec::new(),
        topic_words: topic_words.clone(),
        unlabeled: Vec::new(),
    };
    let mut rng = rng::substream(config.seed, "generate");
    let terms: Vec<String> = (0..config.n_terms).map(term_name).collect();
    for (ti, term) in terms.iter().enumerate() {
        let phrases: Vec<String> = (0..config.senses_per_term)
            .map(|s| {
                let base = PHRASE_OFFSET + 2 * (ti * config.senses_per_term + s);
                format!("{} {}", pseudo_word(base), pseudo_word(base + 1))
            })
            .collect();
        dictionary.insert(term.clone(), phrases.clone())?;
        let counts = train_counts(&config.samples_per_sense_train, config.senses_per_term, &mut rng);
        for (split, per_sense) in [(0, counts), (1, vec![config.samples_per_sense_test; config.senses_per_term])] {
            for (sense, &n) in per_sense.iter().enumerate() {
                let topic = ti * config.senses_per_term + sense;
                for _ in 0..n {
                    let (tokens, abbrev_pos) = sampler.sentence(term, topic, &mut rng);
                    let sample = SenseSample {
                        term: term.clone(),
                        sense_id: sense,
                        sense_phrase: phrases[sense].clone(),
                        tokens,
                        abbrev_pos,
                        source: SampleSource::Synthetic,
                    };
                    if split == 0 {
                        bench.train.push(sample);
                        bench.train_topics.push(topic);
                    } else {
                        bench.test.push(sample);
                        bench.test_topics.push(topic);
                    }
                }
            }
        }
    }

    let mut doc_rng = rng::substream(config.seed, "generate/unlabeled");
    for _ in 0..config.unlabeled_docs {
        let topic = doc_rng.gen_range(0..n_topics);
        let len = doc_rng.gen_range(config.doc_min_len..=config.doc_max_len);
        let mut doc = sampler.words(topic, len, &mut doc_rng);
        if doc_rng.gen::<f64>() < config.doc_mention_rate {
            let pos = doc_rng.gen_range(0..=len);
            doc.insert(pos, terms[topic / config.senses_per_term].to_lowercase());
        }
        bench.unlabeled.push(doc);
    }
    bench.dictionary = dictionary;
    Ok(bench)
}
