use std::collections::BTreeMap;

use senselab::checkpoint::Checkpoint;
use senselab::contextlm::{BiLmConfig, BiLmModel};
use senselab::embeddings::EmbeddingTable;
use senselab::neural::{
    build_classifier, train_classifier, Assets, AttentionMode, Classifier, ClassifierConfig, EncodedSample, Variant,
};
use senselab::numerics::gradcheck::{check_params, GradCheckConfig};
use senselab::numerics::{argmax, Graph};
use senselab::rng;
use senselab::text::{generate_synthetic_benchmark, group_by_term, SenseSample, SyntheticConfig, TrainSchedule, Vocabulary};
use senselab::topics::{ConvConfig, TopicMatrix};
use senselab::Error;

const NEURAL: [Variant; 7] = [
    Variant::Cnn,
    Variant::Lstm,
    Variant::LstmSoft,
    Variant::LstmSelf,
    Variant::TopicOnly,
    Variant::ElmoOnly,
    Variant::ElmoTopic,
];

struct Fixture {
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    bilm: BiLmModel,
    topics: TopicMatrix,
    train: BTreeMap<String, Vec<SenseSample>>,
    test: BTreeMap<String, Vec<SenseSample>>,
}

impl Fixture {
    fn new(topic_weight: f64) -> Self {
        Self::with_schedule(topic_weight, TrainSchedule::default())
    }

    fn with_schedule(topic_weight: f64, schedule: TrainSchedule) -> Self {
        let b = generate_synthetic_benchmark(&SyntheticConfig {
            samples_per_sense_train: schedule,
            n_terms: 2,
            senses_per_term: 2,
            topic_vocab_size: 40,
            background_vocab_size: 20,
            topic_weight,
            unlabeled_docs: 20,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let docs: Vec<&Vec<String>> = b.unlabeled.iter().chain(b.train.iter().map(|s| &s.tokens)).collect();
        let vocab = Vocabulary::build(docs, 1);
        let embeddings = EmbeddingTable::random(vocab.clone(), 6, 1);
        let bilm = BiLmModel::new(
            vocab.clone(),
            BiLmConfig {
                emb_dim: 4,
                hidden: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let top: Vec<Vec<String>> = b.topic_words.iter().map(|w| w[..5].to_vec()).collect();
        let topics = TopicMatrix::from_words(
            top,
            &embeddings,
            &ConvConfig {
                filters: 5,
                width: 2,
                ..Default::default()
            },
            "fixture",
        )
        .unwrap();
        Fixture {
            vocab,
            embeddings,
            bilm,
            topics,
            train: group_by_term(&b.train),
            test: group_by_term(&b.test),
        }
    }

    fn assets(&self) -> Assets<'_> {
        Assets {
            embeddings: Some(&self.embeddings),
            bilm: Some(&self.bilm),
            topics: Some(&self.topics),
        }
    }

    fn build(&self, v: Variant, cfg: &ClassifierConfig) -> Classifier {
        build_classifier(v, cfg, 2, &self.vocab, self.assets()).unwrap()
    }
}

fn tiny(seed: u64) -> ClassifierConfig {
    ClassifierConfig {
        hidden: 3,
        cnn_widths: vec![2, 3],
        cnn_filters: 3,
        epochs: 3,
        batch: 8,
        lr: 1e-2,
        init: 0.3,
        seed,
        ..Default::default()
    }
}

fn encode(m: &Classifier, samples: &[SenseSample]) -> (Vec<EncodedSample>, Vec<usize>) {
    (
        samples.iter().map(|s| m.encode(&s.tokens).unwrap()).collect(),
        samples.iter().map(|s| s.sense_id).collect(),
    )
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("bert".parse::<Variant>(), Err(Error::Config(_))));
}

#[test]
fn missing_assets_are_config_errors() {
    let fx = Fixture::new(0.6);
    let cfg = tiny(0);
    let none = Assets::default();
    for (v, asset) in [
        (Variant::TopicOnly, "embeddings"),
        (Variant::ElmoOnly, "bilm"),
        (Variant::ElmoTopic, "bilm"),
    ] {
        match build_classifier(v, &cfg, 2, &fx.vocab, none) {
            Err(Error::Config(m)) => assert!(m.contains(asset), "{m}"),
            other => panic!("{other:?}"),
        }
    }
    let no_topics = Assets {
        topics: None,
        ..fx.assets()
    };
    match build_classifier(Variant::ElmoTopic, &cfg, 2, &fx.vocab, no_topics) {
        Err(Error::Config(m)) => assert!(m.contains("topic-matrix"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(build_classifier(Variant::Nb, &cfg, 2, &fx.vocab, fx.assets()).is_err());
    // plain word variants fall back to random embeddings
    assert!(build_classifier(Variant::LstmSelf, &cfg, 2, &fx.vocab, none).is_ok());
}

#[test]
fn representation_widths() {
    let fx = Fixture::new(0.6);
    let bilm = BiLmModel::new(fx.vocab.clone(), BiLmConfig::default()).unwrap();
    let assets = Assets {
        bilm: Some(&bilm),
        ..fx.assets()
    };
    let cfg = ClassifierConfig::default();
    let m = build_classifier(Variant::ElmoTopic, &cfg, 3, &fx.vocab, assets).unwrap();
    assert_eq!(m.input_dim(), 128);
    let table = EmbeddingTable::random(fx.vocab.clone(), 8, 0);
    let words: Vec<Vec<String>> = vec![fx.vocab.tokens()[4..7].to_vec(); 2];
    let tm = TopicMatrix::from_words(words, &table, &ConvConfig::default(), "t").unwrap();
    let assets = Assets {
        topics: Some(&tm),
        embeddings: Some(&table),
        ..assets
    };
    let m = build_classifier(Variant::TopicOnly, &cfg, 3, &fx.vocab, assets).unwrap();
    assert_eq!(m.feature_dim(), 2 * 128 + 100);
    let m = build_classifier(Variant::Cnn, &cfg, 3, &fx.vocab, assets).unwrap();
    assert_eq!(m.feature_dim(), 300);
}

#[test]
fn every_variant_passes_a_gradient_check() {
    let fx = Fixture::new(0.6);
    let (term, samples) = fx.train.iter().next().unwrap();
    let picks = [&samples[0], samples.last().unwrap()];
    for v in NEURAL {
        let m = fx.build(v, &ClassifierConfig { init: 0.5, ..tiny(1) });
        let xs: Vec<EncodedSample> = picks.iter().map(|s| m.encode(&s.tokens[..4]).unwrap()).collect();
        let report = check_params(
            m.store(),
            |g, p| {
                let s = m.session_with(g, p.clone())?;
                let mut losses = Vec::new();
                for (x, sample) in xs.iter().zip(&picks) {
                    let f = m.forward::<rng::Rng>(g, &s, x, None)?;
                    losses.push(g.cross_entropy(f.logits, sample.sense_id)?);
                }
                let all = g.concat(&losses)?;
                Ok(g.sum(all))
            },
            GradCheckConfig {
                max_coords: 250,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{v} on {term}: {report:?}");
    }
}

#[test]
fn finetuned_context_gradients_reach_the_language_model() {
    let fx = Fixture::new(0.6);
    let cfg = ClassifierConfig {
        finetune_context: true,
        ..tiny(2)
    };
    let m = fx.build(Variant::ElmoOnly, &cfg);
    let sample = &fx.train.values().next().unwrap()[0];
    let x = m.encode(&sample.tokens[..3]).unwrap();
    assert!(x.context.is_none());
    let mut g = Graph::new();
    let s = m.session(&mut g).unwrap();
    let f = m.forward::<rng::Rng>(&mut g, &s, &x, None).unwrap();
    let loss = g.cross_entropy(f.logits, 0).unwrap();
    g.backward(loss).unwrap();
    let grads = m.bilm().unwrap().store().collect_grads(&g, s.context_params.as_ref().unwrap());
    assert!(grads.iter().flatten().any(|&v| v != 0.0));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let fx = Fixture::new(0.8);
    let samples = fx.train.values().next().unwrap();
    for v in NEURAL {
        let cfg = ClassifierConfig { epochs: 6, ..tiny(3) };
        let mut a = fx.build(v, &cfg);
        let (xs, ys) = encode(&a, samples);
        let log = train_classifier(&mut a, &xs, &ys).unwrap();
        assert_eq!(log.epoch_loss.len(), 6);
        assert!(log.epoch_loss[5] < log.epoch_loss[0], "{v}: {:?}", log.epoch_loss);
        let mut b = fx.build(v, &cfg);
        train_classifier(&mut b, &xs, &ys).unwrap();
        assert_eq!(a, b, "{v}");
        for p in a.predict_proba(&xs).unwrap() {
            assert!(p.iter().all(|x| x.is_finite()));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn rare_sense_with_one_sample_trains() {
    let fx = Fixture::new(0.6);
    let samples = fx.train.values().next().unwrap();
    let major = samples.iter().filter(|s| s.sense_id == 0).count() > samples.len() / 2;
    let (big, small) = if major { (0, 1) } else { (1, 0) };
    let mut picked: Vec<SenseSample> = samples.iter().filter(|s| s.sense_id == big).take(10).cloned().collect();
    picked.push(samples.iter().find(|s| s.sense_id == small).unwrap().clone());
    let mut m = fx.build(Variant::ElmoTopic, &tiny(4));
    let (xs, ys) = encode(&m, &picked);
    train_classifier(&mut m, &xs, &ys).unwrap();

    let single: Vec<SenseSample> = picked[..10].to_vec();
    let (xs, ys) = encode(&m, &single);
    assert!(matches!(train_classifier(&mut m, &xs, &ys), Err(Error::Data(_))));
}

#[test]
fn cnn_separates_pure_topic_term() {
    let balanced = TrainSchedule {
        long_tail: false,
        head: 30,
        ..Default::default()
    };
    let fx = Fixture::with_schedule(1.0, balanced);
    let cfg = ClassifierConfig {
        hidden: 8,
        cnn_filters: 8,
        epochs: 30,
        batch: 8,
        lr: 1e-2,
        ..ClassifierConfig::default()
    };
    for (term, train) in &fx.train {
        let mut m = build_classifier(Variant::Cnn, &cfg, 2, &fx.vocab, fx.assets()).unwrap();
        let (xs, ys) = encode(&m, train);
        train_classifier(&mut m, &xs, &ys).unwrap();
        let (txs, tys) = encode(&m, &fx.test[term]);
        let probs = m.predict_proba(&txs).unwrap();
        let right = probs.iter().zip(&tys).filter(|(p, &y)| argmax(p) == y).count();
        let acc = right as f64 / tys.len() as f64;
        assert!(acc >= 0.9, "{term}: {acc}");
    }
}

#[test]
fn checkpoints_restore_trained_models() {
    let fx = Fixture::new(0.6);
    let samples = fx.train.values().next().unwrap();
    for (v, cfg) in [
        (Variant::TopicOnly, tiny(5)),
        (
            Variant::ElmoTopic,
            ClassifierConfig {
                attention: AttentionMode::Vector(2),
                finetune_context: true,
                epochs: 1,
                ..tiny(6)
            },
        ),
        (Variant::Cnn, tiny(7)),
    ] {
        let mut m = fx.build(v, &cfg);
        let (xs, ys) = encode(&m, samples);
        train_classifier(&mut m, &xs, &ys).unwrap();
        let c = Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap();
        let back = Classifier::from_checkpoint(&c, &fx.vocab, fx.assets()).unwrap();
        assert_eq!(back, m, "{v}");
    }
}
