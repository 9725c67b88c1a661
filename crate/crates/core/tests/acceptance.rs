//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed. Built without the libtest harness so the
//! lines always reach the terminal.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use senselab::baselines::{train_nb, Scorer, SparseVec};
use senselab::contextlm::{BiLmConfig, BiLmModel};
use senselab::embeddings::EmbeddingTable;
use senselab::eval::{macro_f1, roc_auc};
use senselab::neural::{build_classifier, AttentionMode, Assets, ClassifierConfig, TopicAttention, Variant};
use senselab::numerics::gradcheck::{check_params, check_tensors, GradCheckConfig, GradCheckReport};
use senselab::numerics::{softmax_slice, Graph, LstmLayer, ParamStore, Tensor, Var};
use senselab::pipeline::{cmd_benchmark, BenchmarkReport, PipelineConfig, Workspace, THREADS_ENV};
use senselab::rng;
use senselab::text::{generate_synthetic_benchmark, group_by_term, SyntheticConfig, Vocabulary};
use senselab::topics::{ConvConfig, LdaModel, TopicMatrix};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs())
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng::seeded(seed))
}

/// Values in ±[0.1, 1] so kinks at zero stay far from the probe points.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random_tensor(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + 0.9 * v.abs());
    }
    t
}

/// Distinct values spaced at least 0.05 apart, shuffled.
fn distinct(shape: &[usize], seed: u64) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 0.5).collect();
    vals.shuffle(&mut rng::seeded(seed));
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Weighted sum of `out` with fixed pseudo-random weights, so every output
/// coordinate contributes with an O(1) gradient.
fn weighted(g: &mut Graph, out: Var) -> senselab::Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(random_tensor(&shape, 991 + shape.iter().product::<usize>() as u64));
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

type OpLoss = Box<dyn Fn(&mut Graph, &[Var]) -> senselab::Result<Var>>;

fn single_op_cases() -> Vec<(&'static str, Vec<Tensor>, OpLoss)> {
    let t = random_tensor;
    vec![
        ("matmul", vec![t(&[3, 4], 1), t(&[4, 2], 2)], Box::new(|g, v| { let o = g.matmul(v[0], v[1])?; weighted(g, o) })),
        ("matvec", vec![t(&[3, 4], 3), t(&[4], 4)], Box::new(|g, v| { let o = g.matvec(v[0], v[1])?; weighted(g, o) })),
        ("transpose", vec![t(&[3, 4], 5)], Box::new(|g, v| { let o = g.transpose(v[0])?; weighted(g, o) })),
        ("add", vec![t(&[3, 4], 6), t(&[3, 4], 7)], Box::new(|g, v| { let o = g.add(v[0], v[1])?; weighted(g, o) })),
        ("sub", vec![t(&[3, 4], 8), t(&[3, 4], 9)], Box::new(|g, v| { let o = g.sub(v[0], v[1])?; weighted(g, o) })),
        ("mul", vec![t(&[3, 4], 10), t(&[3, 4], 11)], Box::new(|g, v| { let o = g.mul(v[0], v[1])?; weighted(g, o) })),
        ("scale", vec![t(&[5], 12)], Box::new(|g, v| { let o = g.scale(v[0], -1.7); weighted(g, o) })),
        ("tanh", vec![t(&[6], 13)], Box::new(|g, v| { let o = g.tanh(v[0]); weighted(g, o) })),
        ("sigmoid", vec![t(&[6], 14)], Box::new(|g, v| { let o = g.sigmoid(v[0]); weighted(g, o) })),
        ("relu", vec![away_from_zero(&[8], 15)], Box::new(|g, v| { let o = g.relu(v[0]); weighted(g, o) })),
        ("softmax vector", vec![t(&[5], 16)], Box::new(|g, v| { let o = g.softmax(v[0], 0)?; weighted(g, o) })),
        ("softmax columns", vec![t(&[3, 4], 17)], Box::new(|g, v| { let o = g.softmax(v[0], 0)?; weighted(g, o) })),
        ("softmax rows", vec![t(&[3, 4], 18)], Box::new(|g, v| { let o = g.softmax(v[0], 1)?; weighted(g, o) })),
        (
            "conv1d",
            vec![t(&[3, 7], 19), t(&[4, 3, 2], 20), t(&[4], 21)],
            Box::new(|g, v| { let o = g.conv1d(v[0], v[1], Some(v[2]))?; weighted(g, o) }),
        ),
        ("maxpool", vec![distinct(&[4, 6], 22)], Box::new(|g, v| { let o = g.maxpool_over_time(v[0])?; weighted(g, o) })),
        ("cross_entropy", vec![t(&[5], 23)], Box::new(|g, v| g.cross_entropy(v[0], 2))),
        ("cross_entropy_rows", vec![t(&[4, 3], 24)], Box::new(|g, v| g.cross_entropy_rows(v[0], &[0, 2, 1, 2]))),
        ("add_row", vec![t(&[3, 4], 25), t(&[4], 26)], Box::new(|g, v| { let o = g.add_row(v[0], v[1])?; weighted(g, o) })),
        ("sum", vec![t(&[3, 4], 27)], Box::new(|g, v| { let s = g.sum(v[0]); let sq = g.mul(s, s)?; Ok(g.sum(sq)) })),
        ("mean", vec![t(&[3, 4], 28)], Box::new(|g, v| { let s = g.mean(v[0]); let sq = g.mul(s, s)?; Ok(g.sum(sq)) })),
        ("dot", vec![t(&[6], 29), t(&[6], 30)], Box::new(|g, v| g.dot(v[0], v[1]))),
        ("concat", vec![t(&[3], 31), t(&[4], 32)], Box::new(|g, v| { let o = g.concat(&[v[0], v[1]])?; weighted(g, o) })),
        ("stack_rows", vec![t(&[4], 33), t(&[4], 34)], Box::new(|g, v| { let o = g.stack_rows(&[v[0], v[1]])?; weighted(g, o) })),
        ("slice", vec![t(&[7], 35)], Box::new(|g, v| { let o = g.slice(v[0], 2, 4)?; weighted(g, o) })),
        ("row", vec![t(&[3, 4], 36)], Box::new(|g, v| { let o = g.row(v[0], 1)?; weighted(g, o) })),
        (
            "dropout",
            vec![t(&[10], 37)],
            Box::new(|g, v| { let o = g.dropout(v[0], 0.3, &mut rng::seeded(5))?; weighted(g, o) }),
        ),
    ]
}

fn classifier_gradchecks(h: f64) -> Vec<(String, GradCheckReport)> {
    let b = generate_synthetic_benchmark(&SyntheticConfig {
        n_terms: 1,
        senses_per_term: 2,
        topic_vocab_size: 40,
        background_vocab_size: 20,
        unlabeled_docs: 20,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let docs: Vec<&Vec<String>> = b.unlabeled.iter().chain(b.train.iter().map(|s| &s.tokens)).collect();
    let vocab = Vocabulary::build(docs, 1);
    let embeddings = EmbeddingTable::random(vocab.clone(), 5, 1);
    let bilm = BiLmModel::new(vocab.clone(), BiLmConfig { emb_dim: 3, hidden: 4, init: 0.5, ..Default::default() }).unwrap();
    let top: Vec<Vec<String>> = b.topic_words.iter().map(|w| w[..4].to_vec()).collect();
    let topics = TopicMatrix::from_words(top, &embeddings, &ConvConfig { filters: 4, width: 2, ..Default::default() }, "e").unwrap();
    let assets = Assets { embeddings: Some(&embeddings), bilm: Some(&bilm), topics: Some(&topics) };
    let cfg = ClassifierConfig {
        hidden: 4,
        cnn_widths: vec![2, 3],
        cnn_filters: 3,
        init: 0.5,
        seed: 1,
        ..Default::default()
    };
    let train = group_by_term(&b.train);
    let samples = train.values().next().unwrap();
    let picks = [&samples[0], samples.last().unwrap()];
    let gc = GradCheckConfig { h, max_coords: 250, seed: 0 };
    let mut out = Vec::new();
    for v in Variant::ALL.into_iter().filter(|v| !v.is_baseline()) {
        for mode in [AttentionMode::Scalar, AttentionMode::Vector(2)] {
            if mode != AttentionMode::Scalar && !v.uses_topics() {
                continue;
            }
            let m = build_classifier(v, &ClassifierConfig { attention: mode, ..cfg.clone() }, 2, &vocab, assets).unwrap();
            let xs: Vec<_> = picks.iter().map(|s| m.encode(&s.tokens[..5]).unwrap()).collect();
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
                gc,
            )
            .unwrap();
            out.push((format!("{v} {mode:?}"), report));
        }
    }
    let ids = vocab.encode(&b.unlabeled[0][..5]);
    let report = check_params(
        bilm.store(),
        |g, p| {
            let hs = bilm.contextual_graph(g, p, &ids)?;
            let cat = g.concat(&hs)?;
            weighted(g, cat)
        },
        gc,
    )
    .unwrap();
    out.push(("bilm".into(), report));
    let mut store = ParamStore::new();
    let layer = LstmLayer::new(&mut store, "", 3, 6, 0.6, &mut rng::seeded(9));
    let rows: Vec<Tensor> = (0..8).map(|i| random_tensor(&[3], 100 + i)).collect();
    let report = check_params(
        &store,
        |g, p| {
            let xs: Vec<Var> = rows.iter().map(|r| g.constant(r.clone())).collect();
            let (hs, _) = layer.run(g, p, &xs, None)?;
            let last = *hs.last().unwrap();
            weighted(g, last)
        },
        gc,
    )
    .unwrap();
    out.push(("lstm over 8 steps".into(), report));
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut op_coords = 0;
    let mut worst_op = (String::new(), 0.0f64);
    for (name, inputs, loss) in single_op_cases() {
        let r = check_tensors(&inputs, |g, v| loss(g, v), GradCheckConfig { h: 1e-5, max_coords: usize::MAX, seed: 0 })
            .map_err(|e| format!("{name}: {e}"))?;
        op_coords += r.checked;
        if r.max_rel_error >= worst_op.1 {
            worst_op = (name.to_string(), r.max_rel_error);
        }
    }
    let nets = classifier_gradchecks(1e-4);
    let worst_net = nets.iter().max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error)).unwrap();
    let fewest = nets.iter().map(|n| n.1.checked).min().unwrap();
    let elapsed = start.elapsed();
    check(
        worst_op.1 < 1e-5 && worst_net.1.max_rel_error < 1e-3 && op_coords >= 200 && fewest >= 200
            && elapsed < Duration::from_secs(120),
        format!(
            "ops: worst {:.2e} ({}) over {op_coords} coords; networks: worst {:.2e} ({}), {} nets with >= {fewest} coords each; {}",
            worst_op.1,
            worst_op.0,
            worst_net.1.max_rel_error,
            worst_net.0,
            nets.len(),
            within(elapsed, Duration::from_secs(120))
        ),
    )
}

/// Posterior by direct products over the query tokens, from counts tallied
/// here.
fn nb_brute_posterior(docs: &[Vec<usize>], ys: &[usize], n_classes: usize, n_words: usize, query: &[usize]) -> Vec<f64> {
    let mut joint = vec![0.0; n_classes];
    for (c, j) in joint.iter_mut().enumerate() {
        let in_class: Vec<&Vec<usize>> = docs.iter().zip(ys).filter(|(_, &y)| y == c).map(|(d, _)| d).collect();
        if in_class.is_empty() {
            continue;
        }
        let mut p = in_class.len() as f64 / docs.len() as f64;
        let total = in_class.iter().map(|d| d.len()).sum::<usize>() as f64 + n_words as f64;
        for &w in query {
            let cw = in_class.iter().flat_map(|d| d.iter()).filter(|&&t| t == w).count() as f64;
            p *= (cw + 1.0) / total;
        }
        *j = p;
    }
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|j| j / z).collect()
}

fn counts(doc: &[usize], n_words: usize) -> SparseVec {
    let mut c = vec![0.0; n_words];
    doc.iter().for_each(|&w| c[w] += 1.0);
    c.into_iter().enumerate().filter(|p| p.1 > 0.0).collect()
}

fn nb_oracle_error(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng::seeded(seed);
        let n_words = 10;
        let docs: Vec<Vec<usize>> = (0..12).map(|_| (0..r.gen_range(1..6)).map(|_| r.gen_range(0..n_words)).collect()).collect();
        let ys: Vec<usize> = (0..12).map(|i| if i < 3 { i } else { r.gen_range(0..3) }).collect();
        let xs: Vec<SparseVec> = docs.iter().map(|d| counts(d, n_words)).collect();
        let m = train_nb(&xs, &ys, 3, n_words, 1.0).unwrap();
        let query: Vec<usize> = (0..4).map(|_| r.gen_range(0..n_words)).collect();
        let oracle = nb_brute_posterior(&docs, &ys, 3, n_words, &query);
        for (a, b) in m.predict_proba(&counts(&query, n_words)).iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Mann-Whitney statistic with half credit for ties, over all pairs.
fn mann_whitney(scores: &[f64], gold: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &gi) in gold.iter().enumerate() {
        for (j, &gj) in gold.iter().enumerate() {
            if gi && !gj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn auc_oracle_error(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng::seeded(seed);
        let n = r.gen_range(2..40);
        let mut gold: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
        gold[0] = true;
        gold[1] = false;
        let coarse = r.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { r.gen_range(0..6) as f64 / 5.0 } else { r.gen::<f64>() })
            .collect();
        worst = worst.max((roc_auc(&scores, &gold).unwrap() - mann_whitney(&scores, &gold)).abs());
    }
    worst
}

fn conv_maxpool_oracle_error(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng::seeded(seed);
        let (d, k, nf) = (r.gen_range(1..5), r.gen_range(3..10), r.gen_range(1..5));
        let w = r.gen_range(1..=k.min(4));
        let x = random_tensor(&[d, k], seed + 1);
        let f = random_tensor(&[nf, d, w], seed + 2);
        let b = random_tensor(&[nf], seed + 3);
        let mut g = Graph::new();
        let (xv, fv, bv) = (g.constant(x.clone()), g.constant(f.clone()), g.constant(b.clone()));
        let conv = g.conv1d(xv, fv, Some(bv)).unwrap();
        let pooled = g.maxpool_over_time(conv).unwrap();
        let l = k - w + 1;
        for fi in 0..nf {
            let mut best = f64::NEG_INFINITY;
            for p in 0..l {
                let mut s = b.data()[fi];
                for c in 0..d {
                    for o in 0..w {
                        s += f.data()[(fi * d + c) * w + o] * x.data()[c * k + p + o];
                    }
                }
                worst = worst.max((g.value(conv).data()[fi * l + p] - s).abs());
                best = best.max(s);
            }
            worst = worst.max((g.value(pooled).data()[fi] - best).abs());
        }
    }
    worst
}

/// Macro-F1 from a full confusion matrix.
fn f1_from_confusion(pred: &[usize], gold: &[usize], n: usize) -> f64 {
    let mut m = vec![vec![0usize; n]; n];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..n {
        let tp = m[c][c] as f64;
        let fp: f64 = (0..n).filter(|&g| g != c).map(|g| m[g][c] as f64).sum();
        let fnn: f64 = (0..n).filter(|&p| p != c).map(|p| m[c][p] as f64).sum();
        if tp > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fnn);
        }
    }
    total / n as f64
}

fn f1_oracle_error(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng::seeded(seed);
        let (n, len) = (r.gen_range(2..5), r.gen_range(1..40));
        let pred: Vec<usize> = (0..len).map(|_| r.gen_range(0..n)).collect();
        let gold: Vec<usize> = (0..len).map(|_| r.gen_range(0..n)).collect();
        worst = worst.max((macro_f1(&pred, &gold, n).unwrap() - f1_from_confusion(&pred, &gold, n)).abs());
    }
    worst
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let nb = nb_oracle_error(300);
    let auc = auc_oracle_error(500);
    let conv = conv_maxpool_oracle_error(300);
    let f1 = f1_oracle_error(500);
    let elapsed = start.elapsed();
    check(
        nb < 1e-12 && auc < 1e-12 && conv < 1e-12 && f1 < 1e-12 && elapsed < Duration::from_secs(60),
        format!(
            "max |diff|: nb {nb:.1e}, auc {auc:.1e}, conv/maxpool {conv:.1e}, macro-f1 {f1:.1e}; {}",
            within(elapsed, Duration::from_secs(60))
        ),
    )
}

fn criterion_3() -> Outcome {
    let b = generate_synthetic_benchmark(&SyntheticConfig {
        n_terms: 1,
        senses_per_term: 3,
        topic_vocab_size: 60,
        background_vocab_size: 20,
        unlabeled_docs: 20,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let vocab = Vocabulary::build(b.unlabeled.iter().chain(b.train.iter().map(|s| &s.tokens)), 1);
    let embeddings = EmbeddingTable::random(vocab.clone(), 6, 2);
    let bilm = BiLmModel::new(vocab.clone(), BiLmConfig { emb_dim: 4, hidden: 4, ..Default::default() }).unwrap();
    let top: Vec<Vec<String>> = b.topic_words.iter().map(|w| w[..5].to_vec()).collect();
    let topics = TopicMatrix::from_words(top, &embeddings, &ConvConfig { filters: 5, width: 2, ..Default::default() }, "e").unwrap();
    let assets = Assets { embeddings: Some(&embeddings), bilm: Some(&bilm), topics: Some(&topics) };
    let attending = [Variant::LstmSoft, Variant::LstmSelf, Variant::TopicOnly, Variant::ElmoTopic];
    let tokens = vocab.tokens().to_vec();
    let mut r = rng::seeded(7);
    let mut worst_sum = 0.0f64;
    let mut checked = 0;
    for pass in 0..1000 {
        let v = attending[pass % attending.len()];
        let cfg = ClassifierConfig {
            hidden: 4,
            init: r.gen_range(0.05..3.0),
            seed: pass as u64,
            ..Default::default()
        };
        let m = build_classifier(v, &cfg, 3, &vocab, assets).map_err(|e| e.to_string())?;
        let len = r.gen_range(1..20);
        let sent: Vec<String> = (0..len).map(|_| tokens[r.gen_range(0..tokens.len())].clone()).collect();
        let x = m.encode(&sent).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let s = m.session(&mut g).map_err(|e| e.to_string())?;
        let f = m.forward::<rng::Rng>(&mut g, &s, &x, None).map_err(|e| e.to_string())?;
        for w in [f.alpha, f.beta].into_iter().flatten() {
            let total: f64 = g.value(w).data().iter().sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
            checked += 1;
        }
    }
    let mut worst_shift = 0.0f64;
    for seed in 0..1000u64 {
        let mut r = rng::seeded(seed);
        let xs = random_tensor(&[r.gen_range(1..12)], seed).into_data();
        let c = r.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in softmax_slice(&xs).iter().zip(softmax_slice(&shifted)) {
            worst_shift = worst_shift.max((a - b).abs());
        }
        let mut g = Graph::new();
        let (u, w) = (g.constant(Tensor::vector(xs.clone())), g.constant(Tensor::vector(shifted)));
        let (su, sw) = (g.softmax(u, 0).unwrap(), g.softmax(w, 0).unwrap());
        for (a, b) in g.value(su).data().iter().zip(g.value(sw).data()) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    check(
        worst_sum <= 1e-9 && worst_shift <= 1e-12 && checked >= 1000,
        format!("{checked} attention distributions over 1000 passes, max |sum - 1| {worst_sum:.1e}; softmax shift max |diff| {worst_shift:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let half = 50;
    let mut purities = Vec::new();
    let mut conserved = true;
    for seed in 0..5 {
        let docs = common::two_cluster_corpus(2000, half, 30, 100 + seed);
        let mut r = rng::seeded(seed);
        let mut m = LdaModel::init(&docs, 2 * half, 2, 0.5, 0.01, &mut r).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            m.sweep(&mut r);
            conserved &= m.counts_consistent() && m.total_tokens() == 2000 * 30;
        }
        let purity = (0..2)
            .map(|t| {
                let top: Vec<usize> = m.top_k_words(t, 10).unwrap().iter().map(|p| p.0).collect();
                common::purity(&top, half)
            })
            .fold(f64::INFINITY, f64::min);
        purities.push(purity);
    }
    let good = purities.iter().filter(|&&p| p >= 0.9).count();
    let elapsed = start.elapsed();
    check(
        good >= 4 && conserved && elapsed < Duration::from_secs(120),
        format!(
            "top-10 purity per seed (min over topics) {purities:?}, {good}/5 >= 0.9; counts conserved after every sweep: {conserved}; {}",
            within(elapsed, Duration::from_secs(120))
        ),
    )
}

fn benchmark_config() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    PipelineConfig::read(&path).expect("configs/benchmark.json")
}

fn criterion_5_6(dir: &Path) -> Vec<(&'static str, Outcome)> {
    let mut config = benchmark_config();
    config.variants = vec![Variant::LstmSelf, Variant::TopicOnly, Variant::ElmoTopic];
    let ws = Workspace::new(dir, config);
    let start = Instant::now();
    let report = match cmd_benchmark(&ws, 5) {
        Ok(r) => r,
        Err(e) => {
            let e = format!("benchmark failed: {e}");
            return vec![("5a", Err(e.clone())), ("5b", Err(e.clone())), ("5c", Err(e.clone())), ("5 time", Err(e.clone())), ("6", Err(e))];
        }
    };
    let elapsed = start.elapsed();
    let mean = |v| report.mean(v).unwrap().clone();
    let (base, topic, elmo) = (mean(Variant::LstmSelf), mean(Variant::TopicOnly), mean(Variant::ElmoTopic));
    let auc = |m: &senselab::pipeline::VariantMean| m.auc.unwrap_or(f64::NAN);
    let limit = Duration::from_secs(15 * 60);
    vec![
        (
            "5a",
            check(
                topic.macro_f1 - base.macro_f1 >= 0.03,
                format!("macro-F1 topic_only {:.4} vs lstm_self {:.4} (gap {:+.4}, need >= 0.03)", topic.macro_f1, base.macro_f1, topic.macro_f1 - base.macro_f1),
            ),
        ),
        (
            "5b",
            check(
                elmo.macro_f1 - base.macro_f1 >= 0.05,
                format!("macro-F1 elmo_topic {:.4} vs lstm_self {:.4} (gap {:+.4}, need >= 0.05)", elmo.macro_f1, base.macro_f1, elmo.macro_f1 - base.macro_f1),
            ),
        ),
        (
            "5c",
            check(
                auc(&elmo) - auc(&base) >= 0.03,
                format!("mean AUC elmo_topic {:.4} vs lstm_self {:.4} (gap {:+.4}, need >= 0.03)", auc(&elmo), auc(&base), auc(&elmo) - auc(&base)),
            ),
        ),
        ("5 time", check(elapsed < limit, format!("5-seed benchmark took {}", within(elapsed, limit)))),
        ("6", rare_sense(&report)),
    ]
}

/// Per seed, compares the two variants on the rarest sense of every term
/// whose rarest sense has at most three training samples, averaged.
fn rare_sense(report: &BenchmarkReport) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for run in &report.runs {
        let rare: Vec<_> = run.rare_senses.iter().filter(|r| r.train_count <= 3).collect();
        let pairs: Vec<(f64, f64)> = rare
            .iter()
            .filter_map(|r| Some((r.auc.get(&Variant::ElmoTopic).copied()??, r.auc.get(&Variant::LstmSelf).copied()??)))
            .collect();
        if pairs.is_empty() {
            lines.push(format!("seed {}: no term with <= 3 rare samples", run.seed));
            continue;
        }
        let n = pairs.len() as f64;
        let e = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let l = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        if e > l {
            wins += 1;
        }
        lines.push(format!("seed {}: {} terms, elmo_topic {e:.3} vs lstm_self {l:.3}", run.seed, pairs.len()));
    }
    check(wins >= 3, format!("{wins}/5 seeds favour elmo_topic on senses with <= 3 samples ({})", lines.join("; ")))
}

fn tiny_pipeline() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.synthetic.n_terms = 3;
    c.synthetic.topic_vocab_size = 90;
    c.synthetic.background_vocab_size = 30;
    c.synthetic.unlabeled_docs = 150;
    c.lda.n_topics = 9;
    c.lda.iterations = 10;
    c.topic.filters = 4;
    c.topic.k_top = 5;
    c.embeddings.dim = 8;
    c.embeddings.epochs = 1;
    c.bilm.emb_dim = 6;
    c.bilm.hidden = 6;
    c.bilm.epochs = 1;
    c.classifier.hidden = 6;
    c.classifier.emb_dim = 8;
    c.classifier.cnn_filters = 4;
    c.classifier.epochs = 2;
    c.linear.epochs = 20;
    c
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_7(dir: &Path) -> Outcome {
    let mut trees = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        std::env::set_var(THREADS_ENV, threads);
        let ws = Workspace::new(dir.join(run), tiny_pipeline());
        cmd_benchmark(&ws, 2).map_err(|e| e.to_string())?;
        trees.push(files(&ws.root));
    }
    std::env::remove_var(THREADS_ENV);
    let (a, b) = (&trees[0], &trees[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let checkpoints = a.keys().filter(|k| k.extension().is_some_and(|e| e == "ckpt")).count();
    let reports = a.keys().filter(|k| k.starts_with("benchmark") && k.to_string_lossy().contains("reports")).count();
    check(
        differing.is_empty() && checkpoints > 0 && reports > 0,
        format!(
            "{} files ({checkpoints} checkpoints, {reports} report files) over two full runs with 1 and 3 threads; differing: {differing:?}",
            a.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst_zero = 0.0f64;
    let mut worst_same = 0.0f64;
    for seed in 0..200u64 {
        let mode = if seed % 2 == 0 { AttentionMode::Scalar } else { AttentionMode::Vector(3) };
        let mut r = rng::seeded(seed);
        let (content, topic_dim, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..9));
        let mut store = ParamStore::new();
        let ta = TopicAttention::new(&mut store, "", content, topic_dim, mode, 0.8, &mut rng::seeded(seed + 1));
        let c = random_tensor(&[content], seed + 2);
        let topics = random_tensor(&[n, topic_dim], seed + 3);
        let run = |store: &ParamStore, topics: &Tensor| -> senselab::Result<Vec<f64>> {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let cv = g.constant(c.clone());
            let tv = g.constant(topics.clone());
            let out = ta.forward(&mut g, &p, cv, tv)?;
            Ok(g.value(out.s).data().to_vec())
        };
        let same_row = topics.row(0).to_vec();
        let same = Tensor::from_rows(&vec![same_row.clone(); n]).unwrap();
        let s = run(&store, &same).map_err(|e| e.to_string())?;
        for (a, b) in s.iter().zip(&same_row) {
            worst_same = worst_same.max((a - b).abs());
        }
        let [w, _, _] = ta.params();
        let shape = store.get(w).shape().to_vec();
        *store.get_mut(w) = Tensor::zeros(&shape);
        let s = run(&store, &topics).map_err(|e| e.to_string())?;
        for (k, v) in s.iter().enumerate() {
            let mean = (0..n).map(|j| topics.row(j)[k]).sum::<f64>() / n as f64;
            worst_zero = worst_zero.max((v - mean).abs());
        }
    }
    check(
        worst_zero <= 1e-12 && worst_same <= 1e-12,
        format!("200 random layers: zero W_topic max |s - mean| {worst_zero:.1e}; identical topics max |s - t| {worst_same:.1e}"),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // libtest flags such as --list or --exact are not meaningful here
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| id.starts_with(o.as_str()));
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let simple: [(&str, fn() -> Outcome); 5] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("8", criterion_8),
    ];
    for (id, f) in simple {
        if wanted(id) {
            results.push((id, f()));
            print_line(results.last().unwrap());
        }
    }
    if wanted("7") {
        results.push(("7", criterion_7(&tmp.path().join("determinism"))));
        print_line(results.last().unwrap());
    }
    if wanted("5") || wanted("6") {
        for r in criterion_5_6(&tmp.path().join("benchmark")) {
            results.push(r);
            print_line(results.last().unwrap());
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn print_line((id, outcome): &(&str, Outcome)) {
    match outcome {
        Ok(d) => println!("criterion {id}: PASS  {d}"),
        Err(d) => println!("criterion {id}: FAIL  {d}"),
    }
}
