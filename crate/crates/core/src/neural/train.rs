use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, EncodedSample};
use crate::error::{Error, Result};
use crate::numerics::{clip_global_norm, Adam, AdamConfig, Graph};
use crate::rng;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "epoch,loss").map_err(io)?;
        for (i, l) in self.epoch_loss.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Minibatch Adam on mean cross-entropy with global-norm clipping.
pub fn train_classifier(model: &mut Classifier, samples: &[EncodedSample], labels: &[usize]) -> Result<TrainLog> {
    if samples.len() != labels.len() {
        return Err(Error::dim(format!("{} samples with {} labels", samples.len(), labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model.n_classes) {
        return Err(Error::Label(format!("label {y} outside {} classes", model.n_classes)));
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Data(format!(
            "training needs at least two senses, found {}",
            present.len()
        )));
    }
    let config = model.config.clone();
    if config.batch == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs and batch must be positive".into()));
    }
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg);
    let mut context_adam = Adam::new(adam_cfg);
    let mut order_rng = rng::substream(config.seed, "clf/order");
    let mut drop_rng = rng::substream(config.seed, "clf/dropout");
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch) {
            let mut g = Graph::new();
            let s = model.session(&mut g)?;
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let f = model.forward(&mut g, &s, &samples[i], Some(&mut drop_rng))?;
                losses.push(g.cross_entropy(f.logits, labels[i])?);
            }
            let all = g.concat(&losses)?;
            let mean = g.mean(all);
            total += g.value(mean).item() * batch.len() as f64;
            g.backward(mean)?;
            let mut grads = model.store().collect_grads(&g, &s.params);
            let mut context_grads = match (&s.context_params, model.bilm()) {
                (Some(cp), Some(b)) => Some(b.store().collect_grads(&g, cp)),
                _ => None,
            };
            // one norm over every updated parameter
            if let Some(cg) = context_grads.as_mut() {
                let mut joint: Vec<Vec<f64>> = grads.drain(..).chain(cg.drain(..)).collect();
                clip_global_norm(&mut joint, config.clip);
                let split = model.store().len();
                *cg = joint.split_off(split);
                grads = joint;
            } else {
                clip_global_norm(&mut grads, config.clip);
            }
            adam.step(model.store_mut(), &grads)?;
            if let (Some(cg), Some(b)) = (context_grads, model.bilm_mut()) {
                context_adam.step(b.store_mut(), &cg)?;
            }
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() || !model.store().all_finite() {
            return Err(Error::Data(format!("classifier training diverged in epoch {}", epoch + 1)));
        }
        log::debug!("{} epoch {}: loss {mean:.4}", model.variant, epoch + 1);
        log.epoch_loss.push(mean);
    }
    model.sync_topic_filters()?;
    Ok(log)
}
