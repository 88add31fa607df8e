use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, TrainConfig};
use super::loss::{cce_loss, one_hot};
use super::model::Model;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One `C x H x W` input with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Parameters from the epoch with the best validation accuracy (the
    /// initial weights when no epoch ran).
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub last: Model,
    pub optimizer: AdamState,
}

fn stack(examples: &[Example], idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let inputs: Vec<&Tensor> = idx.iter().map(|&i| &examples[i].input).collect();
    Ok((
        Tensor::stack(&inputs)?,
        idx.iter().map(|&i| examples[i].label).collect(),
    ))
}

/// Mean loss and accuracy over a set, evaluated in chunks of `batch_size`.
pub fn evaluate(model: &Model, examples: &[Example], batch_size: usize) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let order: Vec<usize> = (0..examples.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = stack(examples, chunk)?;
        let probs = model.forward(&x)?;
        let (l, _) = cce_loss(&probs, &one_hot(&labels, probs.dims()[1])?)?;
        loss += l * chunk.len() as f64;
        let c = probs.dims()[1];
        for (row, &label) in probs.data().chunks_exact(c).zip(&labels) {
            correct += (argmax(row) == label) as usize;
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn train(
    model: Model,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_set.is_empty() && config.epochs > 0 {
        return Err(Error::Empty("validation split"));
    }
    let mut model = model;
    let mut optimizer = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_acc = f64::NEG_INFINITY;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = stack(train_set, chunk)?;
            let step = model.loss_and_gradients(&x, &labels)?;
            if !step.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step.loss,
                });
            }
            total += step.loss * chunk.len() as f64;
            adam_step(model.params_mut(), &step.grads, &mut optimizer, config)?;
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, val_acc) = evaluate(&model, val_set, config.batch_size)?;
        log::info!("epoch {epoch}: train_loss {train_loss:.4} val_loss {val_loss:.4} val_acc {val_acc:.4}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best = model.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
        last: model,
        optimizer,
    })
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_acc
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
