use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use termcast_nn::{Adam, Graph, ParamStore};

use super::metrics::{mae, rmse};
use crate::components::InputInstance;
use crate::error::{Error, Result};
use crate::flow_grid::{minmax_invert, FlowTensor, NormalizationParams};
use crate::model::{Batch, TermCast};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean training loss of each epoch, measured on the batches as they were visited.
    pub per_epoch_losses: Vec<f64>,
    pub seed: u64,
    pub epochs_ran: usize,
}

fn targets(instances: &[InputInstance]) -> Vec<FlowTensor> {
    instances.iter().map(|i| i.target_tensor().clone()).collect()
}

/// Scores the model on `instances` (built over the normalized series), with
/// predictions and targets mapped back to original units through `norm`.
pub fn evaluate(model: &TermCast, instances: &[InputInstance], norm: &NormalizationParams) -> Result<EvalReport> {
    let pred: Vec<FlowTensor> = model.predict(instances, 64)?.iter().map(|t| minmax_invert(t, norm)).collect();
    let truth: Vec<FlowTensor> = targets(instances).iter().map(|t| minmax_invert(t, norm)).collect();
    Ok(EvalReport {
        rmse: rmse(&pred, &truth)?,
        mae: mae(&pred, &truth)?,
        per_epoch_losses: Vec::new(),
        seed: 0,
        epochs_ran: 0,
    })
}

fn train_step(model: &mut TermCast, batch: &Batch, adam: &mut Adam) -> Result<f64> {
    let grads = {
        let mut g = Graph::new(&model.params);
        let out = model.forward_batch(&mut g, batch)?;
        let target = g.input(batch.target.clone());
        let loss = model.batch_loss(&mut g, &out, target)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            let at = g.non_finite_op().unwrap_or("loss");
            return Err(Error::Numerics(format!("training loss became {value} (first at {at})")));
        }
        (g.backward(loss)?, value)
    };
    grads.0.write_to(&mut model.params);
    adam.step(&mut model.params);
    Ok(grads.1)
}

/// Trains with Adam on shuffled mini-batches. The chronological tail
/// `validation_fraction` of `instances` is held out; the parameters of the
/// epoch with the lowest validation RMSE are restored at the end, and
/// training stops after `early_stop_patience` epochs without improvement.
/// When the tail is empty, every instance is used for training and the final
/// parameters are kept.
///
/// The returned metrics are on the validation set (the training set when
/// there is none), in normalized units.
pub fn train(model: &mut TermCast, instances: &[InputInstance], cfg: &TrainConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::EmptyInput("no training instances".into()));
    }
    let n_val = (instances.len() as f64 * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(instances.len() - 1);
    let (fit, val) = instances.split_at(instances.len() - n_val);
    let score_set = if val.is_empty() { fit } else { val };

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&InputInstance> = chunk.iter().map(|&i| &fit[i]).collect();
            let batch = Batch::from_instances(&refs)?;
            total += train_step(model, &batch, &mut adam)? * chunk.len() as f64;
        }
        losses.push(total / fit.len() as f64);

        if !val.is_empty() {
            let pred = model.predict(val, 64)?;
            let score = rmse(&pred, &targets(val))?;
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, model.params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params.copy_values_from(&params)?;
    }
    let pred = model.predict(score_set, 64)?;
    let truth = targets(score_set);
    Ok(EvalReport {
        rmse: rmse(&pred, &truth)?,
        mae: mae(&pred, &truth)?,
        epochs_ran: losses.len(),
        per_epoch_losses: losses,
        seed: cfg.seed,
    })
}
