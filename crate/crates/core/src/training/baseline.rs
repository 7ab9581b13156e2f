use std::collections::HashMap;

use super::metrics::{mae, rmse};
use super::trainer::EvalReport;
use crate::components::InputInstance;
use crate::error::{Error, Result};
use crate::flow_grid::{FlowSeries, FlowTensor};

/// Historical average: the mean of all training tensors sharing the target's
/// (time of day, weekday) slot, or the global training mean for unseen slots.
pub fn ha_predict(train: &FlowSeries, targets: &[InputInstance]) -> Result<Vec<FlowTensor>> {
    if train.is_empty() {
        return Err(Error::EmptyInput("historical average needs training data".into()));
    }
    let width = 2 * train.height * train.width;
    let mut slots: HashMap<(usize, usize), (Vec<f64>, usize)> = HashMap::new();
    let mut global = vec![0.0; width];
    for (i, t) in train.tensors.iter().enumerate() {
        let entry = slots
            .entry((train.time_of_day_slot(i), train.weekday(i)))
            .or_insert_with(|| (vec![0.0; width], 0));
        for ((s, g), v) in entry.0.iter_mut().zip(global.iter_mut()).zip(&t.values) {
            *s += v;
            *g += v;
        }
        entry.1 += 1;
    }
    let n = train.len() as f64;
    global.iter_mut().for_each(|g| *g /= n);
    targets
        .iter()
        .map(|inst| {
            let s = inst.series;
            if s.height != train.height || s.width != train.width {
                return Err(Error::Shape("target grid differs from training grid".into()));
            }
            let key = (s.time_of_day_slot(inst.target), s.weekday(inst.target));
            let values = match slots.get(&key) {
                Some((sum, count)) => sum.iter().map(|v| v / *count as f64).collect(),
                None => global.clone(),
            };
            FlowTensor::from_values(train.height, train.width, values, inst.target)
        })
        .collect()
}

/// Scores [`ha_predict`] against the instances' own targets, in the series' units.
pub fn ha_baseline(train: &FlowSeries, targets: &[InputInstance]) -> Result<EvalReport> {
    let pred = ha_predict(train, targets)?;
    let truth: Vec<FlowTensor> = targets.iter().map(|i| i.target_tensor().clone()).collect();
    Ok(EvalReport {
        rmse: rmse(&pred, &truth)?,
        mae: mae(&pred, &truth)?,
        per_epoch_losses: Vec::new(),
        seed: 0,
        epochs_ran: 0,
    })
}
