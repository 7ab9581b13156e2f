use crate::error::{Error, Result};
use crate::flow_grid::FlowTensor;

fn paired_errors<'a>(pred: &'a [FlowTensor], truth: &'a [FlowTensor]) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no tensors to score".into()));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.values.len() != t.values.len() {
            return Err(Error::Shape(format!(
                "prediction has {} values, target {}",
                p.values.len(),
                t.values.len()
            )));
        }
    }
    Ok(pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.values.iter().zip(&t.values).map(|(a, b)| a - b)))
}

pub fn rmse(pred: &[FlowTensor], truth: &[FlowTensor]) -> Result<f64> {
    let (sum, n) = paired_errors(pred, truth)?.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    Ok((sum / n as f64).sqrt())
}

pub fn mae(pred: &[FlowTensor], truth: &[FlowTensor]) -> Result<f64> {
    let (sum, n) = paired_errors(pred, truth)?.fold((0.0, 0usize), |(s, n), e| (s + e.abs(), n + 1));
    Ok(sum / n as f64)
}
