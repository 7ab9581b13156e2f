use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Sinusoidal position encoding: `sin(pos / 10000^(2k/d))` at even columns
/// and the matching cosine at odd columns, one row per entry of `positions`.
pub fn positional_encoding(positions: &[usize], d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(NnError::Config(format!("positional encoding width must be even, got {d}")));
    }
    if positions.is_empty() {
        return Err(NnError::Config("positional encoding needs at least one position".into()));
    }
    let mut data = Vec::with_capacity(positions.len() * d);
    for &pos in positions {
        for k in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![positions.len(), d], data)
}
