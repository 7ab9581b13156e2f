use crate::components::{build_instances, InputInstance};
use crate::error::{Error, Result};
use crate::flow_grid::{minmax_fit, split_train_test, FlowSeries, NormalizationParams};

/// A series split chronologically, with min-max parameters fit on the
/// training portion only.
///
/// Instances are built over the whole series so test targets can draw their
/// closeness / period / trend inputs from the training portion; an instance
/// belongs to the training set when its target lies in the training portion.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub raw: FlowSeries,
    pub normalized: FlowSeries,
    pub norm: NormalizationParams,
    pub train_len: usize,
}

impl Dataset {
    pub fn new(raw: FlowSeries, train_fraction: f64) -> Result<Self> {
        let (train, _) = split_train_test(&raw, train_fraction)?;
        let norm = minmax_fit(&train)?;
        let normalized = norm.apply_series(&raw);
        let data = Self {
            train_len: train.len(),
            raw,
            normalized,
            norm,
        };
        if data.train_instances().is_empty() || data.test_instances().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "series of {} intervals leaves no train or test instances",
                data.raw.len()
            )));
        }
        Ok(data)
    }

    /// Raw training portion of the series.
    pub fn train_series(&self) -> Result<FlowSeries> {
        let r = &self.raw;
        FlowSeries::new(
            r.height,
            r.width,
            r.interval_duration,
            r.start_time,
            r.tensors[..self.train_len].to_vec(),
        )
    }

    pub fn train_instances(&self) -> Vec<InputInstance<'_>> {
        build_instances(&self.normalized)
            .into_iter()
            .filter(|i| i.target < self.train_len)
            .collect()
    }

    pub fn test_instances(&self) -> Vec<InputInstance<'_>> {
        build_instances(&self.normalized)
            .into_iter()
            .filter(|i| i.target >= self.train_len)
            .collect()
    }

    /// Test instances over the unnormalized series.
    pub fn raw_test_instances(&self) -> Vec<InputInstance<'_>> {
        build_instances(&self.raw)
            .into_iter()
            .filter(|i| i.target >= self.train_len)
            .collect()
    }
}
