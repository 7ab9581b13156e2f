//! Closeness / period / trend instance construction.
//!
//! For a target interval `i`, closeness covers `i-6 .. i-1`, and period and
//! trend cover the seven intervals `i-6 .. i` shifted back by one day and one
//! week respectively, so slot `t` of every component shares a time of day.

use crate::flow_grid::{FlowSeries, FlowTensor};

pub const CLOSENESS_LEN: usize = 6;
pub const COMPONENT_LEN: usize = 7;
pub const DAYS_PER_WEEK: usize = 7;

/// One-hot time-of-day slot followed by one-hot weekday (Monday first).
#[derive(Clone, Debug, PartialEq)]
pub struct ExtraFeatures {
    pub vector: Vec<f64>,
}

impl ExtraFeatures {
    pub fn time_of_day(&self) -> usize {
        let per_day = self.vector.len() - DAYS_PER_WEEK;
        self.vector[..per_day].iter().position(|&v| v == 1.0).expect("one-hot time of day")
    }

    pub fn weekday(&self) -> usize {
        let per_day = self.vector.len() - DAYS_PER_WEEK;
        self.vector[per_day..].iter().position(|&v| v == 1.0).expect("one-hot weekday")
    }
}

pub fn encode_extra(target_index: usize, series: &FlowSeries) -> ExtraFeatures {
    let per_day = series.intervals_per_day;
    let mut vector = vec![0.0; per_day + DAYS_PER_WEEK];
    vector[series.time_of_day_slot(target_index)] = 1.0;
    vector[per_day + series.weekday(target_index)] = 1.0;
    ExtraFeatures { vector }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Closeness,
    Period,
    Trend,
}

/// A training sample; tensors are referenced by interval index into `series`.
#[derive(Clone, Debug)]
pub struct InputInstance<'a> {
    pub series: &'a FlowSeries,
    pub closeness: [usize; CLOSENESS_LEN],
    pub period: [usize; COMPONENT_LEN],
    pub trend: [usize; COMPONENT_LEN],
    pub target: usize,
    pub extra: ExtraFeatures,
}

impl<'a> InputInstance<'a> {
    pub fn closeness_tensor(&self, slot: usize) -> &'a FlowTensor {
        &self.series.tensors[self.closeness[slot]]
    }

    pub fn period_tensor(&self, slot: usize) -> &'a FlowTensor {
        &self.series.tensors[self.period[slot]]
    }

    pub fn trend_tensor(&self, slot: usize) -> &'a FlowTensor {
        &self.series.tensors[self.trend[slot]]
    }

    pub fn component_tensor(&self, which: Component, slot: usize) -> &'a FlowTensor {
        match which {
            Component::Closeness => self.closeness_tensor(slot),
            Component::Period => self.period_tensor(slot),
            Component::Trend => self.trend_tensor(slot),
        }
    }

    pub fn target_tensor(&self) -> &'a FlowTensor {
        &self.series.tensors[self.target]
    }

    /// Absolute interval positions of the closeness slots, for periodic
    /// position encoding (only their value modulo a day is meaningful).
    pub fn closeness_positions(&self) -> [usize; CLOSENESS_LEN] {
        self.closeness.map(|i| self.series.absolute_slot(i))
    }
}

/// Smallest target index for which the trend window starts at or after 0.
pub fn first_target(series: &FlowSeries) -> usize {
    CLOSENESS_LEN + series.intervals_per_week
}

pub fn instance_at(series: &FlowSeries, target: usize) -> Option<InputInstance<'_>> {
    if target < first_target(series) || target >= series.len() {
        return None;
    }
    let base = target - CLOSENESS_LEN;
    Some(InputInstance {
        series,
        closeness: std::array::from_fn(|k| base + k),
        period: std::array::from_fn(|k| base + k - series.intervals_per_day),
        trend: std::array::from_fn(|k| base + k - series.intervals_per_week),
        target,
        extra: encode_extra(target, series),
    })
}

/// One instance per valid target, ordered by target index. Series too short
/// for a full trend window yield no instances.
pub fn build_instances(series: &FlowSeries) -> Vec<InputInstance<'_>> {
    (first_target(series)..series.len())
        .filter_map(|i| instance_at(series, i))
        .collect()
}
