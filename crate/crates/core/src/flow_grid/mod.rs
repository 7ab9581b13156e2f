//! Grid inflow/outflow construction from trajectories, min-max scaling and
//! chronological splitting.

mod io;

pub use io::{read_trajectories_csv, read_ufs, write_ufs};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub lon: f64,
    pub lat: f64,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        let t = Self { points };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::MalformedTrajectory("trajectory has no points".into()));
        }
        if let Some(p) = self.points.iter().find(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
            return Err(Error::MalformedTrajectory(format!(
                "non-finite coordinate at t={}",
                p.timestamp
            )));
        }
        if let Some(w) = self.points.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::MalformedTrajectory(format!(
                "timestamps out of order: {} after {}",
                w[1].timestamp, w[0].timestamp
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

/// `rows x cols` partition of a lon/lat rectangle. Row 0 is the northern
/// edge, column 0 the western edge; the closed upper bounds belong to the last
/// row/column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
    pub bounds: Bounds,
}

impl RegionGrid {
    pub fn new(rows: usize, cols: usize, bounds: Bounds) -> Result<Self> {
        let g = Self { rows, cols, bounds };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidGrid(format!("{}x{} grid", self.rows, self.cols)));
        }
        let finite = [b.lon_min, b.lon_max, b.lat_min, b.lat_max].iter().all(|v| v.is_finite());
        if !finite || b.lon_max <= b.lon_min || b.lat_max <= b.lat_min {
            return Err(Error::InvalidGrid(format!("empty bounds {b:?}")));
        }
        Ok(())
    }

    /// Region `(row, col)` containing the point, or `None` when out of bounds.
    pub fn region_of(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let b = &self.bounds;
        if !(b.lon_min..=b.lon_max).contains(&lon) || !(b.lat_min..=b.lat_max).contains(&lat) {
            return None;
        }
        let col = ((lon - b.lon_min) / (b.lon_max - b.lon_min) * self.cols as f64) as usize;
        let row = ((b.lat_max - lat) / (b.lat_max - b.lat_min) * self.rows as f64) as usize;
        Some((row.min(self.rows - 1), col.min(self.cols - 1)))
    }
}

/// One interval's flows, shape `2 x H x W`: channel 0 inflow, channel 1 outflow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTensor {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub interval_index: usize,
}

impl FlowTensor {
    pub fn zeros(height: usize, width: usize, interval_index: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; 2 * height * width],
            interval_index,
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>, interval_index: usize) -> Result<Self> {
        if values.len() != 2 * height * width {
            return Err(Error::Shape(format!(
                "{} values for a 2x{height}x{width} flow tensor",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            interval_index,
        })
    }

    fn idx(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.idx(channel, row, col)]
    }

    pub fn inflow(&self, row: usize, col: usize) -> f64 {
        self.get(0, row, col)
    }

    pub fn outflow(&self, row: usize, col: usize) -> f64 {
        self.get(1, row, col)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn bump(&mut self, channel: usize, (row, col): (usize, usize)) {
        let i = self.idx(channel, row, col);
        self.values[i] += 1.0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSeries {
    pub tensors: Vec<FlowTensor>,
    pub height: usize,
    pub width: usize,
    pub interval_duration: u32,
    pub start_time: u64,
    pub intervals_per_day: usize,
    pub intervals_per_week: usize,
}

pub fn check_interval(interval_duration: u32) -> Result<usize> {
    if interval_duration == 0 || !SECONDS_PER_DAY.is_multiple_of(interval_duration) {
        return Err(Error::InvalidInterval(format!(
            "{interval_duration}s does not divide a day"
        )));
    }
    Ok((SECONDS_PER_DAY / interval_duration) as usize)
}

impl FlowSeries {
    /// Builds a series from tensors, re-indexing them contiguously from 0.
    pub fn new(
        height: usize,
        width: usize,
        interval_duration: u32,
        start_time: u64,
        mut tensors: Vec<FlowTensor>,
    ) -> Result<Self> {
        let per_day = check_interval(interval_duration)?;
        for (i, t) in tensors.iter_mut().enumerate() {
            if t.height != height || t.width != width || t.values.len() != 2 * height * width {
                return Err(Error::Shape(format!(
                    "tensor {i} is 2x{}x{}, series is 2x{height}x{width}",
                    t.height, t.width
                )));
            }
            t.interval_index = i;
        }
        Ok(Self {
            tensors,
            height,
            width,
            interval_duration,
            start_time,
            intervals_per_day: per_day,
            intervals_per_week: 7 * per_day,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Epoch seconds at the start of interval `index`.
    pub fn time_of(&self, index: usize) -> u64 {
        self.start_time + index as u64 * self.interval_duration as u64
    }

    /// Time-of-day slot of interval `index` (0-based, UTC).
    pub fn time_of_day_slot(&self, index: usize) -> usize {
        ((self.time_of(index) % SECONDS_PER_DAY as u64) / self.interval_duration as u64) as usize
    }

    /// Day of week of interval `index`, Monday = 0 (UTC).
    pub fn weekday(&self, index: usize) -> usize {
        // 1970-01-01 was a Thursday.
        ((self.time_of(index) / SECONDS_PER_DAY as u64 + 3) % 7) as usize
    }

    /// Absolute interval position counted from the most recent midnight
    /// before the series start, used where only the value modulo the day matters.
    pub fn absolute_slot(&self, index: usize) -> usize {
        self.time_of_day_slot(0) + index
    }

    fn sub_series(&self, range: std::ops::Range<usize>) -> Result<FlowSeries> {
        let start = self.time_of(range.start);
        FlowSeries::new(
            self.height,
            self.width,
            self.interval_duration,
            start,
            self.tensors[range].to_vec(),
        )
    }

    /// Appends `next`, which must start exactly where `self` ends.
    pub fn concat(&self, next: &FlowSeries) -> Result<FlowSeries> {
        if next.height != self.height || next.width != self.width || next.interval_duration != self.interval_duration {
            return Err(Error::Shape("series grids or intervals differ".into()));
        }
        if next.start_time != self.time_of(self.len()) {
            return Err(Error::InvalidArgument("series are not contiguous in time".into()));
        }
        let mut tensors = self.tensors.clone();
        tensors.extend(next.tensors.iter().cloned());
        FlowSeries::new(self.height, self.width, self.interval_duration, self.start_time, tensors)
    }

    pub fn map_values(&self, f: impl Fn(&FlowTensor) -> FlowTensor) -> FlowSeries {
        FlowSeries {
            tensors: self.tensors.iter().map(f).collect(),
            ..self.clone()
        }
    }
}

fn check_pairs(trajectories: &[Trajectory], grid: &RegionGrid) -> Result<()> {
    grid.validate()?;
    trajectories.iter().try_for_each(Trajectory::validate)
}

/// Counts boundary crossings of every consecutive point pair. A pair leaving
/// the grid only produces outflow, a pair entering it only inflow.
pub fn compute_inflow_outflow(
    trajectories: &[Trajectory],
    grid: &RegionGrid,
    interval_index: usize,
) -> Result<FlowTensor> {
    check_pairs(trajectories, grid)?;
    let mut out = FlowTensor::zeros(grid.rows, grid.cols, interval_index);
    for traj in trajectories {
        for pair in traj.points.windows(2) {
            record_transition(&mut out, grid, &pair[0], &pair[1]);
        }
    }
    Ok(out)
}

fn record_transition(out: &mut FlowTensor, grid: &RegionGrid, from: &TrajectoryPoint, to: &TrajectoryPoint) {
    let a = grid.region_of(from.lon, from.lat);
    let b = grid.region_of(to.lon, to.lat);
    if a == b {
        return;
    }
    if let Some(r) = b {
        out.bump(0, r);
    }
    if let Some(r) = a {
        out.bump(1, r);
    }
}

/// Bins transitions into intervals of `interval_duration` seconds over
/// `[start_time, end_time)`. A pair belongs to the interval containing its
/// later point; pairs whose later point lies outside the range are dropped.
pub fn build_flow_series(
    trajectories: &[Trajectory],
    grid: &RegionGrid,
    start_time: u64,
    end_time: u64,
    interval_duration: u32,
) -> Result<FlowSeries> {
    check_interval(interval_duration)?;
    if end_time <= start_time {
        return Err(Error::InvalidArgument(format!(
            "end time {end_time} is not after start time {start_time}"
        )));
    }
    check_pairs(trajectories, grid)?;
    let dur = interval_duration as u64;
    let len = (end_time - start_time).div_ceil(dur) as usize;
    let mut tensors: Vec<FlowTensor> = (0..len).map(|i| FlowTensor::zeros(grid.rows, grid.cols, i)).collect();
    for traj in trajectories {
        for pair in traj.points.windows(2) {
            let t = pair[1].timestamp;
            if t < start_time as i64 || t >= end_time as i64 {
                continue;
            }
            let bin = ((t as u64 - start_time) / dur) as usize;
            record_transition(&mut tensors[bin], grid, &pair[0], &pair[1]);
        }
    }
    FlowSeries::new(grid.rows, grid.cols, interval_duration, start_time, tensors)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationParams {
    pub min: f64,
    pub max: f64,
}

pub fn minmax_fit(train: &FlowSeries) -> Result<NormalizationParams> {
    let mut values = train.tensors.iter().flat_map(|t| t.values.iter().copied()).peekable();
    if values.peek().is_none() {
        return Err(Error::EmptyInput("cannot fit normalization on an empty series".into()));
    }
    let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(NormalizationParams { min, max })
}

impl NormalizationParams {
    pub fn apply_value(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, v: f64) -> f64 {
        if self.max > self.min {
            v * (self.max - self.min) + self.min
        } else {
            self.min
        }
    }

    pub fn apply_series(&self, series: &FlowSeries) -> FlowSeries {
        series.map_values(|t| minmax_apply(t, self))
    }
}

pub fn minmax_apply(x: &FlowTensor, p: &NormalizationParams) -> FlowTensor {
    FlowTensor {
        values: x.values.iter().map(|&v| p.apply_value(v)).collect(),
        ..x.clone()
    }
}

pub fn minmax_invert(x: &FlowTensor, p: &NormalizationParams) -> FlowTensor {
    FlowTensor {
        values: x.values.iter().map(|&v| p.invert_value(v)).collect(),
        ..x.clone()
    }
}

/// First `floor(L * train_fraction)` intervals for training, the rest for testing.
pub fn split_train_test(series: &FlowSeries, train_fraction: f64) -> Result<(FlowSeries, FlowSeries)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let cut = (series.len() as f64 * train_fraction).floor() as usize;
    Ok((series.sub_series(0..cut)?, series.sub_series(cut..series.len())?))
}
