use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::flow_grid::{check_interval, FlowSeries, FlowTensor};

/// Monday 2024-01-01 00:00 UTC.
pub const SYNTH_START: u64 = 1_704_067_200;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub weeks: usize,
    pub interval_hours: u32,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    pub noise_std: f64,
    /// Lag-one autocorrelation of each cell's noise (AR(1)); the marginal
    /// standard deviation stays `noise_std`. 0 gives independent noise.
    pub noise_corr: f64,
}

impl SynthParams {
    /// 8x8 grid, hourly, six weeks, with moderate noise.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            height: 8,
            width: 8,
            weeks: 6,
            interval_hours: 1,
            daily_amp: 10.0,
            weekly_amp: 5.0,
            noise_std: 2.0,
            noise_corr: 0.8,
        }
    }
}

/// Seasonal flow series: for every (channel, row, col) a base level, a daily
/// sinusoid with its own phase and a per-weekday offset, plus Gaussian noise,
/// clipped at zero. The noise of each cell is an AR(1) process started from
/// its stationary distribution.
pub fn synth_generate(p: &SynthParams) -> Result<FlowSeries> {
    if p.weeks < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 weeks, got {}", p.weeks)));
    }
    if p.height == 0 || p.width == 0 {
        return Err(Error::InvalidArgument("grid must be non-empty".into()));
    }
    if !(p.daily_amp >= 0.0 && p.weekly_amp >= 0.0 && p.noise_std >= 0.0) {
        return Err(Error::InvalidArgument("amplitudes and noise must be non-negative".into()));
    }
    if !(0.0..1.0).contains(&p.noise_corr) {
        return Err(Error::InvalidArgument(format!("noise_corr {} outside [0, 1)", p.noise_corr)));
    }
    let duration = p
        .interval_hours
        .checked_mul(3600)
        .ok_or_else(|| Error::InvalidInterval(format!("{} hours", p.interval_hours)))?;
    let per_day = check_interval(duration)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(p.seed);
    let cells = 2 * p.height * p.width;
    let bases: Vec<f64> = (0..cells)
        .map(|_| p.daily_amp + p.weekly_amp + rng.random_range(5.0..20.0))
        .collect();
    let phases: Vec<f64> = (0..cells).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let day_factors: Vec<[f64; 7]> = (0..cells)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let innovation = (1.0 - p.noise_corr * p.noise_corr).sqrt();
    let mut state: Vec<f64> = (0..cells).map(|_| noise.sample(&mut rng)).collect();

    let len = p.weeks * 7 * per_day;
    let tensors = (0..len)
        .map(|t| {
            let tod = t % per_day;
            let dow = (t / per_day) % 7;
            let angle = std::f64::consts::TAU * tod as f64 / per_day as f64;
            let values = (0..cells)
                .map(|c| {
                    let clean = bases[c] + p.daily_amp * (angle + phases[c]).sin() + p.weekly_amp * day_factors[c][dow];
                    if t > 0 {
                        state[c] = p.noise_corr * state[c] + innovation * noise.sample(&mut rng);
                    }
                    (clean + state[c]).max(0.0)
                })
                .collect();
            FlowTensor::from_values(p.height, p.width, values, t)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowSeries::new(p.height, p.width, duration, SYNTH_START, tensors)
}
