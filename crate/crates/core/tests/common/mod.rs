#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use termcast_core::flow_grid::{Bounds, FlowSeries, FlowTensor, RegionGrid, Trajectory, TrajectoryPoint};

/// Grid over `[0, cols] x [0, rows]` with unit cells.
pub fn unit_grid(rows: usize, cols: usize) -> RegionGrid {
    RegionGrid::new(
        rows,
        cols,
        Bounds {
            lon_min: 0.0,
            lon_max: cols as f64,
            lat_min: 0.0,
            lat_max: rows as f64,
        },
    )
    .unwrap()
}

/// Membership of a point in cell (row, col) of a unit grid, from interval
/// tests alone: half-open cells, the outer upper edges closed.
fn in_cell(rows: usize, cols: usize, row: usize, col: usize, p: &TrajectoryPoint) -> bool {
    let south = (rows - row - 1) as f64;
    let west = col as f64;
    let lon_ok = (west <= p.lon && p.lon < west + 1.0) || (col == cols - 1 && p.lon == cols as f64);
    // Row 0 is the northern band; the top edge lat == rows belongs to it.
    let lat_ok = (south < p.lat && p.lat <= south + 1.0) || (row == rows - 1 && p.lat == 0.0);
    lon_ok && lat_ok
}

/// Inflow/outflow by enumerating every region against every consecutive
/// point pair: inflow counts pairs that end in the region but start outside
/// it, outflow the reverse.
pub fn brute_force_flows(trajectories: &[Trajectory], rows: usize, cols: usize, keep: impl Fn(&TrajectoryPoint) -> bool) -> Vec<f64> {
    let mut values = vec![0.0; 2 * rows * cols];
    for row in 0..rows {
        for col in 0..cols {
            for t in trajectories {
                for pair in t.points.windows(2) {
                    if !keep(&pair[1]) {
                        continue;
                    }
                    let was = in_cell(rows, cols, row, col, &pair[0]);
                    let is = in_cell(rows, cols, row, col, &pair[1]);
                    if is && !was {
                        values[row * cols + col] += 1.0;
                    }
                    if was && !is {
                        values[rows * cols + row * cols + col] += 1.0;
                    }
                }
            }
        }
    }
    values
}

/// Random trajectories over a unit grid. Some coordinates snap to cell edges
/// and some fall outside the grid, so boundary rules get exercised.
pub fn random_trajectories(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize, max_count: usize, t0: i64, span: i64) -> Vec<Trajectory> {
    let count = rng.random_range(0..=max_count);
    let coord = |rng: &mut Xoshiro256PlusPlus, extent: usize| -> f64 {
        match rng.random_range(0..10) {
            0 => rng.random_range(0..=extent) as f64,
            1 => rng.random_range(-1.0..(extent as f64 + 1.0)),
            _ => rng.random_range(0.0..extent as f64),
        }
    };
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=8);
            let mut ts: Vec<i64> = (0..n).map(|_| t0 + rng.random_range(0..span)).collect();
            ts.sort_unstable();
            let points = ts
                .into_iter()
                .map(|timestamp| TrajectoryPoint {
                    lon: coord(rng, cols),
                    lat: coord(rng, rows),
                    timestamp,
                })
                .collect();
            Trajectory::new(points).unwrap()
        })
        .collect()
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn series_from_fn(h: usize, w: usize, len: usize, interval: u32, start: u64, f: impl Fn(usize, usize) -> f64) -> FlowSeries {
    let tensors = (0..len)
        .map(|t| FlowTensor::from_values(h, w, (0..2 * h * w).map(|c| f(t, c)).collect(), t).unwrap())
        .collect();
    FlowSeries::new(h, w, interval, start, tensors).unwrap()
}

/// Root mean square and mean absolute difference, written out directly.
pub fn oracle_metrics(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let ab: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    ((sq / n).sqrt(), ab / n)
}
