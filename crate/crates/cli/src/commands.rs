use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use termcast_core::flow_grid::{build_flow_series, read_trajectories_csv, read_ufs, write_ufs, Bounds, FlowSeries, RegionGrid};
use termcast_core::gradcheck::full_suite;
use termcast_core::model::{load_checkpoint, save_checkpoint, ModelConfig, TermCast};
use termcast_core::training::{
    evaluate, ha_baseline, label_means, synth_generate, train as fit, write_report_csv, Dataset, ExperimentRow,
    ExperimentRunner,
};
use termcast_core::Error;

use crate::config::RunConfig;
use crate::Common;

/// Maps a failure to the documented exit status.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Numerics(_)) => 3,
        _ => 2,
    }
}

/// Resolves the config file and flag overrides, creates the output
/// directory and echoes the effective config into it.
fn prepare(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.data_path = Some(data.clone());
    }
    if let Some(v) = common.variant {
        cfg.model.variant = v;
    }
    if let Some(f) = common.fusion {
        cfg.model.fusion = f;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("termcast-out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.ini"), cfg.to_text())?;
    Ok((cfg, out))
}

fn data_path(cfg: &RunConfig) -> Result<&Path> {
    match &cfg.data_path {
        Some(p) => Ok(p),
        None => bail!("no input: pass --data or set [data] path"),
    }
}

fn load_series(path: &Path) -> Result<FlowSeries> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_ufs(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn save_series(series: &FlowSeries, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ufs(series, &mut w)?;
    w.flush()?;
    Ok(())
}

fn model_config(cfg: &RunConfig, series: &FlowSeries) -> Result<ModelConfig> {
    let m = cfg.model.model_config(series.height, series.width, series.intervals_per_day);
    m.validate()?;
    Ok(m)
}

fn totals(series: &FlowSeries) -> (f64, f64) {
    let mut inflow = 0.0;
    let mut outflow = 0.0;
    for t in &series.tensors {
        let half = t.values.len() / 2;
        inflow += t.values[..half].iter().sum::<f64>();
        outflow += t.values[half..].iter().sum::<f64>();
    }
    (inflow, outflow)
}

pub fn ingest(common: &Common) -> Result<ExitCode> {
    let (cfg, out) = prepare(common)?;
    let path = data_path(&cfg)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trajectories = read_trajectories_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    let g = &cfg.grid;
    let grid = RegionGrid::new(
        g.rows,
        g.cols,
        Bounds {
            lon_min: g.lon_min,
            lon_max: g.lon_max,
            lat_min: g.lat_min,
            lat_max: g.lat_max,
        },
    )?;
    let dur = g.interval_seconds as u64;
    let stamps = trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.timestamp));
    let (start, end) = match (g.start, g.end) {
        (Some(s), Some(e)) => (s, e),
        (s, e) => {
            let (lo, hi) = stamps.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
            if lo > hi {
                bail!("no trajectory points: set [grid] start and end to ingest an empty range");
            }
            if lo < 0 {
                bail!("timestamps before 1970 need an explicit [grid] start");
            }
            let start = s.unwrap_or(lo as u64 / dur * dur);
            (start, e.unwrap_or(hi as u64 + 1).max(start + 1))
        }
    };
    let series = build_flow_series(&trajectories, &grid, start, end, g.interval_seconds)?;
    let target = out.join("flows.ufs");
    save_series(&series, &target)?;
    let (inflow, outflow) = totals(&series);
    println!(
        "L={} H={} W={} inflow={inflow} outflow={outflow} -> {}",
        series.len(),
        series.height,
        series.width,
        target.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn synth(common: &Common) -> Result<ExitCode> {
    let (cfg, out) = prepare(common)?;
    let series = synth_generate(&cfg.synth)?;
    let target = out.join("flows.ufs");
    save_series(&series, &target)?;
    println!("L={} H={} W={} -> {}", series.len(), series.height, series.width, target.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(common: &Common) -> Result<ExitCode> {
    let (cfg, out) = prepare(common)?;
    let data = Dataset::new(load_series(data_path(&cfg)?)?, cfg.train_fraction)?;
    let mcfg = model_config(&cfg, &data.raw)?;
    let mut model = TermCast::new(mcfg, cfg.train.seed)?;
    let fit_report = fit(&mut model, &data.train_instances(), &cfg.train)?;
    let test = evaluate(&model, &data.test_instances(), &data.norm)?;
    let ha = ha_baseline(&data.train_series()?, &data.raw_test_instances())?;
    save_checkpoint(&model, &out.join("model.tcm"))?;

    let mut w = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(w, "model,rmse,mae,epochs_ran")?;
    writeln!(w, "termcast,{},{},{}", test.rmse, test.mae, fit_report.epochs_ran)?;
    writeln!(w, "ha,{},{},0", ha.rmse, ha.mae)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("losses.csv"))?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in fit_report.per_epoch_losses.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    w.flush()?;
    println!(
        "test rmse {:.4} mae {:.4} (ha rmse {:.4} mae {:.4}), {} epochs -> {}",
        test.rmse,
        test.mae,
        ha.rmse,
        ha.mae,
        fit_report.epochs_ran,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn eval(common: &Common, checkpoint: &Path) -> Result<ExitCode> {
    let (cfg, _) = prepare(common)?;
    let data = Dataset::new(load_series(data_path(&cfg)?)?, cfg.train_fraction)?;
    let mcfg = model_config(&cfg, &data.raw)?;
    let model = load_checkpoint(&mcfg, checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let report = evaluate(&model, &data.test_instances(), &data.norm)?;
    println!("rmse {} mae {}", report.rmse, report.mae);
    Ok(ExitCode::SUCCESS)
}

fn experiment(common: &Common, file: &str, run: fn(&mut ExperimentRunner, &[u64]) -> termcast_core::Result<Vec<ExperimentRow>>) -> Result<ExitCode> {
    let (cfg, out) = prepare(common)?;
    if cfg.seeds.is_empty() {
        bail!("[train] seeds is empty");
    }
    let data = Dataset::new(load_series(data_path(&cfg)?)?, cfg.train_fraction)?;
    let mcfg = model_config(&cfg, &data.raw)?;
    let mut runner = ExperimentRunner::new(&data, mcfg, cfg.train.clone())?;
    runner.on_run(|label, r| eprintln!("{label}: rmse {:.4} mae {:.4} ({} epochs)", r.rmse, r.mae, r.epochs_ran));
    let rows = run(&mut runner, &cfg.seeds)?;
    let target = out.join(file);
    write_report_csv(&rows, BufWriter::new(File::create(&target)?))?;
    for (label, rmse, mae, _) in label_means(&rows) {
        println!("{label}: mean rmse {rmse:.4} mae {mae:.4}");
    }
    println!("-> {}", target.display());
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(common: &Common) -> Result<ExitCode> {
    experiment(common, "ablation.csv", |r, s| r.run_ablation(s))
}

pub fn sweep_fusion(common: &Common) -> Result<ExitCode> {
    experiment(common, "fusion.csv", |r, s| r.run_fusion_sweep(s))
}

pub fn gradcheck(seeds: &[u64]) -> Result<ExitCode> {
    let results = full_suite(seeds, &Default::default())?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &failed {
        println!("FAIL {} rel {:e}", r.name, r.max_rel_error);
    }
    println!("{} checks, {} failed, worst relative error {worst:e}", results.len(), failed.len());
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
