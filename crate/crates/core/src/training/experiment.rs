use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use super::data::Dataset;
use super::trainer::{evaluate, train, EvalReport, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{FusionMode, ModelConfig, TermCast, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Ablation,
    Fusion,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Fusion => "fusion",
        })
    }
}

/// One trained-and-tested run. `report` holds test metrics in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub experiment: ExperimentKind,
    pub label: String,
    pub seed: u64,
    pub report: EvalReport,
}

type Progress<'d> = Box<dyn FnMut(&str, &EvalReport) + 'd>;

/// Trains and tests model configurations on one shared dataset split.
/// Runs are cached by (variant, fusion mode, seed), so the full model under
/// the base fusion mode is trained once even when both sweeps need it.
pub struct ExperimentRunner<'d> {
    data: &'d Dataset,
    base: ModelConfig,
    train: TrainConfig,
    cache: BTreeMap<(Variant, FusionMode, u64), EvalReport>,
    progress: Option<Progress<'d>>,
}

impl<'d> ExperimentRunner<'d> {
    pub fn new(data: &'d Dataset, base: ModelConfig, train: TrainConfig) -> Result<Self> {
        base.validate()?;
        train.validate()?;
        if base.height != data.raw.height || base.width != data.raw.width {
            return Err(Error::Config(format!(
                "model grid {}x{} does not match data grid {}x{}",
                base.height, base.width, data.raw.height, data.raw.width
            )));
        }
        if base.intervals_per_day != data.raw.intervals_per_day {
            return Err(Error::Config("model intervals_per_day does not match the data".into()));
        }
        Ok(Self {
            data,
            base,
            train,
            cache: BTreeMap::new(),
            progress: None,
        })
    }

    /// Called after every fresh (uncached) run with a short label.
    pub fn on_run(&mut self, f: impl FnMut(&str, &EvalReport) + 'd) {
        self.progress = Some(Box::new(f));
    }

    pub fn run(&mut self, variant: Variant, fusion: FusionMode, seed: u64) -> Result<EvalReport> {
        if let Some(r) = self.cache.get(&(variant, fusion, seed)) {
            return Ok(r.clone());
        }
        let mut cfg = self.base.clone();
        cfg.variant = variant;
        cfg.fusion = fusion;
        let mut model = TermCast::new(cfg, seed)?;
        let train_cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let fit = train(&mut model, &self.data.train_instances(), &train_cfg)?;
        let test = evaluate(&model, &self.data.test_instances(), &self.data.norm)?;
        let report = EvalReport {
            per_epoch_losses: fit.per_epoch_losses,
            epochs_ran: fit.epochs_ran,
            seed,
            ..test
        };
        if let Some(f) = self.progress.as_mut() {
            f(&format!("{variant}/{fusion}/seed {seed}"), &report);
        }
        self.cache.insert((variant, fusion, seed), report.clone());
        Ok(report)
    }

    /// Every variant under the base fusion mode, for each seed.
    pub fn run_ablation(&mut self, seeds: &[u64]) -> Result<Vec<ExperimentRow>> {
        let fusion = self.base.fusion;
        let mut rows = Vec::new();
        for variant in Variant::ALL {
            for &seed in seeds {
                rows.push(ExperimentRow {
                    experiment: ExperimentKind::Ablation,
                    label: variant.to_string(),
                    seed,
                    report: self.run(variant, fusion, seed)?,
                });
            }
        }
        Ok(rows)
    }

    /// Every fusion mode on the full model, for each seed.
    pub fn run_fusion_sweep(&mut self, seeds: &[u64]) -> Result<Vec<ExperimentRow>> {
        let mut rows = Vec::new();
        for mode in FusionMode::ALL {
            for &seed in seeds {
                rows.push(ExperimentRow {
                    experiment: ExperimentKind::Fusion,
                    label: mode.to_string(),
                    seed,
                    report: self.run(Variant::Full, mode, seed)?,
                });
            }
        }
        Ok(rows)
    }
}

/// Mean (rmse, mae, epochs_ran) per label, in first-appearance order.
pub fn label_means(rows: &[ExperimentRow]) -> Vec<(String, f64, f64, f64)> {
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&ExperimentRow> = rows.iter().filter(|r| r.label == label).collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&ExperimentRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            (
                label.to_string(),
                mean(&|r| r.report.rmse),
                mean(&|r| r.report.mae),
                mean(&|r| r.report.epochs_ran as f64),
            )
        })
        .collect()
}

/// `experiment,variant_or_mode,seed,rmse,mae,epochs_ran`: one row per run,
/// then a `_mean` row per label.
pub fn write_report_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["experiment", "variant_or_mode", "seed", "rmse", "mae", "epochs_ran"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.experiment.to_string(),
            r.label.clone(),
            r.seed.to_string(),
            r.report.rmse.to_string(),
            r.report.mae.to_string(),
            r.report.epochs_ran.to_string(),
        ])
        .map_err(csv_err)?;
    }
    for (label, rmse, mae, epochs) in label_means(rows) {
        let experiment = rows.iter().find(|r| r.label == label).map(|r| r.experiment.to_string()).unwrap_or_default();
        out.write_record([experiment, label, "_mean".into(), rmse.to_string(), mae.to_string(), epochs.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
