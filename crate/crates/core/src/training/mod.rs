//! Training, evaluation, the historical-average baseline, the synthetic data
//! generator and the ablation / fusion experiment harnesses.

mod baseline;
mod data;
mod experiment;
mod metrics;
mod synth;
mod trainer;

pub use baseline::{ha_baseline, ha_predict};
pub use data::Dataset;
pub use experiment::{label_means, write_report_csv, ExperimentKind, ExperimentRow, ExperimentRunner};
pub use metrics::{mae, rmse};
pub use synth::{synth_generate, SynthParams};
pub use trainer::{evaluate, train, EvalReport, TrainConfig};
