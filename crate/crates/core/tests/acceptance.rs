//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p termcast-core --test acceptance -- 2 7`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_force_flows, oracle_metrics, random_trajectories, rng, unit_grid};
use rand::Rng;
use termcast_core::components::build_instances;
use termcast_core::flow_grid::{compute_inflow_outflow, minmax_apply, minmax_fit, minmax_invert, read_ufs, write_ufs, FlowSeries};
use termcast_core::gradcheck::full_suite;
use termcast_core::model::{fuse, loss, read_checkpoint, write_checkpoint, FusionMode, ModelConfig, TermCast, Variant};
use termcast_core::training::*;
use termcast_nn::gradcheck::GradCheckOptions;
use termcast_nn::{seeded_init, Graph, InitScheme, ParamStore, Tensor};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DESK_DATA_SEED: u64 = 7;
/// Relation width for the desk-scale experiments; the default 256 puts the
/// 45-run grid far past an hour on one core.
const DESK_RELATION_DIM: usize = 64;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(elapsed < limit, format!("{detail}, {elapsed:.1?} (limit {limit:?})"))
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let results = full_suite(&SEEDS, &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if !failed.is_empty() {
        return Err(format!("{} of {} failed: {}", failed.len(), results.len(), failed.join(", ")));
    }
    within(t.elapsed(), Duration::from_secs(120), format!("{} checks, worst relative error {worst:.2e}", results.len()))
}

fn flow_oracle() -> Outcome {
    let grid = unit_grid(4, 4);
    let mut r = rng(2024);
    for case in 0..200 {
        let trajs = random_trajectories(&mut r, 4, 4, 100, 0, 10_000);
        let got = compute_inflow_outflow(&trajs, &grid, 0).map_err(|e| e.to_string())?;
        if got.values != brute_force_flows(&trajs, 4, 4, |_| true) {
            return Err(format!("set {case} ({} trajectories) differs from enumeration", trajs.len()));
        }
    }
    Ok("200 sets match exactly".into())
}

fn desk_series() -> FlowSeries {
    synth_generate(&SynthParams::desk(DESK_DATA_SEED)).expect("desk parameters are valid")
}

fn overfit_gate() -> Outcome {
    let t = Instant::now();
    let series = desk_series();
    let norm = minmax_fit(&series).map_err(|e| e.to_string())?;
    let normalized = norm.apply_series(&series);
    let instances: Vec<_> = build_instances(&normalized).into_iter().take(8).collect();
    let train_cfg = TrainConfig { epochs: 500, seed: 11, ..TrainConfig::default() };
    let run = || -> termcast_core::Result<(EvalReport, ParamStore)> {
        let mut model = TermCast::new(ModelConfig::new(8, 8, 24), 11)?;
        let report = train(&mut model, &instances, &train_cfg)?;
        Ok((report, model.params))
    };
    let (a, pa) = run().map_err(|e| e.to_string())?;
    let (b, pb) = run().map_err(|e| e.to_string())?;
    let first = a.per_epoch_losses[0];
    let last = *a.per_epoch_losses.last().expect("at least one epoch");
    let ratio = last / first;
    let detail = format!("loss {first:.3e} -> {last:.3e} ({:.3}% of initial) over {} epochs", 100.0 * ratio, a.epochs_ran);
    if a != b || pa != pb {
        return Err(format!("{detail}; reruns differ"));
    }
    // Two runs were timed; the gate is on one.
    within(t.elapsed() / 2, Duration::from_secs(300), detail).and_then(|d| check(ratio < 0.01, d))
}

struct DeskResults {
    ha: f64,
    ablation: Vec<(String, f64)>,
    fusion: Vec<(String, f64)>,
    full_elapsed: Duration,
}

fn desk_experiments() -> Result<DeskResults, String> {
    let data = Dataset::new(desk_series(), 0.8).map_err(|e| e.to_string())?;
    let ha = ha_baseline(&data.train_series().map_err(|e| e.to_string())?, &data.raw_test_instances())
        .map_err(|e| e.to_string())?
        .rmse;
    let cfg = ModelConfig::new(8, 8, 24).with_relation_dim(DESK_RELATION_DIM);
    let mut runner = ExperimentRunner::new(&data, cfg, TrainConfig::default()).map_err(|e| e.to_string())?;
    let t = Instant::now();
    runner.on_run(move |label, r| eprintln!("  {label}: rmse {:.4} ({} epochs, {:.0?})", r.rmse, r.epochs_ran, t.elapsed()));
    for &seed in &SEEDS {
        runner.run(Variant::Full, FusionMode::C5, seed).map_err(|e| e.to_string())?;
    }
    let full_elapsed = t.elapsed();
    let means = |rows: Vec<ExperimentRow>| label_means(&rows).into_iter().map(|(l, rmse, _, _)| (l, rmse)).collect();
    let ablation = means(runner.run_ablation(&SEEDS).map_err(|e| e.to_string())?);
    let fusion = means(runner.run_fusion_sweep(&SEEDS).map_err(|e| e.to_string())?);
    Ok(DeskResults { ha, ablation, fusion, full_elapsed })
}

fn mean_of(table: &[(String, f64)], label: &str) -> f64 {
    table.iter().find(|(l, _)| l == label).map(|(_, v)| *v).expect("label present")
}

fn is_max(table: &[(String, f64)], label: &str) -> bool {
    let v = mean_of(table, label);
    table.iter().all(|(_, x)| *x <= v)
}

fn table(t: &[(String, f64)]) -> String {
    t.iter().map(|(l, v)| format!("{l} {v:.4}")).collect::<Vec<_>>().join(", ")
}

fn beats_baseline(r: &DeskResults) -> Outcome {
    let full = mean_of(&r.ablation, "full");
    let d = format!("mean full rmse {full:.4} vs HA {:.4}", r.ha);
    within(r.full_elapsed, Duration::from_secs(1800), d).and_then(|d| check(full < r.ha, d))
}

fn ablation_order(r: &DeskResults) -> Outcome {
    let t = &r.ablation;
    let (full, v2, v3) = (mean_of(t, "full"), mean_of(t, "v2"), mean_of(t, "v3"));
    let mut bad = Vec::new();
    if !is_max(t, "v1") {
        bad.push("v1 is not the worst");
    }
    if full > v2 {
        bad.push("full > v2");
    }
    if full > 1.02 * v3 {
        bad.push("full > 1.02 v3");
    }
    check(bad.is_empty(), format!("{}{}", table(t), if bad.is_empty() { String::new() } else { format!("; {}", bad.join(", ")) }))
}

fn fusion_order(r: &DeskResults) -> Outcome {
    let t = &r.fusion;
    let mut bad = Vec::new();
    if !is_max(t, "c4") {
        bad.push("c4 is not the worst");
    }
    if mean_of(t, "c5") > 1.02 * mean_of(t, "c0") {
        bad.push("c5 > 1.02 c0");
    }
    check(bad.is_empty(), format!("{}{}", table(t), if bad.is_empty() { String::new() } else { format!("; {}", bad.join(", ")) }))
}

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let t = seeded_init(shape, InitScheme::UniformFanIn, seed);
    Tensor::new(shape.to_vec(), t.data().iter().map(|v| v * scale).collect()).expect("shape")
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::new(2, 3, 24).with_relation_dim(8);
    c.conv_filters = 4;
    c.mlp_extra_hidden = vec![8];
    c
}

fn properties() -> Outcome {
    let t = Instant::now();
    let mut r = rng(77);
    let store = ParamStore::new();
    for case in 0..200u64 {
        let mut g = Graph::new(&store);
        let scale = r.random_range(0.1..100.0);

        let x = g.input(random_tensor(&[3, 7], case, scale));
        let s = g.softmax(x, 1).map_err(|e| e.to_string())?;
        for row in g.value(s).chunks(7) {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(format!("softmax row off the simplex (case {case})"));
            }
        }

        let logits = [0, 1, 2].map(|k| g.input(random_tensor(&[2, 2, 3], case * 3 + k, scale)));
        let ones = g.input(Tensor::ones(&[1, 12]));
        let zeros = g.input(Tensor::zeros(&[1, 12]));
        let mut total = [0.0; 12];
        for k in 0..3 {
            let terms = [0, 1, 2].map(|j| Some(if j == k { ones } else { zeros }));
            let y = fuse(&mut g, terms, logits, FusionMode::C5).map_err(|e| e.to_string())?;
            total.iter_mut().zip(g.value(y)).for_each(|(a, b)| *a += b);
        }
        if total.iter().any(|w| (w - 1.0).abs() > 1e-6) {
            return Err(format!("C5 weights do not sum to one (case {case})"));
        }

        let xs = [0, 1, 2].map(|k| g.input(random_tensor(&[1, 12], case ^ (k + 9), scale)));
        let c4 = fuse(&mut g, xs.map(Some), logits, FusionMode::C4).map_err(|e| e.to_string())?;
        for i in 0..12 {
            if g.value(c4)[i] != g.value(xs[0])[i] + g.value(xs[1])[i] + g.value(xs[2])[i] {
                return Err(format!("C4 differs from a plain sum (case {case})"));
            }
        }

        let p = g.input(random_tensor(&[2, 12], case ^ 100, scale));
        let tgt = g.input(random_tensor(&[2, 12], case ^ 101, scale));
        let r1 = g.input(random_tensor(&[2, 5], case ^ 102, scale));
        let r2 = g.input(random_tensor(&[2, 5], case ^ 103, scale));
        let only = loss(&mut g, p, p, Some((r1, r2)), 0.0, 1.0).map_err(|e| e.to_string())?;
        if !(0.0..=2.0).contains(&g.scalar(only)) {
            return Err(format!("consistency term {} outside [0, 2]", g.scalar(only)));
        }
        let l = loss(&mut g, p, tgt, Some((r1, r2)), 1.0, 1.0).map_err(|e| e.to_string())?;
        let perfect = loss(&mut g, p, p, Some((r1, r1)), 1.0, 1.0).map_err(|e| e.to_string())?;
        if g.scalar(l) < 0.0 || g.scalar(perfect).abs() > 1e-12 {
            return Err(format!("loss {} / perfect loss {}", g.scalar(l), g.scalar(perfect)));
        }

        let values: Vec<f64> = (0..r.random_range(2..60)).map(|_| r.random_range(-1e3..1e3)).collect();
        let series = common::series_from_fn(1, values.len(), 1, 3600, 0, |_, c| values[c / 2]);
        let norm = minmax_fit(&series).map_err(|e| e.to_string())?;
        let back = minmax_invert(&minmax_apply(&series.tensors[0], &norm), &norm);
        if back.values.iter().zip(&series.tensors[0].values).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err("min-max roundtrip".into());
        }

        let a: Vec<f64> = (0..40).map(|_| r.random_range(-50.0..50.0)).collect();
        let b: Vec<f64> = (0..40).map(|_| r.random_range(-50.0..50.0)).collect();
        let to_tensors = |v: &[f64]| {
            v.chunks(4)
                .enumerate()
                .map(|(i, c)| termcast_core::flow_grid::FlowTensor::from_values(1, 2, c.to_vec(), i).expect("shape"))
                .collect::<Vec<_>>()
        };
        let (want_rmse, want_mae) = oracle_metrics(&a, &b);
        let (ta, tb) = (to_tensors(&a), to_tensors(&b));
        let got_rmse = rmse(&ta, &tb).map_err(|e| e.to_string())?;
        let got_mae = mae(&ta, &tb).map_err(|e| e.to_string())?;
        if (got_rmse - want_rmse).abs() > 1e-10 || (got_mae - want_mae).abs() > 1e-10 {
            return Err("rmse/mae differ from the oracle".into());
        }
    }

    for seed in 0..20u64 {
        let model = TermCast::new(small_config(), seed).map_err(|e| e.to_string())?;
        let mut g = Graph::new(&model.params);
        let rel = g.input(random_tensor(&[6, 8], seed, 1.0));
        let start = r.random_range(0..1000);
        let pos: [usize; 6] = std::array::from_fn(|k| start + k);
        let later = pos.map(|p| p + r.random_range(1..60) * 24);
        let a = model.relation_predict(&mut g, rel, &[pos]).map_err(|e| e.to_string())?;
        let b = model.relation_predict(&mut g, rel, &[later]).map_err(|e| e.to_string())?;
        if g.value(a) != g.value(b) {
            return Err("relation prediction is not day-periodic".into());
        }
        let [x, p, q] = [1, 2, 3].map(|k| g.input(random_tensor(&[2, 12], seed ^ k, 3.0)));
        let enc = model.relation_encode(&mut g, x, p, q).map_err(|e| e.to_string())?;
        let inf = model.infer_relation(&mut g, x, p, q).map_err(|e| e.to_string())?;
        if g.value(enc) != g.value(inf) {
            return Err("encoder and inference disagree bitwise".into());
        }
    }

    let data = Dataset::new(
        synth_generate(&SynthParams { height: 2, width: 3, weeks: 3, ..SynthParams::desk(3) }).map_err(|e| e.to_string())?,
        0.8,
    )
    .map_err(|e| e.to_string())?;
    let run = || -> termcast_core::Result<(ParamStore, EvalReport, EvalReport)> {
        let mut m = TermCast::new(small_config(), 5)?;
        let fit = train(&mut m, &data.train_instances(), &TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() })?;
        let test = evaluate(&m, &data.test_instances(), &data.norm)?;
        Ok((m.params, fit, test))
    };
    if run().map_err(|e| e.to_string())? != run().map_err(|e| e.to_string())? {
        return Err("train/eval reruns differ".into());
    }
    within(t.elapsed(), Duration::from_secs(60), "all properties hold".into())
}

fn file_formats() -> Outcome {
    let series = synth_generate(&SynthParams { height: 3, width: 4, weeks: 3, ..SynthParams::desk(9) }).map_err(|e| e.to_string())?;
    let mut first = Vec::new();
    write_ufs(&series, &mut first).map_err(|e| e.to_string())?;
    let mut second = Vec::new();
    write_ufs(&read_ufs(first.as_slice()).map_err(|e| e.to_string())?, &mut second).map_err(|e| e.to_string())?;
    if first != second {
        return Err("UFS1 rewrite differs".into());
    }
    let cfg = small_config();
    let model = TermCast::new(cfg.clone(), 4).map_err(|e| e.to_string())?;
    let mut a = Vec::new();
    write_checkpoint(&model, &mut a).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    write_checkpoint(&read_checkpoint(&cfg, a.as_slice()).map_err(|e| e.to_string())?, &mut b).map_err(|e| e.to_string())?;
    check(a == b, format!("UFS1 {} bytes, TCM1 {} bytes", first.len(), a.len()))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        match &o {
            Ok(d) => println!("criterion {n} {name}: PASS ({d})"),
            Err(d) => println!("criterion {n} {name}: FAIL ({d})"),
        }
        outcomes.push((n, name, o));
    };
    if on(1) {
        report(1, "gradient suite", gradient_suite());
    }
    if on(2) {
        report(2, "inflow/outflow oracle", flow_oracle());
    }
    if on(3) {
        report(3, "overfit gate", overfit_gate());
    }
    if on(4) || on(5) || on(6) {
        match desk_experiments() {
            Ok(r) => {
                if on(4) {
                    report(4, "beats historical average", beats_baseline(&r));
                }
                if on(5) {
                    report(5, "ablation ordering", ablation_order(&r));
                }
                if on(6) {
                    report(6, "fusion ordering", fusion_order(&r));
                }
            }
            Err(e) => {
                for (n, name) in [(4, "beats historical average"), (5, "ablation ordering"), (6, "fusion ordering")] {
                    if on(n) {
                        report(n, name, Err(e.clone()));
                    }
                }
            }
        }
    }
    if on(7) {
        report(7, "property suite", properties());
    }
    if on(8) {
        report(8, "file format round trips", file_formats());
    }
    let failed = outcomes.iter().filter(|o| o.2.is_err()).count();
    println!("{} criteria, {failed} failed", outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
