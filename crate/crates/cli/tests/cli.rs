use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[model]
relation_dim = 8
g_hidden = 8
mlp_r_hidden = 16
mlp_extra_hidden = 8
conv_filters = 4
conv_layers = 1

[train]
epochs = 3
batch_size = 8
seeds = 1,2

[synth]
height = 3
width = 3
weeks = 3
interval_hours = 6
";

const GRID: &str = "\
[grid]
rows = 2
cols = 2
lon_min = 0
lon_max = 2
lat_min = 0
lat_max = 2
interval_seconds = 3600
start = 0
end = 7200
";

fn termcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_termcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_reports_fixture_totals() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("grid.ini"), GRID).unwrap();
    // a: (0,0) -> (0,1) in hour 0, then (0,1) -> (1,1) in hour 1
    // b: outside -> (1,0) in hour 0
    fs::write(
        dir.path().join("t.csv"),
        "traj_id,timestamp,lon,lat\na,10,0.5,1.5\na,20,1.5,1.5\na,4000,1.5,0.5\nb,100,5,5\nb,200,0.5,0.5\n",
    )
    .unwrap();
    let o = termcast(dir.path(), &["ingest", "--config", "grid.ini", "--data", "t.csv", "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("L=2 H=2 W=2 inflow=3 outflow=2"), "{}", stdout(&o));
    assert!(dir.path().join("o/flows.ufs").is_file());
    assert!(dir.path().join("o/config.ini").is_file());
}

#[test]
fn malformed_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("grid.ini"), GRID).unwrap();
    fs::write(dir.path().join("t.csv"), "traj_id,timestamp,lon,lat\na,10,0.5,1.5\na,oops,1.5,1.5\n").unwrap();
    let o = termcast(dir.path(), &["ingest", "--config", "grid.ini", "--data", "t.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn empty_csv_with_explicit_range_gives_zero_series() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("grid.ini"), GRID).unwrap();
    fs::write(dir.path().join("t.csv"), "traj_id,timestamp,lon,lat\n").unwrap();
    let o = termcast(dir.path(), &["ingest", "--config", "grid.ini", "--data", "t.csv", "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("L=2 H=2 W=2 inflow=0 outflow=0"), "{}", stdout(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.ini"), "[train]\nepoch = 3\n").unwrap();
    let o = termcast(dir.path(), &["synth", "--config", "bad.ini", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(termcast(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn train_is_reproducible_and_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.ini"), TINY).unwrap();
    let o = termcast(p, &["synth", "--config", "tiny.ini", "--seed", "4", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for out in ["a", "b"] {
        let o = termcast(p, &["train", "--config", "tiny.ini", "--seed", "4", "--data", "s/flows.ufs", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(p.join("a/model.tcm")).unwrap();
    assert_eq!(a, fs::read(p.join("b/model.tcm")).unwrap());
    assert_eq!(&a[..4], b"TCM1");
    let metrics = fs::read_to_string(p.join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(fs::read_to_string(p.join("a/losses.csv")).unwrap().lines().count(), 4);

    let o = termcast(p, &["eval", "--config", "tiny.ini", "--data", "s/flows.ufs", "--checkpoint", "a/model.tcm", "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let termcast_row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let text = stdout(&o);
    let printed: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(printed[1].parse::<f64>().unwrap(), termcast_row[1].parse::<f64>().unwrap());

    // A checkpoint does not load under a different architecture.
    let o = termcast(p, &["eval", "--data", "s/flows.ufs", "--checkpoint", "a/model.tcm", "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_writes_one_row_per_run_plus_means() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.ini"), TINY).unwrap();
    assert!(termcast(p, &["synth", "--config", "tiny.ini", "--seed", "2", "--out", "s"]).status.success());
    let o = termcast(p, &["ablate", "--config", "tiny.ini", "--data", "s/flows.ufs", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("r/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "experiment,variant_or_mode,seed,rmse,mae,epochs_ran");
    assert_eq!(lines.len(), 1 + 8 + 4);
    assert_eq!(lines.iter().filter(|l| l.contains(",_mean,")).count(), 4);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = termcast(dir.path(), &["gradcheck", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}
