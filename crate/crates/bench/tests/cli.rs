use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cho_core::config::SimConfig;
use cho_core::markov::read_matrix_csv;
use tempfile::TempDir;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");

fn bench(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cho-bench"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("CHO_BENCH_OUT_DIR")
        .output()
        .expect("spawn cho-bench")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = bench(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_run(dir: &Path, preset: &str) -> PathBuf {
    ok(
        dir,
        &["run", "--preset", preset, "--override", "scenario.duration_ms=3000"],
    );
    dir.to_path_buf()
}

#[test]
fn presets_list_and_show() {
    let tmp = TempDir::new().unwrap();
    let list = ok(tmp.path(), &["presets"]);
    for name in [
        "two-gnb-rayleigh",
        "two-gnb-rician",
        "two-gnb-none",
        "multicell",
        "a3-linear",
    ] {
        assert!(list.contains(name), "{name} missing");
    }
    let toml = ok(tmp.path(), &["presets", "--show", "multicell"]);
    let cfg = SimConfig::from_toml_str(&toml).unwrap();
    assert_eq!(cfg.gnbs.len(), 8);
    assert_eq!(cfg.scenario.n_ues, 20);
}

#[test]
fn every_preset_runs() {
    for preset in [
        "two-gnb-rayleigh",
        "two-gnb-rician",
        "two-gnb-none",
        "multicell",
        "a3-linear",
    ] {
        let tmp = TempDir::new().unwrap();
        let dir = short_run(tmp.path(), preset);
        for f in ["trace.csv", "metrics.csv", "matrix.csv", "stationary.csv"] {
            assert!(dir.join(f).exists(), "{preset}: {f}");
        }
    }
}

#[test]
fn config_file_and_overrides() {
    let tmp = TempDir::new().unwrap();
    let toml = ok(tmp.path(), &["presets", "--show", "two-gnb-none"]);
    let path = tmp.path().join("scenario.toml");
    fs::write(&path, toml).unwrap();
    let out = tmp.path().join("o");
    ok(
        &out,
        &[
            "--seed",
            "9",
            "run",
            "--config",
            path.to_str().unwrap(),
            "--override",
            "scenario.duration_ms=200",
        ],
    );
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# cho-trace v1"));
    assert!(trace.contains("duration_ms=200"));
    assert_eq!(trace.lines().count(), 2 + 10);
}

#[test]
fn run_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = short_run(&tmp.path().join("a"), "multicell");
    let b = short_run(&tmp.path().join("b"), "multicell");
    for f in ["trace.csv", "metrics.csv", "matrix.csv", "stationary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cho-bench"))
        .args([
            "run",
            "--preset",
            "two-gnb-none",
            "--override",
            "scenario.duration_ms=100",
        ])
        .env("CHO_BENCH_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("trace.csv").exists());
}

#[test]
fn config_errors_exit_2_with_field() {
    let tmp = TempDir::new().unwrap();
    let o = bench(
        tmp.path(),
        &["run", "--preset", "multicell", "--override", "handover.t_sample_ms=0"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t_sample_ms"), "{}", stderr(&o));

    let o = bench(
        tmp.path(),
        &["run", "--preset", "multicell", "--override", "channel.no_such_key=1"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));

    let o = bench(
        tmp.path(),
        &["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));

    let o = bench(
        tmp.path(),
        &["sweep", "--axis", "t-prep", "--values", "100,10.5", "--seeds", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t_prep_ms=10.5"), "{}", stderr(&o));
}

#[test]
fn data_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = bench(tmp.path(), &["analyze", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let header_only = tmp.path().join("header.csv");
    fs::write(
        &header_only,
        "time_ms,ue_id,from_state,to_state,cause,serving_gnb,target_gnb,p1_dbm,p2_dbm,sinr_db\n",
    )
    .unwrap();
    let o = bench(tmp.path(), &["analyze", header_only.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let o = bench(tmp.path(), &["analyze", tmp.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let bad = tmp.path().join("bad.csv");
    let golden = fs::read_to_string(Path::new(DATA).join("golden_trace.csv")).unwrap();
    fs::write(&bad, golden.replacen(",NORM,A1,", ",NORM,B3,", 1)).unwrap();
    let o = bench(tmp.path(), &["analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn golden_trace_reproduces_matrix() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["analyze", &format!("{DATA}/golden_trace.csv")]);
    assert!(stdout.contains("discrepancy"));
    let golden = fs::read(Path::new(DATA).join("golden_matrix.csv")).unwrap();
    assert_eq!(fs::read(tmp.path().join("matrix.csv")).unwrap(), golden);
    for f in ["counts.csv", "ergodicity.csv", "stationary.csv", "closed_form.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn a3_trace_gives_27_states() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    ok(&run, &["run", "--preset", "a3-linear"]);
    let out = tmp.path().join("an");
    let stdout = ok(&out, &["analyze", run.join("trace.csv").to_str().unwrap()]);
    assert!(stdout.contains("states: 27"));
    let (space, m) = read_matrix_csv(fs::File::open(out.join("matrix.csv")).unwrap()).unwrap();
    assert_eq!((space.n, space.m, m.dim()), (24, 0, 27));
}

#[test]
fn emitted_csvs_round_trip_through_analyze() {
    let tmp = TempDir::new().unwrap();
    let run = short_run(&tmp.path().join("run"), "multicell");
    let out = tmp.path().join("an");
    ok(&out, &["analyze", run.join("trace.csv").to_str().unwrap()]);
    assert_eq!(
        fs::read(run.join("matrix.csv")).unwrap(),
        fs::read(out.join("matrix.csv")).unwrap()
    );
    assert_eq!(
        fs::read(run.join("stationary.csv")).unwrap(),
        fs::read(out.join("stationary.csv")).unwrap()
    );
    read_matrix_csv(fs::File::open(out.join("matrix.csv")).unwrap()).unwrap();

    let closed = fs::read_to_string(out.join("closed_form.csv")).unwrap();
    assert!(closed.lines().any(|l| l.starts_with("discrepancy,")));
    for f in ["metrics.csv", "stationary.csv"] {
        let mut r = csv::Reader::from_path(run.join(f)).unwrap();
        let width = r.headers().unwrap().len();
        assert!(r.records().all(|rec| rec.unwrap().len() == width), "{f}");
    }
}

#[test]
fn sweep_writes_table_and_plots() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "--format",
        "svg",
        "--jobs",
        "1",
        "sweep",
        "--preset",
        "multicell",
        "--override",
        "scenario.duration_ms=2000",
        "--override",
        "scenario.n_ues=2",
        "--axis",
        "velocity",
        "--values",
        "18,36",
        "--seeds",
        "2",
    ];
    ok(tmp.path(), &args);
    let table = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("velocity_kmh,fading,run_count"));
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("18,rayleigh,2,"));
    assert!(lines[4].starts_with("36,rician,2,"));
    for f in ["hof_probability.svg", "latency.svg", "packet_loss.svg", "hi_rate.svg"] {
        let svg = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
    let again = tmp.path().join("again");
    let mut args2 = args.to_vec();
    args2[3] = "3";
    ok(&again, &args2);
    assert_eq!(table, fs::read_to_string(again.join("sweep.csv")).unwrap());
}

#[test]
fn a3_table_variants() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["--format", "svg", "a3", "--ttt", "320", "--seeds", "3"]);
    let table = fs::read_to_string(tmp.path().join("a3.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("320,rayleigh,16,19,"));
    assert!(stdout.contains("320"));
    assert!(tmp.path().join("a3_hof.svg").exists());

    // zero hysteresis makes the A3 entry condition trivial but stays valid
    let z = tmp.path().join("z");
    ok(&z, &["a3", "--hys", "0", "--ttt", "100,480", "--seeds", "2"]);
    let table = fs::read_to_string(z.join("a3.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}
