use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};

use cho_core::channel::FadingKind;
use cho_core::config::{preset_a3_linear, preset_multicell, preset_two_gnb, SimConfig};
use cho_core::markov::{
    a3_chain, check_ergodic, closed_form_pi_hof, estimate_matrix, solve_balance, stationary, stationary_observed,
    write_closed_form_csv, write_counts_csv, write_ergodicity_csv, write_matrix_csv, write_stationary_csv, A3ChainMode,
    ClosedFormReport, Ergodicity, StationaryDistribution, TransitionCounts, TransitionMatrix,
};
use cho_core::metrics::RunStats;
use cho_core::sim;
use cho_core::trace::{read_trace_csv, write_trace_csv, RunTrace};
use cho_core::Error;

use crate::cli::{A3Args, AnalyzeArgs, Axis, Cli, Format, PresetName, PresetsArgs, RunArgs, ScenarioArgs, SweepArgs};
use crate::plot::{LineChart, Series};
use crate::sweep::{run_sweep, thread_pool, SweepPoint, SweepSpec};

/// Speed of the UE in the two-gNB presets.
pub const TWO_GNB_VELOCITY_MPS: f64 = 10.0;

impl PresetName {
    pub const ALL: [PresetName; 5] = [
        PresetName::TwoGnbRayleigh,
        PresetName::TwoGnbRician,
        PresetName::TwoGnbNone,
        PresetName::Multicell,
        PresetName::A3Linear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PresetName::TwoGnbRayleigh => "two-gnb-rayleigh",
            PresetName::TwoGnbRician => "two-gnb-rician",
            PresetName::TwoGnbNone => "two-gnb-none",
            PresetName::Multicell => "multicell",
            PresetName::A3Linear => "a3-linear",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            PresetName::TwoGnbRayleigh => "2 gNBs 500 m apart, one UE crossing at 36 km/h, Rayleigh fading",
            PresetName::TwoGnbRician => "2 gNBs 500 m apart, one UE crossing at 36 km/h, Rician K=3 dB",
            PresetName::TwoGnbNone => "2 gNBs 500 m apart, one UE crossing at 36 km/h, no fading",
            PresetName::Multicell => "8 gNBs in 500x1000 m, 20 random-waypoint UEs at 0-50 km/h, Rician K=3 dB",
            PresetName::A3Linear => "3 cells 500 m apart, UE at 22 m/s, A3 reduction Hys=11 dB TTT=480 ms",
        }
    }

    pub fn config(&self) -> SimConfig {
        let two = |f| preset_two_gnb(TWO_GNB_VELOCITY_MPS, f).expect("positive preset velocity");
        match self {
            PresetName::TwoGnbRayleigh => two(FadingKind::Rayleigh),
            PresetName::TwoGnbRician => two(FadingKind::Rician),
            PresetName::TwoGnbNone => two(FadingKind::None),
            PresetName::Multicell => preset_multicell(),
            PresetName::A3Linear => preset_a3_linear(11.0, 480, FadingKind::Rayleigh).expect("valid A3 preset"),
        }
    }
}

/// Resolves `--config`/`--preset` plus overrides and `--seed`.
pub fn load_scenario(args: &ScenarioArgs, seed: Option<u64>, default: PresetName) -> Result<SimConfig> {
    let base = match (&args.config, args.preset) {
        (Some(path), _) => SimConfig::from_path(path)?,
        (None, Some(p)) => p.config(),
        (None, None) => default.config(),
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    Ok(&cli.out_dir)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(path.to_path_buf())
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
    write_file(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header)?;
        for r in rows {
            csv.write_record(r)?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Stationary vector for reporting. Unvisited states without inflow are
/// set aside; a chain that is still not ergodic gets no vector.
fn stationary_for_report(tm: &TransitionMatrix, erg: &Ergodicity) -> Option<StationaryDistribution> {
    if erg.is_ergodic() {
        return stationary(&tm.matrix).ok();
    }
    match stationary_observed(tm) {
        Ok(st) => Some(st),
        Err(e) => {
            warn!("no stationary distribution: {e}");
            None
        }
    }
}

fn write_stationary(path: &Path, tm: &TransitionMatrix, st: Option<&StationaryDistribution>) -> Result<PathBuf> {
    write_file(path, |w| {
        match st {
            Some(st) => write_stationary_csv(tm.space, st, w)?,
            None => writeln!(w, "state,pi")?,
        }
        Ok(())
    })
}

pub struct RunOutput {
    pub trace: RunTrace,
    pub stats: RunStats,
    pub files: Vec<PathBuf>,
}

pub fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<RunOutput> {
    let cfg = load_scenario(&args.scenario, cli.seed, PresetName::Multicell)?;
    let dir = out_dir(cli)?;
    let trace = sim::run(&cfg)?;
    let stats = RunStats::from_trace(&trace)?;
    let report = stats.report(&cfg.metrics.packet_rates)?;
    let tm = estimate_matrix(&TransitionCounts::from_trace(&trace)?)?;
    let erg = check_ergodic(&tm.matrix);
    let st = stationary_for_report(&tm, &erg);

    let files = vec![
        write_file(&dir.join("trace.csv"), |w| Ok(write_trace_csv(&trace, w)?))?,
        write_file(&dir.join("metrics.csv"), |w| Ok(report.write_csv(w)?))?,
        write_file(&dir.join("matrix.csv"), |w| Ok(write_matrix_csv(&tm, w)?))?,
        write_stationary(&dir.join("stationary.csv"), &tm, st.as_ref())?,
    ];
    println!(
        "run {} (fingerprint {}): {} events, {} handovers, {} HOF, {} RLF",
        cfg.scenario.name,
        trace.meta.fingerprint,
        trace.events.len(),
        stats.successes,
        stats.hof_events,
        stats.rlf_events
    );
    for f in &files {
        info!("wrote {}", f.display());
    }
    Ok(RunOutput { trace, stats, files })
}

pub struct AnalyzeOutput {
    pub matrix: TransitionMatrix,
    pub ergodicity: Ergodicity,
    pub stationary: Option<StationaryDistribution>,
    pub closed_form: ClosedFormReport,
    pub files: Vec<PathBuf>,
}

pub fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<AnalyzeOutput> {
    let file =
        File::open(&args.trace).map_err(|e| Error::Data(format!("cannot read trace {}: {e}", args.trace.display())))?;
    let trace = read_trace_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let counts = TransitionCounts::from_trace(&trace)?;
    let tm = estimate_matrix(&counts)?;
    let erg = check_ergodic(&tm.matrix);
    let st = stationary_for_report(&tm, &erg);
    let cf = closed_form_pi_hof(&tm);
    let dir = out_dir(cli)?;
    let files = vec![
        write_file(&dir.join("matrix.csv"), |w| Ok(write_matrix_csv(&tm, w)?))?,
        write_file(&dir.join("counts.csv"), |w| Ok(write_counts_csv(&counts, w)?))?,
        write_file(&dir.join("ergodicity.csv"), |w| {
            Ok(write_ergodicity_csv(&erg, &tm.unobserved, w)?)
        })?,
        write_stationary(&dir.join("stationary.csv"), &tm, st.as_ref())?,
        write_file(&dir.join("closed_form.csv"), |w| Ok(write_closed_form_csv(&cf, w)?))?,
    ];
    println!("states: {} (n={}, m={})", tm.space.dim(), tm.space.n, tm.space.m);
    println!("ergodicity: {erg}");
    if let Some(st) = &st {
        println!(
            "pi_HOF (linear solve): {} residual {:e}",
            st.pi[tm.space.hof_index()],
            st.residual
        );
    }
    match (cf.pi_hof, cf.discrepancy) {
        (Some(p), Some(d)) => println!("pi_HOF (closed form): {p} discrepancy {d:e}"),
        _ => println!("pi_HOF (closed form): undefined discrepancy undefined"),
    }
    Ok(AnalyzeOutput {
        matrix: tm,
        ergodicity: erg,
        stationary: st,
        closed_form: cf,
        files,
    })
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn sweep_charts(axis_label: &str, points: &[SweepPoint]) -> Vec<(&'static str, LineChart)> {
    let mut fadings: Vec<FadingKind> = Vec::new();
    for p in points {
        if !fadings.contains(&p.fading) {
            fadings.push(p.fading);
        }
    }
    let series = |f: &dyn Fn(&SweepPoint) -> f64| -> Vec<Series> {
        fadings
            .iter()
            .map(|&fk| Series {
                label: fk.to_string(),
                points: points
                    .iter()
                    .filter(|p| p.fading == fk)
                    .map(|p| (p.value, f(p)))
                    .collect(),
            })
            .collect()
    };
    let chart = |title: &str, y: &str, log_y: bool, s: Vec<Series>| LineChart {
        title: title.to_string(),
        x_label: axis_label.to_string(),
        y_label: y.to_string(),
        log_y,
        series: s,
    };
    let mut loss = Vec::new();
    for &fk in &fadings {
        let rates: Vec<f64> = points
            .iter()
            .find(|p| p.fading == fk)
            .map(|p| p.report.packet_loss.iter().map(|(l, _)| *l).collect())
            .unwrap_or_default();
        for (k, l) in rates.iter().enumerate() {
            loss.push(Series {
                label: format!("{fk} λ={l}"),
                points: points
                    .iter()
                    .filter(|p| p.fading == fk)
                    .map(|p| (p.value, opt(p.report.packet_loss[k].1)))
                    .collect(),
            });
        }
    }
    vec![
        (
            "hof_probability.svg",
            chart("HOF probability", "P(HOF)", true, series(&|p| opt(p.report.p_hof))),
        ),
        (
            "rlf_probability.svg",
            chart("RLF probability", "P(RLF)", true, series(&|p| opt(p.report.p_rlf))),
        ),
        (
            "pi_hof.svg",
            chart(
                "Markov steady-state HOF",
                "pi_HOF",
                true,
                series(&|p| opt(p.report.pi_hof_markov)),
            ),
        ),
        (
            "hi_rate.svg",
            chart(
                "Handover initiation rate",
                "HI rate (1/s)",
                true,
                series(&|p| p.report.hi_rate_per_s),
            ),
        ),
        (
            "latency.svg",
            chart(
                "Handover latency",
                "latency (ms)",
                true,
                series(&|p| opt(p.report.mean_latency_ms)),
            ),
        ),
        ("packet_loss.svg", chart("Handover packet loss", "packets", true, loss)),
    ]
}

pub fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<Vec<SweepPoint>> {
    let base = load_scenario(&args.scenario, None, PresetName::Multicell)?;
    let spec = SweepSpec {
        axis: args.axis,
        values: args.values.clone(),
        fadings: args.fading.clone(),
        seeds: args.seeds,
        base_seed: cli.seed.unwrap_or(base.scenario.seed),
        base,
        hys_db: args.hys,
    };
    let pool = thread_pool(cli.jobs)?;
    let points = run_sweep(&spec, &pool)?;
    let dir = out_dir(cli)?;
    let mut header = vec![args.axis.key().to_string(), "fading".to_string()];
    header.extend(points[0].report.csv_header());
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.value.to_string(), p.fading.to_string()];
            r.extend(p.report.csv_row());
            r
        })
        .collect();
    write_rows(&dir.join("sweep.csv"), &header, &rows)?;
    if cli.format == Format::Svg {
        for (name, chart) in sweep_charts(args.axis.label(), &points) {
            write_file(&dir.join(name), |w| Ok(w.write_all(chart.to_svg().as_bytes())?))?;
        }
    }
    for p in &points {
        println!(
            "{}={} {}: p_hof={} p_rlf={} latency_ms={} hi_rate={}",
            args.axis.key(),
            p.value,
            p.fading,
            opt(p.report.p_hof),
            opt(p.report.p_rlf),
            opt(p.report.mean_latency_ms),
            p.report.hi_rate_per_s
        );
    }
    Ok(points)
}

#[derive(Clone, Debug)]
pub struct A3Row {
    pub ttt_ms: u32,
    pub fading: FadingKind,
    pub n: u32,
    pub dim: usize,
    pub stats: RunStats,
    pub p_hof: Option<f64>,
    pub p_hof_ci: Option<f64>,
    /// Reduced chain with WAIT completing the handover.
    pub pi_hof_absorbing: Option<f64>,
    /// Reduced chain with WAIT forced into HOF.
    pub pi_hof_wait_to_hof: Option<f64>,
}

fn a3_pi(stats: &RunStats, mode: A3ChainMode) -> Option<f64> {
    let est = estimate_matrix(&stats.counts).ok()?;
    let chain = a3_chain(&est, mode).ok()?;
    let st = solve_balance(&chain.matrix).ok()?;
    Some(st.pi[chain.space.hof_index()])
}

pub fn cmd_a3(cli: &Cli, args: &A3Args) -> Result<Vec<A3Row>> {
    let base = preset_a3_linear(args.hys, *args.ttt.first().unwrap_or(&100), FadingKind::Rayleigh)?
        .with_overrides(&args.overrides)?;
    let spec = SweepSpec {
        axis: Axis::Ttt,
        values: args.ttt.iter().map(|&t| f64::from(t)).collect(),
        fadings: args.fading.clone(),
        seeds: args.seeds,
        base_seed: cli.seed.unwrap_or(base.scenario.seed),
        base,
        hys_db: args.hys,
    };
    let pool = thread_pool(cli.jobs)?;
    let points = run_sweep(&spec, &pool)?;
    let rows: Vec<A3Row> = points
        .iter()
        .map(|p| {
            let space = p.stats.counts.space();
            A3Row {
                ttt_ms: p.value as u32,
                fading: p.fading,
                n: space.n,
                dim: space.dim(),
                p_hof: p.stats.p_hof(),
                p_hof_ci: p.report.p_hof_ci,
                pi_hof_absorbing: a3_pi(&p.stats, A3ChainMode::Absorbing),
                pi_hof_wait_to_hof: a3_pi(&p.stats, A3ChainMode::WaitToHof),
                stats: p.stats.clone(),
            }
        })
        .collect();
    let dir = out_dir(cli)?;
    let header: Vec<String> = [
        "ttt_ms",
        "fading",
        "n",
        "states",
        "p_hof",
        "p_hof_ci",
        "hof_events",
        "successes",
        "pi_hof_absorbing",
        "pi_hof_wait_to_hof",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.ttt_ms.to_string(),
                r.fading.to_string(),
                r.n.to_string(),
                r.dim.to_string(),
                cell(r.p_hof),
                cell(r.p_hof_ci),
                r.stats.hof_events.to_string(),
                r.stats.successes.to_string(),
                cell(r.pi_hof_absorbing),
                cell(r.pi_hof_wait_to_hof),
            ]
        })
        .collect();
    write_rows(&dir.join("a3.csv"), &header, &table)?;
    if cli.format == Format::Svg {
        let mut fadings: Vec<FadingKind> = Vec::new();
        rows.iter().for_each(|r| {
            if !fadings.contains(&r.fading) {
                fadings.push(r.fading)
            }
        });
        let chart = LineChart {
            title: format!("A3 HOF probability, Hys = {} dB", args.hys),
            x_label: "TTT (ms)".into(),
            y_label: "P(HOF)".into(),
            log_y: false,
            series: fadings
                .iter()
                .map(|&f| Series {
                    label: f.to_string(),
                    points: rows
                        .iter()
                        .filter(|r| r.fading == f)
                        .map(|r| (f64::from(r.ttt_ms), opt(r.p_hof)))
                        .collect(),
                })
                .collect(),
        };
        write_file(&dir.join("a3_hof.svg"), |w| Ok(w.write_all(chart.to_svg().as_bytes())?))?;
    }
    println!("ttt_ms fading states p_hof hof successes");
    for r in &rows {
        println!(
            "{} {} {} {} {} {}",
            r.ttt_ms,
            r.fading,
            r.dim,
            opt(r.p_hof),
            r.stats.hof_events,
            r.stats.successes
        );
    }
    Ok(rows)
}

pub fn cmd_presets(args: &PresetsArgs) -> Result<()> {
    match args.show {
        Some(p) => print!("{}", p.config().to_toml_string()),
        None => {
            for p in PresetName::ALL {
                println!("{:<18} {}", p.name(), p.description());
            }
        }
    }
    Ok(())
}
