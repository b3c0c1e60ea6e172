//! Parameter sweeps: one independent run per (value, fading, seed), pooled
//! per (value, fading) in a fixed order.

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;

use cho_core::channel::FadingKind;
use cho_core::config::{SimConfig, KMH_PER_MPS};
use cho_core::fsm::A3Variant;
use cho_core::metrics::{MetricsAccumulator, MetricsReport, RunStats};
use cho_core::mobility::MobilityMode;
use cho_core::sim::Simulation;
use cho_core::Error;

use crate::cli::Axis;

impl Axis {
    pub fn key(&self) -> &'static str {
        match self {
            Axis::Velocity => "velocity_kmh",
            Axis::OPrep => "o_prep_db",
            Axis::OExec => "o_exec_db",
            Axis::TPrep => "t_prep_ms",
            Axis::TExec => "t_exec_ms",
            Axis::Ttt => "ttt_ms",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Axis::Velocity => "velocity (km/h)",
            Axis::OPrep => "O_prep (dB)",
            Axis::OExec => "O_exec (dB)",
            Axis::TPrep => "T_prep (ms)",
            Axis::TExec => "T_exec (ms)",
            Axis::Ttt => "TTT (ms)",
        }
    }
}

fn as_ms(axis: Axis, v: f64) -> Result<u32> {
    if !(v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)) {
        return Err(Error::config(axis.key(), format!("{v} is not a whole number of milliseconds")).into());
    }
    Ok(v as u32)
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub fadings: Vec<FadingKind>,
    pub seeds: u32,
    pub base_seed: u64,
    pub base: SimConfig,
    /// Hysteresis used by the TTT axis.
    pub hys_db: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.values.is_empty(), "sweep needs at least one value");
        ensure!(!self.fadings.is_empty(), "sweep needs at least one fading model");
        ensure!(self.seeds >= 1, "sweep needs at least one seed");
        Ok(())
    }

    /// Scenario for one sweep cell.
    pub fn config_for(&self, value: f64, fading: FadingKind, seed: u64) -> Result<SimConfig> {
        let mut cfg = self.base.clone();
        cfg.channel.fading = fading;
        cfg.scenario.seed = seed;
        match self.axis {
            Axis::Velocity => {
                let v = value / KMH_PER_MPS;
                cfg.mobility.v_min_mps = v;
                cfg.mobility.v_max_mps = v;
                if cfg.mobility.mode == MobilityMode::Linear {
                    cfg.mobility.velocity_mps = Some(v);
                }
            }
            Axis::OPrep => cfg.handover.o_prep_db = value,
            Axis::OExec => cfg.handover.o_exec_db = value,
            Axis::TPrep => cfg.handover.t_prep_ms = as_ms(self.axis, value)?,
            Axis::TExec => cfg.handover.t_exec_ms = as_ms(self.axis, value)?,
            Axis::Ttt => cfg.reduce_to_a3(self.hys_db, as_ms(self.axis, value)?, A3Variant::PrepOnly)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Streams one run into a metrics fold without keeping the trace.
pub fn run_stats(cfg: &SimConfig) -> Result<RunStats> {
    let mut sim = Simulation::new(cfg)?;
    let mut acc = MetricsAccumulator::new(sim.meta());
    sim.run_with(&mut acc, None)?;
    Ok(acc.finish()?)
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub fading: FadingKind,
    pub stats: RunStats,
    pub report: MetricsReport,
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        ensure!(j >= 1, "--jobs must be at least 1");
        b = b.num_threads(j);
    }
    Ok(b.build()?)
}

pub fn run_sweep(spec: &SweepSpec, pool: &rayon::ThreadPool) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &value in &spec.values {
        for &fading in &spec.fadings {
            for s in 0..spec.seeds {
                cells.push((value, fading, spec.base_seed + u64::from(s)));
            }
        }
    }
    let results: Vec<RunStats> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(value, fading, seed)| {
                spec.config_for(value, fading, seed)
                    .and_then(|cfg| run_stats(&cfg))
                    .with_context(|| format!("sweep point {}={value} fading={fading} seed={seed}", spec.axis.key()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let per_point = spec.seeds as usize;
    let mut out = Vec::new();
    for (chunk, cell) in results.chunks(per_point).zip(cells.iter().step_by(per_point)) {
        let mut pooled = chunk[0].clone();
        for s in &chunk[1..] {
            pooled.merge(s)?;
        }
        let report = pooled.report(&spec.base.metrics.packet_rates)?;
        out.push(SweepPoint {
            value: cell.0,
            fading: cell.1,
            stats: pooled,
            report,
        });
    }
    Ok(out)
}
