//! Tick-driven multi-UE simulation loop.
//!
//! Each tick of `t_sample` every UE moves, redraws fading (every
//! `coherence_samples` ticks), measures RSRP from all gNBs, advances its RLF
//! monitor, and takes one FSM step. Exactly one [`TraceEvent`] is emitted per
//! UE per tick.
//!
//! Randomness is split into independent ChaCha8 streams derived from the
//! scenario seed: one per UE for mobility and one per (UE, gNB) link for
//! fading, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{linear_to_db, path_gain_power, watts_to_dbm, Fading, LinkBudget};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::fsm::{
    exec_condition, fsm_step, prep_condition, rlf_step, Cause, ChoState, MobilityParams, RlfMonitor, StateSpace,
    StepInputs, TraceEvent,
};
use crate::mobility::{distance, step, MobilityMode, MobilityState, Position};
use crate::trace::{LinkSample, RunMeta, RunTrace, TraceSink};

fn stream_rng(seed: u64, ue: u32, link: Option<u32>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = link.map_or(0, |g| u64::from(g) + 1);
    rng.set_stream((u64::from(ue) << 33) | lo);
    rng
}

#[derive(Clone, Debug)]
struct Ue {
    id: u32,
    mobility: MobilityState,
    mob_rng: ChaCha8Rng,
    link_rngs: Vec<ChaCha8Rng>,
    gains: Vec<f64>,
    serving: usize,
    target: Option<usize>,
    state: ChoState,
    rlf: RlfMonitor,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: SimConfig,
    meta: RunMeta,
    params: MobilityParams,
    fading: Fading,
    budgets: Vec<LinkBudget>,
    gnb_pos: Vec<Position>,
    gnb_ids: Vec<u32>,
    noise_w: f64,
    ues: Vec<Ue>,
    tick: u64,
    ticks: u64,
    power: Vec<f64>,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.mobility_params();
        let space = params.space()?;
        let budgets = (0..cfg.gnbs.len())
            .map(|g| cfg.link_budget(g))
            .collect::<Result<Vec<_>>>()?;
        let gnb_pos: Vec<Position> = cfg.gnbs.iter().map(|g| g.position()).collect();
        let gnb_ids: Vec<u32> = cfg.gnbs.iter().map(|g| g.id).collect();
        let seed = cfg.scenario.seed;
        let mut ues = Vec::with_capacity(cfg.scenario.n_ues as usize);
        for id in 0..cfg.scenario.n_ues {
            let mut mob_rng = stream_rng(seed, id, None);
            let mobility = match cfg.mobility.mode {
                MobilityMode::Linear => {
                    let start = cfg
                        .mobility
                        .start
                        .ok_or_else(|| Error::config("mobility.start", "required"))?;
                    let end = cfg
                        .mobility
                        .end
                        .ok_or_else(|| Error::config("mobility.end", "required"))?;
                    let v = cfg
                        .mobility
                        .velocity_mps
                        .ok_or_else(|| Error::config("mobility.velocity_mps", "required"))?;
                    MobilityState::linear(start, end, v)
                }
                MobilityMode::RandomWaypoint => {
                    MobilityState::random_waypoint(&cfg.region, cfg.mobility.velocity_range(), &mut mob_rng)?
                }
            };
            let serving = nearest(mobility.position, &gnb_pos);
            ues.push(Ue {
                id,
                mobility,
                mob_rng,
                link_rngs: gnb_ids.iter().map(|&g| stream_rng(seed, id, Some(g))).collect(),
                gains: vec![0.0; gnb_pos.len()],
                serving,
                target: None,
                state: ChoState::Norm,
                rlf: RlfMonitor::default(),
            });
        }
        let meta = RunMeta {
            fingerprint: cfg.fingerprint(),
            space,
            t_sample_ms: cfg.handover.t_sample_ms,
            duration_ms: cfg.scenario.duration_ms,
            n_ues: cfg.scenario.n_ues,
            warmup_ms: cfg.metrics.warmup_ms,
        };
        Ok(Self {
            cfg: cfg.clone(),
            meta,
            params,
            fading: cfg.fading(),
            noise_w: budgets[0].noise_power_watts,
            budgets,
            power: vec![0.0; gnb_pos.len()],
            gnb_pos,
            gnb_ids,
            ues,
            tick: 0,
            ticks: cfg.ticks(),
        })
    }

    pub fn meta(&self) -> &RunMeta {
        &self.meta
    }

    pub fn space(&self) -> StateSpace {
        self.meta.space
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.ticks
    }

    /// Advances all UEs by one tick. Returns `false` once the run is over.
    pub fn step<S: TraceSink>(&mut self, sink: &mut S, mut links: Option<&mut Vec<LinkSample>>) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let k = self.tick;
        let time_ms = (k + 1) * u64::from(self.params.t_sample_ms);
        let dt_s = f64::from(self.params.t_sample_ms) / 1000.0;
        let redraw = k.is_multiple_of(u64::from(self.cfg.channel.coherence_samples));
        let antennas = self.cfg.channel.antennas as usize;
        let min_d = self.cfg.channel.min_distance_m;
        let space = self.meta.space;
        for ue in &mut self.ues {
            ue.mobility = step(&ue.mobility, dt_s, &self.cfg.region, &mut ue.mob_rng)?;
            let pos = ue.mobility.position;
            for g in 0..self.gnb_pos.len() {
                if redraw {
                    ue.gains[g] = self.fading.draw_gain(antennas, &mut ue.link_rngs[g]);
                }
                let d = distance(pos, self.gnb_pos[g]).max(min_d);
                self.power[g] = path_gain_power(ue.gains[g], d, &self.budgets[g]);
            }
            let event = advance_ue(
                ue,
                &self.power,
                self.noise_w,
                &self.gnb_pos,
                &self.gnb_ids,
                &self.params,
                &self.cfg,
                space,
                time_ms,
            )?;
            if let Some(log) = links.as_deref_mut() {
                log.push(LinkSample {
                    time_ms,
                    ue_id: ue.id,
                    rsrp_dbm: self.power.iter().map(|&p| watts_to_dbm(p)).collect(),
                    sinr_db: event.sinr_db,
                });
            }
            sink.record(&event);
        }
        self.tick += 1;
        Ok(true)
    }

    /// Runs to completion, streaming events into `sink`.
    pub fn run_with<S: TraceSink>(&mut self, sink: &mut S, mut links: Option<&mut Vec<LinkSample>>) -> Result<()> {
        while self.step(sink, links.as_deref_mut())? {}
        Ok(())
    }
}

fn nearest(pos: Position, gnbs: &[Position]) -> usize {
    argmax(gnbs.iter().map(|&g| -distance(pos, g)), None)
}

/// Index of the largest value, skipping `exclude`; ties go to the lowest index.
fn argmax(values: impl Iterator<Item = f64>, exclude: Option<usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if best == usize::MAX || v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn advance_ue(
    ue: &mut Ue,
    power: &[f64],
    noise_w: f64,
    gnb_pos: &[Position],
    gnb_ids: &[u32],
    params: &MobilityParams,
    cfg: &SimConfig,
    space: StateSpace,
    time_ms: u64,
) -> Result<TraceEvent> {
    let serving_w = power[ue.serving];
    let interference: f64 = power
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != ue.serving)
        .map(|(_, &p)| p)
        .sum();
    let sinr_db = linear_to_db(serving_w / (interference + noise_w));
    let candidate = argmax(power.iter().copied(), Some(ue.serving));
    let p1_dbm = watts_to_dbm(serving_w);
    let from = ue.state;
    let serving_before = ue.serving;

    if from == ChoState::Hof {
        let (to, cause) = fsm_step(from, StepInputs::default(), space)?;
        ue.serving = nearest(ue.mobility.position, gnb_pos);
        ue.target = None;
        ue.rlf = RlfMonitor::default();
        ue.state = to;
        return Ok(TraceEvent {
            time_ms,
            ue_id: ue.id,
            from_state: from,
            to_state: to,
            cause,
            serving_gnb: gnb_ids[serving_before],
            target_gnb: None,
            p1_dbm,
            p2_dbm: watts_to_dbm(power[candidate]),
            sinr_db,
        });
    }

    let (mon, rlf_fired) = rlf_step(ue.rlf, sinr_db, &cfg.rlf, params.t_sample_ms);
    ue.rlf = mon;

    if from == ChoState::Wait && !cfg.handover.pin_target {
        ue.target = Some(candidate);
    }
    let eval_target = match from {
        ChoState::Wait | ChoState::Exec(_) => ue
            .target
            .ok_or_else(|| Error::Invariant(format!("UE {} in {from} without a target", ue.id)))?,
        _ => candidate,
    };
    let p2_dbm = watts_to_dbm(power[eval_target]);
    let inputs = StepInputs {
        prep_ok: prep_condition(p1_dbm, watts_to_dbm(power[candidate]), params.o_prep_db),
        exec_ok: exec_condition(p1_dbm, p2_dbm, params.o_exec_db),
        rlf_fired,
    };
    let (to, cause) = fsm_step(from, inputs, space)?;

    match cause {
        Cause::RlfNorm => {
            ue.serving = argmax(power.iter().copied(), None);
            ue.target = None;
        }
        Cause::RlfHof | Cause::PrepViolation => ue.target = None,
        Cause::ExecComplete => {
            ue.serving = ue
                .target
                .take()
                .ok_or_else(|| Error::Invariant(format!("UE {} completed a handover without a target", ue.id)))?;
            ue.rlf = RlfMonitor::default();
        }
        _ => {}
    }
    let entering_wait = to == ChoState::Wait && from != ChoState::Wait && !matches!(from, ChoState::Exec(_));
    if entering_wait {
        ue.target = Some(candidate);
    }
    ue.state = to;
    Ok(TraceEvent {
        time_ms,
        ue_id: ue.id,
        from_state: from,
        to_state: to,
        cause,
        serving_gnb: gnb_ids[serving_before],
        target_gnb: Some(gnb_ids[eval_target]),
        p1_dbm,
        p2_dbm,
        sinr_db,
    })
}

/// Runs a whole scenario, keeping every event in memory.
pub fn run(cfg: &SimConfig) -> Result<RunTrace> {
    run_inner(cfg, false)
}

/// Like [`run`], also keeping the per-tick RSRP of every link.
pub fn run_with_links(cfg: &SimConfig) -> Result<RunTrace> {
    run_inner(cfg, true)
}

fn run_inner(cfg: &SimConfig, keep_links: bool) -> Result<RunTrace> {
    let mut sim = Simulation::new(cfg)?;
    let mut events = Vec::with_capacity((sim.ticks * u64::from(cfg.scenario.n_ues)) as usize);
    let mut links = keep_links.then(Vec::new);
    sim.run_with(&mut events, links.as_mut())?;
    Ok(RunTrace {
        meta: sim.meta.clone(),
        events,
        link_log: links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FadingKind;
    use crate::config::{preset_multicell, preset_two_gnb};

    #[test]
    fn argmax_ties_and_exclusion() {
        assert_eq!(argmax([1.0, 3.0, 3.0].into_iter(), None), 1);
        assert_eq!(argmax([1.0, 3.0, 2.0].into_iter(), Some(1)), 2);
        assert_eq!(argmax([0.0, 0.0].into_iter(), Some(0)), 1);
    }

    #[test]
    fn streams_are_distinct() {
        use rand::Rng;
        let mut a = stream_rng(1, 0, None);
        let mut b = stream_rng(1, 0, Some(0));
        let mut c = stream_rng(1, 1, None);
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
    }

    #[test]
    fn one_event_per_ue_per_tick() {
        let mut cfg = preset_multicell();
        cfg.scenario.duration_ms = 200;
        cfg.scenario.n_ues = 3;
        let t = run(&cfg).unwrap();
        assert_eq!(t.events.len(), 10 * 3);
        for (i, e) in t.events.iter().enumerate() {
            assert_eq!(e.time_ms, (i as u64 / 3 + 1) * 20);
            assert_eq!(e.ue_id, i as u32 % 3);
        }
    }

    #[test]
    fn consecutive_events_chain() {
        let mut cfg = preset_multicell();
        cfg.scenario.duration_ms = 4000;
        cfg.scenario.n_ues = 4;
        let t = run(&cfg).unwrap();
        let space = t.space();
        for ue in 0..4 {
            let evs: Vec<_> = t.events.iter().filter(|e| e.ue_id == ue).collect();
            assert_eq!(evs[0].from_state, ChoState::Norm);
            for w in evs.windows(2) {
                assert_eq!(w[0].to_state, w[1].from_state);
            }
            for e in &evs {
                assert!(space.allows(e.from_state, e.to_state), "{e:?}");
            }
        }
    }

    #[test]
    fn link_log_matches_events() {
        let cfg = preset_two_gnb(10.0, FadingKind::None).unwrap();
        let t = run_with_links(&cfg).unwrap();
        let log = t.link_log.as_ref().unwrap();
        assert_eq!(log.len(), t.events.len());
        for (l, e) in log.iter().zip(&t.events) {
            assert_eq!(l.rsrp_dbm.len(), 2);
            assert_eq!(l.sinr_db, e.sinr_db);
            assert_eq!(l.rsrp_dbm[e.serving_gnb as usize], e.p1_dbm);
        }
    }
}
