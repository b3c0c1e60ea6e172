//! Per-UE conditional handover state machine and radio link failure monitor.
//!
//! The machine walks `NORM → A1..An → WAIT → B1..Bm → NORM`, with a jump to
//! `HOF` whenever the RLF monitor fires during preparation, waiting or
//! execution. `HOF` always returns to `NORM` on the next sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChoState {
    Norm,
    /// Preparation state `A_i`, 1-based.
    Prep(u32),
    Wait,
    /// Execution state `B_j`, 1-based.
    Exec(u32),
    Hof,
}

impl fmt::Display for ChoState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChoState::Norm => f.write_str("NORM"),
            ChoState::Prep(i) => write!(f, "A{i}"),
            ChoState::Wait => f.write_str("WAIT"),
            ChoState::Exec(j) => write!(f, "B{j}"),
            ChoState::Hof => f.write_str("HOF"),
        }
    }
}

impl FromStr for ChoState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unknown state label `{s}`"));
        match s {
            "NORM" => Ok(ChoState::Norm),
            "WAIT" => Ok(ChoState::Wait),
            "HOF" => Ok(ChoState::Hof),
            _ => {
                let (tag, idx) = s.split_at(1);
                let idx: u32 = idx.parse().map_err(|_| bad())?;
                if idx == 0 {
                    return Err(bad());
                }
                match tag {
                    "A" => Ok(ChoState::Prep(idx)),
                    "B" => Ok(ChoState::Exec(idx)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Shape of the chain: `n` preparation and `m` execution states.
///
/// Ordinals: `NORM = 0`, `A_i = i`, `WAIT = n + 1`, `B_j = n + 1 + j`,
/// `HOF = n + m + 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateSpace {
    pub n: u32,
    pub m: u32,
}

impl StateSpace {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n == 0 && m == 0 {
            return Err(Error::config("handover", "t_prep_ms and t_exec_ms cannot both be zero"));
        }
        Ok(Self { n, m })
    }

    pub fn dim(&self) -> usize {
        (self.n + self.m + 3) as usize
    }

    pub fn wait_index(&self) -> usize {
        self.n as usize + 1
    }

    pub fn hof_index(&self) -> usize {
        (self.n + self.m + 2) as usize
    }

    pub fn contains(&self, s: ChoState) -> bool {
        match s {
            ChoState::Prep(i) => (1..=self.n).contains(&i),
            ChoState::Exec(j) => (1..=self.m).contains(&j),
            _ => true,
        }
    }

    pub fn index(&self, s: ChoState) -> Result<usize> {
        if !self.contains(s) {
            return Err(Error::Invariant(format!(
                "state {s} outside chain with n={}, m={}",
                self.n, self.m
            )));
        }
        Ok(match s {
            ChoState::Norm => 0,
            ChoState::Prep(i) => i as usize,
            ChoState::Wait => self.wait_index(),
            ChoState::Exec(j) => self.wait_index() + j as usize,
            ChoState::Hof => self.hof_index(),
        })
    }

    pub fn state(&self, idx: usize) -> Result<ChoState> {
        let n = self.n as usize;
        let m = self.m as usize;
        Ok(match idx {
            0 => ChoState::Norm,
            i if i <= n => ChoState::Prep(i as u32),
            i if i == n + 1 => ChoState::Wait,
            i if i <= n + 1 + m => ChoState::Exec((i - n - 1) as u32),
            i if i == n + m + 2 => ChoState::Hof,
            _ => {
                return Err(Error::Invariant(format!(
                    "ordinal {idx} outside chain of dimension {}",
                    self.dim()
                )))
            }
        })
    }

    pub fn states(&self) -> impl Iterator<Item = ChoState> + '_ {
        (0..self.dim()).map(|i| self.state(i).expect("ordinal in range"))
    }

    pub fn labels(&self) -> Vec<String> {
        self.states().map(|s| s.to_string()).collect()
    }

    /// Whether the machine can ever move from `from` to `to` in one sample.
    pub fn allows(&self, from: ChoState, to: ChoState) -> bool {
        use ChoState::*;
        if !self.contains(from) || !self.contains(to) {
            return false;
        }
        let (n, m) = (self.n, self.m);
        match from {
            Norm => match to {
                Norm => true,
                Prep(1) => n >= 1,
                Wait => n == 0,
                _ => false,
            },
            Prep(i) => match to {
                Hof => true,
                Norm => i < n,
                Prep(k) => i < n && k == i + 1,
                Wait => i == n,
                _ => false,
            },
            Wait => match to {
                Hof => true,
                Wait | Exec(1) => m >= 1,
                Norm => m == 0,
                _ => false,
            },
            Exec(j) => match to {
                Hof => true,
                Wait => j < m,
                Exec(k) => j < m && k == j + 1,
                Norm => j == m,
                _ => false,
            },
            Hof => to == Norm,
        }
    }
}

/// Offsets and timers that gate preparation and execution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityParams {
    pub o_prep_db: f64,
    pub o_exec_db: f64,
    pub t_prep_ms: u32,
    pub t_exec_ms: u32,
    pub t_sample_ms: u32,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            o_prep_db: 1.0,
            o_exec_db: 6.0,
            t_prep_ms: 100,
            t_exec_ms: 80,
            t_sample_ms: 20,
        }
    }
}

impl MobilityParams {
    /// Number of preparation states, `ceil(T_prep / T_sample)`.
    pub fn n(&self) -> u32 {
        self.t_prep_ms.div_ceil(self.t_sample_ms.max(1))
    }

    /// Number of execution states, `ceil(T_exec / T_sample)`.
    pub fn m(&self) -> u32 {
        self.t_exec_ms.div_ceil(self.t_sample_ms.max(1))
    }

    pub fn space(&self) -> Result<StateSpace> {
        self.validate()?;
        StateSpace::new(self.n(), self.m())
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_sample_ms == 0 {
            return Err(Error::config("handover.t_sample_ms", "must be > 0"));
        }
        for (field, v) in [
            ("handover.o_prep_db", self.o_prep_db),
            ("handover.o_exec_db", self.o_exec_db),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        if self.n() == 0 && self.m() == 0 {
            return Err(Error::config(
                "handover.t_prep_ms",
                "t_prep_ms and t_exec_ms cannot both be zero",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlfParams {
    pub gamma_out_db: f64,
    pub gamma_in_db: f64,
    pub n310: u32,
    pub t310_ms: u32,
    pub frame_ms: u32,
}

impl Default for RlfParams {
    fn default() -> Self {
        Self {
            gamma_out_db: -8.0,
            gamma_in_db: -6.0,
            n310: 1,
            t310_ms: 1000,
            frame_ms: 20,
        }
    }
}

impl RlfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_in_db > self.gamma_out_db) {
            return Err(Error::config("rlf.gamma_in_db", "must exceed rlf.gamma_out_db"));
        }
        if self.n310 == 0 {
            return Err(Error::config("rlf.n310", "must be >= 1"));
        }
        if self.t310_ms == 0 {
            return Err(Error::config("rlf.t310_ms", "must be > 0"));
        }
        if self.frame_ms == 0 {
            return Err(Error::config("rlf.frame_ms", "must be > 0"));
        }
        Ok(())
    }
}

/// Out-of-sync counter and T310 timer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RlfMonitor {
    pub consecutive_bad_frames: u32,
    /// `None` while T310 is not running.
    pub t310_remaining_ms: Option<u32>,
}

impl RlfMonitor {
    pub fn timer_active(&self) -> bool {
        self.t310_remaining_ms.is_some()
    }
}

/// Advances the monitor by one frame of `dt_ms`.
///
/// Below `gamma_out` the bad-frame counter grows and T310 starts once it
/// reaches N310. While T310 runs, an SINR above `gamma_in` cancels it;
/// otherwise the timer counts down and RLF fires when it expires, leaving
/// the monitor reset.
pub fn rlf_step(mon: RlfMonitor, sinr_db: f64, params: &RlfParams, dt_ms: u32) -> (RlfMonitor, bool) {
    debug_assert_eq!(dt_ms, params.frame_ms);
    match mon.t310_remaining_ms {
        Some(remaining) => {
            if sinr_db > params.gamma_in_db {
                (RlfMonitor::default(), false)
            } else if remaining <= dt_ms {
                (RlfMonitor::default(), true)
            } else {
                (
                    RlfMonitor {
                        consecutive_bad_frames: mon.consecutive_bad_frames,
                        t310_remaining_ms: Some(remaining - dt_ms),
                    },
                    false,
                )
            }
        }
        None => {
            if sinr_db < params.gamma_out_db {
                let bad = mon.consecutive_bad_frames + 1;
                let timer = (bad >= params.n310).then_some(params.t310_ms);
                (
                    RlfMonitor {
                        consecutive_bad_frames: bad.min(params.n310),
                        t310_remaining_ms: timer,
                    },
                    false,
                )
            } else {
                (RlfMonitor::default(), false)
            }
        }
    }
}

/// Preparation condition, `P2 > P1 + O_prep`.
pub fn prep_condition(p1_dbm: f64, p2_dbm: f64, o_prep_db: f64) -> bool {
    p2_dbm > p1_dbm + o_prep_db
}

/// Execution condition, `P2 > P1 + O_exec`.
pub fn exec_condition(p1_dbm: f64, p2_dbm: f64, o_exec_db: f64) -> bool {
    p2_dbm > p1_dbm + o_exec_db
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cause {
    PrepCond,
    PrepViolation,
    PrepComplete,
    ExecCond,
    ExecViolation,
    ExecComplete,
    RlfHof,
    HofRecover,
    Hold,
    /// RLF with no handover in progress; the UE re-establishes on the
    /// strongest cell and stays in NORM.
    RlfNorm,
}

impl Cause {
    pub const ALL: [Cause; 10] = [
        Cause::PrepCond,
        Cause::PrepViolation,
        Cause::PrepComplete,
        Cause::ExecCond,
        Cause::ExecViolation,
        Cause::ExecComplete,
        Cause::RlfHof,
        Cause::HofRecover,
        Cause::Hold,
        Cause::RlfNorm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Cause::PrepCond => "prep_cond",
            Cause::PrepViolation => "prep_violation",
            Cause::PrepComplete => "prep_complete",
            Cause::ExecCond => "exec_cond",
            Cause::ExecViolation => "exec_violation",
            Cause::ExecComplete => "exec_complete",
            Cause::RlfHof => "rlf_hof",
            Cause::HofRecover => "hof_recover",
            Cause::Hold => "hold",
            Cause::RlfNorm => "rlf_norm",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cause::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown cause `{s}`")))
    }
}

/// One FSM evaluation of one UE.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub ue_id: u32,
    pub from_state: ChoState,
    pub to_state: ChoState,
    pub cause: Cause,
    pub serving_gnb: u32,
    pub target_gnb: Option<u32>,
    pub p1_dbm: f64,
    pub p2_dbm: f64,
    pub sinr_db: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepInputs {
    pub prep_ok: bool,
    pub exec_ok: bool,
    pub rlf_fired: bool,
}

/// One sample of the CHO machine.
pub fn fsm_step(state: ChoState, inputs: StepInputs, space: StateSpace) -> Result<(ChoState, Cause)> {
    use ChoState::*;
    if !space.contains(state) {
        return Err(Error::Invariant(format!(
            "state {state} outside chain with n={}, m={}",
            space.n, space.m
        )));
    }
    let StepInputs {
        prep_ok,
        exec_ok,
        rlf_fired,
    } = inputs;
    let (n, m) = (space.n, space.m);

    let next = match state {
        Hof => (Norm, Cause::HofRecover),
        Norm if rlf_fired => (Norm, Cause::RlfNorm),
        _ if rlf_fired => (Hof, Cause::RlfHof),
        Norm if n == 0 => (Wait, Cause::PrepComplete),
        Norm if prep_ok => (Prep(1), Cause::PrepCond),
        Norm => (Norm, Cause::Hold),
        Prep(i) if i == n => (Wait, Cause::PrepComplete),
        Prep(i) if prep_ok => (Prep(i + 1), Cause::PrepCond),
        Prep(_) => (Norm, Cause::PrepViolation),
        Wait if m == 0 => (Norm, Cause::ExecComplete),
        Wait if exec_ok => (Exec(1), Cause::ExecCond),
        Wait => (Wait, Cause::Hold),
        Exec(j) if j == m => (Norm, Cause::ExecComplete),
        Exec(j) if exec_ok => (Exec(j + 1), Cause::ExecCond),
        Exec(_) => (Wait, Cause::ExecViolation),
    };
    debug_assert!(space.allows(state, next.0), "{state} -> {}", next.0);
    Ok(next)
}

/// How the legacy A3 trigger is mapped onto the CHO machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A3Variant {
    /// `O_prep = Hys, T_prep = TTT, O_exec = 0, T_exec = 0`; no execution states.
    PrepOnly,
    /// `O_prep = 0, T_prep = 0, O_exec = Hys, T_exec = TTT`; no preparation states.
    ExecOnly,
}

pub fn a3_reduce(params: &MobilityParams, hys_db: f64, ttt_ms: u32, variant: A3Variant) -> Result<MobilityParams> {
    if !(hys_db >= 0.0) {
        return Err(Error::config("a3.hys_db", "hysteresis must be >= 0"));
    }
    if ttt_ms == 0 {
        return Err(Error::config("a3.ttt_ms", "time-to-trigger must be > 0"));
    }
    let reduced = match variant {
        A3Variant::PrepOnly => MobilityParams {
            o_prep_db: hys_db,
            t_prep_ms: ttt_ms,
            o_exec_db: 0.0,
            t_exec_ms: 0,
            t_sample_ms: params.t_sample_ms,
        },
        A3Variant::ExecOnly => MobilityParams {
            o_prep_db: 0.0,
            t_prep_ms: 0,
            o_exec_db: hys_db,
            t_exec_ms: ttt_ms,
            t_sample_ms: params.t_sample_ms,
        },
    };
    reduced.validate()?;
    Ok(reduced)
}
