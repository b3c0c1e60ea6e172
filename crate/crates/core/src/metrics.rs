//! Handover metrics computed from trace events.
//!
//! All counters only see events with `time_ms > warmup_ms`. Latency episodes
//! are tracked over the whole trace so that an episode straddling the
//! warm-up boundary is measured from its true start.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::fsm::{Cause, ChoState, StateSpace, TraceEvent};
use crate::markov::{estimate_matrix, stationary, TransitionCounts};
use crate::trace::{RunMeta, RunTrace, TraceSink};

const Z95: f64 = 1.959_963_984_540_054;

/// Expected packets lost during one handover.
pub fn packet_loss(mean_latency_s: f64, lambda_pkts_per_s: f64) -> Result<f64> {
    if !(mean_latency_s >= 0.0 && lambda_pkts_per_s >= 0.0) {
        return Err(Error::Domain(format!(
            "packet loss needs latency >= 0 and rate >= 0, got {mean_latency_s} s and {lambda_pkts_per_s} /s"
        )));
    }
    Ok(lambda_pkts_per_s * mean_latency_s)
}

fn starts_episode(e: &TraceEvent) -> bool {
    e.from_state == ChoState::Norm && matches!(e.to_state, ChoState::Prep(1) | ChoState::Wait)
}

/// Streaming metrics fold for one run.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    space: StateSpace,
    warmup_ms: u64,
    open_episodes: HashMap<u32, u64>,
    stats: RunStats,
    error: Option<String>,
}

impl MetricsAccumulator {
    pub fn new(meta: &RunMeta) -> Self {
        let observed_ue_ms = u64::from(meta.n_ues) * meta.duration_ms.saturating_sub(meta.warmup_ms);
        Self {
            space: meta.space,
            warmup_ms: meta.warmup_ms,
            open_episodes: HashMap::new(),
            stats: RunStats {
                counts: TransitionCounts::new(meta.space),
                observed_ue_ms,
                run_count: 1,
                ..RunStats::empty(meta.space)
            },
            error: None,
        }
    }

    pub fn push(&mut self, e: &TraceEvent) {
        let counted = e.time_ms > self.warmup_ms;
        let s = &mut self.stats;
        if starts_episode(e) {
            self.open_episodes.entry(e.ue_id).or_insert(e.time_ms);
        }
        match e.cause {
            Cause::ExecComplete => {
                if let Some(start) = self.open_episodes.remove(&e.ue_id) {
                    if counted {
                        s.latencies_ms.push(e.time_ms - start);
                    }
                }
            }
            Cause::HofRecover | Cause::RlfNorm => {
                self.open_episodes.remove(&e.ue_id);
            }
            _ => {}
        }
        if !counted {
            return;
        }
        s.events += 1;
        if e.from_state == ChoState::Hof {
            s.hof_samples += 1;
        }
        if starts_episode(e) {
            s.prep_entries += 1;
        }
        match e.cause {
            Cause::ExecComplete => s.successes += 1,
            Cause::RlfHof => {
                s.hof_events += 1;
                s.rlf_events += 1;
            }
            Cause::RlfNorm => s.rlf_events += 1,
            _ => {}
        }
        if self.error.is_none() {
            if let Err(err) = s.counts.record(e.from_state, e.to_state) {
                self.error = Some(err.to_string());
            }
        }
    }

    /// Closes the run; fails if any event broke the chain topology.
    pub fn finish(self) -> Result<RunStats> {
        match self.error {
            Some(msg) => Err(Error::Data(msg)),
            None => Ok(self.stats),
        }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }
}

impl TraceSink for MetricsAccumulator {
    fn record(&mut self, event: &TraceEvent) {
        self.push(event);
    }
}

/// Pooled counts of one or more runs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub counts: TransitionCounts,
    pub events: u64,
    pub hof_samples: u64,
    pub prep_entries: u64,
    pub successes: u64,
    pub hof_events: u64,
    /// RLF firings in any state, HOFs included.
    pub rlf_events: u64,
    pub latencies_ms: Vec<u64>,
    /// Post-warm-up observation time summed over UEs.
    pub observed_ue_ms: u64,
    pub run_count: u32,
}

impl RunStats {
    pub fn empty(space: StateSpace) -> Self {
        Self {
            counts: TransitionCounts::new(space),
            events: 0,
            hof_samples: 0,
            prep_entries: 0,
            successes: 0,
            hof_events: 0,
            rlf_events: 0,
            latencies_ms: Vec::new(),
            observed_ue_ms: 0,
            run_count: 0,
        }
    }

    pub fn from_trace(trace: &RunTrace) -> Result<Self> {
        let mut acc = MetricsAccumulator::new(&trace.meta);
        for e in &trace.events {
            acc.push(e);
        }
        acc.finish()
    }

    pub fn merge(&mut self, other: &RunStats) -> Result<()> {
        self.counts.merge(&other.counts)?;
        self.events += other.events;
        self.hof_samples += other.hof_samples;
        self.prep_entries += other.prep_entries;
        self.successes += other.successes;
        self.hof_events += other.hof_events;
        self.rlf_events += other.rlf_events;
        self.latencies_ms.extend_from_slice(&other.latencies_ms);
        self.observed_ue_ms += other.observed_ue_ms;
        self.run_count += other.run_count;
        Ok(())
    }

    /// Handover initiations per UE-second.
    pub fn hi_rate_per_s(&self) -> Result<f64> {
        if self.observed_ue_ms == 0 {
            return Err(Error::Domain("HI rate needs a positive observation time".into()));
        }
        Ok(self.prep_entries as f64 / (self.observed_ue_ms as f64 / 1000.0))
    }

    /// HOFs over handover attempts (HOFs plus successes).
    pub fn p_hof(&self) -> Option<f64> {
        ratio(self.hof_events, self.hof_events + self.successes)
    }

    /// All RLFs over RLFs plus successful handovers.
    pub fn p_rlf(&self) -> Option<f64> {
        ratio(self.rlf_events, self.rlf_events + self.successes)
    }

    pub fn hof_occupancy(&self) -> Option<f64> {
        ratio(self.hof_samples, self.events)
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        if self.latencies_ms.is_empty() {
            return None;
        }
        Some(self.latencies_ms.iter().sum::<u64>() as f64 / self.latencies_ms.len() as f64)
    }

    /// `π_HOF` of the chain estimated from the pooled counts, when ergodic.
    pub fn pi_hof_markov(&self) -> Option<f64> {
        let tm = estimate_matrix(&self.counts).ok()?;
        let st = stationary(&tm.matrix).ok()?;
        Some(st.pi[tm.space.hof_index()])
    }

    pub fn report(&self, packet_rates: &[f64]) -> Result<MetricsReport> {
        let mean_latency_ms = self.mean_latency_ms();
        let packet_loss = packet_rates
            .iter()
            .map(|&l| Ok((l, mean_latency_ms.map(|ms| packet_loss(ms / 1000.0, l)).transpose()?)))
            .collect::<Result<Vec<_>>>()?;
        let hi = self.hi_rate_per_s()?;
        Ok(MetricsReport {
            run_count: self.run_count,
            hi_rate_per_s: hi,
            hi_rate_ci: Z95 * (self.prep_entries as f64).sqrt() / (self.observed_ue_ms as f64 / 1000.0),
            p_rlf: self.p_rlf(),
            p_rlf_ci: binomial_ci(self.p_rlf(), self.rlf_events + self.successes),
            p_hof: self.p_hof(),
            p_hof_ci: binomial_ci(self.p_hof(), self.hof_events + self.successes),
            pi_hof_markov: self.pi_hof_markov(),
            hof_occupancy: self.hof_occupancy(),
            mean_latency_ms,
            mean_latency_ci: latency_ci(&self.latencies_ms),
            latency_count: self.latencies_ms.len() as u64,
            min_latency_ms: self.latencies_ms.iter().min().copied(),
            prep_entries: self.prep_entries,
            successes: self.successes,
            hof_events: self.hof_events,
            rlf_events: self.rlf_events,
            packet_loss,
        })
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn binomial_ci(p: Option<f64>, n: u64) -> Option<f64> {
    p.map(|p| Z95 * (p * (1.0 - p) / n as f64).sqrt())
}

fn latency_ci(xs: &[u64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<u64>() as f64 / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(Z95 * (var / n).sqrt())
}

/// Aggregated metrics; `*_ci` fields are 95% half-widths.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub run_count: u32,
    pub hi_rate_per_s: f64,
    pub hi_rate_ci: f64,
    pub p_rlf: Option<f64>,
    pub p_rlf_ci: Option<f64>,
    pub p_hof: Option<f64>,
    pub p_hof_ci: Option<f64>,
    pub pi_hof_markov: Option<f64>,
    pub hof_occupancy: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub mean_latency_ci: Option<f64>,
    pub latency_count: u64,
    pub min_latency_ms: Option<u64>,
    pub prep_entries: u64,
    pub successes: u64,
    pub hof_events: u64,
    pub rlf_events: u64,
    /// `(λ, expected loss)`; loss is absent without completed handovers.
    pub packet_loss: Vec<(f64, Option<f64>)>,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "run_count",
            "hi_rate_per_s",
            "hi_rate_ci",
            "p_rlf",
            "p_rlf_ci",
            "p_hof",
            "p_hof_ci",
            "pi_hof_markov",
            "hof_occupancy",
            "mean_latency_ms",
            "mean_latency_ci",
            "latency_count",
            "min_latency_ms",
            "prep_entries",
            "successes",
            "hof_events",
            "rlf_events",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.packet_loss.iter().map(|(l, _)| format!("packet_loss_lambda_{l}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.run_count.to_string(),
            self.hi_rate_per_s.to_string(),
            self.hi_rate_ci.to_string(),
            cell(self.p_rlf),
            cell(self.p_rlf_ci),
            cell(self.p_hof),
            cell(self.p_hof_ci),
            cell(self.pi_hof_markov),
            cell(self.hof_occupancy),
            cell(self.mean_latency_ms),
            cell(self.mean_latency_ci),
            self.latency_count.to_string(),
            cell(self.min_latency_ms),
            self.prep_entries.to_string(),
            self.successes.to_string(),
            self.hof_events.to_string(),
            self.rlf_events.to_string(),
        ];
        r.extend(self.packet_loss.iter().map(|(_, v)| cell(*v)));
        r
    }

    /// Single-report CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(self.csv_header())?;
        csv.write_record(self.csv_row())?;
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn meta(n: u32, m: u32, duration_ms: u64, warmup_ms: u64) -> RunMeta {
        RunMeta {
            fingerprint: String::new(),
            space: StateSpace::new(n, m).unwrap(),
            t_sample_ms: 20,
            duration_ms,
            n_ues: 1,
            warmup_ms,
        }
    }

    fn ev(t: u64, from: ChoState, to: ChoState, cause: Cause) -> TraceEvent {
        TraceEvent {
            time_ms: t,
            ue_id: 0,
            from_state: from,
            to_state: to,
            cause,
            serving_gnb: 0,
            target_gnb: None,
            p1_dbm: 0.0,
            p2_dbm: 0.0,
            sinr_db: 0.0,
        }
    }

    /// Deterministic walk: NORM for `idle` samples, then a fault-free
    /// handover with `restarts` prep violations at A1.
    fn walk(n: u32, m: u32, start: u64, restarts: u32) -> Vec<TraceEvent> {
        use ChoState::*;
        let mut t = start;
        let mut out = Vec::new();
        let mut push = |from, to, cause, out: &mut Vec<TraceEvent>| {
            out.push(ev(t, from, to, cause));
            t += 20;
        };
        for _ in 0..restarts {
            push(Norm, Prep(1), Cause::PrepCond, &mut out);
            push(Prep(1), Norm, Cause::PrepViolation, &mut out);
        }
        push(Norm, Prep(1), Cause::PrepCond, &mut out);
        for i in 1..n {
            push(Prep(i), Prep(i + 1), Cause::PrepCond, &mut out);
        }
        push(Prep(n), Wait, Cause::PrepComplete, &mut out);
        push(Wait, Exec(1), Cause::ExecCond, &mut out);
        for j in 1..m {
            push(Exec(j), Exec(j + 1), Cause::ExecCond, &mut out);
        }
        push(Exec(m), Norm, Cause::ExecComplete, &mut out);
        out
    }

    fn stats(meta: &RunMeta, events: &[TraceEvent]) -> RunStats {
        let mut acc = MetricsAccumulator::new(meta);
        events.iter().for_each(|e| acc.push(e));
        acc.finish().unwrap()
    }

    #[test]
    fn fault_free_latency_is_structural_minimum() {
        let s = stats(&meta(5, 4, 1000, 0), &walk(5, 4, 20, 0));
        assert_eq!(s.latencies_ms, vec![200]);
        assert_eq!(s.successes, 1);
        assert_eq!(s.prep_entries, 1);
    }

    #[test]
    fn restart_adds_two_samples() {
        let s = stats(&meta(5, 4, 1000, 0), &walk(5, 4, 20, 1));
        assert_eq!(s.latencies_ms, vec![240]);
        assert_eq!(s.prep_entries, 2);
    }

    #[test]
    fn hof_episode_is_discarded() {
        use ChoState::*;
        let mut evs = vec![
            ev(20, Norm, Prep(1), Cause::PrepCond),
            ev(40, Prep(1), Hof, Cause::RlfHof),
            ev(60, Hof, Norm, Cause::HofRecover),
        ];
        evs.extend(walk(1, 1, 80, 0));
        let s = stats(&meta(1, 1, 1000, 0), &evs);
        assert_eq!(s.latencies_ms, vec![60]);
        assert_eq!(s.hof_events, 1);
        assert_eq!(s.successes, 1);
        assert_eq!(s.p_hof(), Some(0.5));
        assert_eq!(s.hof_samples, 1);
    }

    #[test]
    fn hi_rate_examples() {
        use ChoState::*;
        let entries = |times: &[u64]| -> Vec<TraceEvent> {
            times
                .iter()
                .flat_map(|&t| {
                    [
                        ev(t, Norm, Prep(1), Cause::PrepCond),
                        ev(t + 20, Prep(1), Norm, Cause::PrepViolation),
                    ]
                })
                .collect()
        };
        let s = stats(&meta(2, 1, 60_000, 0), &entries(&[1000, 2000, 3000]));
        assert_relative_eq!(s.hi_rate_per_s().unwrap(), 0.05, epsilon = 1e-15);
        let s = stats(&meta(2, 1, 100_000, 0), &entries(&[1000, 2000, 41_000]));
        assert_relative_eq!(s.hi_rate_per_s().unwrap(), 0.03, epsilon = 1e-15);
        let s = stats(&meta(2, 1, 100_000, 0), &[ev(20, Norm, Norm, Cause::Hold)]);
        assert_eq!(s.hi_rate_per_s().unwrap(), 0.0);
        let s = stats(&meta(2, 1, 1000, 1000), &[]);
        assert!(s.hi_rate_per_s().is_err());
    }

    #[test]
    fn warmup_excludes_counts() {
        let s = stats(&meta(5, 4, 2000, 1000), &walk(5, 4, 20, 0));
        assert_eq!(s.prep_entries, 0);
        assert_eq!(s.events, 0);
        let s = stats(&meta(5, 4, 2000, 100), &walk(5, 4, 20, 0));
        assert_eq!(s.latencies_ms, vec![200]);
        assert_eq!(s.prep_entries, 0);
    }

    #[test]
    fn probabilities() {
        let mut s = RunStats::empty(StateSpace::new(1, 1).unwrap());
        s.hof_events = 2;
        s.rlf_events = 3;
        s.successes = 8;
        assert_eq!(s.p_hof(), Some(0.2));
        assert_relative_eq!(s.p_rlf().unwrap(), 3.0 / 11.0);
        s.hof_events = 0;
        assert_eq!(s.p_hof(), Some(0.0));
        s.successes = 0;
        assert_eq!(s.p_hof(), None);
    }

    #[test]
    fn packet_loss_examples() {
        assert_relative_eq!(packet_loss(0.2, 100.0).unwrap(), 20.0, epsilon = 1e-12);
        assert_eq!(packet_loss(0.2, 0.0).unwrap(), 0.0);
        assert_relative_eq!(packet_loss(0.36, 250.0).unwrap(), 90.0, epsilon = 1e-12);
        assert!(packet_loss(-1.0, 1.0).is_err());
    }

    #[test]
    fn report_packet_loss_is_product() {
        let s = stats(&meta(5, 4, 1000, 0), &walk(5, 4, 20, 1));
        let r = s.report(&[50.0, 100.0]).unwrap();
        let mean = r.mean_latency_ms.unwrap();
        assert_eq!(r.packet_loss[0], (50.0, Some(50.0 * (mean / 1000.0))));
        assert_eq!(r.packet_loss[1].1.unwrap(), 2.0 * r.packet_loss[0].1.unwrap());
        assert_eq!(r.csv_header().len(), r.csv_row().len());
    }

    #[test]
    fn merge_pools_counts() {
        let m = meta(5, 4, 1000, 0);
        let mut a = stats(&m, &walk(5, 4, 20, 0));
        let b = stats(&m, &walk(5, 4, 20, 1));
        a.merge(&b).unwrap();
        assert_eq!(a.run_count, 2);
        assert_eq!(a.latencies_ms, vec![200, 240]);
        assert_eq!(a.mean_latency_ms(), Some(220.0));
    }

    proptest! {
        #[test]
        fn packet_loss_linear(l in 0.0f64..1e4, t in 0.0f64..10.0, k in 0.0f64..8.0) {
            let base = packet_loss(t, l).unwrap();
            prop_assert!((packet_loss(t, k * l).unwrap() - k * base).abs() <= 1e-9 * (1.0 + k * base));
            prop_assert!((packet_loss(k * t, l).unwrap() - k * base).abs() <= 1e-9 * (1.0 + k * base));
        }

        #[test]
        fn latency_never_below_structure(n in 2u32..8, m in 1u32..6, restarts in 0u32..4) {
            let s = stats(&meta(n, m, 10_000, 0), &walk(n, m, 20, restarts));
            prop_assert_eq!(s.latencies_ms.len(), 1);
            prop_assert_eq!(s.latencies_ms[0], u64::from(n + 1 + m) * 20 + u64::from(restarts) * 40);
            let p = s.p_hof().unwrap();
            prop_assert_eq!(p + s.successes as f64 / (s.hof_events + s.successes) as f64, 1.0);
        }
    }
}
