//! Run traces and their CSV form.
//!
//! A trace file starts with one metadata comment line, then a CSV header:
//!
//! ```text
//! # cho-trace v1 n=5 m=4 t_sample_ms=20 duration_ms=100 n_ues=1 warmup_ms=0 fingerprint=...
//! time_ms,ue_id,from_state,to_state,cause,serving_gnb,target_gnb,p1_dbm,p2_dbm,sinr_db
//! ```
//!
//! `target_gnb` is empty when no target is selected.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fsm::{StateSpace, TraceEvent};

pub const TRACE_HEADER: [&str; 10] = [
    "time_ms",
    "ue_id",
    "from_state",
    "to_state",
    "cause",
    "serving_gnb",
    "target_gnb",
    "p1_dbm",
    "p2_dbm",
    "sinr_db",
];

const MAGIC: &str = "# cho-trace v1";

/// Consumer of trace events as the simulator emits them.
pub trait TraceSink {
    fn record(&mut self, event: &TraceEvent);
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: &TraceEvent) {
        self.push(event.clone());
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn record(&mut self, event: &TraceEvent) {
        self.0.record(event);
        self.1.record(event);
    }
}

impl<T: TraceSink + ?Sized> TraceSink for &mut T {
    fn record(&mut self, event: &TraceEvent) {
        (**self).record(event);
    }
}

/// Adapts a closure into a [`TraceSink`].
pub struct FnSink<F>(pub F);

impl<F: FnMut(&TraceEvent)> TraceSink for FnSink<F> {
    fn record(&mut self, event: &TraceEvent) {
        (self.0)(event)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub fingerprint: String,
    pub space: StateSpace,
    pub t_sample_ms: u32,
    pub duration_ms: u64,
    pub n_ues: u32,
    pub warmup_ms: u64,
}

/// Per-tick RSRP/SINR record, only kept when link logging is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSample {
    pub time_ms: u64,
    pub ue_id: u32,
    pub rsrp_dbm: Vec<f64>,
    pub sinr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub meta: RunMeta,
    /// Ordered by `(time_ms, ue_id)`.
    pub events: Vec<TraceEvent>,
    pub link_log: Option<Vec<LinkSample>>,
}

impl RunTrace {
    pub fn space(&self) -> StateSpace {
        self.meta.space
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_trace_csv(self, &mut buf)?;
        Ok(buf)
    }
}

fn fmt_opt(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, mut w: W) -> Result<()> {
    let m = &trace.meta;
    writeln!(
        w,
        "{MAGIC} n={} m={} t_sample_ms={} duration_ms={} n_ues={} warmup_ms={} fingerprint={}",
        m.space.n, m.space.m, m.t_sample_ms, m.duration_ms, m.n_ues, m.warmup_ms, m.fingerprint
    )?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(TRACE_HEADER)?;
    for e in &trace.events {
        csv.write_record([
            e.time_ms.to_string(),
            e.ue_id.to_string(),
            e.from_state.to_string(),
            e.to_state.to_string(),
            e.cause.to_string(),
            e.serving_gnb.to_string(),
            fmt_opt(e.target_gnb),
            e.p1_dbm.to_string(),
            e.p2_dbm.to_string(),
            e.sinr_db.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn parse_meta(line: &str) -> Result<RunMeta> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Data("trace metadata line has the wrong magic".into()))?;
    let mut n = None;
    let mut m = None;
    let mut t_sample = None;
    let mut duration = None;
    let mut n_ues = None;
    let mut warmup = None;
    let mut fingerprint = String::new();
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad trace metadata token `{kv}`")))?;
        let num = || {
            v.parse::<u64>()
                .map_err(|_| Error::Data(format!("trace metadata `{k}` is not an integer")))
        };
        match k {
            "n" => n = Some(num()? as u32),
            "m" => m = Some(num()? as u32),
            "t_sample_ms" => t_sample = Some(num()? as u32),
            "duration_ms" => duration = Some(num()?),
            "n_ues" => n_ues = Some(num()? as u32),
            "warmup_ms" => warmup = Some(num()?),
            "fingerprint" => fingerprint = v.to_string(),
            _ => {}
        }
    }
    let need = |name: &str| Error::Data(format!("trace metadata is missing `{name}`"));
    let space = StateSpace::new(n.ok_or_else(|| need("n"))?, m.ok_or_else(|| need("m"))?)
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok(RunMeta {
        fingerprint,
        space,
        t_sample_ms: t_sample.ok_or_else(|| need("t_sample_ms"))?,
        duration_ms: duration.ok_or_else(|| need("duration_ms"))?,
        n_ues: n_ues.ok_or_else(|| need("n_ues"))?,
        warmup_ms: warmup.unwrap_or(0),
    })
}

fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<&str> {
    rec.get(i)
        .ok_or_else(|| Error::Data(format!("line {line}: missing column `{}`", TRACE_HEADER[i])))
}

fn parse<T: std::str::FromStr>(s: &str, col: usize, line: u64) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("line {line}: bad `{}` value `{s}`", TRACE_HEADER[col])))
}

/// Reads a trace written by [`write_trace_csv`].
///
/// When the metadata line is absent, `n` and `m` are inferred from the largest
/// `A`/`B` indices, the sample period from the smallest time step, and the
/// duration from the last timestamp.
pub fn read_trace_csv<R: Read>(mut r: R) -> Result<RunTrace> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::NoData("trace file is empty".into()));
    }
    let (meta, body) = match text.strip_prefix('#') {
        Some(_) => {
            let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
            (Some(parse_meta(first.trim_end())?), body)
        }
        None => (None, text.as_str()),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Data(format!(
            "trace header mismatch: expected `{}`, got `{}`",
            TRACE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != TRACE_HEADER.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} columns",
                TRACE_HEADER.len()
            )));
        }
        let target = field(&rec, 6, line)?;
        events.push(TraceEvent {
            time_ms: parse(field(&rec, 0, line)?, 0, line)?,
            ue_id: parse(field(&rec, 1, line)?, 1, line)?,
            from_state: field(&rec, 2, line)?.parse()?,
            to_state: field(&rec, 3, line)?.parse()?,
            cause: field(&rec, 4, line)?.parse()?,
            serving_gnb: parse(field(&rec, 5, line)?, 5, line)?,
            target_gnb: if target.is_empty() {
                None
            } else {
                Some(parse(target, 6, line)?)
            },
            p1_dbm: parse(field(&rec, 7, line)?, 7, line)?,
            p2_dbm: parse(field(&rec, 8, line)?, 8, line)?,
            sinr_db: parse(field(&rec, 9, line)?, 9, line)?,
        });
    }
    if events.is_empty() {
        return Err(Error::NoData("trace has no events".into()));
    }
    let meta = match meta {
        Some(m) => m,
        None => infer_meta(&events)?,
    };
    for e in &events {
        if !meta.space.contains(e.from_state) || !meta.space.contains(e.to_state) {
            return Err(Error::Data(format!(
                "event at {} ms for UE {} uses a state outside n={}, m={}",
                e.time_ms, e.ue_id, meta.space.n, meta.space.m
            )));
        }
    }
    Ok(RunTrace {
        meta,
        events,
        link_log: None,
    })
}

fn infer_meta(events: &[TraceEvent]) -> Result<RunMeta> {
    use crate::fsm::ChoState;
    let mut n = 0;
    let mut m = 0;
    let mut ues = std::collections::BTreeSet::new();
    let mut times = std::collections::BTreeSet::new();
    for e in events {
        for s in [e.from_state, e.to_state] {
            match s {
                ChoState::Prep(i) => n = n.max(i),
                ChoState::Exec(j) => m = m.max(j),
                _ => {}
            }
        }
        ues.insert(e.ue_id);
        times.insert(e.time_ms);
    }
    let t_sample = times
        .iter()
        .zip(times.iter().skip(1))
        .map(|(a, b)| b - a)
        .min()
        .unwrap_or(*times.first().expect("nonempty"));
    let space = StateSpace::new(n, m).map_err(|e| Error::Data(e.to_string()))?;
    Ok(RunMeta {
        fingerprint: String::new(),
        space,
        t_sample_ms: t_sample as u32,
        duration_ms: *times.last().expect("nonempty"),
        n_ues: ues.len() as u32,
        warmup_ms: 0,
    })
}
