//! Transition-matrix estimation, ergodicity checks and stationary analysis
//! of the CHO chain.

use std::fmt;
use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fsm::{ChoState, StateSpace, TraceEvent};
use crate::trace::RunTrace;

/// Raw `c(i,j)` counts over the states of a [`StateSpace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionCounts {
    space: StateSpace,
    counts: Vec<u64>,
}

impl TransitionCounts {
    pub fn new(space: StateSpace) -> Self {
        let d = space.dim();
        Self {
            space,
            counts: vec![0; d * d],
        }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    /// Adds one observed transition; structurally impossible pairs are a data error.
    pub fn record(&mut self, from: ChoState, to: ChoState) -> Result<()> {
        if !self.space.allows(from, to) {
            return Err(Error::Data(format!(
                "transition {from}->{to} is not part of the chain topology"
            )));
        }
        let d = self.space.dim();
        let i = self.space.index(from)?;
        let j = self.space.index(to)?;
        self.counts[i * d + j] += 1;
        Ok(())
    }

    /// Counts events with `time_ms > after_ms`.
    pub fn from_events<'a>(
        space: StateSpace,
        events: impl IntoIterator<Item = &'a TraceEvent>,
        after_ms: u64,
    ) -> Result<Self> {
        let mut c = Self::new(space);
        for e in events {
            if e.time_ms > after_ms {
                c.record(e.from_state, e.to_state)?;
            }
        }
        Ok(c)
    }

    /// Counts every event of a trace.
    pub fn from_trace(trace: &RunTrace) -> Result<Self> {
        Self::from_events(trace.space(), &trace.events, 0)
    }

    /// Counts consecutive pairs of one state path.
    pub fn from_state_sequence(space: StateSpace, states: &[ChoState]) -> Result<Self> {
        let mut c = Self::new(space);
        for w in states.windows(2) {
            c.record(w[0], w[1])?;
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::Data(format!(
                "cannot merge counts for n={},m={} with n={},m={}",
                self.space.n, self.space.m, other.space.n, other.space.m
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.space.dim() + j]
    }

    pub fn row_total(&self, i: usize) -> u64 {
        let d = self.space.dim();
        self.counts[i * d..(i + 1) * d].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Dense row-stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    dim: usize,
    data: Vec<f64>,
}

pub const ROW_SUM_TOL: f64 = 1e-12;

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Data("matrix has no rows".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Data(format!("row {i} has {} entries, expected {dim}", r.len())));
            }
            data.extend(r);
        }
        let m = Self { dim, data };
        m.check()?;
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    fn check(&self) -> Result<()> {
        for i in 0..self.dim {
            let row = self.row(i);
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
                return Err(Error::Data(format!("row {i} has entry {v} outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    fn set_row(&mut self, i: usize, row: &[f64]) {
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(row);
    }

    /// `x P` for a row vector `x`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.row(i)) {
                *o += xi * p;
            }
        }
        out
    }

    /// `‖πP − π‖∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.left_mul(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, _)| j)
    }

    /// Samples a path of `steps` transitions starting at `start`.
    pub fn sample_path<R: Rng + ?Sized>(&self, start: usize, steps: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(steps + 1);
        let mut s = start;
        path.push(s);
        for _ in 0..steps {
            let u: f64 = rng.random();
            let row = self.row(s);
            let mut acc = 0.0;
            let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(s);
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    next = j;
                    break;
                }
            }
            s = next;
            path.push(s);
        }
        path
    }
}

/// Estimated chain over a CHO state space.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub space: StateSpace,
    pub matrix: StochasticMatrix,
    pub counts: TransitionCounts,
    /// States with no outgoing observations; their rows were set to a self-loop.
    pub unobserved: Vec<ChoState>,
}

impl TransitionMatrix {
    pub fn p(&self, from: ChoState, to: ChoState) -> f64 {
        match (self.space.index(from), self.space.index(to)) {
            (Ok(i), Ok(j)) => self.matrix.get(i, j),
            _ => 0.0,
        }
    }
}

/// Row-normalizes transition counts.
pub fn estimate_matrix(counts: &TransitionCounts) -> Result<TransitionMatrix> {
    if counts.total() == 0 {
        return Err(Error::NoData("no transitions to estimate from".into()));
    }
    let space = counts.space();
    let d = space.dim();
    let mut data = vec![0.0; d * d];
    let mut unobserved = Vec::new();
    for i in 0..d {
        let total = counts.row_total(i);
        if total == 0 {
            data[i * d + i] = 1.0;
            let s = space.state(i)?;
            unobserved.push(s);
            continue;
        }
        for j in 0..d {
            data[i * d + j] = counts.get(i, j) as f64 / total as f64;
        }
    }
    if !unobserved.is_empty() {
        let labels: Vec<String> = unobserved.iter().map(|s| s.to_string()).collect();
        warn!("unobserved states given self-loops: {}", labels.join(","));
    }
    Ok(TransitionMatrix {
        space,
        matrix: StochasticMatrix { dim: d, data },
        counts: counts.clone(),
        unobserved,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ergodicity {
    /// `lemma_witness` is a state `s` and step `k` with `r_ss(k) > 0` and
    /// `r_ss(k+1) > 0`, when one exists.
    Ergodic {
        lemma_witness: Option<(usize, usize)>,
    },
    Reducible {
        state: usize,
    },
    Periodic {
        period: usize,
    },
}

impl Ergodicity {
    pub fn is_ergodic(&self) -> bool {
        matches!(self, Ergodicity::Ergodic { .. })
    }

    pub fn verdict(&self) -> &'static str {
        match self {
            Ergodicity::Ergodic { .. } => "ergodic",
            Ergodicity::Reducible { .. } => "reducible",
            Ergodicity::Periodic { .. } => "periodic",
        }
    }
}

impl fmt::Display for Ergodicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ergodicity::Ergodic {
                lemma_witness: Some((s, k)),
            } => {
                write!(f, "ergodic (state {s} returns in {k} and {} steps)", k + 1)
            }
            Ergodicity::Ergodic { lemma_witness: None } => write!(f, "ergodic"),
            Ergodicity::Reducible { state } => {
                write!(f, "reducible (state {state} not mutually reachable with state 0)")
            }
            Ergodicity::Periodic { period } => write!(f, "periodic with period {period}"),
        }
    }
}

fn bfs(dim: usize, start: usize, next: impl Fn(usize) -> Vec<usize>) -> Vec<Option<usize>> {
    let mut level = vec![None; dim];
    level[start] = Some(0);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let l = level[u].expect("queued states have a level");
        for v in next(u) {
            if level[v].is_none() {
                level[v] = Some(l + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lemma_witness(p: &StochasticMatrix) -> Option<(usize, usize)> {
    let d = p.dim();
    let limit = 2 * d * d + 2;
    let mut best: Option<(usize, usize)> = None;
    for s in 0..d {
        let mut reach = vec![false; d];
        reach[s] = true;
        let mut prev_return = false;
        for k in 1..=limit.min(best.map_or(limit, |b| b.1 + 1)) {
            let mut nxt = vec![false; d];
            for (u, _) in reach.iter().enumerate().filter(|(_, &r)| r) {
                for v in p.successors(u) {
                    nxt[v] = true;
                }
            }
            reach = nxt;
            let ret = reach[s];
            if ret && prev_return {
                if best.is_none_or(|b| k - 1 < b.1) {
                    best = Some((s, k - 1));
                }
                break;
            }
            prev_return = ret;
        }
    }
    best
}

/// Strong connectivity plus period of the positive-entry digraph.
pub fn check_ergodic(p: &StochasticMatrix) -> Ergodicity {
    let d = p.dim();
    let fwd = bfs(d, 0, |u| p.successors(u).collect());
    if let Some(s) = fwd.iter().position(Option::is_none) {
        return Ergodicity::Reducible { state: s };
    }
    let bwd = bfs(d, 0, |v| (0..d).filter(|&u| p.get(u, v) > 0.0).collect());
    if let Some(s) = bwd.iter().position(Option::is_none) {
        return Ergodicity::Reducible { state: s };
    }
    let mut period = 0;
    for u in 0..d {
        let lu = fwd[u].expect("strongly connected");
        for v in p.successors(u) {
            let lv = fwd[v].expect("strongly connected");
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Ergodicity::Periodic { period };
    }
    Ergodicity::Ergodic {
        lemma_witness: lemma_witness(p),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `‖πP − π‖∞`.
    pub residual: f64,
}

/// Solves `π = πP`, `Σπ = 1` by LU with one refinement step, without
/// checking ergodicity. Fails if the balance system is singular.
pub fn solve_balance(p: &StochasticMatrix) -> Result<StationaryDistribution> {
    let d = p.dim();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a[(j, i)] = p.get(i, j);
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(d);
    b[d - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("balance equations have no unique solution".into()))?;
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("balance solve produced non-finite values".into()));
    }
    let mut pi: Vec<f64> = x
        .iter()
        .map(|&v| if v <= 0.0 && v > -1e-14 { 0.0 } else { v })
        .collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    let residual = p.residual(&pi);
    Ok(StationaryDistribution { pi, residual })
}

/// Stationary distribution of an ergodic chain.
pub fn stationary(p: &StochasticMatrix) -> Result<StationaryDistribution> {
    match check_ergodic(p) {
        e if e.is_ergodic() => solve_balance(p),
        e => Err(Error::NonErgodic(e)),
    }
}

fn irreducible_stationary(p: &StochasticMatrix) -> Result<StationaryDistribution> {
    match check_ergodic(p) {
        e @ Ergodicity::Reducible { .. } => Err(Error::NonErgodic(e)),
        _ => solve_balance(p),
    }
}

/// Stationary distribution of an estimated chain, ignoring unobserved states
/// that no other state can enter. Those states get zero mass; the remaining
/// chain must be irreducible (it may be periodic).
pub fn stationary_observed(tm: &TransitionMatrix) -> Result<StationaryDistribution> {
    let d = tm.space.dim();
    let dropped: Vec<bool> = (0..d)
        .map(|j| {
            let unobserved = tm.unobserved.iter().any(|s| tm.space.index(*s).ok() == Some(j));
            unobserved && (0..d).all(|i| i == j || tm.matrix.get(i, j) == 0.0)
        })
        .collect();
    if !dropped.contains(&true) {
        return irreducible_stationary(&tm.matrix);
    }
    let keep: Vec<usize> = (0..d).filter(|&j| !dropped[j]).collect();
    if keep.is_empty() {
        return Err(Error::NoData("no observed states".into()));
    }
    let rows = keep
        .iter()
        .map(|&i| keep.iter().map(|&j| tm.matrix.get(i, j)).collect())
        .collect();
    let sub = irreducible_stationary(&StochasticMatrix::from_rows(rows)?)?;
    let mut pi = vec![0.0; d];
    for (k, &j) in keep.iter().enumerate() {
        pi[j] = sub.pi[k];
    }
    let residual = tm.matrix.residual(&pi);
    Ok(StationaryDistribution { pi, residual })
}

/// Auxiliary terms and result of the closed-form steady state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormReport {
    /// Path products from NORM: `a[0] = 1`, `a[i] = a[i-1] p(A_{i-1}, A_i)`.
    pub a: Vec<f64>,
    /// Path products from WAIT, same layout.
    pub b: Vec<f64>,
    pub alpha_cf: f64,
    pub beta_cf: f64,
    pub phi_cf: f64,
    pub delta_cf: f64,
    pub lambda_cf: f64,
    /// `None` when a denominator vanishes.
    pub pi_norm: Option<f64>,
    pub pi_wait: Option<f64>,
    pub pi_hof: Option<f64>,
    pub pi_hof_linear: Option<f64>,
    pub discrepancy: Option<f64>,
}

impl ClosedFormReport {
    pub fn is_defined(&self) -> bool {
        self.pi_hof.is_some()
    }
}

fn nonzero(x: f64) -> Option<f64> {
    (x != 0.0 && x.is_finite()).then_some(x)
}

/// Evaluates the closed-form `π_NORM`, `π_WAIT`, `π_HOF` and compares
/// `π_HOF` with the linear solve.
pub fn closed_form_pi_hof(tm: &TransitionMatrix) -> ClosedFormReport {
    let sp = tm.space;
    let (n, m) = (sp.n, sp.m);
    let p = |a: ChoState, b: ChoState| tm.p(a, b);
    let prep = |i: u32| if i == 0 { ChoState::Norm } else { ChoState::Prep(i) };
    let exec = |j: u32| if j == 0 { ChoState::Wait } else { ChoState::Exec(j) };

    let mut a = vec![1.0];
    for i in 1..=n {
        a.push(a[i as usize - 1] * p(prep(i - 1), prep(i)));
    }
    let mut b = vec![1.0];
    for j in 1..=m {
        b.push(b[j as usize - 1] * p(exec(j - 1), exec(j)));
    }
    let alpha = p(ChoState::Norm, ChoState::Norm)
        + (1..=n).map(|i| a[i as usize] * p(prep(i), ChoState::Norm)).sum::<f64>()
        - 1.0;
    let beta = p(ChoState::Wait, ChoState::Wait) - 1.0
        + (1..m).map(|j| b[j as usize] * p(exec(j), ChoState::Wait)).sum::<f64>();
    let phi = a.iter().sum::<f64>();
    let delta = b.iter().sum::<f64>();
    let lambda = b.get(1).copied().unwrap_or(0.0);

    let an_w = p(prep(n), ChoState::Wait) * a[n as usize];
    let bm_n = p(exec(m), ChoState::Norm) * b[m as usize];

    let pi_norm =
        nonzero(beta).and_then(|beta| nonzero(phi - alpha + (an_w / beta) * (bm_n - delta)).map(|den| 1.0 / den));
    let pi_wait =
        nonzero(an_w).and_then(|an_w| nonzero((alpha - phi) * beta / an_w - bm_n + delta).map(|den| 1.0 / den));
    let pi_hof = match (pi_norm, pi_wait) {
        (Some(pn), Some(pw)) => Some(1.0 - phi * pn - delta * pw),
        _ => None,
    };
    let pi_hof_linear = stationary_observed(tm)
        .or_else(|_| solve_balance(&tm.matrix))
        .ok()
        .map(|s| s.pi[sp.hof_index()]);
    let discrepancy = match (pi_hof, pi_hof_linear) {
        (Some(c), Some(l)) => Some((c - l).abs()),
        _ => None,
    };
    ClosedFormReport {
        a,
        b,
        alpha_cf: alpha,
        beta_cf: beta,
        phi_cf: phi,
        delta_cf: delta,
        lambda_cf: lambda,
        pi_norm,
        pi_wait,
        pi_hof,
        pi_hof_linear,
        discrepancy,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum A3ChainMode {
    /// WAIT is left for NORM with probability 1 (the handover completes).
    Absorbing,
    /// WAIT is left for HOF with probability 1.
    WaitToHof,
}

/// Reduced A3 topology built from an estimated `m = 0` chain.
///
/// The WAIT row is replaced according to `mode` and HOF always returns to NORM.
pub fn a3_chain(est: &TransitionMatrix, mode: A3ChainMode) -> Result<TransitionMatrix> {
    let sp = est.space;
    if sp.m != 0 {
        return Err(Error::Data(format!("A3 chain needs m = 0, got m = {}", sp.m)));
    }
    let d = sp.dim();
    let mut out = est.clone();
    let mut row = vec![0.0; d];
    match mode {
        A3ChainMode::Absorbing => row[0] = 1.0,
        A3ChainMode::WaitToHof => row[sp.hof_index()] = 1.0,
    }
    out.matrix.set_row(sp.wait_index(), &row);
    let mut hof = vec![0.0; d];
    hof[0] = 1.0;
    out.matrix.set_row(sp.hof_index(), &hof);
    out.unobserved.retain(|s| !matches!(s, ChoState::Wait | ChoState::Hof));
    Ok(out)
}

fn write_labeled_rows<W: Write, T: fmt::Display>(
    w: W,
    space: StateSpace,
    value: impl Fn(usize, usize) -> T,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let labels = space.labels();
    let mut header = vec!["state".to_string()];
    header.extend(labels.iter().cloned());
    csv.write_record(&header)?;
    for (i, l) in labels.iter().enumerate() {
        let mut rec = vec![l.clone()];
        rec.extend((0..space.dim()).map(|j| value(i, j).to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_matrix_csv<W: Write>(tm: &TransitionMatrix, w: W) -> Result<()> {
    write_labeled_rows(w, tm.space, |i, j| tm.matrix.get(i, j))
}

pub fn write_counts_csv<W: Write>(c: &TransitionCounts, w: W) -> Result<()> {
    write_labeled_rows(w, c.space, |i, j| c.get(i, j))
}

/// Reads a matrix written by [`write_matrix_csv`]; the state space is taken
/// from the header labels.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<(StateSpace, StochasticMatrix)> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("state") || header.len() < 2 {
        return Err(Error::Data("matrix header must start with `state`".into()));
    }
    let states = header
        .iter()
        .skip(1)
        .map(str::parse::<ChoState>)
        .collect::<Result<Vec<_>>>()?;
    let n = states.iter().filter(|s| matches!(s, ChoState::Prep(_))).count() as u32;
    let m = states.iter().filter(|s| matches!(s, ChoState::Exec(_))).count() as u32;
    let space = StateSpace::new(n, m).map_err(|e| Error::Data(e.to_string()))?;
    if space.states().collect::<Vec<_>>() != states {
        return Err(Error::Data("matrix header states are not in canonical order".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != Some(header.get(i + 1).unwrap_or("")) {
            return Err(Error::Data(format!("row {i} label does not match the header")));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad probability `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != space.dim() {
        return Err(Error::Data(format!(
            "expected {} rows, got {}",
            space.dim(),
            rows.len()
        )));
    }
    Ok((space, StochasticMatrix::from_rows(rows)?))
}

pub fn write_stationary_csv<W: Write>(space: StateSpace, st: &StationaryDistribution, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["state", "pi"])?;
    for (l, p) in space.labels().iter().zip(&st.pi) {
        csv.write_record([l.as_str(), &p.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn write_closed_form_csv<W: Write>(cf: &ClosedFormReport, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["quantity", "value"])?;
    let rows = [
        ("pi_hof_closed_form", opt(cf.pi_hof)),
        ("pi_hof_linear", opt(cf.pi_hof_linear)),
        ("discrepancy", opt(cf.discrepancy)),
        ("pi_norm_closed_form", opt(cf.pi_norm)),
        ("pi_wait_closed_form", opt(cf.pi_wait)),
        ("alpha_cf", cf.alpha_cf.to_string()),
        ("beta_cf", cf.beta_cf.to_string()),
        ("phi_cf", cf.phi_cf.to_string()),
        ("delta_cf", cf.delta_cf.to_string()),
        ("lambda_cf", cf.lambda_cf.to_string()),
    ];
    for (k, v) in rows {
        csv.write_record([k, v.as_str()])?;
    }
    for (i, a) in cf.a.iter().enumerate().skip(1) {
        csv.write_record([format!("a{i}"), a.to_string()])?;
    }
    for (j, b) in cf.b.iter().enumerate().skip(1) {
        csv.write_record([format!("b{j}"), b.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_ergodicity_csv<W: Write>(e: &Ergodicity, unobserved: &[ChoState], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["verdict", "detail", "unobserved_states"])?;
    let un: Vec<String> = unobserved.iter().map(|s| s.to_string()).collect();
    csv.write_record([e.verdict(), &e.to_string(), &un.join(" ")])?;
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::fsm::{fsm_step, StepInputs};

    fn m(rows: &[&[f64]]) -> StochasticMatrix {
        StochasticMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn estimation_hand_count() {
        use ChoState::*;
        let sp = StateSpace::new(5, 4).unwrap();
        let c = TransitionCounts::from_state_sequence(sp, &[Norm, Norm, Prep(1), Norm]).unwrap();
        let tm = estimate_matrix(&c).unwrap();
        assert_eq!(tm.p(Norm, Norm), 0.5);
        assert_eq!(tm.p(Norm, Prep(1)), 0.5);
        assert_eq!(tm.p(Prep(1), Norm), 1.0);
        assert_eq!(tm.unobserved.len(), sp.dim() - 2);
    }

    #[test]
    fn never_leaving_norm() {
        let sp = StateSpace::new(5, 4).unwrap();
        let c = TransitionCounts::from_state_sequence(sp, &[ChoState::Norm; 10]).unwrap();
        let tm = estimate_matrix(&c).unwrap();
        assert_eq!(tm.p(ChoState::Norm, ChoState::Norm), 1.0);
        assert_eq!(tm.unobserved.len(), sp.dim() - 1);
        for i in 1..sp.dim() {
            assert_eq!(tm.matrix.get(i, i), 1.0);
        }
    }

    #[test]
    fn empty_counts_are_no_data() {
        let sp = StateSpace::new(1, 1).unwrap();
        assert!(matches!(
            estimate_matrix(&TransitionCounts::new(sp)),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn impossible_transition_rejected() {
        let sp = StateSpace::new(5, 4).unwrap();
        let mut c = TransitionCounts::new(sp);
        assert!(c.record(ChoState::Prep(2), ChoState::Exec(1)).unwrap_err().is_data());
    }

    #[test]
    fn ergodicity_examples() {
        assert!(matches!(
            check_ergodic(&StochasticMatrix::identity(3)),
            Ergodicity::Reducible { .. }
        ));
        assert_eq!(
            check_ergodic(&m(&[&[0.0, 1.0], &[1.0, 0.0]])),
            Ergodicity::Periodic { period: 2 }
        );
        let e = check_ergodic(&m(&[&[0.9, 0.1], &[0.5, 0.5]]));
        assert_eq!(
            e,
            Ergodicity::Ergodic {
                lemma_witness: Some((0, 1))
            }
        );
    }

    #[test]
    fn three_cycle_is_periodic() {
        let p = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(check_ergodic(&p), Ergodicity::Periodic { period: 3 });
    }

    #[test]
    fn stationary_examples() {
        let st = stationary(&m(&[&[0.9, 0.1], &[0.5, 0.5]])).unwrap();
        assert_relative_eq!(st.pi[0], 5.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(st.pi[1], 1.0 / 6.0, epsilon = 1e-14);
        let st = stationary(&m(&[&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], &[0.3, 0.5, 0.2]])).unwrap();
        for p in st.pi {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-14);
        }
        assert!(matches!(
            stationary(&StochasticMatrix::identity(2)),
            Err(Error::NonErgodic(_))
        ));
    }

    fn full_topology_chain(space: StateSpace, rng: &mut ChaCha8Rng) -> TransitionMatrix {
        let d = space.dim();
        let mut rows = vec![vec![0.0; d]; d];
        for (i, row) in rows.iter_mut().enumerate() {
            let from = space.state(i).unwrap();
            let allowed: Vec<usize> = (0..d)
                .filter(|&j| space.allows(from, space.state(j).unwrap()))
                .collect();
            let w: Vec<f64> = allowed.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            for (j, wj) in allowed.iter().zip(w) {
                row[*j] = wj / s;
            }
        }
        TransitionMatrix {
            space,
            matrix: StochasticMatrix::from_rows(rows).unwrap(),
            counts: TransitionCounts::new(space),
            unobserved: vec![],
        }
    }

    #[test]
    fn full_topology_is_ergodic_and_closed_form_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, m) in [(5, 4), (1, 1), (3, 0), (0, 2), (24, 0)] {
            let sp = StateSpace::new(n, m).unwrap();
            let tm = full_topology_chain(sp, &mut rng);
            assert!(check_ergodic(&tm.matrix).is_ergodic(), "n={n} m={m}");
            let cf = closed_form_pi_hof(&tm);
            assert!(cf.discrepancy.unwrap() < 1e-10, "n={n} m={m} {cf:?}");
            let st = stationary(&tm.matrix).unwrap();
            assert!(st.residual <= 1e-12);
        }
    }

    #[test]
    fn aux_terms_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tm = full_topology_chain(StateSpace::new(5, 4).unwrap(), &mut rng);
        let cf = closed_form_pi_hof(&tm);
        for w in cf.a.windows(2).chain(cf.b.windows(2)) {
            assert!(w[1] <= w[0] && w[1] >= 0.0);
        }
        assert_eq!(cf.lambda_cf, cf.b[1]);
    }

    #[test]
    fn fault_free_chain_closed_form() {
        // NORM -> A1 .. An -> WAIT -> B1 .. Bm -> NORM with probability 1
        let sp = StateSpace::new(5, 4).unwrap();
        let d = sp.dim();
        let mut rows = vec![vec![0.0; d]; d];
        for i in 0..d - 2 {
            rows[i][i + 1] = 1.0;
        }
        rows[d - 2][0] = 1.0;
        rows[d - 1][0] = 1.0;
        let tm = TransitionMatrix {
            space: sp,
            matrix: StochasticMatrix::from_rows(rows).unwrap(),
            counts: TransitionCounts::new(sp),
            unobserved: vec![],
        };
        assert!(!check_ergodic(&tm.matrix).is_ergodic());
        let cf = closed_form_pi_hof(&tm);
        assert!(cf.discrepancy.unwrap() <= 1e-9, "{cf:?}");
        assert_relative_eq!(cf.pi_norm.unwrap(), 1.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(cf.pi_wait.unwrap(), 1.0 / 11.0, epsilon = 1e-12);
        assert!(cf.pi_hof.unwrap().abs() < 1e-12);
    }

    #[test]
    fn unvisited_states_get_zero_mass() {
        use ChoState::*;
        let sp = StateSpace::new(2, 1).unwrap();
        let seq = [Norm, Prep(1), Prep(2), Wait, Exec(1), Norm, Norm, Prep(1), Norm];
        let tm = estimate_matrix(&TransitionCounts::from_state_sequence(sp, &seq).unwrap()).unwrap();
        assert_eq!(tm.unobserved, vec![Hof]);
        assert!(!check_ergodic(&tm.matrix).is_ergodic());
        let st = stationary_observed(&tm).unwrap();
        assert_eq!(st.pi[sp.hof_index()], 0.0);
        assert!(st.residual < 1e-12);
        assert_relative_eq!(st.pi.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let cf = closed_form_pi_hof(&tm);
        assert!(cf.discrepancy.unwrap() <= 1e-9, "{cf:?}");

        // a periodic cycle still has a unique stationary vector
        let cycle = [Norm, Prep(1), Prep(2), Wait, Exec(1), Norm, Prep(1)];
        let tm = estimate_matrix(&TransitionCounts::from_state_sequence(sp, &cycle).unwrap()).unwrap();
        let st = stationary_observed(&tm).unwrap();
        for s in [Norm, Prep(1), Prep(2), Wait, Exec(1)] {
            assert_relative_eq!(st.pi[sp.index(s).unwrap()], 0.2, epsilon = 1e-12);
        }
        assert!(closed_form_pi_hof(&tm).discrepancy.unwrap() <= 1e-9);
    }

    #[test]
    fn undefined_closed_form_still_solves() {
        let sp = StateSpace::new(1, 1).unwrap();
        let c = TransitionCounts::from_state_sequence(sp, &[ChoState::Norm; 4]).unwrap();
        let tm = estimate_matrix(&c).unwrap();
        let cf = closed_form_pi_hof(&tm);
        assert!(!cf.is_defined());
        assert!(cf.discrepancy.is_none());
    }

    #[test]
    fn a3_chain_modes() {
        let sp = StateSpace::new(24, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = full_topology_chain(sp, &mut rng);
        assert_eq!(est.space.dim(), 27);
        let abs = a3_chain(&est, A3ChainMode::Absorbing).unwrap();
        assert_eq!(abs.p(ChoState::Wait, ChoState::Norm), 1.0);
        let ovr = a3_chain(&est, A3ChainMode::WaitToHof).unwrap();
        assert_eq!(ovr.p(ChoState::Wait, ChoState::Hof), 1.0);
        assert_eq!(ovr.p(ChoState::Hof, ChoState::Norm), 1.0);
        let sp1 = StateSpace::new(1, 0).unwrap();
        assert_eq!(sp1.dim(), 4);
        let bad = full_topology_chain(StateSpace::new(2, 1).unwrap(), &mut rng);
        assert!(a3_chain(&bad, A3ChainMode::Absorbing).is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let sp = StateSpace::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tm = full_topology_chain(sp, &mut rng);
        let mut buf = Vec::new();
        write_matrix_csv(&tm, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("state,NORM,A1,A2,WAIT,B1,HOF\n"));
        let (sp2, p) = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(sp2, sp);
        assert_eq!(p, tm.matrix);
    }

    #[test]
    fn sample_path_follows_support() {
        let p = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let path = p.sample_path(0, 7, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(path, vec![0, 1, 2, 0, 1, 2, 0, 1]);
    }

    proptest! {
        #[test]
        fn estimation_respects_structure(seed in any::<u64>(), n in 0u32..6, m in 0u32..5, len in 2usize..400) {
            prop_assume!(n + m > 0);
            let sp = StateSpace::new(n, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ChoState::Norm;
            let mut path = vec![s];
            for _ in 0..len {
                let inputs = StepInputs { prep_ok: rng.random_bool(0.7), exec_ok: rng.random_bool(0.7), rlf_fired: rng.random_bool(0.05) };
                s = fsm_step(s, inputs, sp).unwrap().0;
                path.push(s);
            }
            let tm = estimate_matrix(&TransitionCounts::from_state_sequence(sp, &path).unwrap()).unwrap();
            for i in 0..sp.dim() {
                let row = tm.matrix.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
                for (j, &v) in row.iter().enumerate() {
                    prop_assert!((0.0..=1.0).contains(&v));
                    if v > 0.0 && i != j {
                        prop_assert!(sp.allows(sp.state(i).unwrap(), sp.state(j).unwrap()));
                    }
                }
            }
        }

        #[test]
        fn solver_residual_small(seed in any::<u64>(), d in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..d).map(|_| {
                let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            }).collect();
            let p = StochasticMatrix::from_rows(rows).unwrap();
            let st = stationary(&p).unwrap();
            prop_assert!(st.residual <= 1e-12);
            prop_assert!((st.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(st.pi.iter().all(|&x| x >= 0.0));
        }
    }
}
