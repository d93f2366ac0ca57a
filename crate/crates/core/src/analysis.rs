//! Post-hoc checks and summaries over event logs, plus the convergence-bound
//! calculator.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::{EventKind, SimEvent};
use crate::selection::ClientId;

/// An aggregation found inside the window the pace controller should have kept clear.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Violation {
    pub aggregation_time: f64,
    pub interval: f64,
    pub offending_time: f64,
}

/// A training span that saw more aggregations than the bound allows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanViolation {
    pub client: ClientId,
    pub start: f64,
    /// `None` when the client had not reported by the end of the log.
    pub end: Option<f64>,
    pub aggregation_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierReport {
    pub pass: bool,
    pub b: u32,
    pub max_count: usize,
    /// Whether `max_count < b` also holds.
    pub strict: bool,
    pub violating_spans: Vec<SpanViolation>,
    pub lemma1_violations: Vec<Lemma1Violation>,
}

fn aggregations(log: &[SimEvent]) -> impl Iterator<Item = (f64, Option<f64>)> + '_ {
    log.iter().filter_map(|e| match &e.kind {
        EventKind::Aggregated { interval, .. } => Some((e.time, *interval)),
        _ => None,
    })
}

/// Loop tick recorded in the log's init event, if any.
pub fn log_tick(log: &[SimEvent]) -> Option<f64> {
    log.iter().find_map(|e| match &e.kind {
        EventKind::Init { tick, .. } => Some(*tick),
        _ => None,
    })
}

/// For every aggregation at `T` with interval `I`, reports other aggregations
/// in `(T − I + tolerance, T)`. The lower end is open, so an aggregation
/// exactly `I` earlier is compliant; `tolerance` widens that allowance to
/// absorb tick quantization.
pub fn verify_lemma1(log: &[SimEvent], tolerance: f64) -> Result<Vec<Lemma1Violation>> {
    let mut seen: Vec<(f64, f64)> = Vec::new();
    for (time, interval) in aggregations(log) {
        let interval = interval.ok_or(Error::MissingIntervalField { time })?;
        seen.push((time, interval));
    }
    let times: Vec<f64> = seen.iter().map(|&(t, _)| t).collect();
    let mut violations = Vec::new();
    for (i, &(t, interval)) in seen.iter().enumerate() {
        let lo = t - interval + tolerance;
        for (j, &other) in times.iter().enumerate() {
            if i != j && other > lo && other < t {
                violations.push(Lemma1Violation {
                    aggregation_time: t,
                    interval,
                    offending_time: other,
                });
            }
        }
    }
    Ok(violations)
}

/// Counts aggregations strictly inside every (selection, report) span. Spans
/// still open at the end of the log run to `+∞`.
pub fn verify_thm1(log: &[SimEvent], b: u32) -> Result<VerifierReport> {
    if b == 0 {
        return Err(Error::InvalidBound);
    }
    let mut agg_times: Vec<f64> = aggregations(log).map(|(t, _)| t).collect();
    agg_times.sort_by(f64::total_cmp);
    let mut open: BTreeMap<ClientId, VecDeque<f64>> = BTreeMap::new();
    let mut spans: Vec<(ClientId, f64, Option<f64>)> = Vec::new();
    for e in log {
        match &e.kind {
            EventKind::Selected { client, .. } => open.entry(*client).or_default().push_back(e.time),
            EventKind::UpdateReported { client, .. } => {
                let start = open
                    .get_mut(client)
                    .and_then(|q| q.pop_front())
                    .ok_or(Error::UnmatchedSpan {
                        client: *client,
                        time: e.time,
                    })?;
                spans.push((*client, start, Some(e.time)));
            }
            _ => {}
        }
    }
    for (client, starts) in open {
        spans.extend(starts.into_iter().map(|s| (client, s, None)));
    }
    spans.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut max_count = 0;
    let mut violating_spans = Vec::new();
    for (client, start, end) in spans {
        let lo = agg_times.partition_point(|&t| t <= start);
        let hi = end.map_or(agg_times.len(), |e| agg_times.partition_point(|&t| t < e));
        let count = hi.saturating_sub(lo);
        max_count = max_count.max(count);
        if count > b as usize {
            violating_spans.push(SpanViolation {
                client,
                start,
                end,
                aggregation_times: agg_times[lo..hi].to_vec(),
            });
        }
    }
    Ok(VerifierReport {
        pass: violating_spans.is_empty(),
        b,
        max_count,
        strict: max_count < b as usize,
        violating_spans,
        lemma1_violations: Vec::new(),
    })
}

/// Both checks; the lemma tolerance is the tick recorded in the log.
pub fn verify(log: &[SimEvent], b: u32) -> Result<VerifierReport> {
    let mut report = verify_thm1(log, b)?;
    report.lemma1_violations = verify_lemma1(log, log_tick(log).unwrap_or(0.0))?;
    report.pass = report.violating_spans.is_empty() && report.lemma1_violations.is_empty();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub f0_minus_fstar: f64,
    pub l_smooth: f64,
    pub sigma_l_sq: f64,
    pub sigma_g_sq: f64,
    pub g: f64,
    pub q: usize,
    pub eta_schedule: Vec<f64>,
    pub b: u32,
    pub t: u64,
}

/// Ergodic convergence bound for server steps `T` under staleness bound `b`:
///
/// `2(f⁰ − f*)/(α T) + (L/2)(β/α)σ²_ℓ + 3L²Qβ(b² + 1)(σ²_ℓ + σ²_g + G)`
///
/// with `α = Σ η_q` and `β = Σ η_q²` over the local steps.
pub fn convergence_bound(p: &BoundParams) -> Result<f64> {
    let non_negative = [
        ("f0_minus_fstar", p.f0_minus_fstar),
        ("sigma_l_sq", p.sigma_l_sq),
        ("sigma_g_sq", p.sigma_g_sq),
        ("G", p.g),
    ];
    for (name, v) in non_negative {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "{name} must be a finite non-negative number, got {v}"
            )));
        }
    }
    if !(p.l_smooth > 0.0 && p.l_smooth.is_finite()) {
        return Err(Error::InvalidParams(format!("L must be positive, got {}", p.l_smooth)));
    }
    if p.q == 0 || p.t == 0 {
        return Err(Error::InvalidParams(format!(
            "Q and T must be at least 1, got Q={} T={}",
            p.q, p.t
        )));
    }
    if p.eta_schedule.len() != p.q {
        return Err(Error::InvalidParams(format!(
            "eta schedule has {} entries, expected Q={}",
            p.eta_schedule.len(),
            p.q
        )));
    }
    let q = p.q as f64;
    let limit = 1.0 / p.l_smooth;
    for (step, &eta) in p.eta_schedule.iter().enumerate() {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "eta at step {step} must be positive, got {eta}"
            )));
        }
        if eta * q > limit {
            return Err(Error::PreconditionViolated(format!(
                "eta*Q <= 1/L fails at step {step}: {eta}*{} = {} > {limit}",
                p.q,
                eta * q
            )));
        }
    }
    let alpha: f64 = p.eta_schedule.iter().sum();
    let beta: f64 = p.eta_schedule.iter().map(|e| e * e).sum();
    let l = p.l_smooth;
    let b = p.b as f64;
    let optimisation = 2.0 * p.f0_minus_fstar / (alpha * p.t as f64);
    let local_noise = 0.5 * l * (beta / alpha) * p.sigma_l_sq;
    let staleness = 3.0 * l * l * q * beta * (b * b + 1.0) * (p.sigma_l_sq + p.sigma_g_sq + p.g);
    Ok(optimisation + local_noise + staleness)
}

/// `x` with `digits` significant digits; exact zero prints as `0`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if (-5..(digits as i32 + 6)).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimedValue {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlacklistEntry {
    pub time: f64,
    pub client: ClientId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub target_loss: Option<f64>,
    pub time_to_target: Option<f64>,
    pub final_loss: Option<f64>,
    pub end_time: f64,
    pub total_aggregations: u64,
    /// Time of each aggregation; entry `i` produced version `i + 1`.
    pub aggregation_times: Vec<f64>,
    pub loss_series: Vec<TimedValue>,
    /// Number of times each client was selected for training.
    pub involvement: BTreeMap<ClientId, u64>,
    pub staleness_histogram: BTreeMap<u64, u64>,
    pub max_staleness: Option<u64>,
    pub blacklist: Vec<BlacklistEntry>,
    pub diverged: bool,
}

pub fn metrics_summary(log: &[SimEvent], target_loss: Option<f64>) -> MetricsSummary {
    let mut m = MetricsSummary {
        target_loss,
        time_to_target: None,
        final_loss: None,
        end_time: log.iter().map(|e| e.time).fold(0.0, f64::max),
        total_aggregations: 0,
        aggregation_times: Vec::new(),
        loss_series: Vec::new(),
        involvement: BTreeMap::new(),
        staleness_histogram: BTreeMap::new(),
        max_staleness: None,
        blacklist: Vec::new(),
        diverged: false,
    };
    for e in log {
        match &e.kind {
            EventKind::Init { n_clients, .. } => {
                for c in 0..*n_clients as ClientId {
                    m.involvement.entry(c).or_insert(0);
                }
            }
            EventKind::Selected { client, .. } => *m.involvement.entry(*client).or_insert(0) += 1,
            EventKind::Aggregated { staleness, .. } => {
                m.total_aggregations += 1;
                m.aggregation_times.push(e.time);
                for &tau in staleness {
                    *m.staleness_histogram.entry(tau).or_insert(0) += 1;
                    m.max_staleness = Some(m.max_staleness.map_or(tau, |s| s.max(tau)));
                }
            }
            EventKind::LossEvaluated { loss, .. } => {
                m.loss_series.push(TimedValue {
                    time: e.time,
                    value: *loss,
                });
                m.final_loss = Some(*loss);
                if m.time_to_target.is_none() && target_loss.is_some_and(|t| *loss <= t) {
                    m.time_to_target = Some(e.time);
                }
            }
            EventKind::Blacklisted { client } => m.blacklist.push(BlacklistEntry {
                time: e.time,
                client: *client,
            }),
            EventKind::Diverged { .. } => m.diverged = true,
            EventKind::UpdateReported { .. } => {}
        }
    }
    m
}
