//! Aggregation controllers and the FedAvg combine step.
//!
//! Three pacing rules decide *when* buffered updates are folded into the
//! global model:
//!
//! * adaptive pace control: aggregate once the time since the previous
//!   aggregation exceeds `L_max / b`, where `L_max` is the largest profiled
//!   latency among running clients;
//! * buffered: aggregate once `K` updates are waiting;
//! * synchronous: aggregate once every participant of the round reported.
//!
//! All three share [`apply_aggregation`], a sample-weighted mean of deltas
//! with server learning rate 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{weighted_mean, ModelVector};
use crate::selection::ClientId;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: ClientId,
    pub base_version: u64,
    pub delta: Vec<f64>,
    pub sample_count: usize,
    pub mean_loss: f64,
    pub report_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AggregationMode {
    Pace { b: u32 },
    Buffered { k: u32 },
    Sync,
}

impl AggregationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationMode::Pace { .. } => "pace",
            AggregationMode::Buffered { .. } => "buffered",
            AggregationMode::Sync => "sync",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaceState {
    pub last_aggregation_time: f64,
    pub target_bound: u32,
    pub buffer: Vec<LocalUpdate>,
}

impl PaceState {
    pub fn new(target_bound: u32, start: f64) -> Result<Self> {
        if target_bound == 0 {
            return Err(Error::InvalidBound);
        }
        Ok(Self {
            last_aggregation_time: start,
            target_bound,
            buffer: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationEvent {
    pub time: f64,
    pub new_version: u64,
    /// Interval `I_l` in force when a paced aggregation fired.
    pub interval: Option<f64>,
    pub contributors: Vec<ClientId>,
    pub staleness: Vec<u64>,
}

/// One step of adaptive pace control. Returns `(aggregate?, I)`; with no
/// running client the interval is `+∞` and the answer is no.
pub fn pace_decision(running_latencies: &[f64], b: u32, t_last: f64, now: f64) -> Result<(bool, f64)> {
    if b == 0 {
        return Err(Error::InvalidBound);
    }
    if now < t_last {
        return Err(Error::InvalidParams(format!(
            "now {now} precedes last aggregation {t_last}"
        )));
    }
    let Some(l_max) = running_latencies.iter().copied().reduce(f64::max) else {
        return Ok((false, f64::INFINITY));
    };
    let interval = l_max / b as f64;
    Ok((now - t_last > interval, interval))
}

pub fn buffered_decision(buffer_size: usize, goal: u32) -> Result<bool> {
    if goal == 0 {
        return Err(Error::InvalidGoal);
    }
    Ok(buffer_size >= goal as usize)
}

pub fn sync_decision(outstanding: usize, buffer_size: usize) -> bool {
    outstanding == 0 && buffer_size > 0
}

/// Aggregations that landed between a download of `base_version` and the
/// aggregation producing `applied_version`, that one excluded.
pub fn staleness_of(base_version: u64, applied_version: u64) -> Result<u64> {
    if applied_version < base_version + 1 {
        return Err(Error::VersionOrderViolation {
            base: base_version,
            applied: applied_version,
        });
    }
    Ok(applied_version - 1 - base_version)
}

/// Folds a non-empty buffer into `global`.
pub fn apply_aggregation(
    global: &ModelVector,
    buffer: &[LocalUpdate],
    time: f64,
) -> Result<(ModelVector, AggregationEvent)> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let deltas: Vec<&[f64]> = buffer.iter().map(|u| u.delta.as_slice()).collect();
    let weights: Vec<f64> = buffer.iter().map(|u| u.sample_count as f64).collect();
    let mean = weighted_mean(&deltas, &weights)?;
    let next = global.apply_delta(&mean)?;
    let staleness = buffer
        .iter()
        .map(|u| staleness_of(u.base_version, next.version()))
        .collect::<Result<Vec<_>>>()?;
    let event = AggregationEvent {
        time,
        new_version: next.version(),
        interval: None,
        contributors: buffer.iter().map(|u| u.client_id).collect(),
        staleness,
    };
    Ok((next, event))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(delta: Vec<f64>, n: usize, base_version: u64) -> LocalUpdate {
        LocalUpdate {
            client_id: base_version as ClientId,
            base_version,
            delta,
            sample_count: n,
            mean_loss: 0.0,
            report_time: 0.0,
        }
    }

    #[test]
    fn pace_examples() {
        assert_eq!(pace_decision(&[12.0, 3.0], 4, 0.0, 3.5).unwrap(), (true, 3.0));
        assert_eq!(pace_decision(&[12.0], 4, 0.0, 3.0).unwrap(), (false, 3.0));
        assert_eq!(pace_decision(&[], 4, 0.0, 100.0).unwrap(), (false, f64::INFINITY));
        assert_eq!(pace_decision(&[1.0], 0, 0.0, 1.0), Err(Error::InvalidBound));
    }

    #[test]
    fn buffered_and_sync_examples() {
        assert!(!buffered_decision(5, 6).unwrap());
        assert!(buffered_decision(6, 6).unwrap());
        assert!(!buffered_decision(0, 1).unwrap());
        assert_eq!(buffered_decision(3, 0), Err(Error::InvalidGoal));
        assert!(!sync_decision(2, 3));
        assert!(sync_decision(0, 5));
        assert!(!sync_decision(0, 0));
    }

    #[test]
    fn staleness_examples() {
        assert_eq!(staleness_of(5, 6).unwrap(), 0);
        assert_eq!(staleness_of(5, 9).unwrap(), 3);
        assert!(matches!(staleness_of(5, 5), Err(Error::VersionOrderViolation { .. })));
    }

    #[test]
    fn fresh_single_update() {
        let g = ModelVector::new(vec![0.0, 0.0], 5).unwrap();
        let (m, e) = apply_aggregation(&g, &[update(vec![2.0, 2.0], 1, 5)], 1.0).unwrap();
        assert_eq!(m.weights(), &[2.0, 2.0]);
        assert_eq!(m.version(), 6);
        assert_eq!(e.staleness, vec![0]);
        assert_eq!(e.new_version, 6);
    }

    #[test]
    fn sample_weighted_combine_with_stale_contributor() {
        let g = ModelVector::new(vec![0.0, 0.0], 5).unwrap();
        let buf = [update(vec![2.0, 2.0], 1, 5), update(vec![0.0, 0.0], 3, 4)];
        let (m, e) = apply_aggregation(&g, &buf, 1.0).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(e.staleness, vec![0, 1]);
    }

    #[test]
    fn zero_delta_only_bumps_version() {
        let g = ModelVector::new(vec![1.5, -3.0], 2).unwrap();
        let (m, _) = apply_aggregation(&g, &[update(vec![0.0, 0.0], 4, 2)], 0.0).unwrap();
        assert_eq!(m.weights(), g.weights());
        assert_eq!(m.version(), 3);
        assert_eq!(apply_aggregation(&g, &[], 0.0), Err(Error::EmptyBuffer));
    }

    #[test]
    fn intervening_aggregations_count_as_staleness() {
        let mut g = ModelVector::zeros(1);
        let held = update(vec![1.0], 1, g.version());
        for _ in 0..3 {
            g = apply_aggregation(&g, &[update(vec![0.0], 1, g.version())], 0.0)
                .unwrap()
                .0;
        }
        let (_, e) = apply_aggregation(&g, &[held], 0.0).unwrap();
        assert_eq!(e.staleness, vec![3]);
    }
}
