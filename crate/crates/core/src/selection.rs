//! Participant selection: utility scoring, staleness estimation, the three
//! selection policies and loss-outlier blacklisting.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClientId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Pisces,
    Oort,
    Random,
}

/// What the coordinator knows about one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: ClientId,
    pub sample_count: usize,
    pub latency_history: Vec<f64>,
    /// Latency assumed before any observation.
    pub prior_latency: f64,
    pub staleness_history: Vec<u64>,
    pub last_aggregate_rms: Option<f64>,
    pub reliability_credits: u32,
    pub blacklisted: bool,
    pub busy: bool,
}

impl ClientProfile {
    pub fn new(id: ClientId, sample_count: usize, prior_latency: f64, credits: u32) -> Self {
        Self {
            id,
            sample_count,
            latency_history: Vec::new(),
            prior_latency,
            staleness_history: Vec::new(),
            last_aggregate_rms: None,
            reliability_credits: credits,
            blacklisted: credits == 0,
            busy: false,
        }
    }

    /// Mean observed latency, or the prior before the first observation.
    pub fn profiled_latency(&self) -> f64 {
        if self.latency_history.is_empty() {
            self.prior_latency
        } else {
            self.latency_history.iter().sum::<f64>() / self.latency_history.len() as f64
        }
    }

    /// Selectable: not training, not blacklisted, holds data.
    pub fn is_idle(&self) -> bool {
        !self.busy && !self.blacklisted && self.sample_count > 0
    }

    /// Takes one credit away; true when this exhausts the budget.
    pub fn deduct_credit(&mut self) -> bool {
        if self.blacklisted {
            return false;
        }
        self.reliability_credits = self.reliability_credits.saturating_sub(1);
        if self.reliability_credits == 0 {
            self.blacklisted = true;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub policy: Policy,
    pub concurrency_limit: usize,
    /// Staleness penalty exponent.
    pub beta: f64,
    /// Moving-average window over observed staleness.
    pub ma_window: usize,
    pub oort_alpha: f64,
    /// Preferred round duration for the Oort speed penalty.
    pub oort_t: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Pisces,
            concurrency_limit: 20,
            beta: 0.5,
            ma_window: 5,
            oort_alpha: 2.0,
            oort_t: 1.0,
        }
    }
}

/// Mean of the most recent `min(k, len)` staleness values; 0 with no history.
pub fn staleness_estimate(history: &[u64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidWindow);
    }
    if history.is_empty() {
        return Ok(0.0);
    }
    let recent = &history[history.len().saturating_sub(k)..];
    Ok(recent.iter().map(|&t| t as f64).sum::<f64>() / recent.len() as f64)
}

/// Data quality discounted by estimated staleness: `rms / (τ̃ + 1)^β`.
pub fn pisces_utility(aggregate_rms: f64, tau_est: f64, beta: f64) -> Result<f64> {
    if !(aggregate_rms >= 0.0) {
        return Err(Error::NegativeInput("aggregate_rms"));
    }
    if !(tau_est >= 0.0) {
        return Err(Error::NegativeInput("tau_est"));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParams(format!("beta must be > 0, got {beta}")));
    }
    Ok(aggregate_rms / (tau_est + 1.0).powf(beta))
}

/// Data quality with a speed penalty `(T/t)^α` applied only when `t > T`.
pub fn oort_utility(aggregate_rms: f64, latency: f64, preferred: f64, alpha: f64) -> Result<f64> {
    if !(latency > 0.0) {
        return Err(Error::NonPositiveLatency(latency));
    }
    if !(aggregate_rms >= 0.0) {
        return Err(Error::NegativeInput("aggregate_rms"));
    }
    if !(preferred > 0.0) {
        return Err(Error::InvalidParams(format!("T must be > 0, got {preferred}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::NegativeInput("alpha"));
    }
    if preferred < latency {
        Ok(aggregate_rms * (preferred / latency).powf(alpha))
    } else {
        Ok(aggregate_rms)
    }
}

/// Idle clients without a loss report, ascending id, then the measured rest.
fn split_by_exploration(profiles: &[ClientProfile]) -> (Vec<&ClientProfile>, Vec<&ClientProfile>) {
    let mut fresh = Vec::new();
    let mut measured = Vec::new();
    for p in profiles.iter().filter(|p| p.is_idle()) {
        if p.last_aggregate_rms.is_some() {
            measured.push(p);
        } else {
            fresh.push(p);
        }
    }
    fresh.sort_by_key(|p| p.id);
    measured.sort_by_key(|p| p.id);
    (fresh, measured)
}

/// Utility-ranked selection: unexplored clients first, then the highest
/// staleness-discounted utilities (ties to the lower id).
pub fn select_pisces(profiles: &[ClientProfile], config: &SelectionConfig, quota: usize) -> Result<Vec<ClientId>> {
    let (fresh, measured) = split_by_exploration(profiles);
    let mut chosen: Vec<ClientId> = fresh.iter().take(quota).map(|p| p.id).collect();
    if chosen.len() == quota {
        return Ok(chosen);
    }
    let mut scored = Vec::with_capacity(measured.len());
    for p in measured {
        let tau = staleness_estimate(&p.staleness_history, config.ma_window)?;
        let rms = p.last_aggregate_rms.unwrap_or(0.0);
        scored.push((pisces_utility(rms, tau, config.beta)?, p.id));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    chosen.extend(scored.into_iter().take(quota - chosen.len()).map(|(_, id)| id));
    Ok(chosen)
}

/// Oort-style selection: unexplored clients first, then sampling without
/// replacement proportional to [`oort_utility`], uniform when all mass is 0.
pub fn select_oort<R: Rng + ?Sized>(
    profiles: &[ClientProfile],
    config: &SelectionConfig,
    quota: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>> {
    let (fresh, measured) = split_by_exploration(profiles);
    let mut chosen: Vec<ClientId> = fresh.iter().take(quota).map(|p| p.id).collect();
    let mut pool = Vec::with_capacity(measured.len());
    for p in measured {
        let rms = p.last_aggregate_rms.unwrap_or(0.0);
        let u = oort_utility(rms, p.profiled_latency(), config.oort_t, config.oort_alpha)?;
        pool.push((u, p.id));
    }
    while chosen.len() < quota && !pool.is_empty() {
        let pick = weighted_pick(&pool, rng);
        chosen.push(pool.remove(pick).1);
    }
    Ok(chosen)
}

fn weighted_pick<R: Rng + ?Sized>(pool: &[(f64, ClientId)], rng: &mut R) -> usize {
    let total: f64 = pool.iter().map(|(u, _)| u).sum();
    if !(total > 0.0 && total.is_finite()) {
        return rng.random_range(0..pool.len());
    }
    let mut x = rng.random::<f64>() * total;
    for (i, (u, _)) in pool.iter().enumerate() {
        if x < *u {
            return i;
        }
        x -= u;
    }
    // Rounding left x past the last bucket; fall back to the last positive one.
    pool.iter().rposition(|(u, _)| *u > 0.0).unwrap_or(pool.len() - 1)
}

/// Uniform sampling without replacement over idle clients.
pub fn select_random<R: Rng + ?Sized>(profiles: &[ClientProfile], quota: usize, rng: &mut R) -> Vec<ClientId> {
    let mut pool: Vec<ClientId> = profiles.iter().filter(|p| p.is_idle()).map(|p| p.id).collect();
    pool.sort_unstable();
    let mut chosen = Vec::new();
    while chosen.len() < quota && !pool.is_empty() {
        let i = rng.random_range(0..pool.len());
        chosen.push(pool.remove(i));
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    /// Each cluster's indices, ascending; clusters ordered by position on the line.
    pub clusters: Vec<Vec<usize>>,
    pub outliers: Vec<usize>,
}

/// DBSCAN on the real line.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Border points join the cluster of their nearest core point,
/// the left one on a tie, which makes the result independent of input order.
pub fn dbscan_1d(points: &[f64], eps: f64, min_pts: usize) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidParams(format!("eps={eps}, min_pts={min_pts}")));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();

    // Neighbourhood sizes with two sliding pointers.
    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while sorted[i] - sorted[lo] > eps {
            lo += 1;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[i] <= eps {
            hi += 1;
        }
        core[i] = hi + 1 - lo >= min_pts;
    }

    // Core points chain into one cluster while consecutive gaps stay within eps.
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut last_core: Option<usize> = None;
    for i in (0..n).filter(|&i| core[i]) {
        match last_core {
            Some(j) if sorted[i] - sorted[j] <= eps => label[i] = label[j],
            _ => {
                label[i] = Some(n_clusters);
                n_clusters += 1;
            }
        }
        last_core = Some(i);
    }

    let mut prev_core = vec![None; n];
    let mut next_core = vec![None; n];
    let mut seen = None;
    for i in 0..n {
        if core[i] {
            seen = Some(i);
        }
        prev_core[i] = seen;
    }
    seen = None;
    for i in (0..n).rev() {
        if core[i] {
            seen = Some(i);
        }
        next_core[i] = seen;
    }
    for i in (0..n).filter(|&i| !core[i]) {
        let left = prev_core[i].map(|j| (sorted[i] - sorted[j], j));
        let right = next_core[i].map(|j| (sorted[j] - sorted[i], j));
        let nearest = match (left, right) {
            (Some(l), Some(r)) => Some(if r.0 < l.0 { r } else { l }),
            (l, r) => l.or(r),
        };
        if let Some((d, j)) = nearest {
            if d <= eps {
                label[i] = label[j];
            }
        }
    }

    let mut out = Clustering {
        clusters: vec![Vec::new(); n_clusters],
        outliers: Vec::new(),
    };
    for (pos, &original) in order.iter().enumerate() {
        match label[pos] {
            Some(c) => out.clusters[c].push(original),
            None => out.outliers.push(original),
        }
    }
    for c in &mut out.clusters {
        c.sort_unstable();
    }
    out.outliers.sort_unstable();
    Ok(out)
}

/// DBSCAN settings for loss-outlier detection. `None` picks a default from
/// the pool: `eps = max(2·MAD, 1e-6)`, `min_pts = max(2, ⌈pool/10⌉)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutlierParams {
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
}

/// Pools smaller than this are never clustered.
pub const MIN_POOL: usize = 3;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl OutlierParams {
    pub fn resolve(&self, pool: &[f64]) -> (f64, usize) {
        let eps = self.eps.unwrap_or_else(|| {
            let m = median(pool);
            let deviations: Vec<f64> = pool.iter().map(|x| (x - m).abs()).collect();
            (2.0 * median(&deviations)).max(1e-6)
        });
        let min_pts = self
            .min_pts
            .unwrap_or_else(|| 2usize.max((pool.len() as f64 / 10.0).ceil() as usize));
        (eps, min_pts)
    }
}

/// Flags DBSCAN outliers in a loss pool; all false below [`MIN_POOL`].
pub fn loss_outliers(pool: &[f64], params: &OutlierParams) -> Result<Vec<bool>> {
    let mut flags = vec![false; pool.len()];
    if pool.len() < MIN_POOL {
        return Ok(flags);
    }
    let (eps, min_pts) = params.resolve(pool);
    for i in dbscan_1d(pool, eps, min_pts)?.outliers {
        flags[i] = true;
    }
    Ok(flags)
}

/// Clusters the pooled losses and takes one credit from every outlier.
/// Returns the clients blacklisted by this call.
///
/// The caller supplies only losses from updates whose base versions fall in
/// the pooling window.
pub fn credit_update(
    profiles: &mut [ClientProfile],
    pooled: &BTreeMap<ClientId, f64>,
    params: &OutlierParams,
) -> Result<Vec<ClientId>> {
    let ids: Vec<ClientId> = pooled.keys().copied().collect();
    let values: Vec<f64> = pooled.values().copied().collect();
    let flags = loss_outliers(&values, params)?;
    let mut newly = Vec::new();
    for (id, outlier) in ids.into_iter().zip(flags) {
        if !outlier {
            continue;
        }
        if let Some(p) = profiles.iter_mut().find(|p| p.id == id) {
            if p.deduct_credit() {
                newly.push(id);
            }
        }
    }
    Ok(newly)
}
