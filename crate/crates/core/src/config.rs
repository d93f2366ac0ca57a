//! Scenario documents.
//!
//! A scenario is a TOML document. Every key except `n_clients` is optional;
//! [`parse_scenario`] fills in defaults and validates the result. The resolved
//! config serialises back to TOML with every default written out, and that
//! echo parses to an identical config.
//!
//! ```toml
//! n_clients = 20
//! policy = "pisces"          # pisces | oort | random
//! seed = 7
//!
//! [aggregation]
//! mode = "pace"              # pace | buffered | sync
//! b = 20
//!
//! [latency]
//! zipf_a = 1.2
//! ```

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationMode;
use crate::error::{Error, Result};
use crate::selection::{OutlierParams, Policy, SelectionConfig};
use crate::tasks::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Pace,
    Buffered,
    Sync,
}

/// How client dataset sizes relate to client speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Volume {
    /// Plain Dirichlet label split.
    Independent,
    /// Client shares are scaled by true latency, so slower clients hold
    /// proportionally more data.
    LatencyProportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_clients: usize,
    pub policy: Policy,
    pub seed: u64,
    pub concurrency: usize,
    /// Simulated time at which the run stops (inclusive).
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<f64>,
    /// Control-loop period.
    pub tick: f64,
    /// Hold-out evaluation period, in ticks.
    pub eval_every: u32,
    pub aggregation: AggregationConfig,
    pub task: TaskConfig,
    pub partition: PartitionConfig,
    pub latency: LatencyConfig,
    pub selection: SelectionParams,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub mode: ModeName,
    /// Staleness bound for pace mode.
    pub b: u32,
    /// Buffer goal for buffered mode.
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub dim: usize,
    pub classes: usize,
    pub samples: usize,
    pub holdout: usize,
    pub noise: f64,
    /// Fraction of clients whose labels are flipped.
    pub corrupt_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub concentration: f64,
    pub volume: Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    pub zipf_a: f64,
    /// Latency of the slowest client.
    pub base: f64,
    /// Multiplicative uniform jitter half-width on each training latency.
    pub jitter: f64,
    /// Multiplicative uniform noise on profiled (observed) latencies.
    pub profile_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionParams {
    pub beta: f64,
    pub ma_window: usize,
    pub oort_alpha: f64,
    pub oort_t: f64,
    pub credits: u32,
    /// Version window `k` for pooling losses before outlier detection.
    pub pool_window: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbscan_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbscan_min_pts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub local_steps: usize,
    pub eta: f64,
    pub batch_size: usize,
}

impl ScenarioConfig {
    pub fn mode(&self) -> AggregationMode {
        match self.aggregation.mode {
            ModeName::Pace => AggregationMode::Pace { b: self.aggregation.b },
            ModeName::Buffered => AggregationMode::Buffered { k: self.aggregation.k },
            ModeName::Sync => AggregationMode::Sync,
        }
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            policy: self.policy,
            concurrency_limit: self.concurrency,
            beta: self.selection.beta,
            ma_window: self.selection.ma_window,
            oort_alpha: self.selection.oort_alpha,
            oort_t: self.selection.oort_t,
        }
    }

    pub fn outlier_params(&self) -> OutlierParams {
        OutlierParams {
            eps: self.selection.dbscan_eps,
            min_pts: self.selection.dbscan_min_pts,
        }
    }

    pub fn lr_schedule(&self) -> Vec<f64> {
        vec![self.training.eta; self.training.local_steps]
    }

    /// Resolved config as TOML, every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serialises")
    }

    /// Baseline config for `n_clients`, equivalent to a document holding
    /// only that key.
    pub fn with_clients(n_clients: usize) -> Self {
        parse_scenario(&format!("n_clients = {n_clients}")).expect("defaults are valid")
    }

    /// Re-derives the defaults that depend on other fields (b, k, oort_t,
    /// tick) and validates. Handy after editing a config in code.
    pub fn revalidate(self) -> Result<Self> {
        parse_scenario(&self.to_toml())
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, message: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(field, message))
            }
        }
        let finite_pos = |x: f64| x > 0.0 && x.is_finite();
        check(self.n_clients >= 1, "n_clients", "must be at least 1")?;
        check(self.concurrency >= 1, "concurrency", "must be at least 1")?;
        check(
            self.horizon >= 0.0 && self.horizon.is_finite(),
            "horizon",
            "must be finite and >= 0",
        )?;
        check(finite_pos(self.tick), "tick", "must be > 0")?;
        check(self.eval_every >= 1, "eval_every", "must be at least 1")?;
        if let Some(t) = self.target_loss {
            check(t.is_finite(), "target_loss", "must be finite")?;
        }
        check(self.aggregation.b >= 1, "aggregation.b", "must be at least 1")?;
        check(self.aggregation.k >= 1, "aggregation.k", "must be at least 1")?;

        let t = &self.task;
        check(t.dim >= 1, "task.dim", "must be at least 1")?;
        let min_classes = if t.kind == TaskKind::SoftmaxClassification {
            2
        } else {
            1
        };
        check(
            t.classes >= min_classes,
            "task.classes",
            "too few classes for this task kind",
        )?;
        check(t.samples >= 1, "task.samples", "must be at least 1")?;
        check(t.holdout >= 1, "task.holdout", "must be at least 1")?;
        check(
            t.noise >= 0.0 && t.noise.is_finite(),
            "task.noise",
            "must be finite and >= 0",
        )?;
        check(
            (0.0..=1.0).contains(&t.corrupt_fraction),
            "task.corrupt_fraction",
            "must lie in [0, 1]",
        )?;

        check(
            finite_pos(self.partition.concentration),
            "partition.concentration",
            "must be > 0",
        )?;

        let l = &self.latency;
        check(finite_pos(l.zipf_a), "latency.zipf_a", "must be > 0")?;
        check(finite_pos(l.base), "latency.base", "must be > 0")?;
        check((0.0..1.0).contains(&l.jitter), "latency.jitter", "must lie in [0, 1)")?;
        check(
            (0.0..1.0).contains(&l.profile_noise),
            "latency.profile_noise",
            "must lie in [0, 1)",
        )?;

        let s = &self.selection;
        check(finite_pos(s.beta), "selection.beta", "must be > 0")?;
        check(s.ma_window >= 1, "selection.ma_window", "must be at least 1")?;
        check(
            s.oort_alpha >= 0.0 && s.oort_alpha.is_finite(),
            "selection.oort_alpha",
            "must be >= 0",
        )?;
        check(finite_pos(s.oort_t), "selection.oort_t", "must be > 0")?;
        if let Some(eps) = s.dbscan_eps {
            check(finite_pos(eps), "selection.dbscan_eps", "must be > 0")?;
        }
        if let Some(m) = s.dbscan_min_pts {
            check(m >= 1, "selection.dbscan_min_pts", "must be at least 1")?;
        }

        let tr = &self.training;
        check(tr.local_steps >= 1, "training.local_steps", "must be at least 1")?;
        check(finite_pos(tr.eta), "training.eta", "must be > 0")?;
        check(tr.batch_size >= 1, "training.batch_size", "must be at least 1")?;
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n_clients: Option<usize>,
    policy: Option<Policy>,
    seed: Option<u64>,
    concurrency: Option<usize>,
    horizon: Option<f64>,
    target_loss: Option<f64>,
    tick: Option<f64>,
    eval_every: Option<u32>,
    #[serde(default)]
    aggregation: RawAggregation,
    #[serde(default)]
    task: RawTask,
    #[serde(default)]
    partition: RawPartition,
    #[serde(default)]
    latency: RawLatency,
    #[serde(default)]
    selection: RawSelection,
    #[serde(default)]
    training: RawTraining,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAggregation {
    mode: Option<ModeName>,
    b: Option<u32>,
    k: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    kind: Option<TaskKind>,
    dim: Option<usize>,
    classes: Option<usize>,
    samples: Option<usize>,
    holdout: Option<usize>,
    noise: Option<f64>,
    corrupt_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    concentration: Option<f64>,
    volume: Option<Volume>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLatency {
    zipf_a: Option<f64>,
    base: Option<f64>,
    jitter: Option<f64>,
    profile_noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelection {
    beta: Option<f64>,
    ma_window: Option<usize>,
    oort_alpha: Option<f64>,
    oort_t: Option<f64>,
    credits: Option<u32>,
    pool_window: Option<u64>,
    dbscan_eps: Option<f64>,
    dbscan_min_pts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    local_steps: Option<usize>,
    eta: Option<f64>,
    batch_size: Option<usize>,
}

pub const DEFAULT_CONCURRENCY: usize = 20;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_ZIPF_A: f64 = 1.2;

/// Median of the noiseless Zipf latency profile `base · i^{-a}`, i = 1..=n.
fn median_zipf_latency(n: usize, a: f64, base: f64) -> f64 {
    let lats: Vec<f64> = (1..=n).map(|i| base * (i as f64).powf(-a)).collect();
    crate::selection::median(&lats)
}

/// Parses a TOML scenario and materialises every default.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            }
            None => "document".to_string(),
        };
        Error::Parse {
            location,
            message: e.message().to_string(),
        }
    })?;

    let n_clients = raw
        .n_clients
        .ok_or_else(|| Error::validation("n_clients", "is required"))?;
    let policy = raw.policy.unwrap_or(Policy::Pisces);
    let concurrency = raw.concurrency.unwrap_or(DEFAULT_CONCURRENCY);
    let default_mode = match policy {
        Policy::Pisces => ModeName::Pace,
        Policy::Oort | Policy::Random => ModeName::Sync,
    };
    let kind = raw.task.kind.unwrap_or(TaskKind::SoftmaxClassification);
    let latency = LatencyConfig {
        zipf_a: raw.latency.zipf_a.unwrap_or(DEFAULT_ZIPF_A),
        base: raw.latency.base.unwrap_or(1.0),
        jitter: raw.latency.jitter.unwrap_or(0.0),
        profile_noise: raw.latency.profile_noise.unwrap_or(0.0),
    };
    let clamp_u32 = |x: usize| u32::try_from(x).unwrap_or(u32::MAX);

    let config = ScenarioConfig {
        n_clients,
        policy,
        seed: raw.seed.unwrap_or(0),
        concurrency,
        horizon: raw.horizon.unwrap_or(50.0 * latency.base),
        target_loss: raw.target_loss,
        tick: raw.tick.unwrap_or(latency.base / 100.0),
        eval_every: raw.eval_every.unwrap_or(10),
        aggregation: AggregationConfig {
            mode: raw.aggregation.mode.unwrap_or(default_mode),
            b: raw.aggregation.b.unwrap_or(clamp_u32(concurrency)),
            k: raw
                .aggregation
                .k
                .unwrap_or_else(|| clamp_u32(((concurrency as f64) * 0.2).round().max(1.0) as usize)),
        },
        task: TaskConfig {
            kind,
            dim: raw.task.dim.unwrap_or(10),
            classes: raw.task.classes.unwrap_or(10),
            samples: raw.task.samples.unwrap_or(6000),
            holdout: raw.task.holdout.unwrap_or(1000),
            noise: raw.task.noise.unwrap_or(match kind {
                TaskKind::SoftmaxClassification => 1.0,
                TaskKind::LinearRegression => 0.0,
            }),
            corrupt_fraction: raw.task.corrupt_fraction.unwrap_or(0.0),
        },
        partition: PartitionConfig {
            concentration: raw.partition.concentration.unwrap_or(1.0),
            volume: raw.partition.volume.unwrap_or(Volume::Independent),
        },
        selection: SelectionParams {
            beta: raw.selection.beta.unwrap_or(DEFAULT_BETA),
            ma_window: raw.selection.ma_window.unwrap_or(5),
            oort_alpha: raw.selection.oort_alpha.unwrap_or(2.0),
            oort_t: raw
                .selection
                .oort_t
                .unwrap_or_else(|| median_zipf_latency(n_clients.max(1), latency.zipf_a, latency.base)),
            credits: raw.selection.credits.unwrap_or(3),
            pool_window: raw.selection.pool_window.unwrap_or(5),
            dbscan_eps: raw.selection.dbscan_eps,
            dbscan_min_pts: raw.selection.dbscan_min_pts,
        },
        training: TrainingConfig {
            local_steps: raw.training.local_steps.unwrap_or(5),
            eta: raw.training.eta.unwrap_or(0.05),
            batch_size: raw.training.batch_size.unwrap_or(32),
        },
        latency,
    };
    config.validate()?;
    Ok(config)
}
