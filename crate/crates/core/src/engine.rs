//! Discrete-event simulation of the coordinator control loop.
//!
//! Time advances in fixed ticks of `config.tick`. At tick `k` (time `k·Δ`):
//!
//! 1. every client whose report time is `≤ k·Δ` is delivered, in
//!    `(report_time, client)` order;
//! 2. the aggregation controller is consulted and, when it fires on a
//!    non-empty buffer, the buffer is folded into the global model and the
//!    contributors' losses are screened for outliers;
//! 3. the hold-out set is evaluated every `eval_every` ticks and termination
//!    is checked;
//! 4. idle quota is filled by the selection policy. Selected clients train
//!    on the post-aggregation model and report after their latency.
//!
//! Local training is a pure function of (model, data, stream), so it is
//! computed eagerly at selection time and its result is held until the
//! report is delivered.

use std::cmp::Reverse;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;

use crate::aggregation::{
    apply_aggregation, buffered_decision, pace_decision, sync_decision, AggregationMode, LocalUpdate,
};
use crate::config::{ModeName, ScenarioConfig, Volume};
use crate::error::{Error, Result};
use crate::events::{sort_log, EventKind, SimEvent};
use crate::numeric::{ModelVector, RngStream};
use crate::selection::{loss_outliers, select_oort, select_pisces, select_random, ClientId, ClientProfile, Policy};
use crate::tasks::{
    dirichlet_partition_weighted, flip_labels, local_sgd, loss_statistic, Dataset, PartitionSpec, TaskGenerator,
    TrainResult,
};

/// True end-to-end latency per client: a random permutation of Zipf ranks,
/// rank `i` taking `base · i^{-a}` (rank 1 is the slowest, at exactly `base`).
pub fn assign_zipf_latencies(n: usize, a: f64, base_latency: f64, rng: &RngStream) -> Result<Vec<f64>> {
    if n == 0 || !(a > 0.0 && a.is_finite()) || !(base_latency > 0.0 && base_latency.is_finite()) {
        return Err(Error::InvalidParams(format!("n={n}, a={a}, base={base_latency}")));
    }
    let mut ranks: Vec<usize> = (1..=n).collect();
    let mut r = rng.rng();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        ranks.swap(i, j);
    }
    Ok(ranks
        .into_iter()
        .map(|rank| base_latency * (rank as f64).powf(-a))
        .collect())
}

/// Records one observed latency; the profiled latency becomes the history mean.
pub fn observe_latency(profile: &mut ClientProfile, observed: f64) -> Result<()> {
    if !(observed > 0.0 && observed.is_finite()) {
        return Err(Error::NonPositiveLatency(observed));
    }
    profile.latency_history.push(observed);
    Ok(())
}

/// Mean loss of `model` on the hold-out set.
pub fn evaluate(model: &ModelVector, holdout: &Dataset) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    if model.dim() != holdout.model_dim() {
        return Err(Error::DimensionMismatch {
            expected: holdout.model_dim(),
            found: model.dim(),
        });
    }
    Ok(holdout.mean_loss(model.weights()))
}

#[derive(Debug, Clone)]
struct InFlight {
    start_time: f64,
    base_version: u64,
    latency: f64,
    report_time: f64,
    result: TrainResult,
}

#[derive(Debug, Clone, Copy)]
struct PooledLoss {
    seq: u64,
    loss: f64,
}

/// Per-client state the coordinator cannot see.
#[derive(Debug, Clone)]
pub struct ClientWorld {
    pub data: Dataset,
    pub true_latency: f64,
    pub corrupted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Stop,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<SimEvent>,
    pub model: ModelVector,
    pub diverged: bool,
    pub clients: Vec<ClientWorld>,
    pub profiles: Vec<ClientProfile>,
}

impl RunOutput {
    pub fn corrupted_clients(&self) -> Vec<ClientId> {
        (0..self.clients.len() as ClientId)
            .filter(|&i| self.clients[i as usize].corrupted)
            .collect()
    }
}

/// Generated data, latencies and partition shared by a run and a partition export.
struct WorldSetup {
    pool: Dataset,
    holdout: Dataset,
    latencies: Vec<f64>,
    parts: Vec<Vec<usize>>,
}

impl WorldSetup {
    fn build(config: &ScenarioConfig, root: &RngStream) -> Result<Self> {
        let t = &config.task;
        let generator = TaskGenerator::new(t.kind, t.classes, t.dim, t.noise, &root.derive("task"))?;
        let pool = generator.sample(t.samples, &root.derive("task/train"))?;
        let holdout = generator.sample(t.holdout, &root.derive("task/holdout"))?;
        let n = config.n_clients;
        let latencies = assign_zipf_latencies(n, config.latency.zipf_a, config.latency.base, &root.derive("latency"))?;
        let spec = PartitionSpec {
            n_clients: n,
            concentration: vec![config.partition.concentration; t.classes],
            rng: root.derive("partition"),
        };
        let volume = match config.partition.volume {
            Volume::Independent => None,
            Volume::LatencyProportional => Some(latencies.as_slice()),
        };
        let parts = dirichlet_partition_weighted(&pool.labels(), &spec, volume)?;
        Ok(Self {
            pool,
            holdout,
            latencies,
            parts,
        })
    }
}

/// The sample-to-client assignment a run of `config` would use, with the
/// generated (unflipped) label of every training sample.
pub fn scenario_partition(config: &ScenarioConfig) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    config.validate()?;
    let setup = WorldSetup::build(config, &RngStream::root(config.seed))?;
    Ok((setup.parts, setup.pool.labels()))
}

pub struct Simulation {
    config: ScenarioConfig,
    root: RngStream,
    clients: Vec<ClientWorld>,
    profiles: Vec<ClientProfile>,
    holdout: Dataset,
    schedule: Vec<f64>,
    model: ModelVector,
    buffer: Vec<(u64, LocalUpdate)>,
    in_flight: BTreeMap<ClientId, InFlight>,
    /// Min-heap of `(due tick, report time bits, client)`.
    pending: BinaryHeap<Reverse<(u64, u64, ClientId)>>,
    involvements: Vec<u64>,
    last_aggregation: f64,
    loss_pool: BTreeMap<u64, Vec<PooledLoss>>,
    next_seq: u64,
    log: Vec<SimEvent>,
    last_eval: Option<f64>,
    diverged: bool,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::root(config.seed);
        let setup = WorldSetup::build(&config, &root)?;
        let (pool, holdout, latencies, parts) = (setup.pool, setup.holdout, setup.latencies, setup.parts);
        let t = &config.task;
        let n = config.n_clients;

        let n_corrupt = (t.corrupt_fraction * n as f64).round() as usize;
        let corrupted = {
            let mut ids: Vec<usize> = (0..n).collect();
            let mut r = root.derive("corruption").rng();
            for i in (1..n).rev() {
                let j = r.random_range(0..=i);
                ids.swap(i, j);
            }
            let mut flags = vec![false; n];
            for &i in &ids[..n_corrupt] {
                flags[i] = true;
            }
            flags
        };

        let mut noise_rng = root.derive("profile-noise/prior").rng();
        let mut clients = Vec::with_capacity(n);
        let mut profiles = Vec::with_capacity(n);
        for (i, members) in parts.iter().enumerate() {
            let mut data = pool.subset(members);
            if corrupted[i] {
                flip_labels(&mut data, &root.derive(&format!("corruption/client:{i}")));
            }
            let prior = latencies[i] * profile_noise(&mut noise_rng, config.latency.profile_noise);
            profiles.push(ClientProfile::new(
                i as ClientId,
                data.len(),
                prior,
                config.selection.credits,
            ));
            clients.push(ClientWorld {
                data,
                true_latency: latencies[i],
                corrupted: corrupted[i],
            });
        }

        let model = ModelVector::zeros(pool.model_dim());
        let mode = config.mode();
        let init = SimEvent::new(
            0.0,
            EventKind::Init {
                tick: config.tick,
                mode: mode.name().to_string(),
                b: match mode {
                    AggregationMode::Pace { b } => Some(b),
                    _ => None,
                },
                k: match mode {
                    AggregationMode::Buffered { k } => Some(k),
                    _ => None,
                },
                concurrency: config.concurrency as u64,
                n_clients: n as u64,
                seed: config.seed,
                horizon: config.horizon,
            },
        );
        Ok(Self {
            schedule: config.lr_schedule(),
            root,
            clients,
            profiles,
            holdout,
            model,
            buffer: Vec::new(),
            in_flight: BTreeMap::new(),
            pending: BinaryHeap::new(),
            involvements: vec![0; n],
            last_aggregation: 0.0,
            loss_pool: BTreeMap::new(),
            next_seq: 0,
            log: vec![init],
            last_eval: None,
            diverged: false,
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }

    pub fn profiles(&self) -> &[ClientProfile] {
        &self.profiles
    }

    pub fn clients(&self) -> &[ClientWorld] {
        &self.clients
    }

    pub fn holdout(&self) -> &Dataset {
        &self.holdout
    }

    pub fn log(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn running(&self) -> usize {
        self.in_flight.len()
    }

    pub fn tick_time(&self, tick: u64) -> f64 {
        tick as f64 * self.config.tick
    }

    /// Index of the last tick not beyond the horizon.
    pub fn last_tick(&self) -> u64 {
        let mut k = (self.config.horizon / self.config.tick).floor() as u64;
        while self.tick_time(k + 1) <= self.config.horizon {
            k += 1;
        }
        while k > 0 && self.tick_time(k) > self.config.horizon {
            k -= 1;
        }
        k
    }

    /// First tick whose time is at or after `t`.
    fn due_tick(&self, t: f64) -> u64 {
        let mut k = (t / self.config.tick).ceil().max(0.0) as u64;
        while self.tick_time(k) < t {
            k += 1;
        }
        while k > 0 && self.tick_time(k - 1) >= t {
            k -= 1;
        }
        k
    }

    /// Delivers reports due by tick `k`.
    pub fn deliver(&mut self, k: u64) -> Result<StepOutcome> {
        while let Some(&Reverse((due, _, client))) = self.pending.peek() {
            if due > k {
                break;
            }
            self.pending.pop();
            let flight = self
                .in_flight
                .remove(&client)
                .expect("every pending report has an in-flight record");
            let (aggregate_rms, mean_loss) = loss_statistic(&flight.result)?;
            let profile = &mut self.profiles[client as usize];
            profile.busy = false;
            let mut r = self
                .root
                .derive(&format!(
                    "profile-noise/client:{client}/obs:{}",
                    profile.latency_history.len()
                ))
                .rng();
            let observed = flight.latency * profile_noise(&mut r, self.config.latency.profile_noise);
            observe_latency(profile, observed)?;
            self.log.push(SimEvent::new(
                flight.report_time,
                EventKind::UpdateReported {
                    client,
                    base_version: flight.base_version,
                    start_time: flight.start_time,
                    latency: flight.latency,
                    mean_loss,
                    sample_count: flight.result.sample_count as u64,
                },
            ));
            if !(aggregate_rms.is_finite() && mean_loss.is_finite())
                || flight.result.delta.iter().any(|d| !d.is_finite())
            {
                return Ok(self.abort(self.tick_time(k)));
            }
            profile.last_aggregate_rms = Some(aggregate_rms);
            let seq = self.next_seq;
            self.next_seq += 1;
            self.loss_pool
                .entry(flight.base_version)
                .or_default()
                .push(PooledLoss { seq, loss: mean_loss });
            self.buffer.push((
                seq,
                LocalUpdate {
                    client_id: client,
                    base_version: flight.base_version,
                    delta: flight.result.delta,
                    sample_count: flight.result.sample_count,
                    mean_loss,
                    report_time: flight.report_time,
                },
            ));
        }
        Ok(StepOutcome::Continue)
    }

    fn abort(&mut self, now: f64) -> StepOutcome {
        self.diverged = true;
        self.log.push(SimEvent::new(
            now,
            EventKind::Diverged {
                version: self.model.version(),
            },
        ));
        StepOutcome::Stop
    }

    /// Aggregation step of the control loop; `Some(interval)` when paced.
    fn aggregation_due(&self, now: f64) -> Result<Option<Option<f64>>> {
        Ok(match self.config.mode() {
            AggregationMode::Pace { b } => {
                let running: Vec<f64> = self
                    .in_flight
                    .keys()
                    .map(|&c| self.profiles[c as usize].profiled_latency())
                    .collect();
                let (fire, interval) = pace_decision(&running, b, self.last_aggregation, now)?;
                (fire && !self.buffer.is_empty()).then_some(Some(interval))
            }
            AggregationMode::Buffered { k } => buffered_decision(self.buffer.len(), k)?.then_some(None),
            AggregationMode::Sync => sync_decision(self.in_flight.len(), self.buffer.len()).then_some(None),
        })
    }

    fn aggregate(&mut self, now: f64, interval: Option<f64>) -> Result<StepOutcome> {
        let buffer = std::mem::take(&mut self.buffer);
        let updates: Vec<LocalUpdate> = buffer.iter().map(|(_, u)| u.clone()).collect();
        let (model, mut event) = match apply_aggregation(&self.model, &updates, now) {
            Ok(ok) => ok,
            Err(Error::NonFiniteModel { .. }) => return Ok(self.abort(now)),
            Err(e) => return Err(e),
        };
        event.interval = interval;
        self.model = model;
        self.last_aggregation = now;
        for (&client, &tau) in event.contributors.iter().zip(&event.staleness) {
            self.profiles[client as usize].staleness_history.push(tau);
        }
        self.log.push(SimEvent::new(
            now,
            EventKind::Aggregated {
                version: event.new_version,
                interval: event.interval,
                contributors: event.contributors,
                staleness: event.staleness,
            },
        ));
        if self.config.policy == Policy::Pisces {
            self.screen_losses(now, &buffer)?;
        }
        Ok(StepOutcome::Continue)
    }

    /// For each contributor, pools every received loss whose base version is
    /// within `pool_window` versions below its own and takes a credit when
    /// DBSCAN marks it an outlier.
    fn screen_losses(&mut self, now: f64, contributions: &[(u64, LocalUpdate)]) -> Result<()> {
        let params = self.config.outlier_params();
        let window = self.config.selection.pool_window;
        let mut newly = Vec::new();
        // Contributors sharing a base version share a pool.
        let mut verdicts: BTreeMap<u64, BTreeMap<u64, bool>> = BTreeMap::new();
        for (seq, update) in contributions {
            let client = update.client_id;
            if self.profiles[client as usize].blacklisted {
                continue;
            }
            let verdict = match verdicts.entry(update.base_version) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let lo = update.base_version.saturating_sub(window);
                    let pooled: Vec<PooledLoss> = self
                        .loss_pool
                        .range(lo..=update.base_version)
                        .flat_map(|(_, v)| v.iter().copied())
                        .collect();
                    let values: Vec<f64> = pooled.iter().map(|p| p.loss).collect();
                    let flags = loss_outliers(&values, &params)?;
                    e.insert(pooled.iter().zip(flags).map(|(p, f)| (p.seq, f)).collect())
                }
            };
            let outlier = verdict.get(seq).copied().unwrap_or(false);
            if outlier && self.profiles[client as usize].deduct_credit() {
                newly.push(client);
            }
        }
        newly.sort_unstable();
        for client in newly {
            self.log.push(SimEvent::new(now, EventKind::Blacklisted { client }));
        }
        Ok(())
    }

    fn quota(&self) -> usize {
        let c = self.config.concurrency;
        match self.config.aggregation.mode {
            ModeName::Sync => {
                if self.in_flight.is_empty() && self.buffer.is_empty() {
                    c
                } else {
                    0
                }
            }
            _ => c.saturating_sub(self.in_flight.len()),
        }
    }

    fn select(&mut self, k: u64, quota: usize) -> Result<Vec<ClientId>> {
        let cfg = self.config.selection_config();
        let mut r = self.root.derive(&format!("select/tick:{k}")).rng();
        let mut chosen = match self.config.policy {
            Policy::Pisces => select_pisces(&self.profiles, &cfg, quota)?,
            Policy::Oort => select_oort(&self.profiles, &cfg, quota, &mut r)?,
            Policy::Random => select_random(&self.profiles, quota, &mut r),
        };
        chosen.sort_unstable();
        Ok(chosen)
    }

    fn start_training(&mut self, client: ClientId, now: f64) -> Result<()> {
        let i = client as usize;
        let round = self.involvements[i];
        self.involvements[i] += 1;
        let stream = self.root.derive(&format!("client:{client}/round:{round}"));
        let result = local_sgd(
            &self.model,
            &self.clients[i].data,
            &self.schedule,
            self.config.training.batch_size,
            &stream.derive("sgd"),
        )?;
        let jitter = self.config.latency.jitter;
        let factor = if jitter > 0.0 {
            1.0 + stream.derive("jitter").rng().random_range(-jitter..=jitter)
        } else {
            1.0
        };
        let latency = self.clients[i].true_latency * factor;
        let report_time = now + latency;
        let due = self.due_tick(report_time);
        self.profiles[i].busy = true;
        self.pending.push(Reverse((due, report_time.to_bits(), client)));
        self.in_flight.insert(
            client,
            InFlight {
                start_time: now,
                base_version: self.model.version(),
                latency,
                report_time,
                result,
            },
        );
        self.log.push(SimEvent::new(
            now,
            EventKind::Selected {
                client,
                base_version: self.model.version(),
            },
        ));
        Ok(())
    }

    /// One pass of the control loop at tick `k`, after report delivery.
    pub fn control_step(&mut self, k: u64) -> Result<StepOutcome> {
        let now = self.tick_time(k);
        if let Some(interval) = self.aggregation_due(now)? {
            if self.aggregate(now, interval)? == StepOutcome::Stop {
                return Ok(StepOutcome::Stop);
            }
        }

        if k.is_multiple_of(self.config.eval_every as u64) {
            let loss = evaluate(&self.model, &self.holdout)?;
            self.log.push(SimEvent::new(
                now,
                EventKind::LossEvaluated {
                    loss,
                    version: self.model.version(),
                },
            ));
            self.last_eval = Some(loss);
        }
        let reached = matches!((self.config.target_loss, self.last_eval), (Some(t), Some(l)) if l <= t);
        if reached || k >= self.last_tick() {
            return Ok(StepOutcome::Stop);
        }

        let quota = self.quota();
        if quota > 0 {
            for client in self.select(k, quota)? {
                self.start_training(client, now)?;
            }
        }
        Ok(StepOutcome::Continue)
    }

    pub fn run(mut self) -> Result<RunOutput> {
        if self.config.horizon > 0.0 {
            let mut k = 0;
            loop {
                if self.deliver(k)? == StepOutcome::Stop || self.control_step(k)? == StepOutcome::Stop {
                    break;
                }
                k += 1;
            }
        }
        sort_log(&mut self.log);
        Ok(RunOutput {
            log: self.log,
            model: self.model,
            diverged: self.diverged,
            clients: self.clients,
            profiles: self.profiles,
        })
    }
}

fn profile_noise<R: Rng + ?Sized>(r: &mut R, width: f64) -> f64 {
    if width > 0.0 {
        1.0 + r.random_range(-width..=width)
    } else {
        1.0
    }
}

/// Builds and runs a scenario.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput> {
    Simulation::new(config.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_scenario;
    use crate::events::encode_log;

    fn count(log: &[SimEvent], name: &str) -> usize {
        log.iter().filter(|e| e.kind.name() == name).count()
    }

    #[test]
    fn zipf_latencies() {
        let one = assign_zipf_latencies(1, 1.2, 3.0, &RngStream::root(0)).unwrap();
        assert_eq!(one, vec![3.0]);
        let mut three = assign_zipf_latencies(3, 1.2, 1.0, &RngStream::root(1)).unwrap();
        three.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in three.iter().zip([1.0, 0.43527528164806206, 0.2675805205867436]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let spread = |a: f64| {
            let l = assign_zipf_latencies(20, a, 1.0, &RngStream::root(2)).unwrap();
            l.iter().cloned().fold(0.0, f64::max) / l.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(spread(2.0) > spread(1.2));
        assert!(assign_zipf_latencies(0, 1.2, 1.0, &RngStream::root(0)).is_err());
        assert!(assign_zipf_latencies(3, 0.0, 1.0, &RngStream::root(0)).is_err());
    }

    #[test]
    fn observe_latency_examples() {
        let mut p = ClientProfile::new(0, 1, 9.0, 3);
        observe_latency(&mut p, 4.0).unwrap();
        assert_eq!(p.profiled_latency(), 4.0);
        let mut q = ClientProfile::new(0, 1, 9.0, 3);
        for x in [2.0, 4.0, 6.0] {
            observe_latency(&mut q, x).unwrap();
        }
        assert_eq!(q.profiled_latency(), 4.0);
        let mut r = ClientProfile::new(0, 1, 9.0, 3);
        for x in [6.0, 2.0, 4.0] {
            observe_latency(&mut r, x).unwrap();
        }
        assert_eq!(r.profiled_latency(), q.profiled_latency());
        assert_eq!(observe_latency(&mut p, 0.0), Err(Error::NonPositiveLatency(0.0)));
    }

    #[test]
    fn evaluate_examples() {
        let task = crate::tasks::make_synthetic_task(
            crate::tasks::TaskKind::LinearRegression,
            3,
            4,
            200,
            0.0,
            &RngStream::root(5),
        )
        .unwrap();
        let at_truth = ModelVector::new(task.truth.clone(), 0).unwrap();
        assert!(evaluate(&at_truth, &task.dataset).unwrap() < 1e-20);
        let zero = ModelVector::zeros(4);
        let second_moment = task.dataset.samples.iter().map(|s| s.target * s.target).sum::<f64>() / 200.0;
        assert!((evaluate(&zero, &task.dataset).unwrap() - second_moment).abs() < 1e-9 * second_moment);
        assert_eq!(evaluate(&zero, &task.dataset.subset(&[])), Err(Error::EmptyHoldout));
    }

    fn single_client_sync() -> ScenarioConfig {
        parse_scenario(
            "n_clients = 1\npolicy = \"random\"\nhorizon = 10.0\ntick = 0.0625\n\
             [aggregation]\nmode = \"sync\"\n[task]\nkind = \"linear_regression\"\nsamples = 50\nholdout = 20",
        )
        .unwrap()
    }

    #[test]
    fn single_client_sync_runs_one_round_per_latency() {
        let out = run_scenario(&single_client_sync()).unwrap();
        let aggs: Vec<_> = out
            .log
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Aggregated { contributors, .. } => Some((e.time, contributors.len())),
                _ => None,
            })
            .collect();
        assert_eq!(aggs.len(), 10);
        for (i, (t, n)) in aggs.iter().enumerate() {
            assert_eq!(*t, (i + 1) as f64);
            assert_eq!(*n, 1);
        }
        assert_eq!(out.model.version(), 10);
    }

    #[test]
    fn concurrency_caps_first_selection() {
        let cfg = parse_scenario("n_clients = 5\nconcurrency = 2\nhorizon = 0.5\n[task]\nsamples = 500").unwrap();
        let out = run_scenario(&cfg).unwrap();
        let at_zero = out
            .log
            .iter()
            .filter(|e| e.time == 0.0 && e.kind.name() == "selected")
            .count();
        assert_eq!(at_zero, 2);
    }

    #[test]
    fn zero_horizon_only_initialises() {
        let cfg = parse_scenario("n_clients = 4\nhorizon = 0.0").unwrap();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].kind.name(), "init");
        assert_eq!(out.model.version(), 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = parse_scenario("n_clients = 15\nconcurrency = 5\nhorizon = 5.0\nseed = 3\n[latency]\njitter = 0.1")
            .unwrap();
        let a = encode_log(&run_scenario(&cfg).unwrap().log);
        let b = encode_log(&run_scenario(&cfg).unwrap().log);
        assert_eq!(a, b);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let cfg = parse_scenario(
            "n_clients = 4\nconcurrency = 4\nhorizon = 20.0\n[training]\neta = 1e6\n[task]\nkind = \"linear_regression\"",
        )
        .unwrap();
        let out = run_scenario(&cfg).unwrap();
        assert!(out.diverged);
        assert_eq!(out.log.last().unwrap().kind.name(), "diverged");
    }

    #[test]
    fn running_clients_never_exceed_concurrency() {
        let cfg = parse_scenario(
            "n_clients = 30\nconcurrency = 6\nhorizon = 8.0\nseed = 9\n[aggregation]\nmode = \"buffered\"\nk = 2",
        )
        .unwrap();
        let out = run_scenario(&cfg).unwrap();
        let mut running: i64 = 0;
        let mut busy = std::collections::BTreeSet::new();
        for e in &out.log {
            match &e.kind {
                EventKind::Selected { client, .. } => {
                    assert!(busy.insert(*client), "client {client} selected while busy");
                    running += 1;
                    assert!(running <= 6);
                }
                EventKind::UpdateReported { client, .. } => {
                    assert!(busy.remove(client), "report from {client} without selection");
                    running -= 1;
                }
                _ => {}
            }
        }
        assert!(count(&out.log, "aggregated") > 0);
    }
}
