//! Synthetic learning tasks, label-skewed partitioning and the local trainer.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, ModelVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Squared-error regression, `loss = (w·x − y)²`.
    LinearRegression,
    /// Multinomial logistic regression with a per-class bias.
    SoftmaxClassification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Class id. For regression this is the latent cluster the features
    /// were drawn from, which is what the partitioner skews on.
    pub class: usize,
    /// Regression target; unused for classification.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: TaskKind,
    pub n_classes: usize,
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn model_dim(&self) -> usize {
        model_dim(self.kind, self.dim, self.n_classes)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            kind: self.kind,
            n_classes: self.n_classes,
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        match self.kind {
            TaskKind::LinearRegression => {
                let r = dot(w, &s.features) - s.target;
                r * r
            }
            TaskKind::SoftmaxClassification => {
                let mut logits = vec![0.0; self.n_classes];
                self.softmax_loss(w, s, &mut logits)
            }
        }
    }

    fn softmax_loss(&self, w: &[f64], s: &Sample, logits: &mut [f64]) -> f64 {
        self.logits_into(w, &s.features, logits);
        log_sum_exp(logits) - logits[s.class]
    }

    pub fn per_sample_losses(&self, w: &[f64]) -> Vec<f64> {
        match self.kind {
            TaskKind::LinearRegression => self.samples.iter().map(|s| self.sample_loss(w, s)).collect(),
            TaskKind::SoftmaxClassification => {
                let mut logits = vec![0.0; self.n_classes];
                self.samples
                    .iter()
                    .map(|s| self.softmax_loss(w, s, &mut logits))
                    .collect()
            }
        }
    }

    pub fn mean_loss(&self, w: &[f64]) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.per_sample_losses(w).iter().sum::<f64>() / self.len() as f64
    }

    /// Mean gradient over the given sample indices.
    pub fn gradient(&self, w: &[f64], indices: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        let mut logits = vec![0.0; self.n_classes];
        for &i in indices {
            let s = &self.samples[i];
            match self.kind {
                TaskKind::LinearRegression => {
                    let r = 2.0 * (dot(w, &s.features) - s.target);
                    for (gk, xk) in g.iter_mut().zip(&s.features) {
                        *gk += r * xk;
                    }
                }
                TaskKind::SoftmaxClassification => {
                    self.logits_into(w, &s.features, &mut logits);
                    let lse = log_sum_exp(&logits);
                    let stride = self.dim + 1;
                    for (c, z) in logits.iter().enumerate() {
                        let coeff = (z - lse).exp() - if c == s.class { 1.0 } else { 0.0 };
                        let row = &mut g[c * stride..(c + 1) * stride];
                        for (gk, xk) in row.iter_mut().zip(&s.features) {
                            *gk += coeff * xk;
                        }
                        row[self.dim] += coeff;
                    }
                }
            }
        }
        let n = indices.len().max(1) as f64;
        for gk in &mut g {
            *gk /= n;
        }
        g
    }

    pub fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gradient(w, &all)
    }

    fn logits_into(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 1;
        for (c, z) in out.iter_mut().enumerate() {
            let row = &w[c * stride..(c + 1) * stride];
            *z = dot(&row[..self.dim], x) + row[self.dim];
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn model_dim(kind: TaskKind, dim: usize, n_classes: usize) -> usize {
    match kind {
        TaskKind::LinearRegression => dim,
        TaskKind::SoftmaxClassification => n_classes * (dim + 1),
    }
}

/// Generating parameters of a synthetic task; draws any number of samples
/// from the same distribution (training pool, hold-out set).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGenerator {
    pub kind: TaskKind,
    pub n_classes: usize,
    pub dim: usize,
    pub noise: f64,
    /// Row-major `n_classes × dim` cluster centres.
    pub class_means: Vec<f64>,
    /// Regression generating weights `w*`; empty for classification.
    pub generating_weights: Vec<f64>,
}

const CLASS_SPREAD: f64 = 2.0;

impl TaskGenerator {
    pub fn new(kind: TaskKind, n_classes: usize, dim: usize, noise: f64, rng: &RngStream) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::InvalidShape(format!("dim={dim}, classes={n_classes}")));
        }
        if kind == TaskKind::SoftmaxClassification && n_classes < 2 {
            return Err(Error::InvalidShape("classification needs at least 2 classes".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidShape(format!(
                "noise must be finite and >= 0, got {noise}"
            )));
        }
        let mut r = rng.derive("params").rng();
        let class_means = (0..n_classes * dim).map(|_| CLASS_SPREAD * normal(&mut r)).collect();
        let generating_weights = match kind {
            TaskKind::LinearRegression => (0..dim).map(|_| normal(&mut r)).collect(),
            TaskKind::SoftmaxClassification => Vec::new(),
        };
        Ok(Self {
            kind,
            n_classes,
            dim,
            noise,
            class_means,
            generating_weights,
        })
    }

    pub fn sample(&self, n_samples: usize, rng: &RngStream) -> Result<Dataset> {
        if n_samples == 0 {
            return Err(Error::InvalidShape("n_samples must be at least 1".into()));
        }
        let mut r = rng.rng();
        let samples = (0..n_samples)
            .map(|_| {
                let class = r.random_range(0..self.n_classes);
                let mean = &self.class_means[class * self.dim..(class + 1) * self.dim];
                let feature_scale = match self.kind {
                    TaskKind::LinearRegression => 1.0,
                    TaskKind::SoftmaxClassification => self.noise,
                };
                let features: Vec<f64> = mean.iter().map(|m| m + feature_scale * normal(&mut r)).collect();
                let target = match self.kind {
                    TaskKind::LinearRegression => {
                        dot(&self.generating_weights, &features) + self.noise * normal(&mut r)
                    }
                    TaskKind::SoftmaxClassification => 0.0,
                };
                Sample {
                    features,
                    class,
                    target,
                }
            })
            .collect();
        Ok(Dataset {
            kind: self.kind,
            n_classes: self.n_classes,
            dim: self.dim,
            samples,
        })
    }
}

fn normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub dataset: Dataset,
    /// `w*` for regression, the flattened class means for classification.
    pub truth: Vec<f64>,
    pub generator: TaskGenerator,
}

/// Builds a task and draws `n_samples` from it.
///
/// For classification `noise` is the within-class feature standard
/// deviation; for regression it is the target noise standard deviation.
pub fn make_synthetic_task(
    kind: TaskKind,
    n_classes: usize,
    dim: usize,
    n_samples: usize,
    noise: f64,
    rng: &RngStream,
) -> Result<SyntheticTask> {
    let generator = TaskGenerator::new(kind, n_classes, dim, noise, rng)?;
    let dataset = generator.sample(n_samples, &rng.derive("samples"))?;
    let truth = match kind {
        TaskKind::LinearRegression => generator.generating_weights.clone(),
        TaskKind::SoftmaxClassification => generator.class_means.clone(),
    };
    Ok(SyntheticTask {
        dataset,
        truth,
        generator,
    })
}

/// Closed-form least-squares weights via the normal equations.
pub fn least_squares(data: &Dataset) -> Result<Vec<f64>> {
    if data.kind != TaskKind::LinearRegression {
        return Err(Error::InvalidShape("least squares needs a regression task".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = DMatrix::from_fn(data.len(), data.dim, |i, j| data.samples[i].features[j]);
    let y = DVector::from_iterator(data.len(), data.samples.iter().map(|s| s.target));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let solution = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .svd(true, true)
            .solve(&xty, 1e-12)
            .map_err(|e| Error::InvalidShape(e.to_string()))?,
    };
    Ok(solution.iter().copied().collect())
}

/// Replaces every label: classes move to a uniformly random *other* class,
/// regression targets are negated.
pub fn flip_labels(data: &mut Dataset, rng: &RngStream) {
    let mut r = rng.rng();
    for s in &mut data.samples {
        match data.kind {
            TaskKind::SoftmaxClassification => {
                let shift = r.random_range(1..data.n_classes);
                s.class = (s.class + shift) % data.n_classes;
            }
            TaskKind::LinearRegression => s.target = -s.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub n_clients: usize,
    /// Symmetric Dirichlet parameter used for each class's client split.
    pub concentration: Vec<f64>,
    pub rng: RngStream,
}

/// Splits samples across clients: for every class, client shares are a
/// symmetric Dirichlet draw with that class's concentration.
///
/// Returns one ascending index list per client.
pub fn dirichlet_partition(labels: &[usize], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    dirichlet_partition_weighted(labels, spec, None)
}

/// Like [`dirichlet_partition`], but the per-class Dirichlet is asymmetric:
/// client `i` gets parameter `α · n · volume[i] / Σ volume`. Expected client
/// sizes scale with `volume`, and low-volume clients also get more
/// unbalanced label mixes.
pub fn dirichlet_partition_weighted(
    labels: &[usize],
    spec: &PartitionSpec,
    volume: Option<&[f64]>,
) -> Result<Vec<Vec<usize>>> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if spec.n_clients == 0 {
        return Err(Error::InvalidShape("n_clients must be at least 1".into()));
    }
    let n_classes = spec.concentration.len();
    if let Some(bad) = spec.concentration.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConcentration(format!(
            "entries must be positive, got {bad}"
        )));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidConcentration(format!(
            "label {c} outside the {n_classes} classes covered by the concentration vector"
        )));
    }
    if let Some(v) = volume {
        if v.len() != spec.n_clients || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidParams(
                "volume weights must be positive, one per client".into(),
            ));
        }
    }

    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for (class, &alpha) in spec.concentration.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut r = spec.rng.derive(&format!("class:{class}")).rng();
        shuffle(&mut members, &mut r);
        let params: Vec<f64> = match volume {
            None => vec![alpha; spec.n_clients],
            Some(v) => {
                let total: f64 = v.iter().sum();
                v.iter().map(|w| alpha * spec.n_clients as f64 * w / total).collect()
            }
        };
        let shares = dirichlet_draw(&params, &mut r);
        let size = members.len();
        let mut cumulative = 0.0;
        let mut start = 0usize;
        for (client, share) in shares.iter().enumerate() {
            cumulative += share;
            let end = if client + 1 == spec.n_clients {
                size
            } else {
                ((cumulative * size as f64).round() as usize).clamp(start, size)
            };
            clients[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(clients)
}

fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], r: &mut R) {
    // Fisher-Yates, spelled out so the draw sequence is pinned by this crate.
    for i in (1..items.len()).rev() {
        let j = r.random_range(0..=i);
        items.swap(i, j);
    }
}

fn dirichlet_draw<R: Rng + ?Sized>(params: &[f64], r: &mut R) -> Vec<f64> {
    let n = params.len();
    let mut draws: Vec<f64> = params
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("parameters validated positive").sample(r))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        for d in &mut draws {
            *d /= total;
        }
    } else {
        // Every gamma draw underflowed (tiny alpha): all mass on one client.
        let winner = r.random_range(0..n);
        draws = (0..n).map(|i| if i == winner { 1.0 } else { 0.0 }).collect();
    }
    draws
}

/// Writes `sample_id,client_id,label` rows ordered by sample id.
pub fn write_partition_csv<W: Write>(out: &mut W, partition: &[Vec<usize>], labels: &[usize]) -> std::io::Result<()> {
    let mut owner = vec![usize::MAX; labels.len()];
    for (client, members) in partition.iter().enumerate() {
        for &i in members {
            owner[i] = client;
        }
    }
    writeln!(out, "sample_id,client_id,label")?;
    for (i, (client, label)) in owner.iter().zip(labels).enumerate() {
        writeln!(out, "{i},{client},{label}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub delta: Vec<f64>,
    /// Losses of every local sample at the received base model.
    pub per_sample_losses: Vec<f64>,
    pub sample_count: usize,
    pub q_steps: usize,
}

/// Runs `schedule.len()` mini-batch SGD steps from `base`.
///
/// Per-sample losses are measured once, at `base`, before any step is taken.
pub fn local_sgd(
    base: &ModelVector,
    data: &Dataset,
    schedule: &[f64],
    batch_size: usize,
    rng: &RngStream,
) -> Result<TrainResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if schedule.is_empty() {
        return Err(Error::InvalidParams("at least one local step is required".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParams("batch_size must be at least 1".into()));
    }
    if let Some((step, &value)) = schedule.iter().enumerate().find(|(_, e)| !(**e > 0.0)) {
        return Err(Error::NonPositiveLearningRate { step, value });
    }
    if base.dim() != data.model_dim() {
        return Err(Error::DimensionMismatch {
            expected: data.model_dim(),
            found: base.dim(),
        });
    }

    let per_sample_losses = data.per_sample_losses(base.weights());
    let mut w = base.weights().to_vec();
    let mut r = rng.rng();
    let full: Vec<usize> = (0..data.len()).collect();
    for &eta in schedule {
        let grad = if batch_size >= data.len() {
            data.gradient(&w, &full)
        } else {
            let mut batch = index::sample(&mut r, data.len(), batch_size).into_vec();
            batch.sort_unstable();
            data.gradient(&w, &batch)
        };
        for (wk, gk) in w.iter_mut().zip(&grad) {
            *wk -= eta * gk;
        }
    }
    let delta = w.iter().zip(base.weights()).map(|(a, b)| a - b).collect();
    Ok(TrainResult {
        delta,
        per_sample_losses,
        sample_count: data.len(),
        q_steps: schedule.len(),
    })
}

/// `(|B|·sqrt(mean(loss²)), mean(loss))` over the measured losses.
pub fn loss_statistic(result: &TrainResult) -> Result<(f64, f64)> {
    loss_statistic_of(&result.per_sample_losses)
}

pub fn loss_statistic_of(losses: &[f64]) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::EmptyLossSet);
    }
    let n = losses.len() as f64;
    let mean_sq = losses.iter().map(|l| l * l).sum::<f64>() / n;
    let mean = losses.iter().sum::<f64>() / n;
    Ok((n * mean_sq.sqrt(), mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn regression(n: usize, dim: usize, noise: f64, seed: u64) -> SyntheticTask {
        make_synthetic_task(TaskKind::LinearRegression, 4, dim, n, noise, &RngStream::root(seed)).unwrap()
    }

    #[test]
    fn noiseless_least_squares_recovers_generator() {
        let task = regression(200, 6, 0.0, 3);
        let ls = least_squares(&task.dataset).unwrap();
        for (a, b) in ls.iter().zip(&task.truth) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn synthetic_tasks_are_deterministic() {
        assert_eq!(regression(50, 3, 0.1, 9), regression(50, 3, 0.1, 9));
        assert_ne!(regression(50, 3, 0.1, 9).dataset, regression(50, 3, 0.1, 10).dataset);
        assert!(make_synthetic_task(TaskKind::LinearRegression, 2, 0, 5, 0.0, &RngStream::root(0)).is_err());
        assert!(make_synthetic_task(TaskKind::LinearRegression, 2, 3, 0, 0.0, &RngStream::root(0)).is_err());
    }

    #[test]
    fn full_batch_gd_reaches_least_squares_loss() {
        let task = regression(1000, 5, 0.1, 4);
        let data = &task.dataset;
        let optimum = data.mean_loss(&least_squares(data).unwrap());
        // Step size from the largest Hessian eigenvalue (power iteration on 2XᵀX/n).
        let lmax = largest_hessian_eigenvalue(data);
        let schedule = vec![1.0 / lmax; 3000];
        let res = local_sgd(&ModelVector::zeros(5), data, &schedule, data.len(), &RngStream::root(0)).unwrap();
        let loss = data.mean_loss(&res.delta);
        assert!(loss - optimum < 1e-4, "gd loss {loss} vs optimum {optimum}");
    }

    fn largest_hessian_eigenvalue(data: &Dataset) -> f64 {
        let n = data.len() as f64;
        let d = data.dim;
        let h = DMatrix::from_fn(d, d, |i, j| {
            2.0 * data.samples.iter().map(|s| s.features[i] * s.features[j]).sum::<f64>() / n
        });
        h.symmetric_eigenvalues().max()
    }

    #[test]
    fn single_full_batch_step_matches_analytic_gradient() {
        let task = regression(40, 3, 0.3, 5);
        let data = &task.dataset;
        let base = ModelVector::new(vec![0.3, -0.2, 0.5], 0).unwrap();
        let eta = 0.01;
        let res = local_sgd(&base, data, &[eta], data.len(), &RngStream::root(1)).unwrap();
        // Independent oracle: ∇ (1/n)Σ(w·x−y)² = (2/n) Xᵀ(Xw − y).
        let x = DMatrix::from_fn(data.len(), 3, |i, j| data.samples[i].features[j]);
        let y = DVector::from_iterator(data.len(), data.samples.iter().map(|s| s.target));
        let w = DVector::from_column_slice(base.weights());
        let grad = x.transpose() * (&x * w - y) * (2.0 / data.len() as f64);
        for k in 0..3 {
            assert!((res.delta[k] + eta * grad[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let reg = regression(30, 4, 0.2, 6).dataset;
        let cls = make_synthetic_task(TaskKind::SoftmaxClassification, 3, 4, 30, 1.0, &RngStream::root(6))
            .unwrap()
            .dataset;
        let mut r = RngStream::root(77).rng();
        for data in [&reg, &cls] {
            for _ in 0..5 {
                let w: Vec<f64> = (0..data.model_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
                let g = data.full_gradient(&w);
                let h = 1e-5;
                for k in 0..w.len() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[k] += h;
                    wm[k] -= h;
                    let fd = (data.mean_loss(&wp) - data.mean_loss(&wm)) / (2.0 * h);
                    let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                    assert!(rel <= 1e-4, "k={k}: fd {fd} vs analytic {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn local_sgd_rejects_bad_schedules() {
        let data = regression(10, 2, 0.0, 1).dataset;
        let base = ModelVector::zeros(2);
        let rng = RngStream::root(0);
        assert!(matches!(
            local_sgd(&base, &data, &[0.0], 4, &rng),
            Err(Error::NonPositiveLearningRate { step: 0, .. })
        ));
        let tiny = local_sgd(&base, &data, &[1e-12; 3], 4, &rng).unwrap();
        assert!(tiny.delta.iter().map(|d| d * d).sum::<f64>().sqrt() <= 1e-6);
        assert_eq!(tiny.per_sample_losses.len(), tiny.sample_count);
        assert_eq!(tiny.delta.len(), 2);
        assert_eq!(tiny.q_steps, 3);
        let empty = data.subset(&[]);
        assert_eq!(local_sgd(&base, &empty, &[0.1], 4, &rng), Err(Error::EmptyDataset));
    }

    #[test]
    fn local_sgd_is_deterministic_given_stream() {
        let data = regression(64, 3, 0.1, 2).dataset;
        let base = ModelVector::zeros(3);
        let a = local_sgd(&base, &data, &[0.05; 5], 8, &RngStream::root(4)).unwrap();
        let b = local_sgd(&base, &data, &[0.05; 5], 8, &RngStream::root(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_loss_never_increases_with_small_steps() {
        let data = regression(50, 3, 0.0, 8).dataset;
        let l = largest_hessian_eigenvalue(&data);
        let q = 10;
        let eta = 1.0 / (l * q as f64);
        let mut model = ModelVector::zeros(3);
        let mut prev = data.mean_loss(model.weights());
        for step in 0..q {
            let res = local_sgd(&model, &data, &[eta], data.len(), &RngStream::root(step as u64)).unwrap();
            model = model.apply_delta(&res.delta).unwrap();
            let now = data.mean_loss(model.weights());
            assert!(now <= prev + 1e-15);
            prev = now;
        }
    }

    #[test]
    fn loss_statistic_examples() {
        let (agg, mean) = loss_statistic_of(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((agg, mean), (4.0, 1.0));
        let (agg, mean) = loss_statistic_of(&[3.0, 4.0]).unwrap();
        assert!((agg - 2.0 * 12.5f64.sqrt()).abs() < 1e-12);
        assert!((agg - 7.0710678).abs() < 1e-7);
        assert_eq!(mean, 3.5);
        assert_eq!(loss_statistic_of(&[0.0]).unwrap(), (0.0, 0.0));
        assert_eq!(loss_statistic_of(&[]), Err(Error::EmptyLossSet));
    }

    #[test]
    fn dirichlet_single_client_gets_everything() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let spec = PartitionSpec {
            n_clients: 1,
            concentration: vec![1.0; 4],
            rng: RngStream::root(0),
        };
        let p = dirichlet_partition(&labels, &spec).unwrap();
        assert_eq!(p, vec![(0..100).collect::<Vec<_>>()]);
    }

    #[test]
    fn dirichlet_rejects_bad_input() {
        let spec = PartitionSpec {
            n_clients: 3,
            concentration: vec![1.0, 0.0],
            rng: RngStream::root(0),
        };
        assert_eq!(dirichlet_partition(&[], &spec), Err(Error::EmptyLabels));
        assert!(matches!(
            dirichlet_partition(&[0, 1], &spec),
            Err(Error::InvalidConcentration(_))
        ));
        let spec = PartitionSpec {
            concentration: vec![1.0, 1.0],
            ..spec
        };
        assert!(matches!(
            dirichlet_partition(&[0, 2], &spec),
            Err(Error::InvalidConcentration(_))
        ));
    }

    fn skewed_fraction(partition: &[Vec<usize>], labels: &[usize], n_classes: usize) -> f64 {
        let skewed = partition
            .iter()
            .filter(|members| {
                let mut hist = vec![0usize; n_classes];
                for &i in *members {
                    hist[labels[i]] += 1;
                }
                let max = *hist.iter().max().unwrap() as f64;
                let min = *hist.iter().min().unwrap() as f64;
                min == 0.0 || max / min > 2.0
            })
            .count();
        skewed as f64 / partition.len() as f64
    }

    #[test]
    fn dirichlet_with_unit_concentration_is_label_skewed() {
        let labels: Vec<usize> = (0..10_000).map(|i| i % 10).collect();
        let spec = PartitionSpec {
            n_clients: 20,
            concentration: vec![1.0; 10],
            rng: RngStream::root(11),
        };
        let p = dirichlet_partition(&labels, &spec).unwrap();
        let got = skewed_fraction(&p, &labels, 10);

        // Reference sampler: Dir(1,…,1) as spacings of sorted uniforms.
        let mut r = RngStream::root(99).rng();
        let mut reference: Vec<Vec<usize>> = vec![Vec::new(); 20];
        for class in 0..10 {
            let mut cuts: Vec<f64> = (0..19).map(|_| r.random::<f64>()).collect();
            cuts.push(0.0);
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            let members: Vec<usize> = (0..10_000).filter(|i| labels[*i] == class).collect();
            for c in 0..20 {
                let lo = (cuts[c] * 1000.0).round() as usize;
                let hi = (cuts[c + 1] * 1000.0).round() as usize;
                reference[c].extend_from_slice(&members[lo..hi]);
            }
        }
        let expected = skewed_fraction(&reference, &labels, 10);
        assert!(expected >= 0.9, "reference sampler fraction {expected}");
        assert!(got >= 0.9, "partition fraction {got}");
    }

    #[test]
    fn weighted_partition_tracks_volume() {
        let labels: Vec<usize> = (0..20_000).map(|i| i % 5).collect();
        let spec = PartitionSpec {
            n_clients: 4,
            concentration: vec![5.0; 5],
            rng: RngStream::root(1),
        };
        let p = dirichlet_partition_weighted(&labels, &spec, Some(&[1.0, 1.0, 1.0, 7.0])).unwrap();
        assert!(p[3].len() > 3 * p[0].len());
        assert_eq!(p.iter().map(Vec::len).sum::<usize>(), 20_000);
    }

    #[test]
    fn partition_csv_has_header_and_rows() {
        let labels = vec![0, 1, 0];
        let p = vec![vec![0, 2], vec![1]];
        let mut out = Vec::new();
        write_partition_csv(&mut out, &p, &labels).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sample_id,client_id,label\n0,0,0\n1,1,1\n2,0,0\n"
        );
    }

    #[test]
    fn label_flip_changes_every_class() {
        let mut data = make_synthetic_task(TaskKind::SoftmaxClassification, 5, 2, 100, 1.0, &RngStream::root(3))
            .unwrap()
            .dataset;
        let before = data.labels();
        flip_labels(&mut data, &RngStream::root(4));
        assert!(before.iter().zip(data.labels()).all(|(a, b)| *a != b));
    }

    proptest! {
        #[test]
        fn dirichlet_is_a_partition(
            labels in prop::collection::vec(0usize..4, 1..300),
            n_clients in 1usize..12,
            alpha in 0.05f64..5.0,
            seed in any::<u64>(),
        ) {
            let spec = PartitionSpec { n_clients, concentration: vec![alpha; 4], rng: RngStream::root(seed) };
            let p = dirichlet_partition(&labels, &spec).unwrap();
            prop_assert_eq!(p.len(), n_clients);
            let mut seen: Vec<usize> = p.concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        }

        #[test]
        fn duplicating_samples_doubles_aggregate_term(losses in prop::collection::vec(0.0f64..10.0, 1..50)) {
            let (single, mean) = loss_statistic_of(&losses).unwrap();
            let doubled: Vec<f64> = losses.iter().chain(losses.iter()).copied().collect();
            let (twice, mean2) = loss_statistic_of(&doubled).unwrap();
            prop_assert!((twice - 2.0 * single).abs() <= 1e-9 * (1.0 + single));
            prop_assert!((mean2 - mean).abs() <= 1e-12 * (1.0 + mean));
        }
    }
}
